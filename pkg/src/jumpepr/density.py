"""Grids, densities on grids, kernel density estimates and the stable stationary density."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline, RegularGridInterpolator
from scipy.ndimage import convolve1d
from scipy.special import zeta

from .errors import DegenerateSampleError, EmptySupportError, ResolutionError
from .model import stable_constant

MASS_TOL = 1e-3


def _as_tuple(v, cast=float):
    if np.ndim(v) == 0:
        return (cast(v),)
    return tuple(cast(u) for u in v)


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid in one or two dimensions."""

    lower: tuple
    upper: tuple
    points: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", _as_tuple(self.lower))
        object.__setattr__(self, "upper", _as_tuple(self.upper))
        object.__setattr__(self, "points", _as_tuple(self.points, int))
        if not (len(self.lower) == len(self.upper) == len(self.points)):
            raise ValueError("lower, upper and points must have equal length")
        if self.dim not in (1, 2):
            raise ValueError("grids are one or two dimensional")
        for lo, hi, n in zip(self.lower, self.upper, self.points):
            if not lo < hi or n < 2:
                raise ValueError(f"invalid axis [{lo}, {hi}] with {n} points")

    @classmethod
    def line(cls, lower: float, upper: float, points: int) -> "Grid":
        return cls((lower,), (upper,), (points,))

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (n - 1) for lo, hi, n in zip(self.lower, self.upper, self.points))

    @property
    def axes(self) -> list:
        return [lo + np.arange(n) * h for lo, n, h in zip(self.lower, self.points, self.spacing)]

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates with shape ``points + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def flat_nodes(self) -> np.ndarray:
        return self.nodes.reshape(-1, self.dim)

    @property
    def axis_weights(self) -> list:
        out = []
        for n, h in zip(self.points, self.spacing):
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            out.append(w)
        return out

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal weights with the grid's shape."""
        w = self.axis_weights
        return w[0] if self.dim == 1 else np.outer(w[0], w[1])

    def integrate(self, values) -> float:
        return float(np.sum(np.asarray(values) * self.weights))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, float)
        return np.all((p >= np.array(self.lower)) & (p <= np.array(self.upper)), axis=-1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "points": list(self.points)}


@dataclass(frozen=True)
class PowerLawTail:
    """Symmetric one-dimensional tail rho(y) ~ coefficient * |y|^-exponent outside the grid box."""

    coefficient: float
    exponent: float

    def density(self, y):
        return self.coefficient * np.abs(y) ** (-self.exponent)

    def log_density(self, y):
        return math.log(self.coefficient) - self.exponent * np.log(np.abs(y))

    def mass_beyond(self, radius: float) -> float:
        return 2.0 * self.coefficient * radius ** (1.0 - self.exponent) / (self.exponent - 1.0)


@dataclass(frozen=True)
class DensityField:
    """Probability density values on grid nodes at a given time.

    ``values`` are normalized to unit trapezoidal mass on the grid. When the
    density extends beyond the box, ``tail_mass`` is the probability outside
    it and ``tail`` an optional asymptotic model of the exterior density, so
    that the true in-box density is ``values * (1 - tail_mass)``.
    """

    grid: Grid
    values: np.ndarray
    time: float = 0.0
    tail: Optional[PowerLawTail] = None
    tail_mass: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if v.min() < 0:
            raise ValueError(f"density values must be nonnegative (min {v.min():.3g})")
        mass = self.grid.integrate(v)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"trapezoidal mass {mass:.6g} is not within {MASS_TOL} of 1")
        if self.time < 0:
            raise ValueError("time must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, grid: Grid, values, time: float = 0.0, **kw) -> "DensityField":
        """Clip negatives and renormalize to unit trapezoidal mass."""
        v = np.clip(np.asarray(values, dtype=float).reshape(grid.shape), 0.0, None)
        mass = grid.integrate(v)
        if not mass > 0:
            raise ValueError("density has no mass on the grid")
        return cls(grid, v / mass, time, **kw)

    @classmethod
    def from_function(cls, grid: Grid, pdf, time: float = 0.0, **kw) -> "DensityField":
        return cls.from_values(grid, pdf(grid.nodes), time, **kw)

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.values)

    @property
    def true_values(self) -> np.ndarray:
        return self.values * (1.0 - self.tail_mass)

    def default_floor(self) -> float:
        return 1e-12 * float(self.values.max())

    def replace(self, values=None, time=None) -> "DensityField":
        return DensityField(self.grid, self.values if values is None else values,
                            self.time if time is None else time, self.tail, self.tail_mass, dict(self.meta))

    def __call__(self, points) -> np.ndarray:
        """Linear interpolation of the box-normalized values, zero outside."""
        interp = RegularGridInterpolator(self.grid.axes, self.values, bounds_error=False, fill_value=0.0)
        p = np.asarray(points, float)
        return interp(p.reshape(-1, self.grid.dim)).reshape(p.shape[:-1])

    def to_csv(self, path) -> None:
        cols = [self.grid.flat_nodes[:, i] for i in range(self.grid.dim)] + [self.values.ravel()]
        header = ",".join(["x", "y"][: self.grid.dim] + ["rho"])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, time: float = 0.0, normalize: bool = True) -> "DensityField":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        dim = len(header) - 1
        if dim not in (1, 2) or header[-1] != "rho":
            raise ValueError(f"unexpected density header {header}")
        axes = [np.unique(data[:, i]) for i in range(dim)]
        grid = Grid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), tuple(len(a) for a in axes))
        if grid.size != len(data):
            raise ValueError("density CSV is not a full rectangular grid")
        values = data[:, -1].reshape(grid.shape)
        return cls.from_values(grid, values, time) if normalize else cls(grid, values, time)


def gaussian_density(grid: Grid, mean=0.0, std=1.0, time: float = 0.0) -> DensityField:
    """Product normal density sampled on the grid and renormalized."""
    mean = np.broadcast_to(np.asarray(mean, float), (grid.dim,))
    std = np.broadcast_to(np.asarray(std, float), (grid.dim,))
    z = (grid.nodes - mean) / std
    pdf = np.exp(-0.5 * np.sum(z * z, axis=-1)) / np.prod(np.sqrt(2 * np.pi) * std)
    return DensityField.from_values(grid, pdf, time)


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    return len(samples) ** (-0.2) * samples.std(axis=0)


def estimate_density(samples, grid: Grid, bandwidth=None, time: float = 0.0) -> DensityField:
    """Gaussian kernel density estimate on the grid nodes.

    Samples are sorted, linearly binned onto the grid and convolved with a
    sampled Gaussian per axis, so the result does not depend on sample order.
    Samples outside the box are dropped and counted in ``meta["outliers"]``.
    """
    s = np.asarray(samples, dtype=float).reshape(len(samples), -1)
    if s.shape[1] != grid.dim:
        raise ValueError("sample dimension does not match the grid")
    if len(s) < 100:
        raise ValueError(f"at least 100 samples are required, got {len(s)}")
    inside = grid.contains(s)
    outliers = int((~inside).sum())
    s = s[inside]
    if len(s) == 0:
        raise EmptySupportError("all samples fall outside the grid domain")
    s = s[np.lexsort(s.T[::-1])]
    bw = silverman_bandwidth(s) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), (grid.dim,))
    if np.any(bw <= 0):
        raise DegenerateSampleError("samples have zero variance")

    idx, frac = [], []
    for i, (lo, h, n) in enumerate(zip(grid.lower, grid.spacing, grid.points)):
        u = (s[:, i] - lo) / h
        j = np.clip(np.floor(u).astype(int), 0, n - 2)
        idx.append(j)
        frac.append(u - j)
    counts = np.zeros(grid.size)
    corners = [(0,), (1,)] if grid.dim == 1 else [(0, 0), (0, 1), (1, 0), (1, 1)]
    for corner in corners:
        w = np.ones(len(s))
        flat = np.zeros(len(s), dtype=int)
        for ax, c in enumerate(corner):
            w = w * (frac[ax] if c else 1.0 - frac[ax])
            flat = flat * grid.points[ax] + idx[ax] + c
        counts += np.bincount(flat, weights=w, minlength=grid.size)
    dens = counts.reshape(grid.shape)
    for ax, (h, b) in enumerate(zip(grid.spacing, bw)):
        half = int(math.ceil(5 * b / h))
        t = np.arange(-half, half + 1) * h / b
        ker = np.exp(-0.5 * t * t)
        dens = convolve1d(dens, ker / ker.sum(), axis=ax, mode="constant")
    out = DensityField.from_values(grid, dens, time)
    out.meta.update(outliers=outliers, bandwidth=[float(b) for b in bw])
    return out


def _stable_cosine_transform(x, alpha, xi_max, xi_nodes, chunk=256):
    """(1/pi) * integral over [0, xi_max] of cos(x xi) exp(-xi^alpha/alpha).

    Trapezoid rule plus the generalized Euler-Maclaurin endpoint correction
    for the fractional powers xi^(k alpha) at the origin, which removes the
    aliasing error from the algebraic tails of the density.
    """
    xi = np.linspace(0.0, xi_max, xi_nodes)
    d = xi[1] - xi[0]
    w = np.full(xi_nodes, d)
    w[0] = w[-1] = 0.5 * d
    fw = np.exp(-xi ** alpha / alpha) * w
    out = np.empty_like(x)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = np.cos(np.outer(x[s:s + chunk], xi)) @ fw
    xd2 = (x * d) ** 2
    corr = np.zeros_like(x)
    for k in range(1, 40):
        ck = (-1.0) ** k * d ** (k * alpha + 1) / (alpha ** k * math.factorial(k))
        if abs(ck) < 1e-40:
            break
        term_m = np.ones_like(x)
        for m in range(0, 80):
            if m > 0:
                term_m = term_m * (-xd2) / ((2 * m - 1) * (2 * m))
            p = k * alpha + 2 * m
            z = 0.0 if (p % 2 == 0) else float(zeta(-p))
            contrib = ck * z * term_m
            corr += contrib
            if m > 2 and np.max(np.abs(contrib)) < 1e-22:
                break
    return (out - corr) / np.pi


def stable_stationary_density(alpha: float, grid: Grid, xi_max: Optional[float] = None,
                              xi_nodes: Optional[int] = None, tail: bool = True) -> DensityField:
    """Stationary density of dX = -X dt + dL for a symmetric alpha-stable L.

    Its characteristic function is exp(-|xi|^alpha / alpha). For alpha < 2 the
    returned field carries the mass outside the box and a power-law model of
    the exterior density.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if grid.dim != 1:
        raise ValueError("the stable stationary density is one dimensional")
    x = grid.axes[0]
    if xi_max is None:
        xi_max = (alpha * 14.0 * math.log(10.0)) ** (1.0 / alpha)
    if math.exp(-xi_max ** alpha / alpha) >= 1e-12:
        raise ResolutionError(f"xi_max={xi_max} truncates the characteristic function above 1e-12")
    if xi_nodes is None:
        step = min(0.05, 1.0 / max(np.max(np.abs(x)), 1.0))
        xi_nodes = int(math.ceil(xi_max / step)) + 1
    raw = _stable_cosine_transform(x, alpha, xi_max, int(xi_nodes))
    if raw.min() < -1e-6:
        raise ResolutionError(f"cosine quadrature went negative ({raw.min():.3g}); increase xi_nodes")
    raw = np.clip(raw, 0.0, None)
    box_mass = grid.integrate(raw)
    out = DensityField.from_values(grid, raw)
    if alpha < 2.0 and tail:
        model = PowerLawTail(stable_constant(alpha) / alpha, 1.0 + alpha)
        out = DensityField(grid, out.values, 0.0, model, max(1.0 - box_mass, 0.0))
    out.meta.update(alpha=alpha, xi_max=float(xi_max), xi_nodes=int(xi_nodes))
    return out


class GradientField(NamedTuple):
    values: np.ndarray
    floored: int


def log_density_gradient(field: DensityField, floor: Optional[float] = None) -> GradientField:
    """Finite-difference gradient of log(max(rho, floor)), second order one-sided at the edges."""
    floor = field.default_floor() if floor is None else floor
    v = field.values
    floored = int(np.sum(v < floor))
    logv = np.log(np.maximum(v, floor))
    grads = np.gradient(logv, *field.grid.spacing, edge_order=2)
    if field.grid.dim == 1:
        grads = [grads]
    return GradientField(np.stack(grads, axis=-1), floored)


class LogDensity:
    """Smooth interpolant of log rho with gradient, extended by the tail model outside the box.

    Values refer to the true density, i.e. they include the tail-mass factor.
    """

    def __init__(self, field: DensityField, floor: Optional[float] = None):
        self.field = field
        self.grid = field.grid
        self.floor = field.default_floor() if floor is None else floor
        self.shift = math.log1p(-field.tail_mass) if field.tail_mass else 0.0
        logv = np.log(np.maximum(field.values, self.floor)) + self.shift
        if self.grid.dim == 1:
            self._spline = CubicSpline(self.grid.axes[0], logv)
        else:
            self._spline = RectBivariateSpline(*self.grid.axes, logv, kx=3, ky=3)
        self._linear = RegularGridInterpolator(self.grid.axes, field.values, bounds_error=False,
                                               fill_value=0.0)

    def _split(self, points):
        p = np.asarray(points, float)
        flat = p.reshape(-1, self.grid.dim)
        return p.shape[:-1], flat, self.grid.contains(flat)

    def __call__(self, points) -> np.ndarray:
        shape, flat, inside = self._split(points)
        out = np.full(len(flat), np.nan)
        if self.grid.dim == 1:
            out[inside] = self._spline(flat[inside, 0])
            if self.field.tail is not None:
                out[~inside] = self.field.tail.log_density(flat[~inside, 0])
        else:
            out[inside] = self._spline(flat[inside, 0], flat[inside, 1], grid=False)
        return out.reshape(shape)

    def gradient(self, points) -> np.ndarray:
        shape, flat, inside = self._split(points)
        out = np.full(flat.shape, np.nan)
        if self.grid.dim == 1:
            out[inside, 0] = self._spline(flat[inside, 0], 1)
            if self.field.tail is not None:
                out[~inside, 0] = -self.field.tail.exponent / flat[~inside, 0]
        else:
            x, y = flat[inside, 0], flat[inside, 1]
            out[inside, 0] = self._spline(x, y, dx=1, grid=False)
            out[inside, 1] = self._spline(x, y, dy=1, grid=False)
        return out.reshape(shape + (self.grid.dim,))

    def reliable(self, points) -> np.ndarray:
        """True where the density is above the floor (or covered by the tail model)."""
        shape, flat, inside = self._split(points)
        ok = np.zeros(len(flat), dtype=bool)
        ok[inside] = self._linear(flat[inside]) >= self.floor
        if self.field.tail is not None:
            ok[~inside] = True
        return ok.reshape(shape)


def sample_from_density(field: DensityField, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw points by picking nodes with trapezoidal probabilities and jittering within their cell."""
    grid = field.grid
    p = (field.values * grid.weights).ravel()
    idx = rng.choice(grid.size, size=n, p=p / p.sum())
    pts = grid.flat_nodes[idx]
    h = np.array(grid.spacing)
    pts = pts + rng.uniform(-0.5, 0.5, size=pts.shape) * h
    return np.clip(pts, grid.lower, grid.upper)


def density_l1(a: DensityField, b) -> float:
    """Trapezoidal L1 distance between two fields or a field and a pdf callable."""
    other = b.values if isinstance(b, DensityField) else np.asarray(b(a.grid.nodes))
    return a.grid.integrate(np.abs(a.values - other))


def stack_times(fields: Sequence[DensityField]) -> np.ndarray:
    return np.array([f.time for f in fields])
