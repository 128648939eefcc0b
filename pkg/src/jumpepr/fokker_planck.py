"""Nonlocal Fokker-Planck evolution, probability currents and stationarity residuals."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .density import DensityField, Grid
from .errors import InstabilityError, StabilityError
from .model import JumpKernel, ProcessSpec
from .operators import Exterior, JumpOperator, LocalOperator, exterior_terms


class Discretization:
    """Grid operators for one (spec, kernel, grid, band) combination, built once and reused."""

    def __init__(self, spec: ProcessSpec, kernel: JumpKernel, grid: Grid, band: Optional[float] = None):
        self.spec, self.kernel, self.grid = spec, kernel, grid
        self.local = LocalOperator(spec, grid)
        self.jump = JumpOperator(kernel, grid, band)
        self.band = self.jump.band
        self.w = grid.weights.ravel()
        if self.jump.zero:
            self.forward = self.local.forward
            self.generator = self.local.generator
        else:
            self.forward = self.local.forward.toarray() + self.jump.forward
            self.generator = self.local.generator.toarray() + self.jump.generator
        self._exterior = {}

    def matches(self, spec, kernel, grid, band=None) -> bool:
        return (spec is self.spec and kernel is self.kernel and grid == self.grid
                and (band is None or band == self.band))

    def exterior(self, tail) -> Optional[Exterior]:
        if tail is None or self.jump.zero or self.grid.dim != 1:
            return None
        key = (tail.coefficient, tail.exponent)
        if key not in self._exterior:
            self._exterior[key] = exterior_terms(self.kernel, self.grid, tail)
        return self._exterior[key]

    def stability_bound(self) -> float:
        """Largest stable explicit step: 0.4 times the smallest of the diffusive, jump and advective limits."""
        h = min(self.grid.spacing)
        limits = []
        A = self.local.A_nodes
        maxA = float(np.max(np.linalg.eigvalsh(A))) if np.any(A) else 0.0
        if maxA > 0:
            limits.append(h * h * self.spec.beta / (2 * self.grid.dim * maxA))
        maxR = float(self.jump.R.max()) if not self.jump.zero else 0.0
        if maxR > 0:
            limits.append(1.0 / maxR)
        dband = self.jump.band_diffusion
        if dband > 0:
            limits.append(h * h / (2 * dband))
        bmax = float(np.max(np.abs(self.local.drift_nodes))) if self.local.drift_nodes.size else 0.0
        if bmax > 0:
            limits.append(h / bmax)
            dmin = (float(np.min(np.linalg.eigvalsh(A))) / self.spec.beta if np.any(A) else 0.0) + dband
            if dmin > 0:
                limits.append(2 * dmin / bmax ** 2)
        return 0.4 * min(limits) if limits else math.inf

    def apply(self, rho) -> np.ndarray:
        return self.forward @ np.asarray(rho, float).ravel()


def get_discretization(spec, kernel, grid, band=None, disc=None) -> Discretization:
    if disc is not None and disc.matches(spec, kernel, grid, band):
        return disc
    return Discretization(spec, kernel, grid, band)


@dataclass(frozen=True)
class CurrentField:
    """Local current at nodes (shape grid.shape + (dim,)) and the nonlocal pair current (N, N)."""

    grid: Grid
    local: np.ndarray
    nonlocal_: Optional[np.ndarray]
    band_mask: Optional[np.ndarray] = None

    def antisymmetry_error(self) -> float:
        if self.nonlocal_ is None:
            return 0.0
        J = self.nonlocal_
        scale = max(float(np.max(np.abs(J))), 1e-300)
        return float(np.max(np.abs(J + J.T))) / scale


def local_current(spec: ProcessSpec, field: DensityField, disc: Optional[Discretization] = None) -> np.ndarray:
    """j_loc = b rho - beta^-1 A grad rho with central differences."""
    op = disc.local if disc is not None and disc.grid == field.grid else LocalOperator(spec, field.grid)
    return op.current(field.values).reshape(field.grid.shape + (field.grid.dim,))


def nonlocal_current(kernel: JumpKernel, field: DensityField, band: Optional[float] = None,
                     disc: Optional[Discretization] = None) -> np.ndarray:
    """j_nl(x_i, x_j) = rho_i k(x_i, x_j) - rho_j k(x_j, x_i), zero inside the diagonal band."""
    if disc is not None and disc.grid == field.grid and (band is None or band == disc.band):
        op = disc.jump
    else:
        op = JumpOperator(kernel, field.grid, band)
    if op.zero:
        return np.zeros((field.grid.size, field.grid.size))
    P = op.pair_flux(field.values)
    return P - P.T


def currents(spec, kernel, field, band=None, disc=None) -> CurrentField:
    disc = get_discretization(spec, kernel, field.grid, band, disc)
    jl = local_current(spec, field, disc)
    jn = None if disc.jump.zero else nonlocal_current(kernel, field, disc=disc)
    return CurrentField(field.grid, jl, jn, None if disc.jump.zero else disc.jump.mask)


def stability_bound(spec, kernel, grid, band=None) -> float:
    return Discretization(spec, kernel, grid, band).stability_bound()


@dataclass
class FPESolution(Sequence):
    """Snapshots of an explicit Fokker-Planck run with its bookkeeping."""

    snapshots: list
    dt: float
    steps: int
    stability_bound: float
    mass_drift: float  # largest one-step relative mass change before renormalization
    cumulative_mass_drift: float
    meta: dict = field(default_factory=dict)

    def __getitem__(self, i):
        return self.snapshots[i]

    def __len__(self):
        return len(self.snapshots)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid


def solve_fpe(spec: ProcessSpec, kernel: JumpKernel, rho0: DensityField, t_final: float,
              dt: Optional[float] = None, stride: Optional[int] = None, band: Optional[float] = None,
              disc: Optional[Discretization] = None) -> FPESolution:
    """Explicit Euler integration of the nonlocal Fokker-Planck equation.

    ``dt`` defaults to the stability bound; a user ``dt`` is shrunk slightly if
    needed so that a whole number of steps reaches ``t_final``. Snapshots are
    taken every ``stride`` steps (default: about 100 snapshots) plus the end.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    disc = get_discretization(spec, kernel, rho0.grid, band, disc)
    bound = disc.stability_bound()
    if dt is None:
        n = int(math.ceil(t_final / bound))
    else:
        if not dt > 0:
            raise ValueError("dt must be positive")
        if dt > bound:
            raise StabilityError(f"dt={dt:.6g} exceeds the stability bound {bound:.6g}", bound)
        n = int(round(t_final / dt))
        if n < 1 or abs(n * dt - t_final) > 1e-9 * t_final:
            n = int(math.ceil(t_final / dt))
    dt = t_final / n
    stride = max(1, n // 100) if stride is None else int(stride)
    w = disc.w
    M = disc.forward
    rho = rho0.values.ravel().copy()
    t0 = rho0.time
    snaps = [rho0]
    worst = cumulative = 0.0
    for k in range(1, n + 1):
        rho = rho + dt * (M @ rho)
        mass = float(w @ rho)
        drift = abs(mass - 1.0)
        worst = max(worst, drift)
        cumulative += drift
        lo = rho.min()
        if lo < -1e-8:
            raise InstabilityError(f"density reached {lo:.3g} at t={t0 + k * dt:.6g}")
        if lo < 0:
            rho = np.clip(rho, 0.0, None)
            mass = float(w @ rho)
        rho = rho / mass
        if k % stride == 0 or k == n:
            snaps.append(DensityField(rho0.grid, rho.reshape(rho0.grid.shape), t0 + k * dt))
    return FPESolution(snaps, dt, n, bound, worst, cumulative)


def export_snapshots(solution: FPESolution, directory) -> list:
    """Write rho_t{index}.csv files and manifest.json; returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, snap in enumerate(solution.snapshots):
        p = d / f"rho_t{i}.csv"
        snap.to_csv(p)
        paths.append(p)
    manifest = {
        "times": [float(t) for t in solution.times], "grid": solution.grid.to_dict(),
        "dt": solution.dt, "steps": solution.steps, "mass_drift": solution.mass_drift,
        "cumulative_mass_drift": solution.cumulative_mass_drift,
        "stability_bound": solution.stability_bound,
        "files": [p.name for p in paths],
    }
    mp = d / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2))
    return paths + [mp]


def _open_boundary_flux(disc: Discretization, rho: np.ndarray, tail) -> tuple:
    """Fluxes through the two box faces, with exterior gradients taken from the tail model."""
    grid, spec = disc.grid, disc.spec
    lo, hi = grid.lower[0], grid.upper[0]
    fluxes = []
    for x, r in ((lo, rho[0]), (hi, rho[-1])):
        pt = np.array([[x]])
        slope = -tail.exponent * tail.density(x) / x
        b = float(np.asarray(spec.drift(pt))[0, 0])
        A = float(spec.diffusion_matrix(pt)[0, 0, 0])
        fluxes.append(b * r - (A / spec.beta + disc.jump.band_diffusion) * slope)
    return tuple(fluxes)


def forward_residual(spec, kernel, field: DensityField, band=None, exterior: Optional[bool] = None,
                     disc=None) -> np.ndarray:
    """Nodewise forward operator applied to the field (true scale when a tail is modelled)."""
    disc = get_discretization(spec, kernel, field.grid, band, disc)
    use_ext = field.tail is not None and field.grid.dim == 1 if exterior is None else exterior
    rho = (field.true_values if use_ext else field.values).ravel()
    r = disc.apply(rho)
    if use_ext and field.tail is not None:
        ext = disc.exterior(field.tail)
        if ext is not None:
            r = r + ext.gain - rho * ext.exit_rate
        f_lo, f_hi = _open_boundary_flux(disc, rho, field.tail)
        r[0] += f_lo / disc.w[0]
        r[-1] -= f_hi / disc.w[-1]
    return r


def stationary_residual(spec, kernel, field: DensityField, band=None, exterior: Optional[bool] = None,
                        disc=None) -> float:
    """Trapezoidal L1 norm of the forward operator applied to the field.

    With a tail model the box is treated as open: exterior gains, exit rates
    and boundary fluxes are included.
    """
    r = forward_residual(spec, kernel, field, band, exterior, disc)
    return field.grid.integrate(np.abs(r).reshape(field.grid.shape))

