"""Process specifications, jump kernels and numerical assumption checks.

Coefficient functions act on arrays of points whose last axis is the state
dimension: ``drift(x)`` maps ``(..., n)`` to ``(..., n)``,
``diffusion_factor(x)`` maps ``(..., n)`` to ``(..., n, n)``, a kernel rate
maps a pair of ``(..., n)`` arrays to ``(...)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.special import gamma

from .errors import AssumptionViolation, ConfigurationError

Array = np.ndarray


def stable_constant(alpha: float, dim: int = 1) -> float:
    """Normalizing constant of the fractional Laplacian kernel in ``dim`` dimensions."""
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    return float(
        alpha * 2.0 ** (alpha - 1.0) * gamma((dim + alpha) / 2.0)
        / (np.pi ** (dim / 2.0) * gamma(1.0 - alpha / 2.0))
    )


@dataclass(frozen=True)
class JumpMap:
    """Jump map sigma(x, z) with its inverse in z and the inverse Jacobian determinant."""

    forward: Callable[[Array, Array], Array]
    inverse: Callable[[Array, Array], Array]
    inverse_jacobian_det: Callable[[Array, Array], Array]

    def round_trip_error(self, x: Array, w: Array) -> float:
        x, w = np.asarray(x, float), np.asarray(w, float)
        back = self.forward(x, self.inverse(x, w))
        return float(np.max(np.abs(back - w)))


@dataclass(frozen=True)
class JumpKernel:
    """Rate density k(x, y) of jumps from x to y.

    ``singularity_order`` is the exponent gamma in k ~ |x-y|^-gamma near the
    diagonal.  When ``singular_coefficient`` is also set the kernel behaves as
    ``coefficient * |x-y|^-gamma`` symmetrically near the diagonal, which lets
    grid quadratures add the contribution of the excluded band analytically.
    """

    rate: Callable[[Array, Array], Array]
    singularity_order: Optional[float] = None
    singular_coefficient: Optional[float] = None
    symmetric: bool = False
    zero: bool = False

    def __call__(self, x, y):
        return self.rate(np.asarray(x, float), np.asarray(y, float))


def zero_kernel() -> JumpKernel:
    return JumpKernel(rate=lambda x, y: np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1]),
                      symmetric=True, zero=True)


def stable_kernel(alpha: float, constant: Optional[float] = None, dim: int = 1) -> JumpKernel:
    """Isotropic alpha-stable kernel C |x-y|^-(dim+alpha)."""
    c = stable_constant(alpha, dim) if constant is None else float(constant)
    order = dim + alpha

    def rate(x, y):
        r = np.linalg.norm(np.asarray(y) - np.asarray(x), axis=-1)
        with np.errstate(divide="ignore"):
            return c * r ** (-order)

    return JumpKernel(rate=rate, singularity_order=order, singular_coefficient=c, symmetric=True)


@dataclass(frozen=True)
class ProcessSpec:
    """Coefficients of a jump diffusion driven by Brownian motion and Poisson or stable noise.

    ``diffusion_factor`` None means A is identically zero. A stable driver is
    declared with ``stable_alpha``; its kernel must come through
    ``kernel_override``.
    """

    dim: int
    beta: float
    drift: Callable[[Array], Array]
    diffusion_factor: Optional[Callable[[Array], Array]] = None
    jump_rate: float = 0.0
    levy_density: Optional[Callable[[Array], Array]] = None
    jump_map: Optional[JumpMap] = None
    kernel_override: Optional[JumpKernel] = None
    stable_alpha: Optional[float] = None
    levy_sampler: Optional[Callable[[np.random.Generator, int], Array]] = None
    levy_mass: Optional[float] = None
    diffusion_divergence: Optional[Callable[[Array], Array]] = None
    constant_diffusion: bool = False
    name: str = ""
    params: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"must be a positive integer, got {self.dim}", "dim")
        if not self.beta > 0:
            raise ConfigurationError(f"must be positive, got {self.beta}", "beta")
        if not self.jump_rate >= 0:
            raise ConfigurationError(f"must be nonnegative, got {self.jump_rate}", "lambda")
        if self.stable_alpha is not None:
            if not 0.0 < self.stable_alpha < 2.0:
                raise ConfigurationError(f"must lie in (0, 2), got {self.stable_alpha}", "levy.alpha")
            if self.kernel_override is None or self.jump_map is not None:
                raise ConfigurationError("stable drivers need kernel_override and no jump_map", "jump_map")
        elif self.jump_rate > 0:
            if (self.jump_map is None) == (self.kernel_override is None):
                raise ConfigurationError(
                    "exactly one of jump_map or kernel_override is required when lambda > 0", "jump_map")
            if self.jump_map is not None and self.levy_density is None:
                raise ConfigurationError("a Levy density is required with a jump map", "levy")

    @property
    def has_jumps(self) -> bool:
        return self.stable_alpha is not None or self.jump_rate > 0

    @property
    def has_diffusion(self) -> bool:
        return self.diffusion_factor is not None

    def diffusion_matrix(self, x: Array) -> Array:
        """A(x) = a(x) a(x)^T, zeros when there is no diffusion."""
        x = np.asarray(x, float)
        if self.diffusion_factor is None:
            return np.zeros(x.shape + (self.dim,))
        a = np.asarray(self.diffusion_factor(x), float)
        a = np.broadcast_to(a, x.shape[:-1] + (self.dim, self.dim))
        return np.einsum("...ik,...jk->...ij", a, a)

    def diffusion_divergence_at(self, x: Array, step: float = 1e-5) -> Array:
        """Row divergence (div A)_i = sum_j d_j A_ij."""
        x = np.asarray(x, float)
        if self.diffusion_factor is None or self.constant_diffusion:
            return np.zeros_like(x)
        if self.diffusion_divergence is not None:
            return np.asarray(self.diffusion_divergence(x), float)
        out = np.zeros_like(x)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step
            dA = (self.diffusion_matrix(x + e) - self.diffusion_matrix(x - e)) / (2 * step)
            out += dA[..., :, j]
        return out

    def ito_drift(self, x: Array) -> Array:
        x = np.asarray(x, float)
        return np.asarray(self.drift(x), float) + self.diffusion_divergence_at(x) / self.beta

    @property
    def fingerprint(self) -> str:
        doc: dict[str, Any] = {
            "name": self.name, "dim": self.dim, "beta": self.beta,
            "lambda": self.jump_rate, "stable_alpha": self.stable_alpha,
        }
        if self.params is not None:
            doc["params"] = self.params
        else:
            fns = [self.drift, self.diffusion_factor, self.levy_density, self.jump_map, self.kernel_override]
            doc["functions"] = [getattr(f, "__qualname__", type(f).__name__) for f in fns]
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


@dataclass(frozen=True)
class DiffusionCheck:
    symmetry_error: float
    min_eigenvalue: float
    zero: bool


def check_diffusion(spec: ProcessSpec, probes: Array) -> DiffusionCheck:
    """Verify A is symmetric and either identically zero or positive definite at the probes."""
    probes = np.asarray(probes, float).reshape(-1, spec.dim)
    A = spec.diffusion_matrix(probes)
    sym = float(np.max(np.abs(A - np.swapaxes(A, -1, -2)))) if A.size else 0.0
    if spec.diffusion_factor is None or not np.any(A):
        return DiffusionCheck(sym, 0.0, True)
    eig = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    lo = float(eig.min())
    if sym > 1e-12 or lo <= 0:
        raise AssumptionViolation(
            f"A must be zero or positive definite (min eigenvalue {lo:.3g}, asymmetry {sym:.3g})")
    return DiffusionCheck(sym, lo, False)


def build_jump_kernel(spec: ProcessSpec) -> JumpKernel:
    """Jump kernel k(x,y) = lambda m(sigma^-1(x, y-x)) det grad sigma^-1(x, y-x)."""
    if spec.kernel_override is not None:
        return spec.kernel_override
    if not spec.has_jumps:
        return zero_kernel()
    if spec.jump_map is None or spec.levy_density is None:
        raise ConfigurationError("missing both jump_map and kernel_override with lambda > 0", "jump_map")
    lam, jm, m = spec.jump_rate, spec.jump_map, spec.levy_density

    def rate(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        w = y - x
        det = np.asarray(jm.inverse_jacobian_det(x, w), float)
        if np.any(det <= 0):
            raise AssumptionViolation("inverse Jacobian determinant of the jump map is not positive")
        return lam * np.asarray(m(jm.inverse(x, w)), float) * det

    return JumpKernel(rate=rate)


@dataclass(frozen=True)
class IntegrabilityDiagnostic:
    value: float
    inner: float
    outer: float
    converged: bool
    relative_change: float


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _radial_directions(dim: int, n_angles: int = 64):
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        th = 2 * np.pi * np.arange(n_angles) / n_angles
        return np.stack([np.cos(th), np.sin(th)], -1), np.full(n_angles, 2 * np.pi / n_angles)
    raise ValueError("integrability check supports dim 1 or 2")


def _shell_integral(f, dirs, dw, dim, edges):
    lo, hi = edges[:-1], edges[1:]
    r = 0.5 * (hi - lo)[:, None] * _GL_X[None, :] + 0.5 * (hi + lo)[:, None]
    wr = 0.5 * (hi - lo)[:, None] * _GL_W[None, :] * r ** (dim - 1)
    z = r[..., None, None] * dirs[None, None, :, :]
    vals = f(z, r) @ dw
    return float(np.sum(vals * wr))


def check_integrability(spec: ProcessSpec, quadrature_budget: int = 4096) -> IntegrabilityDiagnostic:
    """Quadrature of the integral of min(1, |z|^2) m(z) over z != 0.

    Dyadic shells with 16-point Gauss-Legendre rules are stacked towards 0
    and towards infinity. The budget fixes the shell count; the convergence
    flag compares against half as many shells.
    """
    if spec.levy_density is None:
        raise ConfigurationError("no Levy density to check", "levy")
    dirs, dw = _radial_directions(spec.dim)
    m = spec.levy_density

    def inner_f(z, r):
        return r[..., None] ** 2 * np.asarray(m(z), float)

    def outer_f(z, r):
        return np.asarray(m(z), float)

    def parts(n_shells):
        k = np.arange(n_shells + 1, dtype=float)
        inner = _shell_integral(inner_f, dirs, dw, spec.dim, 2.0 ** (-k[::-1]))
        outer = _shell_integral(outer_f, dirs, dw, spec.dim, 2.0 ** k)
        return inner, outer

    shells = max(int(quadrature_budget) // 16, 4)
    inner, outer = parts(shells)
    inner_c, outer_c = parts(shells // 2)
    value, coarse = inner + outer, inner_c + outer_c
    change = abs(value - coarse) / max(abs(value), 1e-300)
    converged = bool(np.isfinite(value) and change <= 1e-3)
    return IntegrabilityDiagnostic(value, inner, outer, converged, float(change))


@dataclass(frozen=True)
class RegularityDiagnostic:
    max_kbar: float
    violations: int
    samples: int


def check_regularity_E(kernel: JumpKernel, density, pair_samples: int = 10000,
                       seed: int = 0) -> RegularityDiagnostic:
    """Sample k(x,y) log(k(x,y)/k(y,x)) with x from the density and y uniform on its grid box."""
    rng = np.random.default_rng(seed)
    grid = density.grid
    nodes = grid.nodes.reshape(-1, grid.dim)
    p = (density.values * grid.weights).ravel()
    p = p / p.sum()
    x = nodes[rng.choice(len(nodes), size=pair_samples, p=p)]
    y = rng.uniform(grid.lower, grid.upper, size=(pair_samples, grid.dim))
    keep = np.linalg.norm(x - y, axis=-1) > 0
    x, y = x[keep], y[keep]
    kxy, kyx = kernel(x, y), kernel(y, x)
    bad = (kxy > 0) != (kyx > 0)
    ok = (kxy > 0) & (kyx > 0)
    kbar = np.zeros_like(kxy)
    kbar[ok] = kxy[ok] * np.log(kxy[ok] / kyx[ok])
    return RegularityDiagnostic(float(np.max(np.abs(kbar), initial=0.0)), int(bad.sum()), int(keep.sum()))
