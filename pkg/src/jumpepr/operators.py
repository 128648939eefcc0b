"""Discrete local and jump operators on uniform grids.

The local operators are sparse flux-form matrices whose divergence uses the
trapezoidal cell volumes, so the forward operator conserves trapezoidal mass
exactly. The jump operator is a dense pair quadrature with the diagonal band
removed. For one-dimensional kernels behaving like ``c |z|^-gamma`` the band
is put back as a diffusion term whose coefficient follows from the
Euler-Maclaurin expansion of the trapezoid sum near the singularity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad_vec
from scipy.special import zeta

from .density import Grid, PowerLawTail
from .errors import KernelSingularityError
from .model import JumpKernel, ProcessSpec


def derivative_matrix(grid: Grid, axis: int) -> sp.csr_matrix:
    """Central differences, second-order one-sided at the edges."""
    n, h = grid.points[axis], grid.spacing[axis]
    rows, cols, vals = [], [], []
    for i in range(n):
        if i == 0:
            st = [(0, -3.0), (1, 4.0), (2, -1.0)] if n > 2 else [(0, -2.0), (1, 2.0)]
        elif i == n - 1:
            st = [(n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)] if n > 2 else [(n - 1, 2.0), (n - 2, -2.0)]
        else:
            st = [(i + 1, 1.0), (i - 1, -1.0)]
        for j, v in st:
            rows.append(i)
            cols.append(j)
            vals.append(v / (2 * h))
    d1 = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if grid.dim == 1:
        return d1
    eye = sp.identity(grid.points[1 - axis], format="csr")
    return sp.kron(d1, eye, format="csr") if axis == 0 else sp.kron(eye, d1, format="csr")


def _faces(grid: Grid, axis: int):
    idx = np.arange(grid.size).reshape(grid.shape)
    lo = [slice(None)] * grid.dim
    hi = [slice(None)] * grid.dim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    p, q = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
    nodes = grid.flat_nodes
    mid = 0.5 * (nodes[p] + nodes[q])
    wa = grid.axis_weights[axis]
    axis_index = np.unravel_index(np.arange(grid.size), grid.shape)[axis]
    vol = wa[axis_index]
    return p, q, mid, vol


def _select(rows, n_cols):
    return sp.csr_matrix((np.ones(len(rows)), (np.arange(len(rows)), rows)), shape=(len(rows), n_cols))


def flux_operators(grid: Grid, velocity, diffusivity):
    """Forward (divergence of flux) and backward (generator) matrices.

    ``velocity(mid)`` returns the drift at face midpoints with shape (F, dim)
    and ``diffusivity(mid)`` the matrix D = A / beta with shape (F, dim, dim).
    Returns (forward, backward) with forward rho = -div(b rho - D grad rho)
    and backward f = div(D grad f), both with zero boundary flux.
    """
    N = grid.size
    D = [derivative_matrix(grid, a) for a in range(grid.dim)]
    fwd = sp.csr_matrix((N, N))
    bwd = sp.csr_matrix((N, N))
    for a in range(grid.dim):
        p, q, mid, vol = _faces(grid, a)
        h = grid.spacing[a]
        b = np.asarray(velocity(mid), float)[:, a] if velocity is not None else np.zeros(len(p))
        Dm = np.asarray(diffusivity(mid), float) if diffusivity is not None else np.zeros((len(p), grid.dim, grid.dim))
        Sp, Sq = _select(p, N), _select(q, N)
        grad_a = (Sq - Sp) / h
        flux = sp.diags(0.5 * b) @ (Sp + Sq) - sp.diags(Dm[:, a, a]) @ grad_a
        gflux = sp.diags(Dm[:, a, a]) @ grad_a
        for c in range(grid.dim):
            if c != a and np.any(Dm[:, a, c]):
                cross = sp.diags(Dm[:, a, c]) @ (0.5 * (Sp + Sq) @ D[c])
                flux = flux - cross
                gflux = gflux + cross
        inv_p, inv_q = sp.diags(1.0 / vol[p]), sp.diags(1.0 / vol[q])
        div = Sp.T @ inv_p - Sq.T @ inv_q  # node-by-face: +F/vol at p, -F/vol at q
        fwd = fwd - div @ flux
        bwd = bwd + div @ gflux
    return fwd.tocsr(), bwd.tocsr()


class LocalOperator:
    """Drift-diffusion part of the forward and backward operators on a grid."""

    def __init__(self, spec: ProcessSpec, grid: Grid):
        if spec.dim != grid.dim:
            raise ValueError("spec and grid dimensions differ")
        self.spec, self.grid = spec, grid
        beta = spec.beta
        diff = None if spec.diffusion_factor is None else (lambda m: spec.diffusion_matrix(m) / beta)
        self.forward, self.generator = flux_operators(grid, spec.drift, diff)
        nodes = grid.flat_nodes
        self.drift_nodes = np.asarray(spec.drift(nodes), float)
        self.A_nodes = spec.diffusion_matrix(nodes)
        self.D = [derivative_matrix(grid, a) for a in range(grid.dim)]
        gen_drift = sp.csr_matrix((grid.size, grid.size))
        for a in range(grid.dim):
            gen_drift = gen_drift + sp.diags(self.drift_nodes[:, a]) @ self.D[a]
        self.generator = (self.generator + gen_drift).tocsr()
        self.zero_diffusion = spec.diffusion_factor is None or not np.any(self.A_nodes)

    def gradient(self, values) -> np.ndarray:
        v = np.asarray(values, float).ravel()
        return np.stack([Da @ v for Da in self.D], axis=-1)

    def current(self, rho) -> np.ndarray:
        """j = b rho - beta^-1 A grad rho at the nodes, shape (N, dim)."""
        r = np.asarray(rho, float).ravel()
        j = self.drift_nodes * r[:, None]
        if not self.zero_diffusion:
            j = j - np.einsum("nij,nj->ni", self.A_nodes, self.gradient(r)) / self.spec.beta
        return j


def band_steps(grid: Grid, band: float) -> int:
    """Number of index offsets per side removed by a band of half-width ``band`` (at least 1)."""
    h = min(grid.spacing)
    return max(1, int(math.ceil(band / h - 1e-9)))


def band_diffusion_coefficient(kernel: JumpKernel, grid: Grid, band: float) -> float:
    """Diffusivity replacing the excluded near-diagonal band of a singular 1D kernel.

    For k = c |z|^-gamma and a trapezoid sum over offsets |j| >= m the missing
    second-order contribution is -zeta(gamma-2, m) c h^(3-gamma) f''.
    """
    if grid.dim != 1 or kernel.singularity_order is None or kernel.singular_coefficient is None:
        return 0.0
    gam = kernel.singularity_order
    if not 1.0 <= gam < 3.0:
        return 0.0
    s = gam - 2.0
    m = band_steps(grid, band)
    hz = float(zeta(s)) - sum(j ** (-s) for j in range(1, m))
    h = grid.spacing[0]
    return -hz * kernel.singular_coefficient * h ** (3.0 - gam)


class JumpOperator:
    """Dense trapezoidal quadrature of the jump part with a diagonal band removed."""

    def __init__(self, kernel: JumpKernel, grid: Grid, band: Optional[float] = None):
        self.kernel, self.grid = kernel, grid
        self.band = min(grid.spacing) if band is None else float(band)
        self.w = grid.weights.ravel()
        self.N = grid.size
        self.zero = kernel.zero
        self.band_diffusion = 0.0
        if self.zero:
            self.K = None
            self.R = np.zeros(self.N)
            self.forward = sp.csr_matrix((self.N, self.N))
            self.generator = sp.csr_matrix((self.N, self.N))
            return
        nodes = grid.flat_nodes
        dist = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=-1)
        self.mask = dist >= self.band * (1 - 1e-9)
        with np.errstate(divide="ignore", invalid="ignore"):
            K = np.asarray(kernel(nodes[:, None, :], nodes[None, :, :]), float)
        K = np.where(self.mask, K, 0.0)
        if not np.all(np.isfinite(K)):
            raise KernelSingularityError("kernel is not finite outside the diagonal band; increase the band")
        if np.any(K < 0):
            raise KernelSingularityError("kernel returned negative rates")
        self.K = K
        self.R = K @ self.w
        self.band_diffusion = band_diffusion_coefficient(kernel, grid, self.band)
        lap_f, lap_b = (sp.csr_matrix((self.N, self.N)),) * 2
        if self.band_diffusion:
            dd = self.band_diffusion
            lap_f, lap_b = flux_operators(grid, None, lambda m: np.full((len(m), 1, 1), dd))
        self.laplacian_forward, self.laplacian_backward = lap_f, lap_b
        self.forward = K.T * self.w[None, :] - np.diag(self.R) + lap_f.toarray()
        self.generator = K * self.w[None, :] - np.diag(self.R) + lap_b.toarray()

    @property
    def log_K(self) -> Optional[np.ndarray]:
        """log K where K > 0 and 0 elsewhere, computed once."""
        if self.K is None:
            return None
        if getattr(self, "_log_K", None) is None:
            pos = self.K > 0
            self._log_K = np.where(pos, np.log(np.where(pos, self.K, 1.0)), 0.0)
        return self._log_K

    def pair_flux(self, rho) -> np.ndarray:
        """P_ij = rho_i k(x_i, x_j) with the band removed."""
        return np.asarray(rho, float).ravel()[:, None] * self.K


@dataclass(frozen=True)
class Exterior:
    """Contributions from outside a 1D box, assuming a power-law exterior density."""

    exit_rate: np.ndarray  # integral of k(x_i, y) over the exterior
    gain: np.ndarray  # integral of rho_tail(y) k(y, x_i) over the exterior
    edges: tuple


def _exterior_integral(fun, left: float, right: float):
    opts = dict(epsabs=1e-14, epsrel=1e-10, limit=2000)
    a, _ = quad_vec(lambda s: fun(right + s), 0.0, np.inf, **opts)
    b, _ = quad_vec(lambda s: fun(left - s), 0.0, np.inf, **opts)
    return a + b


def exterior_terms(kernel: JumpKernel, grid: Grid, tail: PowerLawTail) -> Exterior:
    """Exit rates and tail gains for the nodes of a 1D grid, exterior starting half a cell out."""
    if grid.dim != 1:
        raise ValueError("exterior terms are one dimensional")
    x = grid.axes[0]
    h = grid.spacing[0]
    left, right = grid.lower[0] - 0.5 * h, grid.upper[0] + 0.5 * h

    def k_out(y):
        return kernel(x[:, None], np.full((len(x), 1), y))

    def k_in(y):
        return kernel(np.full((len(x), 1), y), x[:, None])

    exit_rate = _exterior_integral(k_out, left, right)
    gain = _exterior_integral(lambda y: tail.density(y) * k_in(y), left, right)
    return Exterior(np.asarray(exit_rate), np.asarray(gain), (left, right))


def exterior_pair_integral(fun, grid: Grid):
    """Integral over the exterior y of fun(y) -> per-node vector."""
    h = grid.spacing[0]
    return np.asarray(_exterior_integral(fun, grid.lower[0] - 0.5 * h, grid.upper[0] + 0.5 * h))
