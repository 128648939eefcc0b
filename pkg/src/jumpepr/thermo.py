"""Entropy, energy, work, heat, entropy production and free energy of grid densities."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .density import DensityField, log_density_gradient
from .errors import AssumptionViolation, KernelPositivityError
from .fokker_planck import CurrentField, currents as compute_currents, get_discretization
from .model import JumpKernel, ProcessSpec
from .operators import exterior_pair_integral

BLOCK = 512


@dataclass(frozen=True)
class ForceDecomposition:
    """Potential V, local external force f_loc and nonlocal driving f_nl."""

    potential: Callable
    local_external: Callable
    nonlocal_driving: Optional[Callable] = None

    def with_jump_driving(self, kernel: JumpKernel, beta: float) -> "ForceDecomposition":
        return ForceDecomposition(self.potential, self.local_external,
                                  decompose_jump_driving(kernel, self, beta))

    def consistency_error(self, spec: ProcessSpec, probes, step: float = 1e-5) -> float:
        """max |A^-1 b + grad V - f_loc| over probe points."""
        x = np.asarray(probes, float).reshape(-1, spec.dim)
        A = spec.diffusion_matrix(x)
        lhs = np.linalg.solve(A, np.asarray(spec.drift(x), float)[..., None])[..., 0]
        gradV = np.stack([(self.potential(x + step * e) - self.potential(x - step * e)) / (2 * step)
                          for e in np.eye(spec.dim)], axis=-1)
        return float(np.max(np.abs(lhs + gradV - self.local_external(x))))


def gibbs_entropy(field: DensityField) -> float:
    """-sum w rho log rho with 0 log 0 = 0."""
    v = field.values
    pos = v > 0
    ent = np.zeros_like(v)
    ent[pos] = -v[pos] * np.log(v[pos])
    return field.grid.integrate(ent)


def internal_energy(field: DensityField, decomposition: ForceDecomposition) -> float:
    return field.grid.integrate(np.asarray(decomposition.potential(field.grid.nodes)) * field.values)


def kl_divergence(p: DensityField, q: DensityField, floor: Optional[float] = None) -> float:
    """Trapezoidal relative entropy of p with respect to q on a shared grid."""
    floor = q.default_floor() if floor is None else floor
    pv, qv = p.values, np.maximum(q.values, floor)
    pos = pv > 0
    out = np.zeros_like(pv)
    out[pos] = pv[pos] * np.log(pv[pos] / qv[pos])
    return p.grid.integrate(out)


@dataclass(frozen=True)
class FreeEnergy:
    value: float  # U - theta S
    kl_form: Optional[float] = None  # theta * KL(rho | rho_ss) for a Gibbs reference
    offset: Optional[float] = None  # value - kl_form, equal to -theta log Z


def free_energy(field: DensityField, decomposition: ForceDecomposition, theta: float,
                gibbs_reference: Optional[DensityField] = None) -> FreeEnergy:
    value = internal_energy(field, decomposition) - theta * gibbs_entropy(field)
    if gibbs_reference is None:
        return FreeEnergy(value)
    kl = theta * kl_divergence(field, gibbs_reference)
    return FreeEnergy(value, kl, value - kl)


def _pair_weights(field):
    w = field.grid.weights.ravel()
    return w[:, None] * w[None, :]


def driving_matrix(grid, decomposition: ForceDecomposition) -> Optional[np.ndarray]:
    """Nonlocal driving force f_nl(x_i, x_j) on all node pairs."""
    if decomposition.nonlocal_driving is None:
        return None
    nodes = grid.flat_nodes
    return np.asarray(decomposition.nonlocal_driving(nodes[:, None, :], nodes[None, :, :]), float)


def work_rate(field: DensityField, currents: CurrentField, decomposition: ForceDecomposition,
              driving: Optional[np.ndarray] = None) -> float:
    """Local force times local current plus half the nonlocal current times the nonlocal driving.

    ``driving`` is an optional precomputed result of ``driving_matrix``.
    """
    grid = field.grid
    floc = np.broadcast_to(np.asarray(decomposition.local_external(grid.nodes), float), currents.local.shape)
    total = grid.integrate(np.sum(floc * currents.local, axis=-1))
    if currents.nonlocal_ is not None and decomposition.nonlocal_driving is not None:
        fnl = driving_matrix(grid, decomposition) if driving is None else driving
        J = np.where(currents.band_mask, currents.nonlocal_ * fnl, 0.0)
        total += 0.5 * float(np.sum(_pair_weights(field) * J))
    return float(total)


def _local_inverse_drift(spec, disc):
    """A^-1 b at nodes, or None when A vanishes identically."""
    A = disc.local.A_nodes
    if disc.local.zero_diffusion:
        return None
    eig = np.linalg.eigvalsh(A)
    if eig.min() <= 0:
        raise AssumptionViolation("A is singular but not identically zero")
    return np.linalg.solve(A, disc.local.drift_nodes[..., None])[..., 0]


def _log_kernel_ratio(K, mask, active, cache: Optional[dict] = None):
    """log(K_ij / K_ji) where both are positive; errors on one-sided zeros among active pairs."""
    Kt = K.T
    pos, post = K > 0, Kt > 0
    if np.any((pos != post) & mask & active):
        raise KernelPositivityError("kernel vanishes one way only on a pair with positive density")
    if cache is not None and "log_ratio" in cache:
        return cache["log_ratio"]
    both = pos & post & mask
    out = np.zeros_like(K)
    out[both] = np.log(K[both]) - np.log(Kt[both])
    if cache is not None:
        cache["log_ratio"] = out
    return out


def heat_dissipation(spec: ProcessSpec, kernel: JumpKernel, field: DensityField,
                     currents: Optional[CurrentField] = None, floor: Optional[float] = None,
                     disc=None, cache: Optional[dict] = None) -> float:
    """-beta int b^T A^-1 j_loc - 1/2 double int j_nl log(k(x,y)/k(y,x))."""
    disc = get_discretization(spec, kernel, field.grid, None, disc)
    if currents is None:
        currents = compute_currents(spec, kernel, field, disc=disc)
    grid = field.grid
    total = 0.0
    u = _local_inverse_drift(spec, disc)
    if u is not None:
        jl = currents.local.reshape(-1, grid.dim)
        total -= spec.beta * float(np.sum(grid.weights.ravel() * np.sum(u * jl, axis=-1)))
    if currents.nonlocal_ is not None and not kernel.symmetric:
        floor = field.default_floor() if floor is None else floor
        rho = field.values.ravel()
        active = (rho[:, None] >= floor) & (rho[None, :] >= floor)
        lr = _log_kernel_ratio(disc.jump.K, disc.jump.mask, active, cache)
        total -= 0.5 * float(np.sum(_pair_weights(field) * currents.nonlocal_ * lr * active))
    return float(total)


@dataclass(frozen=True)
class EPRResult:
    """Entropy production rate split into local and nonlocal parts with quadrature diagnostics."""

    ep_local: float
    ep_nonlocal: float
    nonlocal_box: float = 0.0
    band_correction: float = 0.0
    exterior_correction: float = 0.0
    skipped_pairs: int = 0
    skipped_mass: float = 0.0
    coverage_warning: bool = False
    min_integrand_ratio: float = 0.0

    @property
    def ep_total(self) -> float:
        return self.ep_local + self.ep_nonlocal

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ep_total"] = self.ep_total
        return d


def local_epr(spec, field, disc, floor) -> tuple:
    if disc.local.zero_diffusion:
        return 0.0, 0
    grid = field.grid
    u0 = _local_inverse_drift(spec, disc)
    rho = field.values.ravel()
    g, floored = log_density_gradient(field, floor)
    u = u0 - g.reshape(-1, grid.dim) / spec.beta
    quad = np.einsum("ni,nij,nj->n", u, disc.local.A_nodes, u)
    keep = rho >= floor
    return spec.beta * float(np.sum(grid.weights.ravel() * quad * rho * keep)), floored


def _nonlocal_box(K, mask, rho, w, floor, logK=None):
    """Half the weighted pair sum of (P - P^T) log(P / P^T) with P_ij = rho_i K_ij."""
    N = len(rho)
    ok = rho >= floor
    logr = np.full(N, -np.inf)
    logr[ok] = np.log(rho[ok])
    total = 0.0
    worst = 0.0
    peak = 0.0
    for s in range(0, N, BLOCK):
        sl = slice(s, s + BLOCK)
        Kb, Ktb = K[sl, :], K[:, sl].T
        active = ok[sl, None] & ok[None, :] & mask[sl, :]
        pos, post = Kb > 0, Ktb > 0
        if np.any((pos != post) & active):
            raise KernelPositivityError("kernel vanishes one way only on a pair with positive density")
        both = active & pos & post
        P = rho[sl, None] * Kb
        Pt = rho[None, :] * Ktb
        G = np.zeros_like(P)
        if logK is not None:
            lk, lkt = logK[sl, :], logK[:, sl].T
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                lk, lkt = np.log(np.where(both, Kb, 1.0)), np.log(np.where(both, Ktb, 1.0))
        with np.errstate(invalid="ignore"):
            lp = logr[sl, None] + lk
            lpt = logr[None, :] + lkt
        G[both] = (P[both] - Pt[both]) * (lp[both] - lpt[both])
        if G.size:
            worst = min(worst, float(G.min()))
            peak = max(peak, float(G.max()))
        total += float(np.sum(w[sl, None] * w[None, :] * np.clip(G, 0.0, None)))
    return 0.5 * total, (worst / peak if peak > 0 else 0.0)


def entropy_production_rate(spec: ProcessSpec, kernel: JumpKernel, field: DensityField,
                            floor: Optional[float] = None, band: Optional[float] = None,
                            exterior: Optional[bool] = None, disc=None) -> EPRResult:
    """Local and nonlocal entropy production rates of the density under the given dynamics.

    Pairs inside the diagonal band or with a density below the floor are
    skipped. For singular 1D kernels the band is restored through its
    Fisher-information term. When the field carries a tail model the pairs
    with one point outside the box are added by quadrature (pairs with both
    points outside are neglected).
    """
    disc = get_discretization(spec, kernel, field.grid, band, disc)
    floor = field.default_floor() if floor is None else floor
    grid = field.grid
    ep_loc, floored = local_epr(spec, field, disc, floor)
    rho_box = field.values.ravel()
    skipped_mass = float(np.sum(grid.weights.ravel() * rho_box * (rho_box < floor)))
    N = grid.size
    n_low = int(np.sum(rho_box < floor))
    skipped_pairs = N * N - (N - n_low) ** 2
    if disc.jump.zero:
        return EPRResult(ep_loc, 0.0, skipped_pairs=skipped_pairs, skipped_mass=skipped_mass,
                         coverage_warning=skipped_mass > 0.01)
    use_ext = field.tail is not None and grid.dim == 1 if exterior is None else exterior
    scale = 1.0 - field.tail_mass if use_ext else 1.0
    rho = rho_box * scale
    w = disc.w
    box, ratio = _nonlocal_box(disc.jump.K, disc.jump.mask, rho, w, floor * scale, disc.jump.log_K)
    band_term = 0.0
    if disc.jump.band_diffusion:
        g, _ = log_density_gradient(field, floor)
        g = g.reshape(-1)
        band_term = disc.jump.band_diffusion * float(np.sum(w * rho * g * g * (rho_box >= floor)))
    ext_term = 0.0
    if use_ext and field.tail is not None:
        ext_term = _exterior_epr(kernel, field, rho, floor * scale)
    ep_nl = box + band_term + ext_term
    return EPRResult(ep_loc, ep_nl, box, band_term, ext_term, skipped_pairs, skipped_mass,
                     skipped_mass > 0.01, ratio)


def _exterior_epr(kernel, field, rho, floor):
    """Pairs with x in the box and y outside it, using the tail model for rho(y)."""
    grid = field.grid
    x = grid.axes[0]
    ok = rho >= floor
    tail = field.tail

    def integrand(y):
        yy = np.full((len(x), 1), y)
        kxy = kernel(x[:, None], yy)
        kyx = kernel(yy, x[:, None])
        rt = tail.density(y)
        a, b = rho * kxy, rt * kyx
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (a - b) * (np.log(a) - np.log(b))
        return np.where(ok & (a > 0) & (b > 0), val, 0.0)

    per_node = exterior_pair_integral(integrand, grid)
    return float(np.sum(grid.weights.ravel() * per_node))


def entropy_rate(snapshots: Sequence[DensityField]) -> np.ndarray:
    """Time derivative of the Gibbs entropy by central differences over the snapshots."""
    if len(snapshots) < 3:
        raise ValueError("entropy_rate needs at least 3 snapshots")
    t = np.array([s.time for s in snapshots])
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("snapshots must have a uniform time stride")
    S = np.array([gibbs_entropy(s) for s in snapshots])
    return np.gradient(S, t, edge_order=2)


def decompose_forces_1d(spec: ProcessSpec, reference_point: float = 0.0, f_loc: float = 0.0,
                        lower: float = -10.0, upper: float = 10.0, points: int = 2001) -> ForceDecomposition:
    """Potential V with V' = f_loc - b/A, integrated from the reference point.

    The integral is tabulated by cumulative Simpson on [lower, upper] and
    interpolated with a cubic spline.
    """
    if spec.dim != 1:
        raise ValueError("decompose_forces_1d needs a one-dimensional spec")
    xs = np.linspace(min(lower, reference_point), max(upper, reference_point), points)
    pts = xs[:, None]
    A = spec.diffusion_matrix(pts)[:, 0, 0]
    b = np.asarray(spec.drift(pts), float)[:, 0]
    if np.any((A <= 0) & (b != 0)):
        raise AssumptionViolation("A vanishes at a probe point where the drift does not")
    g = f_loc - np.divide(b, A, out=np.zeros_like(b), where=A > 0)
    V = cumulative_simpson(g, x=xs, initial=0.0)
    spline = CubicSpline(xs, V)
    V0 = float(spline(reference_point))

    def potential(x):
        x = np.asarray(x, float)
        return spline(x[..., 0]) - V0

    def local_external(x):
        return np.full(np.shape(x), float(f_loc))

    return ForceDecomposition(potential, local_external)


def decompose_jump_driving(kernel: JumpKernel, decomposition: ForceDecomposition, beta: float) -> Callable:
    """f_nl(x, y) = beta^-1 log(k(x,y)/k(y,x)) - (V(x) - V(y)), antisymmetric by construction."""
    V = decomposition.potential

    def driving(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        kxy, kyx = kernel(x, y), kernel(y, x)
        if np.any((kxy > 0) != (kyx > 0)):
            raise KernelPositivityError("kernel vanishes one way only")
        both = (kxy > 0) & (kyx > 0)
        lr = np.zeros(np.shape(kxy))
        lr[both] = np.log(kxy[both]) - np.log(kyx[both])
        return lr / beta - (V(x) - V(y))

    return driving


@dataclass
class ThermoSeries:
    times: np.ndarray
    entropy: np.ndarray
    internal_energy: np.ndarray
    work_rate: np.ndarray
    heat_dissipation: np.ndarray
    epr_local: np.ndarray
    epr_nonlocal: np.ndarray
    epr_total: np.ndarray
    free_energy: np.ndarray
    entropy_rate: np.ndarray
    balance_residual: np.ndarray
    meta: dict = field(default_factory=dict)

    HEADER = "t,S,U,dW,hd,ep_loc,ep_nl,ep,F,balance_residual"

    def table(self) -> np.ndarray:
        return np.column_stack([self.times, self.entropy, self.internal_energy, self.work_rate,
                                self.heat_dissipation, self.epr_local, self.epr_nonlocal, self.epr_total,
                                self.free_energy, self.balance_residual])

    def to_csv(self, path) -> None:
        np.savetxt(path, self.table(), delimiter=",", header=self.HEADER, comments="", fmt="%.17g")

    def to_json(self, path=None, **metadata) -> str:
        doc = {"meta": {**self.meta, **metadata}}
        for name in ("times", "entropy", "internal_energy", "work_rate", "heat_dissipation", "epr_local",
                     "epr_nonlocal", "epr_total", "free_energy", "entropy_rate", "balance_residual"):
            doc[name] = [float(v) for v in getattr(self, name)]
        text = json.dumps(doc, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def relative_balance(self) -> np.ndarray:
        scale = np.maximum.reduce([np.abs(self.entropy_rate), self.epr_total,
                                   np.abs(self.heat_dissipation), np.full(len(self.times), 1e-6)])
        return self.balance_residual / scale


def thermo_series(spec: ProcessSpec, kernel: JumpKernel, snapshots: Sequence[DensityField],
                  decomposition: ForceDecomposition, theta: Optional[float] = None,
                  band: Optional[float] = None) -> ThermoSeries:
    """Evaluate every functional on each snapshot; the balance residual is |dS/dt - (e_p + h_d)|."""
    theta = 1.0 / spec.beta if theta is None else theta
    disc = get_discretization(spec, kernel, snapshots[0].grid, band)
    rows = []
    fnl = None if disc.jump.zero else driving_matrix(snapshots[0].grid, decomposition)
    cache = {}
    for snap in snapshots:
        cur = compute_currents(spec, kernel, snap, disc=disc)
        ep = entropy_production_rate(spec, kernel, snap, disc=disc, exterior=False)
        rows.append((gibbs_entropy(snap), internal_energy(snap, decomposition),
                     work_rate(snap, cur, decomposition, fnl),
                     heat_dissipation(spec, kernel, snap, cur, disc=disc, cache=cache), ep.ep_local, ep.ep_nonlocal))
    S, U, W, hd, el, en = (np.array(c) for c in zip(*rows))
    times = np.array([s.time for s in snapshots])
    dS = entropy_rate(snapshots)
    ep = el + en
    return ThermoSeries(times, S, U, W, hd, el, en, ep, U - theta * S, dS, np.abs(dS - (ep + hd)),
                        {"theta": theta, "band": disc.band})
