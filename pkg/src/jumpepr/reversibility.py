"""Joint check of reversibility, detailed balance, gradient structure and zero entropy production.

The four conditions are equivalent for the processes handled here, so a
sound numerical report should see them all pass or all fail. Each check
produces a residual compared with a calibrated threshold.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .density import DensityField, LogDensity
from .errors import NonStationaryError
from .fokker_planck import currents, get_discretization, stationary_residual
from .model import JumpKernel, ProcessSpec
from .simulate import PathEnsemble
from .thermo import entropy_production_rate


@dataclass(frozen=True)
class Thresholds:
    """Pass/fail bands for the reference grids of the built-in examples.

    Every residual of the built-in matrix sits at least a factor 10 away
    from its threshold (see the acceptance suite).
    """

    stationarity: float = 1e-2
    db_local: float = 1e-2
    db_nonlocal: float = 1e-3
    generator_asymmetry: float = 1e-2
    gradient_drift: float = 1e-3
    gradient_kernel: float = 1e-3
    epr: float = 1e-3

    def scaled(self, factor: float) -> "Thresholds":
        return Thresholds(**{k: v * factor for k, v in asdict(self).items()})


@dataclass(frozen=True)
class DetailedBalanceResult:
    local_residual: float
    nonlocal_residual: float
    stationary_residual: float

    def __iter__(self):
        return iter((self.local_residual, self.nonlocal_residual))


def _precheck(spec, kernel, rho_ss, limit, band=None, disc=None) -> float:
    r = stationary_residual(spec, kernel, rho_ss, band, disc=disc)
    if not r < limit:
        raise NonStationaryError(f"density is not stationary for this process: residual {r:.3g} "
                                 f"(limit {limit:.3g})", r)
    return r


def check_detailed_balance(spec: ProcessSpec, kernel: JumpKernel, rho_ss: DensityField,
                           thresholds: Optional[Thresholds] = None, band: Optional[float] = None,
                           disc=None) -> DetailedBalanceResult:
    """Sizes of the local and nonlocal currents at the stationary density.

    The local residual is the integral of |j_loc| (the mass-weighted mean
    velocity); the nonlocal residual is the largest pair current
    |rho(x)k(x,y) - rho(y)k(y,x)| outside the diagonal band.
    """
    th = thresholds or Thresholds()
    disc = get_discretization(spec, kernel, rho_ss.grid, band, disc)
    res = _precheck(spec, kernel, rho_ss, th.stationarity, band, disc)
    cur = currents(spec, kernel, rho_ss, disc=disc)
    speed = np.linalg.norm(cur.local, axis=-1)
    local = float(rho_ss.grid.integrate(speed))
    nonlocal_ = 0.0 if cur.nonlocal_ is None else float(np.max(np.abs(cur.nonlocal_)))
    return DetailedBalanceResult(local, nonlocal_, res)


def default_test_functions(dim: int) -> list:
    """Gaussian bumps at c in {-2,...,2} along the first axis plus x exp(-x^2/4)."""
    fs = [(lambda x, c=c: np.exp(-0.5 * np.sum((x - c * np.eye(dim)[0]) ** 2, axis=-1)))
          for c in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    fs.append(lambda x: x[..., 0] * np.exp(-0.25 * np.sum(x ** 2, axis=-1)))
    if dim == 2:
        fs.append(lambda x: x[..., 1] * np.exp(-0.25 * np.sum(x ** 2, axis=-1)))
    return fs


def asymmetry_matrix(spec, kernel, rho_ss: DensityField, test_functions: Optional[Sequence[Callable]] = None,
                     band=None, disc=None) -> np.ndarray:
    """M[i, j] = (<L f_i, f_j> - <L f_j, f_i>) / (|f_i| |f_j|) in L2(rho_ss); antisymmetric."""
    disc = get_discretization(spec, kernel, rho_ss.grid, band, disc)
    fs = test_functions if test_functions is not None else default_test_functions(spec.dim)
    nodes = rho_ss.grid.flat_nodes
    F = np.column_stack([np.asarray(f(nodes), float) for f in fs])
    mu = disc.w * rho_ss.values.ravel()
    LF = disc.generator @ F
    G = (LF * mu[:, None]).T @ F  # G[i, j] = <L f_i, f_j>
    norms = np.sqrt(np.einsum("ni,ni,n->i", F, F, mu))
    return (G - G.T) / np.outer(norms, norms)


def generator_asymmetry(spec, kernel, rho_ss: DensityField, test_functions: Optional[Sequence[Callable]] = None,
                        band=None, disc=None) -> float:
    """Largest normalized asymmetry of the discrete generator over the test-function pairs."""
    return float(np.max(np.abs(asymmetry_matrix(spec, kernel, rho_ss, test_functions, band, disc))))


def _fd_gradient(V, x, step=1e-5):
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for a in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[a] = step
        g[..., a] = (np.asarray(V(x + e)) - np.asarray(V(x - e))) / (2 * step)
    return g


def check_gradient_structure(spec: ProcessSpec, kernel: JumpKernel, potential: Callable, beta: Optional[float] = None,
                             probes=None, gradient: Optional[Callable] = None) -> tuple:
    """Residuals of b = -A grad V and of the symmetry of s(x,y) = k(x,y) exp(beta [V(y)-V(x)] / 2).

    ``probes`` are points of shape (n, dim) covering the bulk of the
    stationary mass; ``gradient`` overrides the finite-difference gradient
    of V. Returns (drift_residual, kernel_symmetry_residual).
    """
    beta = spec.beta if beta is None else beta
    if probes is None:
        probes = np.linspace(-4, 4, 81)[:, None] if spec.dim == 1 else \
            np.stack(np.meshgrid(np.linspace(-4, 4, 21), np.linspace(-4, 4, 21), indexing="ij"), -1).reshape(-1, 2)
    x = np.asarray(probes, float)
    gV = gradient(x) if gradient is not None else _fd_gradient(potential, x)
    A = spec.diffusion_matrix(x)
    b = np.asarray(spec.drift(x), float)
    drift_res = float(np.max(np.linalg.norm(b + np.einsum("nij,nj->ni", A, gV), axis=-1)))
    if kernel.zero:
        return drift_res, 0.0
    V = np.asarray(potential(x), float)
    xi, yj = x[:, None, :], x[None, :, :]
    off = ~np.eye(len(x), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        k = np.asarray(kernel(xi, yj), float)
        s = k * np.exp(0.5 * beta * (V[None, :] - V[:, None]))
    s = np.where(off, s, 0.0)
    smax = float(np.max(s))
    if smax == 0:
        return drift_res, 0.0
    return drift_res, float(np.max(np.abs(s - s.T))) / smax


@dataclass(frozen=True)
class ReversibilityReport:
    db_local_residual: float
    db_nonlocal_residual: float
    generator_asymmetry: float
    gradient_structure_residual: float
    epr_ss: float
    thresholds: Thresholds
    stationary_residual: float = 0.0
    gradient_drift_residual: float = 0.0
    gradient_kernel_residual: float = 0.0
    potential_source: str = "given"
    notes: list = field(default_factory=list)

    @property
    def passes(self) -> dict:
        th = self.thresholds
        return {
            "detailed_balance": self.db_local_residual < th.db_local and self.db_nonlocal_residual < th.db_nonlocal,
            "generator_symmetry": self.generator_asymmetry < th.generator_asymmetry,
            "gradient_structure": (self.gradient_drift_residual < th.gradient_drift
                                   and self.gradient_kernel_residual < th.gradient_kernel),
            "zero_entropy_production": self.epr_ss < th.epr,
        }

    @property
    def verdict_consistent(self) -> bool:
        flags = list(self.passes.values())
        return all(flags) or not any(flags)

    @property
    def verdict(self) -> str:
        if not self.verdict_consistent:
            return "inconsistent"
        return "reversible" if all(self.passes.values()) else "irreversible"

    def separations(self) -> dict:
        """Ratio of threshold to residual (passing) or residual to threshold (failing), per residual."""
        th = self.thresholds
        pairs = {"db_local": (self.db_local_residual, th.db_local),
                 "db_nonlocal": (self.db_nonlocal_residual, th.db_nonlocal),
                 "generator_asymmetry": (self.generator_asymmetry, th.generator_asymmetry),
                 "gradient_drift": (self.gradient_drift_residual, th.gradient_drift),
                 "gradient_kernel": (self.gradient_kernel_residual, th.gradient_kernel),
                 "epr": (abs(self.epr_ss), th.epr)}
        out = {}
        for k, (r, t) in pairs.items():
            out[k] = np.inf if r == 0 else (t / r if r < t else r / t)
        return out

    def to_dict(self) -> dict:
        return {
            "db_local_residual": self.db_local_residual, "db_nonlocal_residual": self.db_nonlocal_residual,
            "generator_asymmetry": self.generator_asymmetry,
            "gradient_structure_residual": self.gradient_structure_residual,
            "gradient_drift_residual": self.gradient_drift_residual,
            "gradient_kernel_residual": self.gradient_kernel_residual,
            "epr_ss": self.epr_ss, "stationary_residual": self.stationary_residual,
            "thresholds": asdict(self.thresholds), "passes": self.passes,
            "verdict_consistent": self.verdict_consistent, "verdict": self.verdict,
            "potential_source": self.potential_source, "notes": list(self.notes),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=float, **kw)


def bulk_probes(rho_ss: DensityField, fraction: float = 1e-4, max_points: int = 400) -> np.ndarray:
    """Grid nodes where the density exceeds ``fraction`` of its maximum, thinned to at most ``max_points``."""
    nodes = rho_ss.grid.flat_nodes
    keep = nodes[rho_ss.values.ravel() >= fraction * rho_ss.values.max()]
    step = max(1, int(np.ceil(len(keep) / max_points)))
    return keep[::step]


def full_report(spec: ProcessSpec, kernel: JumpKernel, rho_ss: DensityField,
                thresholds: Optional[Thresholds] = None, potential: Optional[Callable] = None,
                band: Optional[float] = None) -> ReversibilityReport:
    """Run detailed balance, generator symmetry, gradient structure and EPR checks at rho_ss.

    Without an explicit potential, V = -log(rho_ss) / beta is used, which is
    the only potential compatible with rho_ss being the Gibbs measure.
    """
    th = thresholds or Thresholds()
    disc = get_discretization(spec, kernel, rho_ss.grid, band)
    db = check_detailed_balance(spec, kernel, rho_ss, th, band, disc)
    asym = generator_asymmetry(spec, kernel, rho_ss, band=band, disc=disc)
    probes = bulk_probes(rho_ss)
    notes = []
    if potential is None:
        ld = LogDensity(rho_ss)
        source = "minus_log_density"
        notes.append("potential taken as -log(rho_ss)/beta")
        V = (lambda x: -ld(x) / spec.beta)
        grad = (lambda x: -ld.gradient(x) / spec.beta)
    else:
        source, V, grad = "given", potential, None
    g_drift, g_kernel = check_gradient_structure(spec, kernel, V, spec.beta, probes, grad)
    ep = entropy_production_rate(spec, kernel, rho_ss, band=band, disc=disc).ep_total
    return ReversibilityReport(db.local_residual, db.nonlocal_residual, asym, max(g_drift, g_kernel), ep, th,
                               db.stationary_residual, g_drift, g_kernel, source, notes)


@dataclass(frozen=True)
class MCReversibilityResult:
    forward_corr: float
    backward_corr: float
    z_score: float
    forward_se: float
    backward_se: float

    def __iter__(self):
        return iter((self.forward_corr, self.backward_corr, self.z_score))


def mc_reversibility_test(ensemble: PathEnsemble, f: Callable, g: Callable, lag: float) -> MCReversibilityResult:
    """Compare E[f(X_{t+lag}) g(X_t)] with E[f(X_t) g(X_{t+lag})] over a stationary ensemble.

    All saved time origins are used. Each path contributes the mean over
    origins of the difference, and the z-score is the mean difference over
    its standard error across paths.
    """
    times = ensemble.times
    dt_saved = times[1] - times[0]
    shift = int(round(lag / dt_saved))
    if shift < 1 or abs(shift * dt_saved - lag) > 1e-9 * max(lag, 1.0):
        raise ValueError("lag must be a positive multiple of the saved time step")
    if shift >= len(times):
        raise ValueError("lag is beyond the path horizon")
    X = ensemble.states
    x0, x1 = X[:, :-shift], X[:, shift:]
    fwd = np.asarray(f(x1), float) * np.asarray(g(x0), float)
    bwd = np.asarray(f(x0), float) * np.asarray(g(x1), float)
    fwd_p, bwd_p = fwd.mean(axis=1), bwd.mean(axis=1)
    n = len(fwd_p)
    diff = fwd_p - bwd_p
    sd = float(diff.std(ddof=1)) if n > 1 else 0.0
    mean = float(diff.mean())
    if sd == 0:
        z = 0.0 if mean == 0 else np.copysign(np.inf, mean)
    else:
        z = mean / (sd / np.sqrt(n))
    se = lambda a: float(a.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MCReversibilityResult(float(fwd_p.mean()), float(bwd_p.mean()), float(z), se(fwd_p), se(bwd_p))


def default_pairs(dim: int) -> list:
    """Six bounded (name, f, g) pairs used by the aggregate Monte-Carlo test."""
    x = lambda s: s[..., 0]
    y = (lambda s: s[..., 1]) if dim > 1 else x
    return [
        ("step_vs_truncated", lambda s: (x(s) > 0).astype(float), lambda s: x(s) * (x(s) < 1)),
        ("tanh_vs_tanh3", lambda s: np.tanh(x(s)), lambda s: np.tanh(x(s)) ** 3),
        ("tanh_vs_bump", lambda s: np.tanh(x(s)), lambda s: np.exp(-x(s) ** 2)),
        ("atan_vs_step", lambda s: np.arctan(x(s)), lambda s: (x(s) > 1).astype(float)),
        ("tanh_x_vs_tanh_y", lambda s: np.tanh(x(s)), lambda s: np.tanh(y(s))) if dim > 1 else
        ("atan_vs_tanh2", lambda s: np.arctan(x(s)), lambda s: np.tanh(x(s)) ** 2),
        ("sin_vs_cos", lambda s: np.sin(x(s)), lambda s: np.cos(y(s))),
    ]


@dataclass(frozen=True)
class MCBattery:
    results: dict
    z_critical: float
    family_level: float

    @property
    def rejected(self) -> bool:
        return any(abs(r.z_score) > self.z_critical for r in self.results.values())

    def to_dict(self) -> dict:
        return {"family_level": self.family_level, "z_critical": self.z_critical, "rejected": self.rejected,
                "pairs": {k: {"forward_corr": r.forward_corr, "backward_corr": r.backward_corr,
                              "z_score": r.z_score} for k, r in self.results.items()}}


def mc_battery(ensemble: PathEnsemble, lag: float, pairs: Optional[list] = None,
               family_level: float = 0.01) -> MCBattery:
    """Bonferroni-corrected any-pair rejection of reversibility over the default pairs."""
    pairs = pairs if pairs is not None else default_pairs(ensemble.dim)
    zc = float(norm.isf(family_level / (2 * len(pairs))))
    res = {name: mc_reversibility_test(ensemble, f, g, lag) for name, f, g in pairs}
    return MCBattery(res, zc, family_level)
