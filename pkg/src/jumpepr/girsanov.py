"""Pathwise log-likelihood ratio between forward and stationary time-reversed path measures."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .density import DensityField, LogDensity
from .errors import ConfigurationError, EstimateRefused, FingerprintMismatch
from .fokker_planck import get_discretization
from .model import JumpKernel, ProcessSpec
from .simulate import Path, PathEnsemble, reversed_drift


@dataclass(frozen=True)
class LogRNAccumulator:
    """Terms of log(dP_R/dP) along one path."""

    martingale_part: float
    drift_part: float
    jump_log_part: float
    jump_compensator_part: float
    discarded: bool = False

    @property
    def total(self) -> float:
        return self.martingale_part + self.drift_part + self.jump_log_part + self.jump_compensator_part

    def __add__(self, other: "LogRNAccumulator") -> "LogRNAccumulator":
        return LogRNAccumulator(self.martingale_part + other.martingale_part, self.drift_part + other.drift_part,
                                self.jump_log_part + other.jump_log_part,
                                self.jump_compensator_part + other.jump_compensator_part,
                                self.discarded or other.discarded)


class ReversalContext:
    """Everything about the reversed dynamics that does not depend on the path.

    The compensator rate c(x) = (jump part of the forward operator applied to
    rho_ss)(x) / rho_ss(x) is tabulated on the density grid, including the band
    and exterior corrections, and interpolated; outside the box it is held at
    the boundary value.
    """

    def __init__(self, spec: ProcessSpec, kernel: JumpKernel, rho_ss: DensityField, band: Optional[float] = None):
        if spec.has_diffusion and not spec.constant_diffusion:
            raise ConfigurationError("the path functional needs a constant diffusion factor", "diffusion")
        if spec.stable_alpha is not None and spec.has_diffusion:
            raise ConfigurationError("stable drivers combined with diffusion are not supported", "diffusion")
        self.spec, self.kernel, self.rho = spec, kernel, rho_ss
        self.log_density = LogDensity(rho_ss)
        self.reversed_drift = reversed_drift(spec, rho_ss, self.log_density)
        grid = rho_ss.grid
        self.grid = grid
        if spec.has_diffusion:
            A = spec.diffusion_matrix(np.zeros((1, spec.dim)))[0]
            self.A_inv = np.linalg.inv(A)
        else:
            self.A_inv = None
        self.compensator_nodes = None
        if spec.has_jumps:
            disc = get_discretization(spec, kernel, grid, band)
            rho = rho_ss.true_values.ravel()
            rj = disc.jump.forward @ rho
            ext = disc.exterior(rho_ss.tail)
            if ext is not None:
                rj = rj + ext.gain - rho * ext.exit_rate
            ok = rho_ss.values.ravel() >= self.log_density.floor
            c = np.where(ok, rj / np.where(ok, rho, 1.0), np.nan)
            idx = np.nonzero(ok)[0]
            nearest = idx[np.clip(np.searchsorted(idx, np.arange(len(c))), 0, len(idx) - 1)]
            c = np.where(ok, c, c[nearest])
            self.compensator_nodes = c.reshape(grid.shape)
            if grid.dim == 1:
                self._c = CubicSpline(grid.axes[0], self.compensator_nodes)
            else:
                self._c = RectBivariateSpline(*grid.axes, self.compensator_nodes, kx=3, ky=3)

    def compensator(self, x) -> np.ndarray:
        """Rate c(x) at points of shape (..., dim)."""
        x = np.asarray(x, float)
        if self.compensator_nodes is None:
            return np.zeros(x.shape[:-1])
        flat = np.clip(x.reshape(-1, self.grid.dim), self.grid.lower, self.grid.upper)
        if self.grid.dim == 1:
            out = self._c(flat[:, 0])
        else:
            out = self._c(flat[:, 0], flat[:, 1], grid=False)
        return out.reshape(x.shape[:-1])

    def jump_log_ratio(self, pre, disp) -> np.ndarray:
        """log[k(y, x) rho(y) / (k(x, y) rho(x))] with y = x + disp."""
        post = pre + disp
        out = self.log_density(post) - self.log_density(pre)
        if not self.kernel.symmetric:
            out = out + np.log(self.kernel(post, pre)) - np.log(self.kernel(pre, post))
        return out


def _accumulate(states, jump_path, jump_step, jump_pre, jump_disp, dt, driver, ctx: ReversalContext,
                window=None):
    """Per-path arrays of the four terms over the steps in ``window`` (default: all)."""
    spec = ctx.spec
    P, S, d = states.shape
    n0, n1 = (0, S - 1) if window is None else window
    x = states[:, n0:n1, :]
    x_next = states[:, n0 + 1:n1 + 1, :]
    steps = n1 - n0
    discarded = np.zeros(P, dtype=bool)
    mart = np.zeros(P)
    drift = np.zeros(P)
    jlog = np.zeros(P)
    b_ito = spec.ito_drift(x.reshape(-1, d)).reshape(x.shape)
    sel = (jump_step >= n0) & (jump_step < n1)
    jp, js, jpre, jdisp = jump_path[sel], jump_step[sel] - n0, jump_pre[sel], jump_disp[sel]
    if driver == "stable":
        # every Euler increment of the driver is treated as one jump from the pre-step state
        dL = x_next - x - b_ito * dt
        pre = x.reshape(-1, d)
        lr = ctx.jump_log_ratio(pre, dL.reshape(-1, d)).reshape(P, steps)
        ok = ctx.log_density.reliable(pre + dL.reshape(-1, d)).reshape(P, steps)
        ok &= ctx.log_density.reliable(pre).reshape(P, steps)
        discarded |= ~np.all(ok & np.isfinite(lr), axis=1)
        jlog = np.where(np.isfinite(lr), lr, 0.0).sum(axis=1)
    elif len(jp):
        lr = ctx.jump_log_ratio(jpre, jdisp)
        ok = ctx.log_density.reliable(jpre + jdisp) & ctx.log_density.reliable(jpre) & np.isfinite(lr)
        discarded[jp[~ok]] = True
        jlog = np.bincount(jp[ok], weights=lr[ok], minlength=P)
    if spec.has_diffusion:
        jumps = np.zeros_like(x)
        if len(jp):
            np.add.at(jumps, (jp, js), jdisp)
        eta = x_next - x - jumps - b_ito * dt
        flat = x.reshape(-1, d)
        delta = (ctx.reversed_drift(flat) - np.asarray(spec.drift(flat), float)).reshape(x.shape)
        bad = ~np.all(np.isfinite(delta), axis=(1, 2))
        discarded |= bad
        delta = np.where(np.isfinite(delta), delta, 0.0)
        Ainv_delta = delta @ ctx.A_inv.T
        beta = spec.beta
        mart = 0.5 * beta * np.einsum("psi,psi->p", Ainv_delta, eta)
        drift = -0.25 * beta * dt * np.einsum("psi,psi->p", Ainv_delta, delta)
    comp = -dt * ctx.compensator(x.reshape(-1, d)).reshape(P, steps).sum(axis=1)
    return mart, drift, jlog, comp, discarded


def _check_fingerprint(found, spec):
    if found and found != spec.fingerprint:
        raise FingerprintMismatch("paths were generated by a different process specification")


def pathwise_log_rn(path: Path, spec: ProcessSpec, kernel: JumpKernel, rho_ss: DensityField,
                    window: Optional[tuple] = None, context: Optional[ReversalContext] = None) -> LogRNAccumulator:
    """log(dP_R/dP) along a single path, optionally restricted to steps [n0, n1)."""
    _check_fingerprint(path.spec_fingerprint, spec)
    ctx = context if context is not None else ReversalContext(spec, kernel, rho_ss)
    driver = "stable" if spec.stable_alpha is not None else "poisson"
    parts = _accumulate(path.states[None], np.zeros(len(path.jump_steps), dtype=int),
                        np.asarray(path.jump_steps, int), np.asarray(path.jump_pre, float).reshape(-1, spec.dim),
                        np.asarray(path.jump_disp, float).reshape(-1, spec.dim), path.dt, driver, ctx, window)
    m, dr, jl, c, disc = (float(p[0]) if p.dtype != bool else bool(p[0]) for p in parts)
    return LogRNAccumulator(m, dr, jl, c, disc)


@dataclass(frozen=True)
class EPRKLEstimate:
    epr_estimate: float
    standard_error: float
    discard_fraction: float
    n_retained: int
    martingale: np.ndarray
    drift: np.ndarray
    jump_log: np.ndarray
    compensator: np.ndarray
    discarded: np.ndarray
    t_final: float

    @property
    def totals(self) -> np.ndarray:
        return self.martingale + self.drift + self.jump_log + self.compensator

    def to_csv(self, path) -> None:
        ids = np.arange(len(self.totals))
        data = np.column_stack([ids, self.martingale, self.drift, self.jump_log, self.compensator, self.totals])
        np.savetxt(path, data, delimiter=",", header="path_id,martingale,drift,jump_log,compensator,total",
                   comments="", fmt=["%d"] + ["%.17g"] * 5)

    def to_dict(self) -> dict:
        return {"epr_estimate": self.epr_estimate, "standard_error": self.standard_error,
                "discard_fraction": self.discard_fraction, "n_retained": self.n_retained, "t_final": self.t_final}


def estimate_epr_kl(ensemble: PathEnsemble, spec: ProcessSpec, kernel: JumpKernel, rho_ss: DensityField,
                    band: Optional[float] = None, max_discard: float = 0.05, chunk: int = 1024) -> EPRKLEstimate:
    """Entropy production rate as relative entropy per unit time of forward versus reversed paths.

    The ensemble must start from rho_ss. Paths whose jumps touch states below
    the density floor are discarded; at ``max_discard`` or more the estimate is
    refused.
    """
    _check_fingerprint(ensemble.spec_fingerprint, spec)
    if ensemble.save_stride != 1:
        raise ValueError("the path functional needs every time step (save_stride = 1)")
    ctx = ReversalContext(spec, kernel, rho_ss, band)
    driver = "stable" if spec.stable_alpha is not None else "poisson"
    P = len(ensemble)
    out = [np.zeros(P) for _ in range(4)] + [np.zeros(P, dtype=bool)]
    for s in range(0, P, chunk):
        e = min(P, s + chunk)
        sel = (ensemble.jump_path >= s) & (ensemble.jump_path < e)
        parts = _accumulate(ensemble.states[s:e], ensemble.jump_path[sel] - s, ensemble.jump_step[sel],
                            ensemble.jump_pre[sel], ensemble.jump_disp[sel], ensemble.dt, driver, ctx)
        for o, p in zip(out, parts):
            o[s:e] = p
    mart, drift, jlog, comp, discarded = out
    frac = float(discarded.mean())
    T = ensemble.t_final
    if frac >= max_discard:
        raise EstimateRefused(f"{frac:.1%} of paths were discarded (limit {max_discard:.0%})")
    total = (mart + drift + jlog + comp)[~discarded]
    n = len(total)
    est = -float(total.mean()) / T
    se = float(total.std(ddof=1)) / np.sqrt(n) / T if n > 1 else float("nan")
    return EPRKLEstimate(est, se, frac, n, mart, drift, jlog, comp, discarded, T)
