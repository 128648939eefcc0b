"""Monte-Carlo paths of jump diffusions: forward, alpha-stable driven and time-reversed."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Callable, Optional, Union

import numpy as np

from .density import DensityField, LogDensity
from .errors import ConfigurationError, DivergenceError, ReversalUndefinedError
from .model import JumpKernel, ProcessSpec

CHUNK = 1024


def stable_increments(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Symmetric alpha-stable variates with characteristic function exp(-|xi|^alpha).

    Chambers-Mallows-Stuck transform of a uniform angle and an exponential.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    V = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size)
    W = rng.standard_exponential(size)
    if alpha == 1.0:
        return np.tan(V)
    return (np.sin(alpha * V) / np.cos(V) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * V) / W) ** ((1.0 - alpha) / alpha))


def sample_stable_stationary(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the stationary law of dX = -X dt + dL (scale alpha^(-1/alpha))."""
    return alpha ** (-1.0 / alpha) * stable_increments(alpha, size, rng)


@dataclass(frozen=True)
class Path:
    """One trajectory on a uniform time grid with its recorded jump events."""

    times: np.ndarray
    states: np.ndarray  # (steps + 1, dim)
    jump_steps: np.ndarray  # step n of a jump applied between times[n] and times[n+1]
    jump_pre: np.ndarray  # (J, dim) state the jump left from
    jump_disp: np.ndarray  # (J, dim) displacement
    seed: object = None
    index: int = 0
    spec_fingerprint: str = ""

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def jumps(self) -> list:
        return [(float(self.times[n]), p, d) for n, p, d in zip(self.jump_steps, self.jump_pre, self.jump_disp)]

    @property
    def jump_flag(self) -> np.ndarray:
        flag = np.zeros(len(self.times), dtype=int)
        flag[np.asarray(self.jump_steps, int) + 1] = 1
        return flag

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(d)] + ["jump_flag"])
        data = np.column_stack([self.times, self.states, self.jump_flag])
        fmt = ["%.17g"] * (d + 1) + ["%d"]
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


@dataclass
class PathEnsemble:
    """Paths sharing a spec, horizon and step size, stored as arrays."""

    times: np.ndarray
    states: np.ndarray  # (paths, saved times, dim)
    jump_path: np.ndarray
    jump_step: np.ndarray
    jump_pre: np.ndarray
    jump_disp: np.ndarray
    dt: float
    spec_fingerprint: str
    seed: object
    driver: str = "poisson"
    save_stride: int = 1
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def path(self, i: int) -> Path:
        sel = self.jump_path == i
        return Path(self.times, self.states[i], self.jump_step[sel], self.jump_pre[sel],
                    self.jump_disp[sel], self.seed, i, self.spec_fingerprint)

    @property
    def paths(self) -> list:
        return [self.path(i) for i in range(len(self))]

    def jump_counts(self) -> np.ndarray:
        return np.bincount(self.jump_path, minlength=len(self))

    def export(self, directory) -> list:
        """One CSV per path plus manifest.json; returns the written paths."""
        d = FilePath(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for i in range(len(self)):
            p = d / f"path_{i:06d}.csv"
            self.path(i).to_csv(p)
            written.append(p)
        manifest = {"seed": self.seed, "dt": self.dt, "T": self.t_final, "spec_fingerprint": self.spec_fingerprint,
                    "driver": self.driver, "paths": len(self), "save_stride": self.save_stride,
                    "files": [p.name for p in written]}
        mp = d / "manifest.json"
        mp.write_text(json.dumps(manifest, indent=2, default=str))
        return written + [mp]


InitialState = Union[np.ndarray, Callable[[np.random.Generator, int], np.ndarray]]


def _initial(x0, rng, n, dim, offset):
    if callable(x0):
        out = np.asarray(x0(rng, n), float).reshape(n, dim)
    else:
        a = np.asarray(x0, float)
        if a.ndim == 1 and len(a) != dim:
            a = a.reshape(-1, dim)
        if a.ndim <= 1:
            out = np.broadcast_to(a.reshape(-1)[:dim] if a.ndim else np.full(dim, float(a)), (n, dim)).copy()
        else:
            out = a[offset:offset + n].reshape(n, dim).copy()
    return out


def _step_count(t_final, dt):
    if not dt > 0 or not t_final > 0:
        raise ValueError("t_final and dt must be positive")
    n = int(round(t_final / dt))
    if n < 1 or abs(n * dt - t_final) > 1e-9 * t_final:
        raise ValueError("t_final must be a whole multiple of dt")
    return n


class _Stepper:
    """Vectorized Euler-Maruyama step shared by forward and reversed simulation."""

    def __init__(self, spec: ProcessSpec, dt: float, drift: Optional[Callable] = None,
                 jump_record_threshold: float = 0.125):
        self.spec, self.dt = spec, dt
        self.drift = drift if drift is not None else spec.ito_drift
        self.noise = math.sqrt(2.0 / spec.beta * dt) if spec.has_diffusion else 0.0
        self.threshold = jump_record_threshold
        self.poisson_rate = 0.0
        if spec.stable_alpha is None and spec.jump_rate > 0:
            if spec.levy_sampler is None or spec.levy_mass is None:
                raise ConfigurationError("simulation needs a Levy sampler and the Levy mass", "levy")
            self.poisson_rate = spec.jump_rate * spec.levy_mass
            if self.poisson_rate * dt >= 0.1:
                raise ValueError(f"jump intensity times dt = {self.poisson_rate * dt:.3g} must stay below 0.1")

    def continuous(self, x, rng):
        inc = np.asarray(self.drift(x), float) * self.dt
        if self.noise:
            xi = rng.standard_normal(x.shape)
            a = np.asarray(self.spec.diffusion_factor(x), float)
            a = np.broadcast_to(a, x.shape + (x.shape[-1],))
            inc = inc + self.noise * np.einsum("pij,pj->pi", a, xi)
        return inc

    def jumps(self, x, rng):
        """Compound-Poisson jumps from the pre-step state; returns (total, [(rows, pre, disp)])."""
        total = np.zeros_like(x)
        events = []
        spec = self.spec
        if spec.stable_alpha is not None:
            dL = stable_increments(spec.stable_alpha, x.shape, rng) * self.dt ** (1.0 / spec.stable_alpha)
            big = np.nonzero(np.linalg.norm(dL, axis=-1) > self.threshold)[0]
            if len(big):
                events.append((big, x[big].copy(), dL[big]))
            return dL, events
        if self.poisson_rate == 0:
            return total, events
        counts = rng.poisson(self.poisson_rate * self.dt, len(x))
        cur = x.copy()
        for c in range(int(counts.max(initial=0))):
            rows = np.nonzero(counts > c)[0]
            z = np.asarray(spec.levy_sampler(rng, len(rows)), float).reshape(len(rows), -1)
            pre = cur[rows]
            disp = np.asarray(spec.jump_map.forward(pre, z), float)
            cur[rows] = pre + disp
            total[rows] += disp
            events.append((rows, pre, disp))
        return total, events


def _run_chunk(stepper, x0, n_steps, rng, save_stride, t_offset=0):
    x = x0.copy()
    m, d = x.shape
    saved = [x.copy()]
    jp, js, jpre, jdisp = [], [], [], []
    for n in range(n_steps):
        inc = stepper.continuous(x, rng)
        jump_total, events = stepper.jumps(x, rng)
        for rows, pre, disp in events:
            jp.append(rows)
            js.append(np.full(len(rows), n))
            jpre.append(pre)
            jdisp.append(disp)
        x = x + inc + jump_total
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"state became non-finite at t={(n + 1) * stepper.dt:.6g}",
                                  (n + 1) * stepper.dt)
        if (n + 1) % save_stride == 0:
            saved.append(x.copy())
    cat = (lambda a, shape: np.concatenate(a) if a else np.zeros(shape))
    return (np.stack(saved, axis=1), cat(jp, (0,)).astype(int), cat(js, (0,)).astype(int),
            cat(jpre, (0, d)), cat(jdisp, (0, d)))


def _ensemble(spec, stepper, x0, t_final, dt, seed, n_paths, threads, save_stride, chunk, driver):
    n_steps = _step_count(t_final, dt)
    if n_steps % save_stride:
        raise ValueError("save_stride must divide the number of steps")
    n_chunks = int(math.ceil(n_paths / chunk))
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    def work(c):
        rng = np.random.default_rng(children[c])
        m = min(chunk, n_paths - c * chunk)
        start = _initial(x0, rng, m, spec.dim, c * chunk)
        return _run_chunk(stepper, start, n_steps, rng, save_stride)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_chunks)))
    else:
        results = [work(c) for c in range(n_chunks)]
    states = np.concatenate([r[0] for r in results])
    offsets = np.cumsum([0] + [r[0].shape[0] for r in results])[:-1]
    jp = np.concatenate([r[1] + o for r, o in zip(results, offsets)])
    times = np.linspace(0.0, t_final, n_steps + 1)[::save_stride]
    times[-1] = t_final
    return PathEnsemble(times, states, jp, np.concatenate([r[2] for r in results]),
                        np.concatenate([r[3] for r in results]), np.concatenate([r[4] for r in results]),
                        t_final / n_steps, spec.fingerprint, seed, driver, save_stride)


def simulate_ensemble(spec: ProcessSpec, x0: InitialState, t_final: float, dt: float, seed: int,
                      n_paths: int, threads: int = 1, save_stride: int = 1, chunk: int = CHUNK,
                      jump_record_threshold: float = 0.125) -> PathEnsemble:
    """Euler-Maruyama ensemble of the Ito form with jumps applied at step boundaries.

    Paths are generated in fixed-size chunks, each with its own child of
    ``SeedSequence(seed)``, so results do not depend on ``threads``.
    ``x0`` is a point, an array of starting points or a sampler ``(rng, n)``.
    """
    stepper = _Stepper(spec, dt, jump_record_threshold=jump_record_threshold)
    driver = "stable" if spec.stable_alpha is not None else ("poisson" if spec.jump_rate > 0 else "none")
    return _ensemble(spec, stepper, x0, t_final, dt, seed, n_paths, threads, save_stride, chunk, driver)


def simulate_path(spec: ProcessSpec, x0, t_final: float, dt: float, seed: int) -> Path:
    """Single path; identical arguments give a bit-identical path."""
    return simulate_ensemble(spec, np.atleast_1d(np.asarray(x0, float)), t_final, dt, seed, 1).path(0)


def simulate_stable_path(spec: ProcessSpec, x0, t_final: float, dt: float, seed: int,
                         jump_record_threshold: float = 0.125) -> Path:
    if spec.stable_alpha is None:
        raise ConfigurationError("spec has no stable driver", "levy.family")
    return simulate_ensemble(spec, np.atleast_1d(np.asarray(x0, float)), t_final, dt, seed, 1,
                             jump_record_threshold=jump_record_threshold).path(0)


def reversed_drift(spec: ProcessSpec, rho_ss: DensityField, log_density: Optional[LogDensity] = None) -> Callable:
    """b_R = -b + 2 beta^-1 A grad log rho_ss, evaluated through a spline of log rho_ss."""
    ld = LogDensity(rho_ss) if log_density is None else log_density

    def drift(x):
        x = np.asarray(x, float)
        b = np.asarray(spec.drift(x), float)
        if not spec.has_diffusion:
            return -b
        g = ld.gradient(x)
        return -b + 2.0 / spec.beta * np.einsum("...ij,...j->...i", spec.diffusion_matrix(x), g)

    return drift


def reversed_kernel(kernel: JumpKernel, rho_ss: DensityField, log_density: Optional[LogDensity] = None) -> JumpKernel:
    """k_R(x, y) = rho_ss(y) k(y, x) / rho_ss(x)."""
    ld = LogDensity(rho_ss) if log_density is None else log_density

    def rate(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.exp(ld(y) - ld(x)) * kernel(y, x)

    return JumpKernel(rate=rate, singularity_order=kernel.singularity_order)


class _ReversedJumps:
    """Grid-discretized reversed kernel sampled by inverse CDF with jitter inside the target cell."""

    def __init__(self, spec, kernel, rho_ss, dt, band=None):
        from .operators import JumpOperator

        grid = rho_ss.grid
        self.grid, self.dt = grid, dt
        self.floor = rho_ss.default_floor()
        op = JumpOperator(kernel, grid, band)
        rho = rho_ss.values.ravel()
        self.valid = rho >= self.floor
        if op.zero:
            self.rate = np.zeros(grid.size)
            self.cdf = None
            return
        KR = np.zeros_like(op.K)
        v = self.valid
        KR[v] = (op.K.T[v] * rho[None, :]) / rho[v, None] * op.w[None, :]
        self.rate = KR.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.cdf = np.cumsum(KR, axis=1) / self.rate[:, None]
        if np.max(self.rate[v]) * dt >= 0.1:
            raise ValueError("reversed jump intensity times dt must stay below 0.1")
        self.h = np.array(grid.spacing)
        self.nodes = grid.flat_nodes

    def nearest(self, x):
        idx = [np.clip(np.rint((x[:, a] - lo) / h).astype(int), 0, n - 1)
               for a, (lo, h, n) in enumerate(zip(self.grid.lower, self.grid.spacing, self.grid.points))]
        return np.ravel_multi_index(idx, self.grid.shape)

    def __call__(self, x, rng):
        total = np.zeros_like(x)
        events = []
        inside = self.grid.contains(x)
        node = self.nearest(x)
        if not np.all(inside & self.valid[node]):
            raise ReversalUndefinedError("reversed dynamics left the reliable support of the stationary density")
        if self.cdf is None:
            return total, events
        counts = rng.poisson(self.rate[node] * self.dt)
        cur = x.copy()
        for c in range(int(counts.max(initial=0))):
            rows = np.nonzero(counts > c)[0]
            cur_nodes = self.nearest(cur[rows])
            u = rng.uniform(size=len(rows))
            tgt = np.array([np.searchsorted(self.cdf[i], ui) for i, ui in zip(cur_nodes, u)])
            tgt = np.minimum(tgt, self.grid.size - 1)
            y = self.nodes[tgt] + rng.uniform(-0.5, 0.5, size=(len(rows), self.grid.dim)) * self.h
            y = np.clip(y, self.grid.lower, self.grid.upper)
            disp = y - cur[rows]
            events.append((rows, cur[rows].copy(), disp))
            cur[rows] = y
            total[rows] += disp
        return total, events


def simulate_reversed_ensemble(spec: ProcessSpec, kernel: JumpKernel, rho_ss: DensityField, x0: InitialState,
                               t_final: float, dt: float, seed: int, n_paths: int, threads: int = 1,
                               save_stride: int = 1, band: Optional[float] = None) -> PathEnsemble:
    """Paths of the stationary time reversal: drift b_R and kernel k_R built from rho_ss."""
    if spec.stable_alpha is not None:
        raise ConfigurationError("reversed simulation supports compound-Poisson drivers only", "levy.family")
    if spec.has_diffusion and not spec.constant_diffusion:
        raise ConfigurationError("reversed simulation needs a constant diffusion factor", "diffusion")
    ld = LogDensity(rho_ss)
    stepper = _Stepper(spec.__class__(**{**spec.__dict__, "jump_rate": 0.0, "jump_map": None,
                                         "levy_density": None, "kernel_override": None}),
                       dt, drift=reversed_drift(spec, rho_ss, ld))
    table = _ReversedJumps(spec, kernel, rho_ss, dt, band)
    stepper.jumps = lambda x, rng: table(x, rng)
    return _ensemble(spec, stepper, x0, t_final, dt, seed, n_paths, threads, save_stride, CHUNK, "reversed")


def simulate_reversed_path(spec, kernel, rho_ss, x0, t_final, dt, seed, band=None) -> Path:
    return simulate_reversed_ensemble(spec, kernel, rho_ss, np.atleast_1d(np.asarray(x0, float)),
                                      t_final, dt, seed, 1, band=band).path(0)
