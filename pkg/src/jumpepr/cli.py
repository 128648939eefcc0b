"""Command-line entry point: simulations, Fokker-Planck runs, EPR evaluation and the two worked examples."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .density import DensityField, Grid, density_l1, gaussian_density, sample_from_density, stable_stationary_density
from .errors import ConfigurationError, JumpEPRError
from .fokker_planck import Discretization, export_snapshots, solve_fpe, stationary_residual
from .girsanov import estimate_epr_kl
from .library import (EXAMPLE1_GRID, EXAMPLE2_GRID, ROTATIONAL_GRID, example1_spec, example2_spec, load_spec, reversible_ou_spec,
                      stationary_density_for)
from .model import ProcessSpec, build_jump_kernel
from .reversibility import full_report
from .simulate import sample_stable_stationary, simulate_ensemble
from .thermo import decompose_forces_1d, entropy_production_rate, thermo_series

COMMANDS = ("simulate", "solve-fpe", "epr", "check-reversibility", "reversal-kl", "example1", "example2")


@dataclass
class RunConfig:
    command: str
    spec_path: Optional[str] = None
    density_path: Optional[str] = None
    output_dir: Optional[str] = None
    seed: int = 0
    grid_min: Optional[float] = None
    grid_max: Optional[float] = None
    grid_points: Optional[int] = None
    dt: Optional[float] = None
    t_final: Optional[float] = None
    paths: Optional[int] = None
    alpha: Optional[list] = None
    threads: int = 1
    format: str = "csv"
    x0: Optional[list] = None
    init_mean: float = 0.0
    init_std: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}", "command")
        for name in ("dt", "t_final", "paths", "grid_points", "threads"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"--{name.replace('_', '-')} must be positive", name)
        if self.grid_min is not None and self.grid_max is not None and not self.grid_min < self.grid_max:
            raise ConfigurationError("--grid-min must be below --grid-max", "grid_min")
        if self.init_std <= 0:
            raise ConfigurationError("--init-std must be positive", "init_std")


class Bundle:
    """Collects written files and produces the run manifest with content hashes."""

    def __init__(self, directory, config: RunConfig):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.files = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths):
        for p in paths:
            self.files.append(Path(p))

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
        self.add(p)
        return p

    def manifest(self, summary: dict) -> Path:
        entries = []
        for p in sorted(set(self.files)):
            data = p.read_bytes()
            entries.append({"path": str(p.relative_to(self.dir)), "sha256": hashlib.sha256(data).hexdigest(),
                            "bytes": len(data)})
        cfg = {k: v for k, v in self.config.__dict__.items() if k != "extra"}
        doc = {"command": self.config.command, "config": cfg, "files": entries, "summary": summary}
        mp = self.dir / "run_manifest.json"
        mp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
        return mp


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.bool_):
        return bool(v)
    return str(v)


def _spec(cfg: RunConfig, required: bool = True) -> Optional[ProcessSpec]:
    if cfg.spec_path is None:
        if required:
            raise ConfigurationError("--spec is required for this command", "spec")
        return None
    return load_spec(cfg.spec_path)


def _grid(cfg: RunConfig, spec: ProcessSpec, default: Optional[Grid] = None) -> Grid:
    if default is None:
        default = EXAMPLE2_GRID if spec.stable_alpha is not None else (
            ROTATIONAL_GRID if spec.dim == 2 else EXAMPLE1_GRID)
    lo = cfg.grid_min if cfg.grid_min is not None else default.lower[0]
    hi = cfg.grid_max if cfg.grid_max is not None else default.upper[0]
    n = cfg.grid_points if cfg.grid_points is not None else default.points[0]
    return Grid((lo,) * spec.dim, (hi,) * spec.dim, (n,) * spec.dim)


def _density(cfg: RunConfig, spec: ProcessSpec, grid: Optional[Grid] = None, stationary: bool = True) -> DensityField:
    if cfg.density_path is not None:
        return DensityField.from_csv(cfg.density_path)
    grid = grid or _grid(cfg, spec)
    if stationary:
        rho = stationary_density_for(spec, grid)
        if rho is None:
            raise ConfigurationError("no closed-form stationary density is known for this spec; pass --density",
                                     "density")
        return rho
    return gaussian_density(grid, cfg.init_mean, cfg.init_std)


def _initial_sampler(spec: ProcessSpec, rho: DensityField):
    if spec.stable_alpha is not None and rho.tail is not None:
        a = spec.stable_alpha
        return lambda rng, n: sample_stable_stationary(a, (n, 1), rng)
    return lambda rng, n: sample_from_density(rho, n, rng)


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or f"out_{cfg.command}")


def cmd_simulate(cfg: RunConfig) -> dict:
    spec = _spec(cfg)
    if cfg.density_path is not None:
        x0 = _initial_sampler(spec, DensityField.from_csv(cfg.density_path))
    else:
        x0 = np.array(cfg.x0 if cfg.x0 else [0.0] * spec.dim, float)
    ens = simulate_ensemble(spec, x0, cfg.t_final or 10.0, cfg.dt or 0.01, cfg.seed, cfg.paths or 1,
                            threads=cfg.threads)
    bundle = Bundle(_out(cfg), cfg)
    bundle.add(*ens.export(bundle.dir / "paths"))
    final = ens.states[:, -1, :]
    summary = {"paths": len(ens), "dt": ens.dt, "t_final": ens.t_final, "jumps_per_path": float(ens.jump_counts().mean()),
               "final_mean": final.mean(axis=0), "final_var": final.var(axis=0)}
    bundle.manifest(summary)
    return summary


def cmd_solve_fpe(cfg: RunConfig) -> dict:
    spec = _spec(cfg)
    kernel = build_jump_kernel(spec)
    rho0 = _density(cfg, spec, stationary=False)
    sol = solve_fpe(spec, kernel, rho0, cfg.t_final or 10.0, dt=cfg.dt)
    bundle = Bundle(_out(cfg), cfg)
    bundle.add(*export_snapshots(sol, bundle.dir / "snapshots"))
    summary = {"dt": sol.dt, "steps": sol.steps, "stability_bound": sol.stability_bound,
               "mass_drift": sol.mass_drift, "snapshots": len(sol)}
    bundle.manifest(summary)
    return summary


def cmd_epr(cfg: RunConfig) -> dict:
    spec = _spec(cfg)
    kernel = build_jump_kernel(spec)
    rho = _density(cfg, spec)
    r = entropy_production_rate(spec, kernel, rho)
    return {"ep_local": r.ep_local, "ep_nonlocal": r.ep_nonlocal, "ep_total": r.ep_total,
            "skipped_mass": r.skipped_mass}


def cmd_check_reversibility(cfg: RunConfig) -> dict:
    spec = _spec(cfg)
    kernel = build_jump_kernel(spec)
    rho = _density(cfg, spec)
    report = full_report(spec, kernel, rho)
    if cfg.output_dir:
        bundle = Bundle(_out(cfg), cfg)
        bundle.write_json("reversibility.json", report.to_dict())
        bundle.manifest({"verdict": report.verdict})
    return report.to_dict()


def cmd_reversal_kl(cfg: RunConfig) -> dict:
    spec = _spec(cfg)
    kernel = build_jump_kernel(spec)
    rho = _density(cfg, spec)
    ens = simulate_ensemble(spec, _initial_sampler(spec, rho), cfg.t_final or 10.0, cfg.dt or 0.01, cfg.seed,
                            cfg.paths or 10000, threads=cfg.threads)
    est = estimate_epr_kl(ens, spec, kernel, rho)
    bundle = Bundle(_out(cfg), cfg)
    p = bundle.path("log_rn_per_path.csv")
    est.to_csv(p)
    bundle.add(p)
    summary = est.to_dict()
    bundle.write_json("reversal_kl.json", summary)
    bundle.manifest(summary)
    return summary


def _write_table(bundle: Bundle, name: str, header: str, table: np.ndarray, fmt: str) -> None:
    if fmt == "json":
        cols = header.split(",")
        bundle.write_json(f"{name}.json", {c: table[:, i] for i, c in enumerate(cols)})
    else:
        p = bundle.path(f"{name}.csv")
        np.savetxt(p, table, delimiter=",", header=header, comments="", fmt="%.17g")
        bundle.add(p)


def run_example1(cfg: RunConfig) -> dict:
    """Relaxation of the OU process with Gaussian resets from N(3, 1) towards N(0, 1)."""
    spec = example1_spec()
    kernel = build_jump_kernel(spec)
    grid = _grid(cfg, spec, EXAMPLE1_GRID)
    T = cfg.t_final or 10.0
    bundle = Bundle(_out(cfg), cfg)
    stage = "fokker_planck"
    try:
        disc = Discretization(spec, kernel, grid)
        rho0 = gaussian_density(grid, 3.0, 1.0)
        n_steps = int(np.ceil(T / (cfg.dt or disc.stability_bound())))
        stride = max(1, n_steps // 400)
        n_steps = stride * int(np.ceil(n_steps / stride))  # uniform snapshot spacing up to T
        sol = solve_fpe(spec, kernel, rho0, T, dt=T / n_steps, stride=stride, disc=disc)
        bundle.add(*export_snapshots(sol, bundle.dir / "density"))
        stage = "thermodynamics"
        dec = decompose_forces_1d(spec).with_jump_driving(kernel, 1.0)
        series = thermo_series(spec, kernel, sol.snapshots, dec)
        _write_table(bundle, "thermo_series", series.HEADER, series.table(), cfg.format)
        stage = "reversibility"
        rho_ss = gaussian_density(grid)
        report = full_report(spec, kernel, rho_ss)
        bundle.write_json("reversibility.json", report.to_dict())
    except JumpEPRError as exc:
        exc.stage = stage
        raise
    ep = series.epr_total
    after = series.times >= 1.0
    rise = float(np.max(np.diff(ep[after]), initial=0.0))
    final_l1 = density_l1(sol.snapshots[-1], rho_ss)
    summary = {
        "epr_initial_local": float(series.epr_local[0]), "epr_initial_nonlocal": float(series.epr_nonlocal[0]),
        "epr_final": float(ep[-1]), "final_l1_to_gibbs": final_l1, "max_rise_after_t1": rise,
        "mass_drift": sol.mass_drift, "dt": sol.dt, "steps": sol.steps, "verdict": report.verdict,
        "checks": {"epr_final_below_1e-3": bool(ep[-1] < 1e-3), "final_l1_below_0.02": bool(final_l1 < 0.02),
                   "nonincreasing_after_t1": bool(rise <= 1e-4)},
    }
    bundle.write_json("summary.json", summary)
    bundle.manifest(summary)
    return summary

EXAMPLE2_BOX = 40.0


def example2_epr_with_error(alpha: float, points: int = 641) -> dict:
    """Grid EPR at the stationary density with an error bar from 2x refinement and band doubling."""
    spec = example2_spec(alpha)
    kernel = build_jump_kernel(spec)
    grid = Grid.line(-EXAMPLE2_BOX, EXAMPLE2_BOX, points)
    fine = Grid.line(-EXAMPLE2_BOX, EXAMPLE2_BOX, 2 * points - 1)
    rho, rho_f = stable_stationary_density(alpha, grid), stable_stationary_density(alpha, fine)
    base = entropy_production_rate(spec, kernel, rho)
    refined = entropy_production_rate(spec, kernel, rho_f).ep_total
    wide = entropy_production_rate(spec, kernel, rho, band=2 * grid.spacing[0]).ep_total
    err = max(abs(base.ep_total - refined), abs(base.ep_total - wide))
    return {"alpha": alpha, "ep_total": base.ep_total, "ep_nonlocal": base.ep_nonlocal, "ep_refined": refined,
            "ep_band_doubled": wide, "error_bar": err, "spec": spec, "kernel": kernel, "rho": rho,
            "stationary_residual": stationary_residual(spec, kernel, rho)}


def run_example2(cfg: RunConfig) -> dict:
    """Stationary EPR of the OU process driven by symmetric stable noise, with path-space cross-check."""
    alphas = cfg.alpha or [1.0, 1.5]
    bundle = Bundle(_out(cfg), cfg)
    summary = {}
    for a in alphas:
        tag = f"alpha{a:g}"
        res = example2_epr_with_error(a, cfg.grid_points or 641)
        spec, kernel, rho = res.pop("spec"), res.pop("kernel"), res.pop("rho")
        p = bundle.path(f"{tag}/rho_ss.csv")
        rho.to_csv(p)
        bundle.add(p)
        # transient EPR from N(0, 1) towards the stationary value
        disc = Discretization(spec, kernel, rho.grid)
        sol = solve_fpe(spec, kernel, gaussian_density(rho.grid), 5.0, disc=disc)
        rows = []
        for s in sol.snapshots:
            e = entropy_production_rate(spec, kernel, s, disc=disc, exterior=False)
            rows.append((s.time, e.ep_local, e.ep_nonlocal, e.ep_total))
        _write_table(bundle, f"{tag}/epr_series", "t,ep_loc,ep_nl,ep", np.array(rows), cfg.format)
        paths = cfg.paths or 10000
        ens = simulate_ensemble(spec, _initial_sampler(spec, rho), cfg.t_final or 10.0, cfg.dt or 0.01,
                                cfg.seed, paths, threads=cfg.threads)
        est = estimate_epr_kl(ens, spec, kernel, rho)
        del ens
        p = bundle.path(f"{tag}/log_rn_per_path.csv")
        est.to_csv(p)
        bundle.add(p)
        report = full_report(spec, kernel, rho)
        bundle.write_json(f"{tag}/reversibility.json", report.to_dict())
        gap = abs(res["ep_total"] - est.epr_estimate)
        res.update({
            "girsanov_estimate": est.epr_estimate, "girsanov_se": est.standard_error,
            "girsanov_discard_fraction": est.discard_fraction, "verdict": report.verdict,
            "checks": {"positive_beyond_3_error_bars": bool(res["ep_total"] - 3 * res["error_bar"] > 0),
                       "girsanov_agrees": bool(gap < 3 * est.standard_error + 0.05 * abs(res["ep_total"])),
                       "all_checks_fail": report.verdict == "irreversible"},
        })
        summary[tag] = res
    # alpha = 2: the stable density is Gaussian and the matching pure-diffusion OU has zero EPR
    g = Grid.line(-EXAMPLE2_BOX, EXAMPLE2_BOX, cfg.grid_points or 641)
    r2 = stable_stationary_density(2.0, g, tail=False)
    ou = reversible_ou_spec()
    summary["alpha2_limit"] = {
        "sup_error_vs_gaussian": float(np.max(np.abs(r2.values - gaussian_density(g).values))),
        "ou_epr": entropy_production_rate(ou, build_jump_kernel(ou), gaussian_density(EXAMPLE1_GRID)).ep_total,
    }
    bundle.write_json("summary.json", summary)
    bundle.manifest(summary)
    return summary


HANDLERS = {
    "simulate": cmd_simulate, "solve-fpe": cmd_solve_fpe, "epr": cmd_epr,
    "check-reversibility": cmd_check_reversibility, "reversal-kl": cmd_reversal_kl,
    "example1": run_example1, "example2": run_example2,
}


def dispatch(config: RunConfig) -> dict:
    return HANDLERS[config.command](config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpepr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "simulate": "simulate an ensemble of paths", "solve-fpe": "integrate the Fokker-Planck equation",
        "epr": "entropy production rate of a density", "check-reversibility": "four-way reversibility report",
        "reversal-kl": "path-space relative entropy estimate of the EPR",
        "example1": "OU with Gaussian resets relaxing from N(3,1)",
        "example2": "OU driven by stable noise at stationarity",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--spec", dest="spec_path")
        p.add_argument("--density", dest="density_path")
        p.add_argument("--out", dest="output_dir")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--grid-min", type=float)
        p.add_argument("--grid-max", type=float)
        p.add_argument("--grid-points", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--t-final", type=float)
        p.add_argument("--paths", type=int)
        p.add_argument("--alpha", type=float, action="append")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--x0", type=float, nargs="+")
        p.add_argument("--init-mean", type=float, default=0.0)
        p.add_argument("--init-std", type=float, default=1.0)
    return parser


def _error(exc: Exception, code: int) -> int:
    doc = exc.to_dict() if isinstance(exc, JumpEPRError) else {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "stage", None):
        doc["stage"] = exc.stage
    print(json.dumps(doc, default=_jsonable), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = RunConfig(**vars(args))
        t0 = time.perf_counter()
        result = dispatch(cfg)
    except ConfigurationError as exc:
        return _error(exc, 2)
    except JumpEPRError as exc:
        return _error(exc, exc.exit_code)
    except (FileNotFoundError, ValueError) as exc:
        return _error(exc, 2)
    print(json.dumps(result, indent=2, sort_keys=True, default=_jsonable))
    print(f"elapsed {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
