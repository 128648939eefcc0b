"""Coefficient families, JSON process documents and the built-in process matrix."""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .density import DensityField, Grid, gaussian_density, stable_stationary_density
from .errors import ConfigurationError
from .model import JumpMap, ProcessSpec, stable_kernel


def _matrix(value, dim, key):
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"not a numeric matrix: {exc}", key) from None
    if m.ndim == 0:
        m = m * np.eye(dim)
    if m.shape != (dim, dim):
        raise ConfigurationError(f"expected shape ({dim}, {dim}), got {m.shape}", key)
    return m


def _vector(value, dim, key):
    v = np.broadcast_to(np.array(value, dtype=float), (dim,)).copy() if value is not None else np.zeros(dim)
    if v.shape != (dim,):
        raise ConfigurationError(f"expected length {dim}", key)
    return v


def _family(doc, key):
    if not isinstance(doc, dict) or "family" not in doc:
        raise ConfigurationError("expected an object with a 'family' entry", key)
    return doc["family"]


def _diffusion(doc, dim):
    fam = _family(doc, "diffusion")
    if fam == "zero":
        return None
    if fam == "identity":
        a = float(doc.get("scale", 1.0)) * np.eye(dim)
    elif fam == "constant":
        a = _matrix(doc.get("matrix"), dim, "diffusion.matrix")
    else:
        raise ConfigurationError(f"unknown family '{fam}'", "diffusion.family")
    if not np.any(a):
        return None
    return a


def _drift(doc, dim, a):
    fam = _family(doc, "drift")
    if fam == "zero":
        return lambda x: np.zeros_like(np.asarray(x, float))
    if fam == "linear":
        M = _matrix(doc.get("matrix"), dim, "drift.matrix")
        c = _vector(doc.get("offset"), dim, "drift.offset")
        return lambda x: np.asarray(x, float) @ M.T + c
    if fam == "gradient_quadratic":
        k = float(doc.get("stiffness", 1.0))
        c = _vector(doc.get("center"), dim, "drift.center")
        A = np.eye(dim) if a is None else a @ a.T
        return lambda x: -k * (np.asarray(x, float) - c) @ A.T
    raise ConfigurationError(f"unknown family '{fam}'", "drift.family")


def _gaussian_levy(doc, dim):
    s = float(doc.get("scale", 1.0))
    c = _vector(doc.get("center"), dim, "levy.center")
    if s <= 0:
        raise ConfigurationError("must be positive", "levy.scale")
    mass = float(doc.get("mass", (2 * math.pi) ** (dim / 2) * s ** dim))
    peak = mass / ((2 * math.pi) ** (dim / 2) * s ** dim)

    def density(z):
        d = np.asarray(z, float) - c
        return peak * np.exp(-0.5 * np.sum(d * d, axis=-1) / s ** 2)

    def sampler(rng, n):
        return c + s * rng.standard_normal((n, dim))

    return density, sampler, mass


def _jump_map(doc, dim):
    fam = _family(doc, "jump_map")
    if fam == "identity":
        return JumpMap(lambda x, z: np.broadcast_to(z, np.broadcast_shapes(np.shape(x), np.shape(z))),
                       lambda x, w: np.broadcast_to(w, np.broadcast_shapes(np.shape(x), np.shape(w))),
                       lambda x, w: np.ones(np.broadcast_shapes(np.shape(x), np.shape(w))[:-1]))
    if fam == "reset":
        return JumpMap(lambda x, z: z - x, lambda x, w: w + x,
                       lambda x, w: np.ones(np.broadcast_shapes(np.shape(x), np.shape(w))[:-1]))
    if fam == "scaled":
        f = float(doc.get("factor", 1.0))
        if f == 0:
            raise ConfigurationError("must be nonzero", "jump_map.factor")
        det = abs(f) ** (-dim)
        return JumpMap(lambda x, z: f * np.broadcast_to(z, np.broadcast_shapes(np.shape(x), np.shape(z))),
                       lambda x, w: np.broadcast_to(w, np.broadcast_shapes(np.shape(x), np.shape(w))) / f,
                       lambda x, w: np.full(np.broadcast_shapes(np.shape(x), np.shape(w))[:-1], det))
    raise ConfigurationError(f"unknown family '{fam}'", "jump_map.family")


def spec_from_dict(doc: dict, name: str = "") -> ProcessSpec:
    """Build a ProcessSpec from a JSON-style document of coefficient families."""
    if not isinstance(doc, dict):
        raise ConfigurationError("process document must be an object")
    doc = copy.deepcopy(doc)
    try:
        dim = int(doc.get("dim", 1))
        beta = float(doc.get("beta", 1.0))
        lam = float(doc.get("lambda", 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    if dim < 1:
        raise ConfigurationError("must be a positive integer", "dim")
    a = _diffusion(doc.get("diffusion", {"family": "zero"}), dim)
    drift = _drift(doc.get("drift", {"family": "zero"}), dim, a)
    levy = doc.get("levy", {"family": "none"})
    fam = _family(levy, "levy")
    common = dict(dim=dim, beta=beta, drift=drift, name=name or doc.get("name", ""), params=doc)
    if a is not None:
        common.update(diffusion_factor=lambda x, a=a: np.broadcast_to(a, np.shape(x)[:-1] + a.shape),
                      constant_diffusion=True)
    if fam == "none" or lam == 0 and fam != "stable":
        return ProcessSpec(**common)
    if fam == "stable":
        alpha = float(levy.get("alpha", 1.5))
        if not 0 < alpha < 2:
            raise ConfigurationError(f"must lie in (0, 2), got {alpha}", "levy.alpha")
        if dim != 1:
            raise ConfigurationError("stable drivers are one dimensional", "levy.family")
        if "lambda" in doc and lam != 1.0:
            raise ConfigurationError("stable drivers take their scale from levy.constant, not lambda", "lambda")
        if _family(doc.get("jump_map", {"family": "identity"}), "jump_map") != "identity":
            raise ConfigurationError("stable drivers use the identity jump map", "jump_map.family")
        kern = stable_kernel(alpha, levy.get("constant"))
        return ProcessSpec(jump_rate=1.0, kernel_override=kern, stable_alpha=alpha, **common)
    if fam == "gaussian":
        density, sampler, mass = _gaussian_levy(levy, dim)
    else:
        raise ConfigurationError(f"unknown family '{fam}'", "levy.family")
    jmap = _jump_map(doc.get("jump_map", {"family": "identity"}), dim)
    return ProcessSpec(jump_rate=lam, levy_density=density, jump_map=jmap, levy_sampler=sampler,
                       levy_mass=mass, **common)


def load_spec(path) -> ProcessSpec:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read spec file: {exc}", "spec") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc}", "spec") from None
    return spec_from_dict(doc, name=doc.get("name", p.stem) if isinstance(doc, dict) else "")


EXAMPLE1 = {
    "name": "example1", "dim": 1, "beta": 1.0, "lambda": 1.0,
    "drift": {"family": "gradient_quadratic", "stiffness": 1.0},
    "diffusion": {"family": "identity", "scale": 1.0},
    "levy": {"family": "gaussian", "scale": 1.0},
    "jump_map": {"family": "reset"},
}

REVERSIBLE_OU = {
    "name": "reversible_ou", "dim": 1, "beta": 1.0, "lambda": 0.0,
    "drift": {"family": "linear", "matrix": [[-1.0]]},
    "diffusion": {"family": "identity", "scale": 1.0},
}

ROTATIONAL_OU = {
    "name": "rotational_ou", "dim": 2, "beta": 1.0, "lambda": 0.0,
    "drift": {"family": "linear", "matrix": [[-1.0, 1.0], [-1.0, -1.0]]},
    "diffusion": {"family": "identity", "scale": 1.0},
}


def example2_document(alpha: float = 1.5) -> dict:
    return {
        "name": f"example2_alpha{alpha:g}", "dim": 1, "beta": 1.0,
        "drift": {"family": "linear", "matrix": [[-1.0]]},
        "diffusion": {"family": "zero"},
        "levy": {"family": "stable", "alpha": float(alpha)},
        "jump_map": {"family": "identity"},
    }


def example1_spec() -> ProcessSpec:
    """dX = -X dt + sqrt(2) dB plus jumps to z with rate density exp(-z^2/2)."""
    return spec_from_dict(EXAMPLE1)


def example2_spec(alpha: float = 1.5) -> ProcessSpec:
    """dX = -X dt + dL with L symmetric alpha-stable."""
    return spec_from_dict(example2_document(alpha))


def reversible_ou_spec() -> ProcessSpec:
    return spec_from_dict(REVERSIBLE_OU)


def rotational_ou_spec() -> ProcessSpec:
    return spec_from_dict(ROTATIONAL_OU)


EXAMPLE1_GRID = Grid.line(-8.0, 8.0, 641)
EXAMPLE2_GRID = Grid.line(-40.0, 40.0, 641)
ROTATIONAL_GRID = Grid((-6.0, -6.0), (6.0, 6.0), (121, 121))


def builtin_matrix(example2_points: int = 641) -> dict:
    """Built-in specs with their stationary densities on reference grids.

    Returns a mapping name -> (spec, stationary DensityField).
    """
    g2 = Grid.line(-40.0, 40.0, example2_points)
    return {
        "example1": (example1_spec(), gaussian_density(EXAMPLE1_GRID)),
        "example2_alpha1": (example2_spec(1.0), stable_stationary_density(1.0, g2)),
        "example2_alpha1.5": (example2_spec(1.5), stable_stationary_density(1.5, g2)),
        "reversible_ou": (reversible_ou_spec(), gaussian_density(EXAMPLE1_GRID)),
        "rotational_ou": (rotational_ou_spec(), gaussian_density(ROTATIONAL_GRID)),
    }


def stationary_density_for(spec: ProcessSpec, grid: Grid) -> Optional[DensityField]:
    """Closed-form stationary density for the built-in families when one is known."""
    p = spec.params or {}
    if spec.stable_alpha is not None and p.get("drift") == {"family": "linear", "matrix": [[-1.0]]}:
        return stable_stationary_density(spec.stable_alpha, grid)
    if p.get("name") in ("example1", "reversible_ou", "rotational_ou"):
        return gaussian_density(grid)
    return None
