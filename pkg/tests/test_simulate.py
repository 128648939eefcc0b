import json

import numpy as np
import pytest
from scipy import stats

from jumpepr.density import Grid, estimate_density, gaussian_density, sample_from_density
from jumpepr.errors import ConfigurationError
from jumpepr.fokker_planck import solve_fpe
from jumpepr.library import ROTATIONAL_GRID, example2_spec, rotational_ou_spec, spec_from_dict
from jumpepr.model import build_jump_kernel
from jumpepr.simulate import (reversed_drift, sample_stable_stationary, simulate_ensemble, simulate_path,
                              simulate_reversed_ensemble, simulate_stable_path, stable_increments)


def test_ou_moments(ou):
    spec, _, _ = ou
    ens = simulate_ensemble(spec, np.array([3.0]), 1.0, 0.01, seed=1, n_paths=20000)
    x = ens.states[:, -1, 0]
    assert x.mean() == pytest.approx(3 * np.exp(-1.0), abs=0.03)
    # started from a point: variance (1 - e^-2t)
    assert x.var() == pytest.approx(1 - np.exp(-2.0), abs=0.03)


def test_jump_counts_follow_total_rate():
    spec = spec_from_dict({"dim": 1, "lambda": 2.0, "drift": {"family": "linear", "matrix": [[-1.0]]},
                           "diffusion": {"family": "identity"},
                           "levy": {"family": "gaussian", "scale": 1.0, "mass": 1.0},
                           "jump_map": {"family": "identity"}})
    ens = simulate_ensemble(spec, np.array([0.0]), 10.0, 0.01, seed=3, n_paths=2000, save_stride=1000)
    counts = ens.jump_counts()
    assert counts.mean() == pytest.approx(20.0, abs=4 * np.sqrt(20 / 2000))
    assert counts.var() == pytest.approx(20.0, rel=0.15)


def test_example1_jumps_land_on_target_law(ex1):
    spec, _, _ = ex1
    ens = simulate_ensemble(spec, np.array([3.0]), 5.0, 0.01, seed=4, n_paths=500, save_stride=500)
    assert ens.jump_counts().mean() == pytest.approx(np.sqrt(2 * np.pi) * 5.0, rel=0.05)
    landed = ens.jump_pre[:, 0] + ens.jump_disp[:, 0]
    assert stats.kstest(landed, "norm").pvalue > 1e-3


def test_seed_determinism_and_thread_independence(ex1):
    spec, _, _ = ex1
    a = simulate_ensemble(spec, np.array([0.5]), 1.0, 0.01, seed=9, n_paths=300, chunk=64)
    b = simulate_ensemble(spec, np.array([0.5]), 1.0, 0.01, seed=9, n_paths=300, chunk=64, threads=3)
    c = simulate_ensemble(spec, np.array([0.5]), 1.0, 0.01, seed=10, n_paths=300, chunk=64)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.jump_disp, b.jump_disp)
    assert not np.array_equal(a.states, c.states)
    p1, p2 = simulate_path(spec, 0.0, 1.0, 0.01, 5), simulate_path(spec, 0.0, 1.0, 0.01, 5)
    np.testing.assert_array_equal(p1.states, p2.states)


def test_path_records(ex1, tmp_path):
    spec, _, _ = ex1
    ens = simulate_ensemble(spec, np.array([0.0]), 2.0, 0.01, seed=2, n_paths=3)
    p = ens.path(1)
    assert p.states.shape == (201, 1)
    assert p.spec_fingerprint == spec.fingerprint
    assert p.jump_flag.sum() == len(p.jump_steps)
    written = ens.export(tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["paths"] == 3 and len(written) == 4
    assert manifest["spec_fingerprint"] == spec.fingerprint


def test_initial_sampler_and_arrays(ex1, rng):
    spec, _, _ = ex1
    starts = rng.normal(size=(50, 1))
    ens = simulate_ensemble(spec, starts, 0.1, 0.01, seed=0, n_paths=50)
    np.testing.assert_array_equal(ens.states[:, 0], starts)
    ens = simulate_ensemble(spec, lambda r, n: r.normal(5.0, 0.1, size=(n, 1)), 0.1, 0.01, seed=0, n_paths=50)
    assert ens.states[:, 0, 0].mean() == pytest.approx(5.0, abs=0.1)


def test_invalid_time_grid(ou):
    spec, _, _ = ou
    with pytest.raises(ValueError):
        simulate_ensemble(spec, np.array([0.0]), 1.0, 0.3, seed=0, n_paths=2)
    with pytest.raises(ValueError):
        simulate_ensemble(spec, np.array([0.0]), 1.0, 0.1, seed=0, n_paths=2, save_stride=3)
    with pytest.raises(ConfigurationError):
        simulate_stable_path(spec, 0.0, 1.0, 0.1, 0)


def test_kde_matches_fpe_at_t1(ex1, small_grid):
    spec, kernel, _ = ex1
    rho0 = gaussian_density(small_grid, 3.0)
    fpe = solve_fpe(spec, kernel, rho0, 1.0).snapshots[-1]
    ens = simulate_ensemble(spec, lambda r, n: sample_from_density(rho0, n, r), 1.0, 0.005, seed=7,
                            n_paths=20000, save_stride=200)
    kde = estimate_density(ens.states[:, -1], small_grid)
    assert small_grid.integrate(np.abs(kde.values - fpe.values)) < 0.05


def test_stable_increments_law(rng):
    x = stable_increments(1.0, 20000, rng)
    assert stats.kstest(x, "cauchy").pvalue > 1e-3
    y = stable_increments(2.0, 20000, rng)
    assert y.var() == pytest.approx(2.0, rel=0.05)
    with pytest.raises(ValueError):
        stable_increments(2.5, 10, rng)


def test_stable_ensemble_reaches_stationary_law(rng):
    spec = example2_spec(1.5)
    ens = simulate_ensemble(spec, np.array([0.0]), 10.0, 0.01, seed=11, n_paths=20000, save_stride=1000,
                            jump_record_threshold=1e9)
    ref = sample_stable_stationary(1.5, 20000, rng)
    assert stats.ks_2samp(ens.states[:, -1, 0], ref).pvalue > 1e-3


def test_near_gaussian_stable_driver():
    spec = example2_spec(1.999)
    ens = simulate_ensemble(spec, np.array([0.0]), 5.0, 0.01, seed=12, n_paths=20000, save_stride=500,
                            jump_record_threshold=1e9)
    q1, q3 = np.percentile(ens.states[:, -1, 0], [25, 75])
    assert q3 - q1 == pytest.approx(2 * stats.norm.ppf(0.75), rel=0.03)


def test_stable_path_records_large_jumps():
    spec = example2_spec(1.0)
    p = simulate_stable_path(spec, 0.0, 5.0, 0.01, seed=1, jump_record_threshold=0.5)
    assert np.all(np.abs(p.jump_disp) > 0.5)


def test_reversed_drift_rotational():
    spec = rotational_ou_spec()
    bR = reversed_drift(spec, gaussian_density(ROTATIONAL_GRID))
    x = np.array([[0.5, -1.0], [1.2, 0.3]])
    expected = np.stack([-x[:, 0] - x[:, 1], -x[:, 1] + x[:, 0]], axis=-1)
    np.testing.assert_allclose(bR(x), expected, atol=1e-4)


def test_reversed_example1_has_same_stationary_law(ex1, ex1_gibbs):
    spec, kernel, _ = ex1
    ens = simulate_reversed_ensemble(spec, kernel, ex1_gibbs, lambda r, n: r.normal(size=(n, 1)), 2.0, 0.01,
                                     seed=5, n_paths=5000, save_stride=200)
    x = ens.states[:, -1, 0]
    assert stats.kstest(x, "norm").pvalue > 1e-3
    assert ens.driver == "reversed"


def test_reversed_rejects_stable(ex2_15):
    spec, kernel, rho = ex2_15
    with pytest.raises(ConfigurationError):
        simulate_reversed_ensemble(spec, kernel, rho, np.array([0.0]), 1.0, 0.1, 0, 2)
