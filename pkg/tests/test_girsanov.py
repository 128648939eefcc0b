import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpepr.density import gaussian_density
from jumpepr.errors import ConfigurationError, EstimateRefused, FingerprintMismatch
from jumpepr.girsanov import LogRNAccumulator, ReversalContext, estimate_epr_kl, pathwise_log_rn
from jumpepr.library import ROTATIONAL_GRID, example1_spec, rotational_ou_spec
from jumpepr.model import ProcessSpec, build_jump_kernel
from jumpepr.simulate import sample_stable_stationary, simulate_ensemble, simulate_path
from oracles import ROTATIONAL_EPR, STABLE_OU_EPR


@pytest.fixture(scope="module")
def ex1_paths(ex1):
    spec, _, _ = ex1
    return simulate_ensemble(spec, lambda r, n: r.normal(size=(n, 1)), 2.0, 0.01, seed=21, n_paths=400)


def test_example1_estimate_vanishes(ex1, ex1_gibbs, ex1_paths):
    spec, kernel, _ = ex1
    est = estimate_epr_kl(ex1_paths, spec, kernel, ex1_gibbs)
    assert abs(est.epr_estimate) <= 3 * est.standard_error + 1e-10
    assert np.max(np.abs(est.totals)) < 1e-2


def test_example1_compensator_vanishes_in_bulk(ex1, ex1_gibbs):
    spec, kernel, _ = ex1
    ctx = ReversalContext(spec, kernel, ex1_gibbs)
    x = np.linspace(-4, 4, 33)[:, None]
    assert np.max(np.abs(ctx.compensator(x))) < 1e-3
    # the reset kernel is balanced by the Gibbs density: every jump has zero log ratio
    pre, disp = np.array([[1.0], [-2.0]]), np.array([[-0.5], [3.0]])
    np.testing.assert_allclose(ctx.jump_log_ratio(pre, disp), 0.0, atol=1e-6)


def test_rotational_estimate():
    spec = rotational_ou_spec()
    rho = gaussian_density(ROTATIONAL_GRID)
    ens = simulate_ensemble(spec, lambda r, n: r.normal(size=(n, 2)), 2.0, 0.005, seed=22, n_paths=1000)
    est = estimate_epr_kl(ens, spec, build_jump_kernel(spec), rho)
    assert abs(est.epr_estimate - ROTATIONAL_EPR) < 3 * est.standard_error + 0.05 * ROTATIONAL_EPR
    assert est.discard_fraction == 0.0


def test_stable_cauchy_estimate(ex2):
    spec, kernel, rho = ex2
    alpha = spec.stable_alpha
    ens = simulate_ensemble(spec, lambda r, n: sample_stable_stationary(alpha, (n, 1), r), 2.0, 0.005,
                            seed=23, n_paths=1000)
    est = estimate_epr_kl(ens, spec, kernel, rho)
    assert abs(est.epr_estimate - STABLE_OU_EPR) < 3 * est.standard_error + 0.05


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 199))
def test_window_additivity(ex1_paths, ex1, split):
    spec, kernel, _ = ex1
    rho = gaussian_density(ex1[2])
    ctx = ReversalContext(spec, kernel, rho)
    p = ex1_paths.path(3)
    full = pathwise_log_rn(p, spec, kernel, rho, context=ctx)
    parts = (pathwise_log_rn(p, spec, kernel, rho, window=(0, split), context=ctx)
             + pathwise_log_rn(p, spec, kernel, rho, window=(split, 200), context=ctx))
    assert parts.total == pytest.approx(full.total, abs=1e-12)


def test_window_additivity_rotational():
    spec = rotational_ou_spec()
    rho = gaussian_density(ROTATIONAL_GRID)
    kernel = build_jump_kernel(spec)
    ctx = ReversalContext(spec, kernel, rho)
    p = simulate_path(spec, [0.5, -0.5], 1.0, 0.01, seed=4)
    full = pathwise_log_rn(p, spec, kernel, rho, context=ctx)
    for split in (1, 37, 99):
        a = pathwise_log_rn(p, spec, kernel, rho, window=(0, split), context=ctx)
        b = pathwise_log_rn(p, spec, kernel, rho, window=(split, 100), context=ctx)
        assert (a + b).total == pytest.approx(full.total, rel=1e-12, abs=1e-14)
        assert (a + b).drift_part == pytest.approx(full.drift_part, rel=1e-12)


def test_accumulator_addition():
    a = LogRNAccumulator(1.0, -0.5, 0.25, 0.0)
    b = LogRNAccumulator(0.5, 0.5, 0.0, -1.0, True)
    c = a + b
    assert c.total == pytest.approx(a.total + b.total)
    assert c.discarded


def test_fingerprint_mismatch(ex1, ex1_gibbs, ex1_paths):
    _, kernel, _ = ex1
    other = example1_spec()
    other = ProcessSpec(**{**other.__dict__, "beta": 2.0})
    with pytest.raises(FingerprintMismatch):
        estimate_epr_kl(ex1_paths, other, kernel, ex1_gibbs)


def test_requires_every_step(ex1, ex1_gibbs):
    spec, kernel, _ = ex1
    ens = simulate_ensemble(spec, np.array([0.0]), 1.0, 0.01, seed=0, n_paths=5, save_stride=10)
    with pytest.raises(ValueError):
        estimate_epr_kl(ens, spec, kernel, ex1_gibbs)


def test_refusal_threshold(ex1, ex1_gibbs, ex1_paths):
    spec, kernel, _ = ex1
    with pytest.raises(EstimateRefused):
        estimate_epr_kl(ex1_paths, spec, kernel, ex1_gibbs, max_discard=0.0)


def test_state_dependent_diffusion_rejected(small_grid):
    spec = ProcessSpec(dim=1, beta=1.0, drift=lambda x: -x,
                       diffusion_factor=lambda x: (1.0 + 0.1 * np.asarray(x)[..., None] ** 2))
    with pytest.raises(ConfigurationError):
        ReversalContext(spec, build_jump_kernel(spec), gaussian_density(small_grid))


def test_csv_export(tmp_path, ex1, ex1_gibbs, ex1_paths):
    spec, kernel, _ = ex1
    est = estimate_epr_kl(ex1_paths, spec, kernel, ex1_gibbs)
    est.to_csv(tmp_path / "rn.csv")
    lines = (tmp_path / "rn.csv").read_text().splitlines()
    assert lines[0] == "path_id,martingale,drift,jump_log,compensator,total"
    assert len(lines) == len(ex1_paths) + 1
    tab = np.loadtxt(tmp_path / "rn.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(tab[:, -1], est.totals)
    assert set(est.to_dict()) >= {"epr_estimate", "standard_error", "discard_fraction"}
