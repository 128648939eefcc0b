import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpepr.density import gaussian_density
from jumpepr.errors import NonStationaryError
from jumpepr.library import EXAMPLE1, ROTATIONAL_GRID, builtin_matrix, rotational_ou_spec, spec_from_dict
from jumpepr.model import build_jump_kernel
from jumpepr.reversibility import (Thresholds, asymmetry_matrix, check_detailed_balance,
                                   check_gradient_structure, default_pairs, full_report, mc_battery,
                                   mc_reversibility_test)
from jumpepr.simulate import sample_stable_stationary, simulate_ensemble
from oracles import ROTATIONAL_LOCAL_CURRENT_L1

EXPECTED = {"example1": "reversible", "example2_alpha1": "irreversible", "example2_alpha1.5": "irreversible",
            "reversible_ou": "reversible", "rotational_ou": "irreversible"}


@pytest.fixture(scope="module")
def matrix():
    return {name: (spec, build_jump_kernel(spec), rho) for name, (spec, rho) in builtin_matrix().items()}


@pytest.fixture(scope="module")
def reports(matrix):
    return {name: full_report(spec, k, rho) for name, (spec, k, rho) in matrix.items()}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_builtin_verdicts(reports, name):
    r = reports[name]
    assert r.verdict_consistent
    assert r.verdict == EXPECTED[name]
    assert min(r.separations().values()) >= 10


@pytest.mark.parametrize("factor", [0.5, 2.0])
def test_verdicts_robust_to_threshold_scaling(matrix, reports, factor):
    th = Thresholds().scaled(factor)
    for name, (spec, k, rho) in matrix.items():
        r = full_report(spec, k, rho, thresholds=th)
        assert r.verdict == reports[name].verdict, name


def test_rotational_local_current(matrix):
    spec, k, rho = matrix["rotational_ou"]
    db = check_detailed_balance(spec, k, rho)
    assert db.local_residual == pytest.approx(ROTATIONAL_LOCAL_CURRENT_L1, rel=1e-3)
    assert db.nonlocal_residual == 0.0


def test_nonstationary_density_rejected(ex1):
    _, _, g = ex1
    doc = dict(EXAMPLE1, drift={"family": "gradient_quadratic", "stiffness": 1.1})
    spec = spec_from_dict(doc)
    with pytest.raises(NonStationaryError) as info:
        check_detailed_balance(spec, build_jump_kernel(spec), gaussian_density(g))
    assert info.value.residual > 1e-2


def test_report_serialization(reports):
    doc = json.loads(reports["example1"].to_json())
    assert doc["verdict"] == "reversible"
    assert doc["potential_source"] == "minus_log_density"
    assert set(doc["passes"]) == {"detailed_balance", "generator_symmetry", "gradient_structure",
                                  "zero_entropy_production"}


def test_asymmetry_matrix_antisymmetric(matrix):
    for name, (spec, k, rho) in matrix.items():
        M = asymmetry_matrix(spec, k, rho)
        np.testing.assert_allclose(M, -M.T, atol=1e-12, err_msg=name)


def test_explicit_potential(ex1):
    spec, kernel, g = ex1
    probes = np.linspace(-3, 3, 25)[:, None]
    drift_res, kernel_res = check_gradient_structure(spec, kernel, lambda x: 0.5 * x[..., 0] ** 2, 1.0, probes)
    assert drift_res < 1e-6 and kernel_res < 1e-6
    drift_res, _ = check_gradient_structure(spec, kernel, lambda x: 0.6 * x[..., 0] ** 2, 1.0, probes)
    assert drift_res > 0.1


@pytest.fixture(scope="module")
def small_ens(ex1):
    spec, _, _ = ex1
    return simulate_ensemble(spec, lambda r, n: r.normal(size=(n, 1)), 2.0, 0.01, seed=3, n_paths=100,
                             save_stride=10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5))
def test_identical_functions_give_zero_z(small_ens, pair_index):
    _, f, _ = default_pairs(1)[pair_index]
    res = mc_reversibility_test(small_ens, f, f, 0.5)
    assert res.z_score == 0.0
    assert res.forward_corr == res.backward_corr


def test_lag_validation(small_ens):
    with pytest.raises(ValueError):
        mc_reversibility_test(small_ens, np.tanh, np.tanh, 0.05)
    with pytest.raises(ValueError):
        mc_reversibility_test(small_ens, np.tanh, np.tanh, 5.0)


def test_default_pairs_are_distinct():
    nodes = np.linspace(-3, 3, 61)[:, None]
    for dim in (1, 2):
        pts = np.column_stack([nodes[:, 0]] * dim) + (np.c_[0, 0.3][:, :dim] if dim == 2 else 0)
        for name, f, g in default_pairs(dim):
            assert not np.allclose(f(pts), g(pts)), (dim, name)


def test_battery_reversible_example1(ex1):
    spec, _, _ = ex1
    ens = simulate_ensemble(spec, lambda r, n: r.normal(size=(n, 1)), 5.0, 0.01, seed=31, n_paths=2000,
                            save_stride=10)
    bat = mc_battery(ens, 0.5)
    assert bat.z_critical == pytest.approx(3.144, abs=1e-3)
    assert not bat.rejected
    cubic = mc_reversibility_test(ens, lambda s: s[..., 0], lambda s: s[..., 0] ** 3, 0.5)
    assert abs(cubic.z_score) < 3


def test_battery_rejects_stable(ex2_15):
    spec, _, _ = ex2_15
    ens = simulate_ensemble(spec, lambda r, n: sample_stable_stationary(1.5, (n, 1), r), 5.0, 0.01, seed=32,
                            n_paths=2000, save_stride=10, jump_record_threshold=1e9)
    assert mc_battery(ens, 0.5).rejected


def test_battery_rejects_rotational():
    spec = rotational_ou_spec()
    ens = simulate_ensemble(spec, lambda r, n: r.normal(size=(n, 2)), 5.0, 0.01, seed=33, n_paths=2000,
                            save_stride=10)
    bat = mc_battery(ens, 0.5)
    assert bat.rejected
    assert abs(bat.results["tanh_x_vs_tanh_y"].z_score) > bat.z_critical
    assert json.dumps(bat.to_dict())
