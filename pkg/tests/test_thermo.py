import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpepr.density import Grid, gaussian_density
from jumpepr.fokker_planck import solve_fpe
from jumpepr.library import ROTATIONAL_GRID, rotational_ou_spec
from jumpepr.model import build_jump_kernel
from jumpepr.thermo import (ThermoSeries, decompose_forces_1d, entropy_production_rate, entropy_rate,
                            free_energy, gibbs_entropy, kl_divergence, thermo_series)
from oracles import (GAUSSIAN_ENTROPY, RESET_NONLOCAL_EPR_N31, ROTATIONAL_EPR, STABLE_OU_EPR,
                     ou_transient_epr)


def test_gibbs_entropy_of_normal(ex1_gibbs):
    assert gibbs_entropy(ex1_gibbs) == pytest.approx(GAUSSIAN_ENTROPY, abs=1e-8)


def test_kl_divergence_between_normals(small_grid):
    p, q = gaussian_density(small_grid, 1.0), gaussian_density(small_grid)
    assert kl_divergence(p, q) == pytest.approx(0.5, abs=1e-5)
    assert kl_divergence(q, q) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("mean,std", [(3.0, 1.0), (0.0, 1.5), (-1.0, 0.5)])
def test_ou_epr_closed_form(ou, mean, std):
    spec, kernel, g = ou
    ep = entropy_production_rate(spec, kernel, gaussian_density(g, mean, std))
    exact = mean ** 2 + (std - 1 / std) ** 2
    assert ep.ep_local == pytest.approx(exact, rel=1e-4, abs=1e-8)
    assert ep.ep_nonlocal == 0.0


def test_example1_initial_epr_split(ex1):
    spec, kernel, g = ex1
    ep = entropy_production_rate(spec, kernel, gaussian_density(g, 3.0))
    assert ep.ep_local == pytest.approx(ou_transient_epr(0.0), rel=1e-4)
    assert ep.ep_nonlocal == pytest.approx(RESET_NONLOCAL_EPR_N31, rel=1e-4)


def test_example1_gibbs_has_zero_epr(ex1, ex1_gibbs):
    spec, kernel, _ = ex1
    ep = entropy_production_rate(spec, kernel, ex1_gibbs)
    assert abs(ep.ep_total) < 1e-8


def test_stable_stationary_epr(ex2):
    spec, kernel, rho = ex2
    ep = entropy_production_rate(spec, kernel, rho)
    assert ep.ep_local == 0.0
    assert ep.ep_total == pytest.approx(STABLE_OU_EPR, abs=5e-3)
    assert ep.band_correction > 0 and ep.exterior_correction > 0


def test_rotational_epr():
    spec = rotational_ou_spec()
    ep = entropy_production_rate(spec, build_jump_kernel(spec), gaussian_density(ROTATIONAL_GRID))
    assert ep.ep_total == pytest.approx(ROTATIONAL_EPR, rel=1e-3)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(0.4, 2.5))
def test_epr_nonnegative(ex1, mean, std):
    spec, kernel, _ = ex1
    g = Grid.line(-8, 8, 161)
    ep = entropy_production_rate(spec, kernel, gaussian_density(g, mean, std))
    assert ep.ep_local >= 0 and ep.ep_nonlocal >= 0


def test_force_decomposition_example1(ex1):
    spec, kernel, _ = ex1
    dec = decompose_forces_1d(spec).with_jump_driving(kernel, spec.beta)
    x = np.linspace(-4, 4, 17)[:, None]
    np.testing.assert_allclose(dec.potential(x), 0.5 * x[:, 0] ** 2, atol=1e-8)
    assert dec.consistency_error(spec, x) < 1e-6
    xs, ys = x[:, None, :], x[None, :, :]
    f = dec.nonlocal_driving(xs, ys)
    np.testing.assert_allclose(f, -np.swapaxes(f, 0, 1), atol=1e-12)
    # reset kernel is detailed balanced w.r.t. exp(-x^2/2): the driving vanishes
    assert np.max(np.abs(f)) < 1e-7


def test_free_energy_kl_form(small_grid):
    from jumpepr.library import example1_spec
    dec = decompose_forces_1d(example1_spec())
    rho = gaussian_density(small_grid, 1.5, 0.8)
    fe = free_energy(rho, dec, 1.0, gibbs_reference=gaussian_density(small_grid))
    assert fe.value == pytest.approx(fe.kl_form + fe.offset)
    assert fe.offset == pytest.approx(-math.log(math.sqrt(2 * math.pi)), abs=1e-6)


@pytest.fixture(scope="module")
def ou_series(ou):
    spec, kernel, g = ou
    sol = solve_fpe(spec, kernel, gaussian_density(g, 3.0), 3.0, stride=400)
    return thermo_series(spec, kernel, sol.snapshots, decompose_forces_1d(spec))


def test_series_matches_closed_form(ou_series):
    exact = np.array([ou_transient_epr(t) for t in ou_series.times])
    np.testing.assert_allclose(ou_series.epr_total, exact, rtol=2e-3, atol=1e-6)


def test_series_free_energy_identity(ou_series):
    s = ou_series
    dF = np.gradient(s.free_energy, s.times, edge_order=2)
    inner = slice(2, -2)
    np.testing.assert_allclose(dF[inner], -s.epr_total[inner], rtol=2e-2, atol=1e-6)
    assert np.all(np.diff(s.free_energy) <= 1e-12)


def test_series_entropy_balance(ou_series):
    assert np.max(ou_series.relative_balance()[2:-2]) < 2e-2


def test_series_exports(tmp_path, ou_series):
    ou_series.to_csv(tmp_path / "t.csv")
    tab = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(tab, ou_series.table())
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ThermoSeries.HEADER
    doc = json.loads(ou_series.to_json(tmp_path / "t.json", run="ou"))
    assert doc["meta"]["run"] == "ou"
    assert doc["epr_total"] == [float(v) for v in ou_series.epr_total]


def test_entropy_rate_validation(small_grid):
    snaps = [gaussian_density(small_grid, time=t) for t in (0.0, 0.1)]
    with pytest.raises(ValueError):
        entropy_rate(snaps)
    snaps = [gaussian_density(small_grid, time=t) for t in (0.0, 0.1, 0.3)]
    with pytest.raises(ValueError):
        entropy_rate(snaps)
