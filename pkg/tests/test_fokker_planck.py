import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpepr.density import DensityField, Grid, gaussian_density
from jumpepr.errors import StabilityError
from jumpepr.fokker_planck import (Discretization, currents, export_snapshots, solve_fpe, stability_bound,
                                   stationary_residual)


def _ou_pdf(t, m0=3.0):
    m = m0 * np.exp(-t)
    return lambda x: np.exp(-0.5 * (x[..., 0] - m) ** 2) / np.sqrt(2 * np.pi)


def test_ou_transient_matches_closed_form(ou, small_grid):
    spec, kernel, _ = ou
    sol = solve_fpe(spec, kernel, gaussian_density(small_grid, 3.0), 2.0)
    for snap in sol.snapshots[::20]:
        err = small_grid.integrate(np.abs(snap.values - _ou_pdf(snap.time)(small_grid.nodes)))
        assert err < 5e-3, (snap.time, err)
    assert sol.mass_drift < 1e-10


def test_generator_columns_conserve_mass(ex1):
    spec, kernel, _ = ex1
    g = Grid.line(-8, 8, 161)
    d = Discretization(spec, kernel, g)
    # w^T M = 0 up to mass carried out of the box by jumps and the boundary
    leak = d.w @ d.forward
    assert np.max(np.abs(leak[20:-20])) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(0.5, 2.0))
def test_mass_conserved_along_trajectory(ex1, mean, std):
    spec, kernel, _ = ex1
    g = Grid.line(-8, 8, 81)
    sol = solve_fpe(spec, kernel, gaussian_density(g, mean, std), 0.5)
    for s in sol.snapshots:
        assert s.mass == pytest.approx(1.0, abs=1e-12)
        assert s.values.min() >= 0


def test_example1_converges_to_gibbs(ex1, small_grid):
    spec, kernel, _ = ex1
    sol = solve_fpe(spec, kernel, gaussian_density(small_grid, 3.0), 10.0)
    final = sol.snapshots[-1]
    gibbs = gaussian_density(small_grid)
    assert small_grid.integrate(np.abs(final.values - gibbs.values)) < 1e-3


def test_gibbs_is_stationary_for_example1(ex1, ex1_gibbs):
    spec, kernel, _ = ex1
    assert stationary_residual(spec, kernel, ex1_gibbs) < 1e-2


def test_stable_density_is_stationary(ex2):
    spec, kernel, rho = ex2
    assert stationary_residual(spec, kernel, rho) < 1e-2


def test_wrong_density_is_not_stationary(ex1, small_grid):
    spec, kernel, _ = ex1
    assert stationary_residual(spec, kernel, gaussian_density(small_grid, 1.0)) > 0.1


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(0.5, 2.0))
def test_nonlocal_current_antisymmetric(ex1, mean, std):
    spec, kernel, _ = ex1
    g = Grid.line(-6, 6, 61)
    c = currents(spec, kernel, gaussian_density(g, mean, std))
    assert np.max(np.abs(c.nonlocal_ + c.nonlocal_.T)) == 0.0
    assert c.antisymmetry_error() == 0.0


def test_local_current_of_gibbs_vanishes(ex1, ex1_gibbs):
    spec, kernel, g = ex1
    c = currents(spec, kernel, ex1_gibbs)
    assert g.integrate(np.abs(c.local[..., 0])) < 1e-3


def test_dt_above_bound_rejected(ou, small_grid):
    spec, kernel, _ = ou
    bound = stability_bound(spec, kernel, small_grid)
    with pytest.raises(StabilityError) as info:
        solve_fpe(spec, kernel, gaussian_density(small_grid), 1.0, dt=2 * bound)
    assert info.value.bound == pytest.approx(bound)


def test_dt_adjusted_to_hit_final_time(ou, small_grid):
    spec, kernel, _ = ou
    bound = stability_bound(spec, kernel, small_grid)
    sol = solve_fpe(spec, kernel, gaussian_density(small_grid), 0.1, dt=0.9 * bound / 1.3)
    assert sol.times[-1] == pytest.approx(0.1, rel=1e-12)
    assert sol.dt * sol.steps == pytest.approx(0.1, rel=1e-12)


def test_invalid_arguments(ou, small_grid):
    spec, kernel, _ = ou
    with pytest.raises(ValueError):
        solve_fpe(spec, kernel, gaussian_density(small_grid), -1.0)
    with pytest.raises(ValueError):
        solve_fpe(spec, kernel, gaussian_density(small_grid), 1.0, dt=0.0)


def test_export_snapshots(tmp_path, ou, small_grid):
    spec, kernel, _ = ou
    sol = solve_fpe(spec, kernel, gaussian_density(small_grid, 1.0), 0.2, stride=10 ** 6)
    written = export_snapshots(sol, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["files"]) == len(sol.snapshots) == 2
    back = DensityField.from_csv(tmp_path / "rho_t1.csv", normalize=False)
    np.testing.assert_array_equal(back.values, sol.snapshots[-1].values)
    assert len(written) == 3


def test_two_dimensional_rotational_stationary():
    from jumpepr.library import ROTATIONAL_GRID, rotational_ou_spec
    from jumpepr.model import build_jump_kernel
    spec = rotational_ou_spec()
    assert stationary_residual(spec, build_jump_kernel(spec), gaussian_density(ROTATIONAL_GRID)) < 1e-2
