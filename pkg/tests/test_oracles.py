import math

import mpmath as mp
import pytest

from oracles import RESET_NONLOCAL_EPR_N31, STABLE15_DENSITY, STABLE_CONSTANT, ou_transient_epr


@pytest.mark.parametrize("alpha", sorted(STABLE_CONSTANT))
def test_stable_constant_oracle(alpha):
    a = mp.mpf(alpha)
    c = a * 2 ** (a - 1) * mp.gamma((1 + a) / 2) / (mp.sqrt(mp.pi) * mp.gamma(1 - a / 2))
    assert float(c) == pytest.approx(STABLE_CONSTANT[alpha], rel=1e-15)


def test_stable_density_oracle_at_origin():
    v = mp.quad(lambda t: mp.exp(-t ** 1.5 / 1.5), [0, mp.inf]) / mp.pi
    assert float(v) == pytest.approx(STABLE15_DENSITY[0.0], rel=1e-14)


def test_reset_epr_oracle():
    assert RESET_NONLOCAL_EPR_N31 == pytest.approx(9 * math.sqrt(2 * math.pi), rel=1e-15)


def test_ou_oracle_initial_value():
    assert ou_transient_epr(0.0) == 9.0
