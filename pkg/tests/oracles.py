"""Reference values computed independently of the package and frozen here.

Each constant notes how it was obtained; test_oracles.py recomputes the
cheap ones with mpmath so a typo here cannot go unnoticed.
"""
import math

# Fractional Laplacian constants alpha 2^(alpha-1) Gamma((1+alpha)/2) / (sqrt(pi) Gamma(1-alpha/2)), mpmath 30 digits
STABLE_CONSTANT = {
    1.0: 0.318309886183790671537767526745,  # equals 1/pi
    1.5: 0.299206710301074544567564399727,
}

# (1/pi) int_0^inf cos(x xi) exp(-xi^1.5/1.5) dxi by mpmath quadosc, 30 digits
STABLE15_DENSITY = {
    0.0: 0.376538625235253993400937990101,
    1.0: 0.209840396637455473218047323799,
    3.0: 0.0188587849871500344265394843882,
    10.0: 0.000675051765367520648707417491766,
}

GAUSSIAN_ENTROPY = 0.5 * math.log(2 * math.pi * math.e)  # 1.4189385332046727

# Nonlocal EPR of N(3,1) under jumps to y with rate exp(-y^2/2):
# log ratio is 3(x - y), so the pair integral is 3 * sqrt(2 pi) * E[x] = 9 sqrt(2 pi)
RESET_NONLOCAL_EPR_N31 = 22.5596544716790045217418875633

# Stationary EPR of dX = -X dt + dL (symmetric stable, no diffusion): the drift
# contributes -int rho div b = 1 to dS/dt and the jumps -e_nl, so e_nl = 1 for every alpha
STABLE_OU_EPR = 1.0

# Rotational OU b = (-x+y, -y-x), A = I, rho = N(0, I): j = (y, -x) rho
ROTATIONAL_LOCAL_CURRENT_L1 = math.sqrt(math.pi / 2)  # int |j| = E|x| over 2D normal = sqrt(pi/2)
ROTATIONAL_EPR = 2.0  # E|(y, -x)|^2


def ou_transient_epr(t, m0=3.0, s0=1.0):
    """EPR of the pure-diffusion OU from N(m0, s0^2): m(t)^2 + (s(t) - 1/s(t))^2."""
    m = m0 * math.exp(-t)
    var = 1.0 + (s0 ** 2 - 1.0) * math.exp(-2 * t)
    s = math.sqrt(var)
    return m * m + (s - 1.0 / s) ** 2
