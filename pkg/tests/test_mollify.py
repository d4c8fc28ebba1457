from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from roughmetric.fields import build_rational_cover, constant_field
from roughmetric.mollify import (
    Mollifier, interval_smoothing, mollified, mollify_theta1, mollify_theta3, mollify_theta3_values,
)
from roughmetric.profiles import BUMP_PROFILE_ID, bump, bump_cdf


def test_kernel_mass_one():
    val, _ = quad(lambda t: float(bump(t)), -1, 1, epsabs=1e-15, epsrel=1e-13)
    assert val == pytest.approx(1.0, abs=1e-12)
    assert bump_cdf(-1.0) == 0.0 and bump_cdf(1.0) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("eps,dim", [(0.1, 1), (0.02, 2), (0.5, 3)])
def test_scaled_kernel_mass_and_support(eps, dim):
    m = Mollifier(eps, dim)
    n = 41
    g = np.linspace(-eps, eps, n)
    w = np.full(n, g[1] - g[0])
    w[0] = w[-1] = w[0] / 2
    G = np.stack([a.reshape(-1) for a in np.meshgrid(*([g] * dim), indexing="ij")], axis=1)
    W = np.prod(np.stack([a.reshape(-1) for a in np.meshgrid(*([w] * dim), indexing="ij")], axis=1), axis=1)
    # the bump vanishes to 4th order at the edge, so the trapezoid rule converges fast
    assert float(W @ m(G)) == pytest.approx(1.0, abs=1e-6)
    out = np.full((1, dim), 1.0001 * eps)
    assert m(out)[0] == 0.0
    assert np.all(m(G) >= 0)


def test_kernel_rejects_bad_eps():
    with pytest.raises(ValueError):
        Mollifier(0.0, 1)


def test_profile_id_recorded(ex1):
    assert mollified(ex1, 0.01).mollifier.profile == BUMP_PROFILE_ID


def test_centre_inside_channel(cover_line):
    # q_i with eps <= kappa 2^-(i+2): the whole kernel sits inside O
    for i, (lo, hi) in enumerate(cover_line.intervals[:8], start=1):
        q = float((lo + hi) / 2)
        eps = float(cover_line.kappa / 2 ** (i + 2))
        assert mollify_theta1(cover_line, eps, q) == 1.0


def test_far_from_cover_is_two():
    c = build_rational_cover(Fraction(1, 16), 3, "line")   # centres 0, 1, -1
    assert mollify_theta1(c, 0.01, 0.5) == 2.0


@pytest.mark.parametrize("x,eps,oracle", [
    # piecewise mpmath quadrature of the kernel over the covered part of [x - eps, x + eps]
    (1 / 32, 0.01, 1.5),
    (1 / 32 + 0.004, 0.01, 1.9011913400000002),
    (0.5, 0.006, 1.0218459555334876),
])
def test_theta1_matches_quadrature(cover_line, x, eps, oracle):
    assert mollify_theta1(cover_line, eps, x) == pytest.approx(oracle, abs=1e-10)


def test_interval_smoothing_piecewise_quad():
    ivs = [(0.1, 0.13), (0.2, 0.5)]
    eps = 0.05
    for x in (0.1, 0.15, 0.21, 0.52):
        # integrate the kernel over s with x - s inside an interval, split at the jumps
        tot = 0.0
        for a, b in ivs:
            lo, hi = max(x - b, -eps), min(x - a, eps)
            if hi > lo:
                tot += quad(lambda t: float(bump(t / eps)) / eps, lo, hi, epsabs=1e-15, epsrel=1e-13)[0]
        assert interval_smoothing(ivs, eps, x) == pytest.approx(tot, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-2, 2), eps=st.floats(1e-4, 0.5))
def test_theta1_bounds(cover_line, x, eps):
    v = mollify_theta1(cover_line, eps, x)
    assert 1.0 <= v <= 2.0


def test_theta1_lipschitz(cover_line):
    eps = 0.01
    x = np.linspace(-0.2, 1.2, 20001)
    v = mollify_theta1(cover_line, eps, x)
    slope = np.max(np.abs(np.diff(v)) / np.diff(x))
    # |d/dx (1_U * rho_eps)| <= 2 max(rho_eps) per boundary pair, sup rho = 315/256 / eps
    assert slope <= 2 * 315 / 256 / eps * 1.01


def test_ex2_product_bounds(ex2):
    mm = mollified(ex2, 0.05)
    X = np.random.default_rng(1).uniform(-0.5, 1.5, size=(2000, 2))
    th = mm.theta(X)
    assert np.all((th >= 1.0) & (th <= 2.0))
    assert mm([-0.3, 0.5]) == 2.0


def test_constant_passthrough():
    mm = mollified(constant_field(1.5, 3), 0.1)
    assert mm([0.2, 0.3, 0.4]) == 1.5


# EX3 --------------------------------------------------------------------------------

def test_theta3_far_is_two(hier):
    assert mollify_theta3(hier, 0.01, np.array([1 / 3, 2 / 3])) == 2.0


def test_theta3_centre_small_eps(hier):
    for m in range(1, hier.levels + 1):
        ix = hier.D[m - 1][len(hier.D[m - 1]) // 2]
        c = np.array(ix, float) / 2 ** (m + 1)
        r = float(hier.r[m - 1])
        assert mollify_theta3(hier, r / 20, c) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("off,eps,oracle", [
    # dense 2401^2 trapezoid convolution of (2 - psi) with the kernel, converged to 1e-12
    ((1e-6, 2e-6), 4e-6, 1.1484580915678495),
    ((3e-6, -1e-6), 1e-5, 1.6257667460930727),
    ((2e-6, 1e-6), 2e-6, 1.0091202109267132),
])
def test_theta3_matches_grid_convolution(hier, off, eps, oracle):
    y = np.array([0.25, 0.5]) + np.array(off)
    assert mollify_theta3(hier, eps, y) == pytest.approx(oracle, abs=1e-6)


def test_theta3_moment_regime_mass(hier):
    # kernel much wider than all balls: the deficit is the ball mass times the kernel
    eps = 0.02
    y = np.array([0.25, 0.5])
    v = mollify_theta3(hier, eps, y)
    assert 1.0 < 2.0 - 1e-3 < v < 2.0


@settings(max_examples=60, deadline=None)
@given(y1=st.floats(-0.2, 1.2), y2=st.floats(-0.2, 1.2), eps=st.sampled_from([1e-3, 1e-2, 5e-2]))
def test_theta3_bounds(hier, y1, y2, eps):
    v = mollify_theta3(hier, eps, np.array([y1, y2]))
    assert 1.0 <= v <= 2.0


def test_theta3_convergence_at_certified_point(hier):
    # thirds-rational y is in S, so theta(y) = 2 and the mollified values approach it
    y = np.array([1 / 3, 2 / 3])
    errs = [abs(mollify_theta3(hier, e, y) - 2.0) for e in (0.1, 0.05, 0.025, 0.0125)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-6


def test_theta3_values_vectorised(hier):
    Y = np.array([[0.25, 0.5], [0.25 + 3e-6, 0.5], [0.6, 0.6]])
    v = mollify_theta3_values(hier, 1e-5, Y)
    assert [mollify_theta3(hier, 1e-5, y) for y in Y] == pytest.approx(v.tolist(), abs=0)
