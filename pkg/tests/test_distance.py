import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughmetric.distance import (
    CSV_COLUMNS, AdmissibilityError, DiagnosticError, DualFunction, alpha_ex1, alpha_ex3, append_csv,
    check_schedule, distance_estimate, dual_certificate_bound, edge_weight, linear_dual, shadow_dual,
    shortest_path, sigma_ex1, sigma_ex3, staircase_upper_path, two_segment_cost,
)
from roughmetric.fields import build_rational_cover, constant_field
from roughmetric.lattice import Lattice, stencil, stencil_error

SQRT2 = math.sqrt(2.0)
unit_vec = st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


# edge weights ----------------------------------------------------------------------

def test_edge_constant():
    f = constant_field(2.0, 2)
    assert edge_weight(f, 0.1, [0, 0], [0.3, 0.4]) == pytest.approx(SQRT2 * 0.5, rel=1e-12)


def test_edge_inside_channel(ex1):
    # x_1 = 0 is the centre of (-1/32, 1/32); eps = 0.004 keeps the kernel inside
    assert edge_weight(ex1, 0.004, [0.0, 0.1], [0.0, 0.4]) == pytest.approx(0.3, rel=1e-12)


def test_edge_mixed_matches_brute_force(ex1):
    # 1e5-panel midpoint rule of sqrt(theta_eps) along the segment
    assert edge_weight(ex1, 0.01, [0.02, 0.1], [0.05, 0.3]) == pytest.approx(0.2554191020917086, rel=1e-6)


# stencils and lattices ----------------------------------------------------------------

def test_stencil_contains_axes_and_is_symmetric():
    for d in (2, 3):
        S = {tuple(v) for v in stencil(3, d)}
        for i in range(d):
            e = tuple(int(j == i) for j in range(d))
            assert e in S and tuple(-c for c in e) in S
        assert all(tuple(-c for c in v) in S for v in S)


def test_stencil_error_2d():
    # largest gap between (1,0) and (3,1): sec(atan(1/3) / 2) - 1
    assert stencil_error(3, 2) == pytest.approx(1 / math.cos(math.atan(1 / 3) / 2) - 1, rel=1e-12)
    # the 1 - cos form of the same gap is smaller; sec is the rigorous overestimate factor
    assert 1 - math.cos(math.atan(1 / 3) / 2) < stencil_error(3, 2) < 0.0131


def test_euclidean_3_4_5():
    f = constant_field(1.0, 2)
    lat = Lattice((0.0, 0.0), (31, 41), 0.1, 3)
    length, path = shortest_path(lat, f, 0.1, [0, 0], [3, 4])
    assert 5.0 <= length <= 5.0 * (1 + stencil_error(3, 2))
    assert length <= 5.0 * 1.013
    assert np.allclose(path[0], [0, 0]) and np.allclose(path[-1], [3, 4])


def test_scaled_unit_step():
    f = constant_field(2.0, 2)
    lat = Lattice((0.0, -0.2), (11, 5), 0.1, 3)
    length, _ = shortest_path(lat, f, 0.1, [0, 0], [1, 0])
    assert length == pytest.approx(SQRT2, rel=1e-12)


def test_stencil_refinement_monotone():
    rng = np.random.default_rng(7)
    f = constant_field(1.3, 2)
    lat = {k: Lattice((0.0, 0.0), (21, 21), 0.05, k) for k in (1, 2, 3)}
    for _ in range(100):
        a, b = rng.integers(0, 21, size=(2, 2))
        pa, pb = a * 0.05, b * 0.05
        L = [shortest_path(lat[k], f, 0.1, pa, pb)[0] for k in (1, 2, 3)]
        assert L[0] >= L[1] - 1e-12 and L[1] >= L[2] - 1e-12


def test_schedule_checks():
    with pytest.raises(ValueError):
        check_schedule([])
    with pytest.raises(ValueError):
        check_schedule([(0.01, 0.01)])
    with pytest.raises(ValueError):
        check_schedule([(0.02, 0.01), (0.04, 0.01)])
    check_schedule([(0.04, 0.02), (0.02, 0.01)])


# estimates and brackets ----------------------------------------------------------------

def test_constant_bracket_contains_closed_form():
    f = constant_field(1.5, 2)
    q = distance_estimate(f, [0.1, 0.2], [0.5, 0.5], [(0.04, 0.02), (0.02, 0.01)], 3, margin=0.1)
    exact = math.sqrt(1.5) * 0.5
    assert q.contains(exact)
    assert len(q.stages) == 2 and q.estimate == q.stages[-1].length


def test_bracket_inversion_is_diagnosed():
    f = constant_field(1.0, 2)

    class Liar(DualFunction):
        def bound(self, src, dst):
            return 10.0

    w = Liar(value=lambda x: 0.0, grad=lambda x: np.zeros(2), note="not a certificate")
    with pytest.raises(DiagnosticError):
        distance_estimate(f, [0, 0], [0.2, 0], [(0.04, 0.02)], 3, duals=[w], margin=0.1)


def test_inadmissible_dual_rejected():
    f = constant_field(1.0, 2)
    with pytest.raises(AdmissibilityError) as err:
        dual_certificate_bound(f, linear_dual([1, 0], scale=1.5), [0, 0], [1, 0])
    assert err.value.sample is not None


def test_dual_examples(ex1, ex3):
    src, dst = np.array([0.3, 0.1]), np.array([0.3, 0.35])
    assert dual_certificate_bound(ex1, linear_dual([0, 1]), src, dst) == pytest.approx(0.25)
    v = np.array([0.6, 0.8])
    got = dual_certificate_bound(ex1, linear_dual(v, 1 / SQRT2), [0, 0], [1, 2])
    assert got == pytest.approx((0.6 + 1.6) / SQRT2)
    got = dual_certificate_bound(ex3, linear_dual([0, 0, 1]), [0.3, 0.3, 0.0], [0.3, 0.3, 0.4])
    assert got == pytest.approx(0.4)


def test_shadow_dual_admissible_and_below_alpha(ex3, hier):
    rng = np.random.default_rng(3)
    y = np.array([1 / 3, 1 / 3, 0.5])
    for u in ([1, 0, 0], [1, 0, 1], [1, 0, 2], [0.3, 0.5, 0.1]):
        u = np.asarray(u, float)
        w = shadow_dual(hier, u)
        samples = y + rng.uniform(-0.3, 0.3, size=(2000, 3))
        b = dual_certificate_bound(ex3, w, y, y + 0.1 * u, samples=samples)
        assert b <= 0.1 * alpha_ex3(u) * (1 + 1e-9)
        assert b >= 0.1 * np.linalg.norm(u)
    assert shadow_dual(hier, [0, 0, 1]) is None


def test_csv_append(tmp_path):
    f = constant_field(1.0, 2)
    q = distance_estimate(f, [0, 0], [0.2, 0], [(0.04, 0.02)], 3, margin=0.05)
    path = tmp_path / "d.csv"
    append_csv(path, [q.csv_row()])
    append_csv(path, [q.csv_row()])
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 2 and list(rows[0]) == CSV_COLUMNS


# closed forms --------------------------------------------------------------------------

def test_alpha_examples():
    assert alpha_ex1([0, 1]) == 1.0
    assert alpha_ex1([1, 0]) == pytest.approx(SQRT2)
    assert alpha_ex1([0, 0]) == 0.0
    assert alpha_ex3([0, 0, 1]) == 1.0
    assert alpha_ex3([1, 0, 0]) == pytest.approx(SQRT2)
    assert alpha_ex3([1, 0, 1]) == pytest.approx(2.0)
    # both branches agree where they meet
    assert alpha_ex1([1, 1]) == pytest.approx(SQRT2 * SQRT2)


@settings(max_examples=300, deadline=None)
@given(u=unit_vec)
def test_alpha_between_norms(u):
    n = float(np.linalg.norm(u))
    for a in (alpha_ex1(u), alpha_ex3(u)):
        assert n * (1 - 1e-12) <= a <= SQRT2 * n * (1 + 1e-12)


def test_alpha_is_two_segment_minimum():
    rng = np.random.default_rng(11)
    c = np.linspace(0.0, 1.0, 10_001)
    for _ in range(100):
        u = rng.normal(size=rng.integers(2, 5))
        a, rest = abs(u[0]), np.linalg.norm(u[1:])
        costs = (1 - c) * rest + SQRT2 * np.sqrt(a * a + (c * rest) ** 2)
        assert costs.min() == pytest.approx(alpha_ex1(u), rel=1e-6)
        assert two_segment_cost(u, 1.0) == pytest.approx(SQRT2 * np.linalg.norm(u))


def test_sigma_ex1(cover_line):
    assert sigma_ex1(build_rational_cover(Fraction(1, 16), 0), Fraction(1, 2), Fraction(1, 10)) == 0.0
    # depth 3 covers only neighbourhoods of 0, 1 and -1, all more than 0.1 from 1/2
    c3 = build_rational_cover(Fraction(1, 16), 3)
    assert sigma_ex1(c3, Fraction(1, 2), Fraction(1, 10)) == 0.0


@pytest.mark.parametrize("x,L,scan", [
    # dense scan over left/right endpoints (a lower estimate of the supremum)
    (0.04, 0.05, 0.825),
    (0.2, 0.05, 1.9073486328125003e-05),
    (0.45, 0.1, 0.1448696627475245),
])
def test_sigma_ex1_vs_scan(cover_line, x, L, scan):
    v = sigma_ex1(cover_line, Fraction(x).limit_denominator(10 ** 6), Fraction(L).limit_denominator(1000))
    assert scan * (1 - 1e-12) <= v <= scan + 1e-3


def test_sigma_ex3(hier):
    y = [Fraction(1, 3), Fraction(2, 3)]
    assert sigma_ex3(hier, y, Fraction(4, 5) * hier.r[-1] / 2) == 0.0
    # counts (0, 3, 5, 24) from brute-force enumeration at radius 0.1
    assert sigma_ex3(hier, y, Fraction(1, 10)) == pytest.approx(2.8996728360652924e-06, rel=1e-14)
    s = [sigma_ex3(hier, y, Fraction(1, n)) for n in (5, 10, 20)]
    assert s[0] > s[1] > s[2]


# channel detours ----------------------------------------------------------------------

def test_staircase_zero_offset(ex1):
    poly, length = staircase_upper_path(ex1, 0.004, [0.0, 0.3], [0.0, 0.5], 0.0)
    assert length == pytest.approx(0.2, rel=1e-12)
    assert len(poly) == 2


def test_staircase_offset_penalty(ex1):
    off = 0.01
    poly, length = staircase_upper_path(ex1, 0.004, [off, 0.3], [off, 0.5], 0.0)
    assert 0.2 <= length <= 0.2 + 4 * SQRT2 * off
    assert len(poly) == 4


def test_staircase_ex3_oblique(ex3):
    x = np.array([0.25, 0.5])
    off = 2e-3
    src = np.array([0.25 + off, 0.5, 0.0])
    u = np.array([0.05, 0.0, 0.2])
    eps = float(ex3.payload.r[0]) / 40
    poly, length = staircase_upper_path(ex3, eps, src, src + u, x)
    assert length <= alpha_ex3(u) + 3 * SQRT2 * off
    assert length >= np.linalg.norm(u)


def test_staircase_warns_far_channel(ex1):
    with pytest.warns(RuntimeWarning):
        staircase_upper_path(ex1, 0.004, [0.2, 0.3], [0.2, 0.5], 0.0, tol=0.01)
