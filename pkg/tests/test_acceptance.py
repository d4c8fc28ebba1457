"""Acceptance criteria C1-C10; each test logs one PASS/FAIL line."""

import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import dblquad

from roughmetric.calculus import (
    Curve, TestFunction, check_weak_upper_gradient, fb_golden, fb_minimize, g_gradient_norm,
    linear_function, make_test_plan, metric_speed, slope, transversality_fraction, truncate_band,
)
from roughmetric.cheeger import ex2_report, ex3_report, gradient_energy, parallelogram_deficit, vol_S_slab
from roughmetric.distance import alpha_ex1, alpha_ex3, distance_estimate, linear_dual
from roughmetric.fields import (
    build_rational_cover, certify_in_S, constant_field, seminorm_certificate_bound, sobolev_seminorm_psi,
)
from roughmetric.lattice import Lattice, lattice_shortest_path, stencil_error, weight_table
from roughmetric.mollify import mollified
from roughmetric.profiles import eta_prime

SQRT2 = math.sqrt(2.0)
SCHEDULE_EX1 = [(0.032, 0.016), (0.016, 0.008), (0.008, 0.004), (0.004, 0.002)]
SCHEDULE_EX3 = [(0.04, 0.02), (0.02, 0.01)]
# x_1 just outside the two largest channels in (0, 1); all are theta = 2 Lebesgue points
BASES_EX1 = [(1 / 32 + 1e-4, 0.3), (1 / 32 + 3e-4, 0.5), (1 / 32 + 5e-4, 0.1),
             (63 / 64 - 1e-4, 0.4), (63 / 64 - 3e-4, 0.7)]
POINTS_EX3 = [(1 / 3, 1 / 3, 0.5), (2 / 3, 1 / 3, 0.5), (1 / 3, 2 / 3, -0.25)]
DIRECTIONS_EX3 = [(0, 0, 1), (1, 0, 0), (1, 0, 1), (1, 0, 2)]


@pytest.fixture(scope="module")
def ex1_brackets(ex1):
    x2 = linear_dual([0, 1])
    t0 = time.perf_counter()
    qs = [distance_estimate(ex1, np.array(y), np.array(y) + [0, 0.2], SCHEDULE_EX1, 3, duals=[x2], margin=0.05)
          for y in BASES_EX1]
    return qs, time.perf_counter() - t0


def test_c1_channel_distance(ex1, cover_line, ex1_brackets, acceptance_log):
    qs, elapsed = ex1_brackets
    for y, _ in BASES_EX1:
        assert not cover_line.contains(Fraction(y)) and not cover_line.on_boundary(Fraction(y))
        assert ex1([y, 0.5]) == 2.0
    # the step is 0.2 up to the rounding of y_2 + 0.2, and x_2 certifies it exactly
    steps = [q.dst[1] - q.src[1] for q in qs]
    widths = [(q.upper_bound - q.lower_bound) / 0.2 for q in qs]
    ok = (all(q.contains(s) for q, s in zip(qs, steps)) and max(widths) <= 0.02
          and all(q.lower_bound == s for q, s in zip(qs, steps)) and elapsed <= 60)
    acceptance_log("C1", ok, f"brackets contain 0.2, max width {max(widths):.4%}, "
                             f"dual lower bound {min(q.lower_bound for q in qs):.12g}, {elapsed:.2f} s")
    assert ok


def test_c2_speed_vs_derivative_norm(ex1, acceptance_log):
    ups, gnorms = [], []
    for y in BASES_EX1:
        b = metric_speed(ex1, Curve.straight(y, [0, 1]), 0.0, SCHEDULE_EX1, 0.2, margin=0.05,
                         duals=[linear_dual([0, 1])])
        ups.append(b.upper)
        gnorms.append(math.sqrt(ex1(y)))
    sep = min(gnorms) - max(ups)
    ok = max(ups) <= 1.02 and sep >= 0.35
    acceptance_log("C2", ok, f"max speed upper edge {max(ups):.5f}, |gamma'|_g = {min(gnorms):.5f}, "
                             f"separation {sep:.4f}")
    assert ok


def test_c3_slope_gap(ex1, cover_line, acceptance_log):
    x2 = linear_function([0, 1], "x2")
    lows = []
    for y in BASES_EX1:
        b = slope(ex1, x2, y, [[0, 1], [0, -1]], SCHEDULE_EX1, 0.2, margin=0.05, duals=[linear_dual([0, 1])])
        lows.append(b.lower)
    ok = min(lows) >= 0.98 > math.sqrt(2 / 3)
    acceptance_log("C3", ok, f"min slope lower edge {min(lows):.5f} vs sqrt(2/3) = {math.sqrt(2 / 3):.5f}")
    assert ok


def test_c4_weak_upper_gradient_violation(cover_line, ex1, acceptance_log):
    t0 = time.perf_counter()
    plan = make_test_plan("EX1", {"cover": cover_line, "d": 2}, 10_000, 7)
    x2 = linear_function([0, 1], "x2")
    res = check_weak_upper_gradient(plan, x2, g_gradient_norm(ex1, x2),
                                    lambda P, u: np.full(len(P), alpha_ex1(u)))
    elapsed = time.perf_counter() - t0
    ok = (abs(res.lhs - 1.0) <= 1e-3 and res.rhs <= math.sqrt(2 / 3) + 0.01 and res.verdict == "VIOLATED"
          and res.separation >= 5 and elapsed <= 10)
    acceptance_log("C4", ok, f"lhs {res.lhs:.6f}, rhs {res.rhs:.6f}, {res.verdict}, "
                             f"separation {res.separation:.3g} sigma, {elapsed:.2f} s")
    assert ok


def test_c5_fb_closed_form(acceptance_log):
    worst_v = worst_c = 0.0
    for b in np.linspace(-5, 5, 101):
        c, v = fb_golden(b)
        c0, v0 = fb_minimize(b)
        worst_v = max(worst_v, abs(v - v0))
        if abs(b) <= 1:
            worst_v = max(worst_v, abs(v - (1 + abs(b))))
            worst_c = max(worst_c, abs(c - abs(b)))
    ok = worst_v <= 1e-10 and worst_c <= 1e-8
    acceptance_log("C5", ok, f"max value error {worst_v:.2e}, max |c* - |b|| {worst_c:.2e}")
    assert ok


def test_c6_ex2_deficit(acceptance_log):
    t0 = time.perf_counter()
    cover = build_rational_cover(Fraction(1, 16), 24, "unit_interval")
    rep = ex2_report(cover, 2)
    elapsed = time.perf_counter() - t0
    exact = -(1 - cover.measure_in(0, 1))           # -1/2 * 2 * (1 - L(O cap (0,1)))
    err = abs(Fraction(rep.deficit) - exact)
    ok = (err <= 1e-14 and abs(rep.deficit) >= 1 - 2 * float(cover.kappa)
          and rep.verdict == "NON_HILBERTIAN" and elapsed <= 1)
    acceptance_log("C6", ok, f"deficit {rep.deficit!r}, exact {exact} (error {float(err):.1e}), "
                             f"{rep.verdict}, {elapsed:.3f} s")
    assert ok


@pytest.fixture(scope="module")
def ex3_brackets(ex3):
    t0 = time.perf_counter()
    out = []
    for y in POINTS_EX3:
        y = np.array(y)
        for u in DIRECTIONS_EX3:
            u = np.array(u, float)
            q = distance_estimate(ex3, y, y + 0.1 * u, SCHEDULE_EX3, 3, box=(y - 0.6, y + 0.6))
            out.append((y, u, q))
    return out, time.perf_counter() - t0


def test_c7_ex3_alpha_law(ex3, hier, ex3_brackets, acceptance_log):
    for y in POINTS_EX3:
        assert certify_in_S(hier, [Fraction(round(3 * c), 3) for c in y[:-1]]).certified
    res, elapsed = ex3_brackets
    nodes = max(q.stages[-1].nodes for _, _, q in res)
    ok = all(q.contains(0.1 * alpha_ex3(u), 0.05) for _, u, q in res) and elapsed <= 180
    worst = max(abs(q.midpoint / (0.1 * alpha_ex3(u)) - 1) for _, u, q in res)
    acceptance_log("C7", ok, f"{len(res)} brackets contain 0.1 alpha(u) within 5%, {nodes} lattice nodes, "
                             f"worst midpoint offset {worst:.1%}, {elapsed:.1f} s")
    assert ok


@pytest.mark.xfail(strict=True, reason="the e_d step sees no theta = 1 ball at eps = 0.02; see notes")
def test_c7_vertical_midpoint(ex3_brackets):
    res, _ = ex3_brackets
    for _, u, q in res:
        if u[0] == 0:
            assert abs(q.midpoint / (0.1 * alpha_ex3(u)) - 1) <= 0.05


def test_c8_ex3_deficit_growth(hier, acceptance_log):
    ns = [1, 2, 3, 4]
    d = np.array([ex3_report(hier, n).deficit for n in ns])
    slope_fit, icpt = np.polyfit(ns, d, 1)
    resid = np.max(np.abs(d - (slope_fit * np.array(ns) + icpt)))
    vol = vol_S_slab(hier).value
    ok = (resid < 0.01 * abs(slope_fit) and abs(slope_fit) >= 2 ** 1.5 * 0.75
          and slope_fit == pytest.approx(-vol, rel=1e-9)
          and np.allclose(d, d[0] - (np.array(ns) - 1) * vol, rtol=1e-12, atol=1e-10))
    acceptance_log("C8", ok, f"deficits {np.round(d, 8).tolist()}, fitted slope {slope_fit:.9f}, "
                             f"-vol_g(S x (0,1)) {-vol:.9f}, residual {resid:.1e}")
    assert ok


def _cartesian_single_ball(r, p):
    # integral of |grad eta(5|x|/r)|^p over R^2, on the annulus where eta' lives
    a, b = 0.5 * r / 5, 0.75 * r / 5
    f = lambda y, x: (abs(float(eta_prime(5 * math.hypot(x, y) / r))) * 5 / r) ** p
    inner = lambda x: math.sqrt(max(a * a - x * x, 0.0))
    outer = lambda x: math.sqrt(b * b - x * x)
    val, _ = dblquad(f, -b, b, inner, outer, epsabs=0, epsrel=1e-11)
    return 2 * val


def test_c9_sobolev_convergence(hier, acceptance_log):
    partial = np.cumsum([sobolev_seminorm_psi(hier, j) for j in range(1, hier.levels + 1)])
    bound = seminorm_certificate_bound(hier)
    rel = []
    for j in (1, 2):
        r = float(hier.r[j - 1])
        single = sobolev_seminorm_psi(hier, j) / len(hier.D[j - 1])
        rel.append(abs(single / _cartesian_single_ball(r, hier.p) - 1))
    ok = bool(np.all(partial <= bound)) and max(rel) <= 1e-6
    acceptance_log("C9", ok, f"partial sums {[f'{s:.4g}' for s in partial]} <= {bound:.4g}, "
                             f"single-ball relative error {max(rel):.1e}")
    assert ok


def _random_pl(rng):
    n = rng.randint(1, 20)
    cuts = sorted({Fraction(rng.randint(1, 999), 1000) for _ in range(n - 1)})
    ts = [Fraction(0)] + cuts + [Fraction(1)]
    fs = [Fraction(rng.randint(-300, 300), 97) for _ in ts]
    return ts, fs


def test_c10_property_suites(cover_line, ex1, acceptance_log):
    rng = random.Random(2024)
    # derivative truncation: int over f^-1((a,b)) of f' equals h(1) - h(0)
    trunc_fail = 0
    for _ in range(1000):
        ts, fs = _random_pl(rng)
        a = Fraction(rng.randint(-200, 100), 61)
        b = a + Fraction(rng.randint(1, 200), 61)
        hs, integral = truncate_band(ts, fs, a, b)
        clip = [max(a, min(f, b)) for f in fs]
        trunc_fail += int(list(hs) != clip or integral != clip[-1] - clip[0])

    plan = make_test_plan("EX1", {"cover": cover_line, "d": 2}, 1000, 11)
    transversal = transversality_fraction(plan, cover_line, 10_000)

    # metric axioms and sandwich on one prebuilt EX1 weight table
    lat = Lattice((0.0, 0.0), (51, 51), 0.02, 3)
    mm = mollified(ex1, 0.04)
    table = weight_table(lat, mm)
    axes = tuple(mm.active_axes)
    err = stencil_error(3, 2)
    nprng = np.random.default_rng(5)
    ax_fail = 0
    for _ in range(1000):
        a, b, c = (tuple(int(v) for v in nprng.integers(0, 51, 2)) for _ in range(3))
        dab = lattice_shortest_path(lat, table, axes, a, b)[0]
        dba = lattice_shortest_path(lat, table, axes, b, a)[0]
        dbc = lattice_shortest_path(lat, table, axes, b, c)[0]
        dac = lattice_shortest_path(lat, table, axes, a, c)[0]
        e = np.linalg.norm(lat.point(a) - lat.point(b))
        ok_q = (abs(dab - dba) <= 1e-12 * max(dab, 1) and dac <= dab + dbc + 1e-12
                and e * (1 - 1e-12) <= dab <= SQRT2 * e * (1 + err) + 1e-12
                and (dab > 0) == (a != b))
        ax_fail += int(not ok_q)

    # constant metric: the Cheeger energy is a quadratic form
    f = constant_field(1.6, 2)
    kw = dict(panels=4, max_panels=8, rtol=0.0)
    worst = 0.0
    for k in range(20):
        A = np.random.default_rng(k).normal(size=(3, 2))
        u = TestFunction("u", lambda X, A=A: np.sin(X @ A[0]) + X @ A[1], lambda X, A=A: np.cos(X @ A[0])[:, None] * A[0] + A[1])
        v = TestFunction("v", lambda X, A=A: np.cos(X @ A[2]), lambda X, A=A: -np.sin(X @ A[2])[:, None] * A[2])
        E = {1: gradient_energy(f, u, ((0, 0), (1, 1)), **kw), 2: gradient_energy(f, v, ((0, 0), (1, 1)), **kw),
             3: gradient_energy(f, u + v, ((0, 0), (1, 1)), **kw), 4: gradient_energy(f, u - v, ((0, 0), (1, 1)), **kw)}
        worst = max(worst, abs(parallelogram_deficit(E)))

    ok = trunc_fail == 0 and transversal == 0 and ax_fail == 0 and worst <= 1e-9
    acceptance_log("C10", ok, f"truncation failures {trunc_fail}/1000, transversality fraction {transversal}, "
                              f"metric-axiom failures {ax_fail}/1000, constant-metric deficit {worst:.1e}")
    assert ok
