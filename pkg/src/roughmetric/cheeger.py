"""Volumes, Cheeger energies and the parallelogram test.

Energies are split over labeled sets.  Wherever the minimal weak upper
gradient is constant the contribution is that constant squared times an
exact volume.  Cutoff collars are products of one-dimensional piecewise
polynomials, so their integrals factor into one-dimensional Gauss-Legendre
sums that are exact up to rounding.  The only genuinely two-dimensional
integral is the EX3 collar over S, where the weak gradient is a maximum of
two quadratics.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .calculus import EX2_CHANNEL, EX2_IRREGULAR, EX2_OUTSIDE, EX3_IRREGULAR, alpha_dual_ex3
from .fields import MetricField, ParameterError, RationalCover, SobolevHierarchy, sphere_area, unit_ball_volume
from .profiles import eta, plateau, plateau_prime, step_down, step_down_prime

REPORT_SCHEMA = "roughmetric.cheeger/1"


class DecompositionError(RuntimeError):
    """Energies combined over different region decompositions."""


# ---------------------------------------------------------------------------
# regions and volumes


@dataclass(frozen=True)
class Region:
    """An axis-aligned box or one of the labeled sets of the examples.

    Labeled kinds: ``cube`` (0,1)^d, ``bad_set`` and ``O_slab`` (EX1/EX2
    inside the cube), ``S_slab`` (S x (lo, hi) for EX3).  For ``box`` and
    ``S_slab`` the bounds are lo/hi (the last coordinate only for S_slab).
    """

    kind: str
    lo: tuple = ()
    hi: tuple = ()

    @property
    def exact(self) -> bool:
        return self.kind in ("cube", "bad_set", "O_slab", "box")


@dataclass(frozen=True)
class Measure:
    value: float
    unresolved: float = 0.0

    def __float__(self) -> float:
        return self.value


def _interval_overlap(a, b, lo, hi) -> Fraction:
    return max(Fraction(0), min(b, hi) - max(a, lo))


def _cover_measure(cover: RationalCover, a, b) -> Fraction:
    if cover.scope == "unit_interval":
        a, b = max(a, Fraction(0)), min(b, Fraction(1))
        if b <= a:
            return Fraction(0)
    return cover.measure_in(a, b)


def _radial_integral(fn: Callable, r: float, k: int) -> float:
    """Integral of fn(|z| / r) over the ball of radius r in R^k."""
    val, _ = quad(lambda s: fn(s) * s ** (k - 1), 0.0, 1.0, points=[0.1, 0.15],
                  epsabs=0.0, epsrel=1e-13, limit=200)
    return sphere_area(k) * val * r ** k


def ball_theta_integral(r: float, k: int, power: float) -> float:
    """Integral of theta^power over one EX3 ball (profile eta(5|z|/r))."""
    return _radial_integral(lambda s: float(eta(5.0 * s)) ** power, r, k)


def ball_theta_moment2(r: float, k: int, power: float) -> float:
    """Integral of theta^power |z|^2 over one EX3 ball."""
    return _radial_integral(lambda s: float(eta(5.0 * s)) ** power * (s * r) ** 2, r, k)


def volume(field: MetricField, region: Region) -> Measure:
    """vol_g(region) = integral of theta^(d/2)."""
    d = field.d
    top = 2.0 ** (d / 2)
    if region.kind == "box":
        lo = [Fraction(v) for v in region.lo]
        hi = [Fraction(v) for v in region.hi]
        box = math.prod(float(h - l) for l, h in zip(lo, hi))
        if field.example == "CONSTANT":
            return Measure(field.constant ** (d / 2) * box)
        if field.example == "EX1":
            m = _cover_measure(field.payload, lo[0], hi[0])
            side = math.prod(float(h - l) for l, h in zip(lo[1:], hi[1:]))
            return Measure(top * box - (top - 1.0) * float(m) * side)
        if field.example == "EX2":
            m = _cover_measure(field.payload, lo[0], hi[0])
            side = math.prod(float(_interval_overlap(l, h, 0, 1)) for l, h in zip(lo[1:], hi[1:]))
            return Measure(top * box - (top - 1.0) * float(m) * side)
        if field.example == "EX3":
            return _ex3_box_volume(field.payload, lo, hi)
        raise ParameterError(f"unknown example {field.example!r}")
    if region.kind == "cube":
        return volume(field, Region("box", (0,) * d, (1,) * d))
    if field.example in ("EX1", "EX2"):
        m = float(_cover_measure(field.payload, Fraction(0), Fraction(1)))
        if region.kind == "bad_set":
            return Measure(top * (1.0 - m))
        if region.kind == "O_slab":
            return Measure(m)
    if field.example == "EX3" and region.kind == "S_slab":
        hier = field.payload
        length = float(region.hi[-1]) - float(region.lo[-1])
        return Measure(top * (1.0 - hier.ball_measure()) * length, top * hier.tail_measure_bound() * length)
    raise ParameterError(f"region {region.kind!r} not defined for {field.example}")


def _ex3_box_volume(hier: SobolevHierarchy, lo, hi) -> Measure:
    d, k = hier.d, hier.k
    top = 2.0 ** (d / 2)
    box = math.prod(float(h - l) for l, h in zip(lo, hi))
    length = float(hi[-1] - lo[-1])
    C, R, L = hier.all_balls()
    lo_f = np.array([float(v) for v in lo[:-1]])
    hi_f = np.array([float(v) for v in hi[:-1]])
    inside = np.all((C - R[:, None] >= lo_f) & (C + R[:, None] <= hi_f), axis=1)
    touching = np.all((C + R[:, None] > lo_f) & (C - R[:, None] < hi_f), axis=1) & ~inside
    deficit = 0.0
    for r in np.unique(R[inside]):
        cnt = int(np.sum(R[inside] == r))
        deficit += cnt * (top * unit_ball_volume(k) * r ** k - ball_theta_integral(r, k, d / 2))
    unresolved = float(np.sum(unit_ball_volume(k) * R[touching] ** k)) * (top - 1.0) * length
    # deeper levels lower theta on a set of measure at most the tail bound
    if np.any(hi_f > 0) and np.any(lo_f < 1):
        unresolved += (top - 1.0) * hier.tail_measure_bound() * length
    return Measure(top * box - deficit * length, unresolved)


# ---------------------------------------------------------------------------
# generic energies


def cheeger_energy(field: MetricField, wug, region: Region, panels: int = 8, order: int = 8,
                   rtol: float = 1e-6, max_panels: int = 64) -> float:
    """1/2 int wug^2 dvol_g over the region.

    A constant ``wug`` is paired with the exact volume.  A callable is
    integrated over a box by composite tensor Gauss-Legendre, doubling the
    panel count until the relative change drops below ``rtol``.
    """
    if not callable(wug):
        return 0.5 * float(wug) ** 2 * volume(field, region).value
    if region.kind != "box":
        raise ParameterError("pointwise weak gradients need a box region")
    lo, hi = np.asarray(region.lo, float), np.asarray(region.hi, float)
    d = field.d
    x, w = leggauss(order)

    def rule(n):
        pts, wts = [], []
        for a, b in zip(lo, hi):
            e = np.linspace(a, b, n + 1)
            pts.append(np.concatenate([0.5 * (e[j + 1] - e[j]) * x + 0.5 * (e[j + 1] + e[j]) for j in range(n)]))
            wts.append(np.concatenate([0.5 * (e[j + 1] - e[j]) * w for j in range(n)]))
        G = np.meshgrid(*pts, indexing="ij")
        P = np.stack([g.reshape(-1) for g in G], axis=1)
        W = np.ones(len(P))
        for g in np.meshgrid(*wts, indexing="ij"):
            W = W * g.reshape(-1)
        vals = np.asarray(wug(P), float) ** 2 * field.theta(P) ** (d / 2)
        return 0.5 * float(W @ vals)

    n = panels
    prev = rule(n)
    while n < max_panels:
        n *= 2
        cur = rule(n)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def parallelogram_deficit(energies: dict, decomposition=None) -> float:
    """Ch(f3) + Ch(f4) - 2 Ch(f1) - 2 Ch(f2) from stored energies.

    ``energies`` maps 1..4 to values; if ``decomposition`` is given it maps
    1..4 to the region keys each energy was summed over, which must agree.
    """
    if decomposition is not None:
        keys = {i: tuple(decomposition[i]) for i in (1, 2, 3, 4)}
        if len(set(keys.values())) != 1:
            raise DecompositionError("energies computed over different region decompositions")
    return energies[3] + energies[4] - 2.0 * energies[1] - 2.0 * energies[2]


def hilbertian_verdict(deficit: float, tolerance: float, error: float = 0.0):
    """NON_HILBERTIAN when |deficit| clears tolerance plus error, else CONSISTENT."""
    margin = abs(deficit) - tolerance - error
    return ("NON_HILBERTIAN" if margin > 0 else "CONSISTENT"), margin


# ---------------------------------------------------------------------------
# separable gradient integrals


def _gl_integral(fn: Callable, breaks, order: int = 12) -> float:
    x, w = leggauss(order)
    tot = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        tot += 0.5 * (b - a) * float(w @ fn(t))
    return tot


def _breaks(lo, hi, marks):
    pts = sorted({float(lo), float(hi), *[float(m) for m in marks if lo < m < hi]})
    return pts


def _gram(factors_a, factors_b, box, marks) -> float:
    """Integral over a box of grad f_a . grad f_b, each component a product of 1D factors.

    factors_x[k][j] is the factor along axis j of the k-th gradient component.
    """
    total = 0.0
    for Fa, Fb in zip(factors_a, factors_b):
        prod = 1.0
        for j, (lo, hi) in enumerate(box):
            fa, fb = Fa[j], Fb[j]
            prod *= _gl_integral(lambda t: fa(t) * fb(t), _breaks(lo, hi, marks[j]))
            if prod == 0.0:
                break
        total += prod
    return total


def _combine(gram) -> dict:
    """|grad f_i|^2 integrals for f1, f2, f1 + f2, f1 - f2 from the 2x2 Gram."""
    g11, g22, g12 = gram
    return {1: g11, 2: g22, 3: g11 + g22 + 2 * g12, 4: g11 + g22 - 2 * g12}


def _ex2_factors(d: int, axis: int):
    """Gradient factors of phi(x) x_axis, phi = prod plateau(x_j; -1, 2)."""
    phi = lambda t: plateau(t, -1.0, 2.0)
    dphi = lambda t: plateau_prime(t, -1.0, 2.0)
    xphi = lambda t: plateau(t, -1.0, 2.0) * t
    dxphi = lambda t: plateau_prime(t, -1.0, 2.0) * t + plateau(t, -1.0, 2.0)
    comps = []
    for k in range(d):
        row = []
        for j in range(d):
            if j == k:
                row.append(dxphi if j == axis else dphi)
            else:
                row.append(xphi if j == axis else phi)
        comps.append(row)
    return comps


def _ex3_factors(d: int, n: int, which: int):
    """Gradient factors of f_{1,n} (which=1) or f_{2,n} (which=2)."""
    phi = lambda t: plateau(t, -2.0, 2.0)
    dphi = lambda t: plateau_prime(t, -2.0, 2.0)
    xphi = lambda t: plateau(t, -2.0, 2.0) * t
    dxphi = lambda t: plateau_prime(t, -2.0, 2.0) * t + plateau(t, -2.0, 2.0)
    en = lambda t: step_down(np.abs(t), n, n + 1)
    den = lambda t: np.sign(t) * step_down_prime(np.abs(t), n, n + 1)
    s = lambda t: en(t) * (np.abs(t) - n + 1)
    ds = lambda t: den(t) * (np.abs(t) - n + 1) + en(t) * np.sign(t)
    last, dlast = (en, den) if which == 1 else (s, ds)
    comps = []
    for k in range(d):
        row = []
        for j in range(d - 1):
            if which == 1 and j == 0:
                row.append(dxphi if j == k else xphi)
            else:
                row.append(dphi if j == k else phi)
        row.append(dlast if k == d - 1 else last)
        comps.append(row)
    return comps


# ---------------------------------------------------------------------------
# reports


@dataclass
class CheegerReport:
    example: str
    params: dict
    energies: dict
    deficit: float
    prediction: float
    tail_bound: float = 0.0
    quad_error: float = 0.0
    verdict: str = ""
    margin: float = 0.0
    parts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"schema": REPORT_SCHEMA, **asdict(self)}
        doc["energies"] = {str(k): v for k, v in self.energies.items()}
        doc["parts"] = {k: {str(i): x for i, x in v.items()} for k, v in self.parts.items()}
        return json.dumps(doc, indent=1, sort_keys=True)

    def csv_row(self) -> dict:
        return {"example": self.example, **{f"Ch{i}": repr(self.energies[i]) for i in (1, 2, 3, 4)},
                "deficit": repr(self.deficit), "prediction": repr(self.prediction),
                "tail_bound": repr(self.tail_bound), "verdict": self.verdict, "margin": repr(self.margin)}


REPORT_COLUMNS = ["example", "Ch1", "Ch2", "Ch3", "Ch4", "deficit", "prediction", "tail_bound", "verdict", "margin"]


def ex2_energies(cover: RationalCover, d: int = 2) -> dict:
    """Per-region Cheeger energies of phi f_1..phi f_4 on EX2.

    Regions: the O-slab and the bad set inside the cube, the shell
    (-1,2)^d minus the cube where phi = 1, and the cutoff collar.
    """
    m = float(_cover_measure(cover, Fraction(0), Fraction(1)))
    top = 2.0 ** (d / 2)
    parts = {
        "O_slab": {i: 0.5 * EX2_CHANNEL[i - 1] ** 2 * m for i in (1, 2, 3, 4)},
        "bad_set": {i: 0.5 * EX2_IRREGULAR[i - 1] ** 2 * top * (1.0 - m) for i in (1, 2, 3, 4)},
        "shell": {i: 0.5 * EX2_OUTSIDE[i - 1] ** 2 * top * (3.0 ** d - 1.0) for i in (1, 2, 3, 4)},
    }
    F1, F2 = _ex2_factors(d, 0), _ex2_factors(d, 1)
    box = [(-2.0, 3.0)] * d
    marks = [(-1.0, 2.0)] * d
    gram = (_gram(F1, F1, box, marks), _gram(F2, F2, box, marks), _gram(F1, F2, box, marks))
    full = _combine(gram)
    inner = {1: 3.0 ** d, 2: 3.0 ** d, 3: 2 * 3.0 ** d, 4: 2 * 3.0 ** d}
    # theta = 2 outside the cube: |D f|_w^2 dvol_g = |grad f|^2 / 2 * 2^(d/2)
    parts["collar"] = {i: 0.5 * (full[i] - inner[i]) * top / 2.0 for i in (1, 2, 3, 4)}
    return parts


def _sum_parts(parts: dict) -> dict:
    return {i: math.fsum(p[i] for p in parts.values()) for i in (1, 2, 3, 4)}


def ex2_report(cover: RationalCover, d: int = 2, tolerance: float = 1e-9) -> CheegerReport:
    parts = ex2_energies(cover, d)
    energies = _sum_parts(parts)
    deficit = parallelogram_deficit(energies)
    m = float(_cover_measure(cover, Fraction(0), Fraction(1)))
    prediction = -0.5 * 2.0 ** (d / 2) * (1.0 - m)
    verdict, margin = hilbertian_verdict(deficit, tolerance)
    return CheegerReport("EX2", {"kappa": str(cover.kappa), "depth": cover.depth, "d": d},
                         energies, deficit, prediction, 0.0, 0.0, verdict, margin, parts)


def _collar_S_integrand(i: int, t: float, x1_lo=0.0, x1_hi=1.0) -> float:
    """int over x_1 in (0,1) of alpha*(grad f_{i,1})^2 at height t in [1, 2].

    The gradient is (e, 0, ..., a x_1 + b) with e = eta_1(t); alpha*^2 is
    the larger of |xi|^2 / 2 and xi_d^2, so the x_1-integral splits at the
    roots of (a x_1 + b)^2 = e^2 and is exact on each piece.
    """
    e = float(step_down(t, 1.0, 2.0))
    de = float(step_down_prime(t, 1.0, 2.0))
    s = e * t + 0.0  # f_{2,1} = eta_1(x_d) x_d on the upper collar
    ds = de * t + e
    a, b, c = {1: (de, 0.0, e), 2: (0.0, ds, 0.0), 3: (de, ds, e), 4: (de, -ds, e)}[i]
    # xi = (c, 0.., a x + b)
    cuts = [x1_lo, x1_hi]
    if a != 0.0:
        for r in ((c - b) / a, (-c - b) / a):
            if x1_lo < r < x1_hi:
                cuts.append(r)
    cuts.sort()
    x, w = leggauss(4)
    tot = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        xs = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        xd = a * xs + b
        val = np.maximum(0.5 * (c * c + xd * xd), xd * xd)
        tot += 0.5 * (hi - lo) * float(w @ val)
    return tot


def ex3_energies(hier: SobolevHierarchy, n: int) -> dict:
    """Per-region Cheeger energies of f_{1,n}..f_{4,n} on EX3."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    d, k = hier.d, hier.k
    top = 2.0 ** (d / 2)
    C, R, L = hier.all_balls()
    radii = np.unique(R)
    per_r = {float(r): C[R == r] for r in radii}
    w0 = {r: ball_theta_integral(r, k, d / 2 - 1) for r in per_r}
    w2 = {r: ball_theta_moment2(r, k, d / 2 - 1) for r in per_r}
    vb = {r: unit_ball_volume(k) * r ** k for r in per_r}
    S_measure = 1.0 - hier.ball_measure()
    grad2 = {1: 1.0, 2: 1.0, 3: 2.0, 4: 2.0}
    parts = {}
    # S x (-n, n): constant weak gradients
    parts["S_interior"] = {i: 0.5 * EX3_IRREGULAR[i - 1] ** 2 * top * S_measure * 2 * n for i in (1, 2, 3, 4)}
    # balls x (-n, n): |grad f|^2 theta^(d/2 - 1)
    ball_w = math.fsum(len(c) * w0[r] for r, c in per_r.items())
    parts["ball_interior"] = {i: 0.5 * grad2[i] * ball_w * 2 * n for i in (1, 2, 3, 4)}

    # collars, both signs contribute equally
    def coeffs(i, t):
        e = float(step_down(t, 1.0, 2.0))
        de = float(step_down_prime(t, 1.0, 2.0))
        ds = de * t + e
        # |grad f|^2 = p0 + p1 x_1 + p2 x_1^2
        if i == 1:
            return e * e, 0.0, de * de
        if i == 2:
            return ds * ds, 0.0, 0.0
        sg = 1.0 if i == 3 else -1.0
        return e * e + ds * ds, 2 * sg * de * ds, de * de

    def ball_collar(i):
        def integrand(t):
            p0, p1, p2 = coeffs(i, t)
            tot = 0.0
            for r, cs in per_r.items():
                c1 = cs[:, 0]
                tot += (p0 * len(c1) * w0[r] + p1 * float(c1.sum()) * w0[r]
                        + p2 * (float((c1 ** 2).sum()) * w0[r] + len(c1) * w2[r] / k))
            return tot
        return quad(integrand, 1.0, 2.0, epsabs=0.0, epsrel=1e-12, limit=200)[0]

    def S_collar(i):
        full = quad(lambda t: _collar_S_integrand(i, t), 1.0, 2.0, epsabs=1e-15, epsrel=1e-12, limit=400)[0]
        # remove the balls, where g is continuous and handled above
        def balls(t):
            e = float(step_down(t, 1.0, 2.0))
            de = float(step_down_prime(t, 1.0, 2.0))
            ds = de * t + e
            tot = 0.0
            for r, cs in per_r.items():
                x1 = cs[:, 0]
                a, b, c = {1: (de, 0.0, e), 2: (0.0, ds, 0.0), 3: (de, ds, e), 4: (de, -ds, e)}[i]
                xd = a * x1 + b
                tot += vb[r] * float(np.maximum(0.5 * (c * c + xd * xd), xd * xd).sum())
            return tot
        # the max() has kinks and the total is O(ball measure), so fixed
        # panels are accurate far beyond what adaptive quad can certify
        cut = _gl_integral(lambda ts: np.array([balls(t) for t in ts]), np.linspace(1.0, 2.0, 65))
        return full - cut

    parts["S_collar"] = {i: 0.5 * top * 2 * S_collar(i) for i in (1, 2, 3, 4)}
    parts["ball_collar"] = {i: 0.5 * 2 * ball_collar(i) for i in (1, 2, 3, 4)}

    # outside the unit cube in x': theta = 2, |D f|_w = |grad f| / sqrt 2
    F1, F2 = _ex3_factors(d, n, 1), _ex3_factors(d, n, 2)
    marks = [(-2.0, 0.0, 1.0, 2.0)] * (d - 1) + [(-n, 0.0, n)]
    big = [(-3.0, 3.0)] * (d - 1) + [(-n - 1.0, n + 1.0)]
    unit = [(0.0, 1.0)] * (d - 1) + [(-n - 1.0, n + 1.0)]
    g_big = _combine((_gram(F1, F1, big, marks), _gram(F2, F2, big, marks), _gram(F1, F2, big, marks)))
    g_unit = _combine((_gram(F1, F1, unit, marks), _gram(F2, F2, unit, marks), _gram(F1, F2, unit, marks)))
    parts["outside"] = {i: 0.5 * (g_big[i] - g_unit[i]) * top / 2.0 for i in (1, 2, 3, 4)}
    return parts


def ex3_report(hier: SobolevHierarchy, n: int, tolerance: float = 1e-9) -> CheegerReport:
    parts = ex3_energies(hier, n)
    energies = _sum_parts(parts)
    deficit = parallelogram_deficit(energies)
    top = 2.0 ** (hier.d / 2)
    vol_S = top * (1.0 - hier.ball_measure())
    # deficit from S x R only: -(1/2) * 2n * vol_g(S x (0,1)) plus the collar term
    collar = parts["S_collar"]
    prediction = -n * vol_S + (collar[3] + collar[4] - 2 * collar[1] - 2 * collar[2])
    tail = top * hier.tail_measure_bound() * (2 * n + 2) * 4.0
    verdict, margin = hilbertian_verdict(deficit, tolerance, tail)
    return CheegerReport("EX3", {"d": hier.d, "p": hier.p, "levels": hier.levels, "n": n},
                         energies, deficit, prediction, tail, 0.0, verdict, margin, parts)


def vol_S_slab(hier: SobolevHierarchy) -> Measure:
    """vol_g(S x (0,1)) with the unresolved tail of deeper levels."""
    return volume(MetricField("EX3", hier.d, hier), Region("S_slab", (0.0,), (1.0,)))


def gradient_energy(field: MetricField, f, box, **kw) -> float:
    """1/2 int |grad_g f|_g^2 dvol_g over a box, for smooth f where g is continuous."""
    def wug(P):
        return np.linalg.norm(f.grad(P), axis=1) / np.sqrt(field.theta(P))
    return cheeger_energy(field, wug, Region("box", tuple(box[0]), tuple(box[1])), **kw)
