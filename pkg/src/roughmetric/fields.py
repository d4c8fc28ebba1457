"""The three conformal metrics g = theta * Id and their building blocks.

EX1 and EX2 use a truncated union O of shrinking intervals around an
enumeration of rationals, with theta = 2 - 1_O in the first coordinate.
EX3 uses a hierarchy of tiny balls around dyadic points of (0,1)^(d-1),
inside which theta dips smoothly down to 1.

Interval endpoints, dyadic centres and radii are held as Fractions, so
membership and measure questions are answered exactly.  Vectorised float
evaluators are provided for the numerical code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .profiles import ETA_PROFILE_ID, eta, eta_prime


class ParameterError(ValueError):
    """Raised for parameters outside the admissible range."""


class ResourceError(RuntimeError):
    """Raised when a construction would exceed its memory budget."""


COVER_SCHEMA = "roughmetric.cover/1"
HIERARCHY_SCHEMA = "roughmetric.hierarchy/1"

ENUM_LINE = "calkin-wilf-signed"
ENUM_UNIT = "calkin-wilf-unit"


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


def real_str(q: Fraction) -> str:
    """Exact decimal string when the denominator allows it, else 'p/q'."""
    q = Fraction(q)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{q.numerator}/{q.denominator}"
    digits = max(twos, fives)
    scaled = q * 10 ** digits
    assert scaled.denominator == 1
    sign = "-" if scaled < 0 else ""
    s = str(abs(scaled.numerator)).rjust(digits + 1, "0")
    if digits == 0:
        return sign + s
    return f"{sign}{s[:-digits]}.{s[-digits:]}"


# ---------------------------------------------------------------------------
# rational enumerations


def calkin_wilf() -> Iterator[Fraction]:
    """Positive rationals in Calkin-Wilf (breadth-first Stern-Brocot) order."""
    q = Fraction(1)
    while True:
        yield q
        q = 1 / (2 * math.floor(q) - q + 1)


def enumerate_rationals(enumeration_id: str) -> Iterator[Fraction]:
    """The fixed enumerations used for the covers.

    ``calkin-wilf-unit`` keeps the Calkin-Wilf terms lying in (0, 1);
    ``calkin-wilf-signed`` lists 0 and then each Calkin-Wilf term followed
    by its negative, which reaches every rational exactly once.
    """
    if enumeration_id == ENUM_UNIT:
        for q in calkin_wilf():
            if q < 1:
                yield q
    elif enumeration_id == ENUM_LINE:
        yield Fraction(0)
        for q in calkin_wilf():
            yield q
            yield -q
    else:
        raise ParameterError(f"unknown enumeration {enumeration_id!r}")


# ---------------------------------------------------------------------------
# rational covers (EX1, EX2)


def merge_open_intervals(intervals):
    """Sorted disjoint union of open intervals.

    Intervals that only touch at an endpoint stay separate, because the
    shared endpoint is not in the union.
    """
    out = []
    for lo, hi in sorted(intervals):
        if out and lo < out[-1][1]:
            if hi > out[-1][1]:
                out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return tuple(out)


@dataclass(frozen=True)
class RationalCover:
    kappa: Fraction
    enumeration_id: str
    depth: int
    scope: str
    intervals: tuple
    merged: tuple

    def measure(self) -> Fraction:
        return sum((hi - lo for lo, hi in self.merged), Fraction(0))

    def measure_in(self, a, b) -> Fraction:
        a, b = as_fraction(a), as_fraction(b)
        total = Fraction(0)
        for lo, hi in self.merged:
            lo, hi = max(lo, a), min(hi, b)
            if hi > lo:
                total += hi - lo
        return total

    def contains(self, x) -> bool:
        x = as_fraction(x)
        if self.scope == "unit_interval" and not (0 < x < 1):
            return False
        for lo, hi in self.merged:
            if lo < x < hi:
                return True
            if lo >= x:
                break
        return False

    def on_boundary(self, x) -> bool:
        x = as_fraction(x)
        return any(x == lo or x == hi for lo, hi in self.merged)

    def merged_float(self):
        arr = np.array([[float(lo), float(hi)] for lo, hi in self.merged], dtype=float)
        return arr.reshape(-1, 2)

    def gaps(self, a=0, b=1):
        """Open intervals of (a, b) not covered by the merged union."""
        a, b = as_fraction(a), as_fraction(b)
        out = []
        cur = a
        for lo, hi in self.merged:
            if hi <= cur:
                continue
            if lo >= b:
                break
            if lo > cur:
                out.append((cur, lo))
            cur = max(cur, hi)
        if cur < b:
            out.append((cur, b))
        return out

    def to_json(self) -> str:
        doc = {
            "schema": COVER_SCHEMA,
            "kappa": real_str(self.kappa),
            "enumeration_id": self.enumeration_id,
            "depth": self.depth,
            "scope": self.scope,
            "intervals": [[real_str(lo), real_str(hi)] for lo, hi in self.intervals],
            "merged": [[real_str(lo), real_str(hi)] for lo, hi in self.merged],
            "measure": real_str(self.measure()),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RationalCover":
        doc = json.loads(text)
        if doc.get("schema") != COVER_SCHEMA:
            raise ParameterError(f"unexpected schema {doc.get('schema')!r}")
        intervals = tuple((Fraction(lo), Fraction(hi)) for lo, hi in doc["intervals"])
        return cls(
            kappa=Fraction(doc["kappa"]),
            enumeration_id=doc["enumeration_id"],
            depth=int(doc["depth"]),
            scope=doc["scope"],
            intervals=intervals,
            merged=merge_open_intervals(intervals),
        )


def build_rational_cover(kappa, depth: int, scope: str = "line") -> RationalCover:
    """Union of (q_i - kappa/2^i, q_i + kappa/2^i) for the first ``depth`` rationals."""
    k = as_fraction(kappa)
    if not (0 < k < Fraction(1, 8)):
        raise ParameterError(f"kappa must lie in (0, 1/8), got {kappa}")
    if depth < 0:
        raise ParameterError("depth must be nonnegative")
    if scope == "line":
        enum_id = ENUM_LINE
    elif scope == "unit_interval":
        enum_id = ENUM_UNIT
    else:
        raise ParameterError(f"unknown scope {scope!r}")
    gen = enumerate_rationals(enum_id)
    intervals = []
    for i in range(1, depth + 1):
        q = next(gen)
        half = k / 2 ** i
        intervals.append((q - half, q + half))
    return RationalCover(k, enum_id, depth, scope, tuple(intervals), merge_open_intervals(intervals))


@dataclass(frozen=True)
class ThetaField1D:
    cover: RationalCover

    def __call__(self, x) -> float:
        return theta1_eval(self, x)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, 2.0)
        m = self.cover.merged_float()
        if len(m):
            k = np.searchsorted(m[:, 0], x, side="left") - 1
            ok = k >= 0
            kk = np.where(ok, k, 0)
            inside = ok & (x > m[kk, 0]) & (x < m[kk, 1])
            if self.cover.scope == "unit_interval":
                inside &= (x > 0) & (x < 1)
            out[inside] = 1.0
        return out


def theta1_eval(field: ThetaField1D, x) -> float:
    """Conformal factor of EX1/EX2 in the first coordinate: 1 on O, else 2."""
    return 1.0 if field.cover.contains(x) else 2.0


def measure_large_theta(field: ThetaField1D, exact: bool = False):
    """Lebesgue measure of {theta = 2} in (0, 1)."""
    cover = field.cover
    value = 1 - cover.measure_in(0, 1)
    assert value >= 1 - 4 * cover.kappa, "measure bound 1 - 4 kappa violated"
    return value if exact else float(value)


# ---------------------------------------------------------------------------
# Sobolev hierarchy (EX3)


def unit_ball_volume(k: int) -> float:
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere in R^k."""
    return 2 * math.pi ** (k / 2) / math.gamma(k / 2)


def default_decay(d: int, p: float) -> int:
    return d + 1 + math.ceil(d / (d - 1 - p))


@dataclass(frozen=True)
class ScheduleCertificate:
    d: int
    p: float
    c0: Fraction
    a: int
    levels: int
    cond_41: bool
    cond_42: bool
    cond_43: bool
    sum_42: float  # full series (inf if divergent)
    partial_42: float
    tail_42: float
    sum_43: float
    partial_43: float
    tail_43: float
    bound_43: float

    @property
    def ok(self) -> bool:
        return self.cond_41 and self.cond_42 and self.cond_43

    def as_dict(self) -> dict:
        return {
            "d": self.d, "p": self.p, "c0": real_str(self.c0), "a": self.a,
            "levels": self.levels, "cond_41": self.cond_41, "cond_42": self.cond_42,
            "cond_43": self.cond_43, "sum_42": self.sum_42, "partial_42": self.partial_42,
            "tail_42": self.tail_42, "sum_43": self.sum_43, "partial_43": self.partial_43,
            "tail_43": self.tail_43, "bound_43": self.bound_43,
        }


def certify_schedule(d: int, p: float, c0, a: int, levels: int) -> ScheduleCertificate:
    """Check the three radius conditions for R_m = c0 * 2^(-a m).

    The infinite sums are geometric, so they are evaluated in closed form;
    partial sums up to ``levels`` are recorded separately together with
    the tails beyond.
    """
    c0 = as_fraction(c0)
    s = d - 1 - p
    # R_m <= 2^-(m+3) for all m >= 1
    if a >= 1:
        cond_41 = c0 <= Fraction(2) ** (a - 4)
    else:
        cond_41 = False

    def R(m):
        return float(c0) * 2.0 ** (-a * m)

    q42 = 2.0 ** (d - a * s)
    partial_42 = sum(2.0 ** (m * d) * R(m) ** s for m in range(1, levels + 1))
    if q42 < 1:
        sum_42 = float(c0) ** s * q42 / (1 - q42)
        tail_42 = float(c0) ** s * q42 ** (levels + 1) / (1 - q42)
        cond_42 = True
    else:
        sum_42 = tail_42 = math.inf
        cond_42 = False

    q43 = 2.0 ** (d - a)
    bound_43 = 1.0 / (4.0 * (1.0 + unit_ball_volume(d - 1)))
    partial_43 = sum(2.0 ** ((m + 1) * d + 4) * R(m) for m in range(1, levels + 1))
    if q43 < 1:
        sum_43 = 2.0 ** (d + 4) * float(c0) * q43 / (1 - q43)
        tail_43 = 2.0 ** (d + 4) * float(c0) * q43 ** (levels + 1) / (1 - q43)
        cond_43 = sum_43 < bound_43
    else:
        sum_43 = tail_43 = math.inf
        cond_43 = False
    return ScheduleCertificate(
        d, float(p), c0, a, levels, bool(cond_41), cond_42, bool(cond_43),
        sum_42, partial_42, tail_42, sum_43, partial_43, tail_43, bound_43,
    )


def radius_schedule(d: int, p: float, levels: int, a: int | None = None):
    """Geometric radii R_m = c0 2^(-a m) satisfying the three conditions.

    Returns the list R_1..R_levels (Fractions) and the certificate.
    """
    if d < 3:
        raise ParameterError("the hierarchy needs d >= 3")
    if not (1 <= p < d - 1):
        raise ParameterError(f"p must lie in [1, d-1) = [1, {d - 1}), got {p}")
    if levels < 0:
        raise ParameterError("levels must be nonnegative")
    if a is None:
        a = default_decay(d, p)
    c0 = Fraction(1, 8)
    for _ in range(200):
        cert = certify_schedule(d, p, c0, a, levels)
        if cert.ok:
            R = [c0 / Fraction(2) ** (a * m) for m in range(1, levels + 1)]
            return R, cert
        if not cert.cond_42 or not math.isfinite(cert.sum_43):
            break
        c0 /= 2
    raise ParameterError(f"no admissible c0 for decay exponent a={a}")


def _sqrt_floor(q: Fraction, bits: int = 96) -> Fraction:
    """Rational lower bound for sqrt(q), accurate to 2^-bits."""
    scale = 1 << bits
    return Fraction(math.isqrt(q.numerator * scale * scale // q.denominator), scale)


@dataclass(frozen=True)
class SobolevHierarchy:
    d: int
    p: float
    levels: int
    c0: Fraction
    a: int
    R: tuple
    r: tuple
    D: tuple  # per level: sorted tuple of integer index tuples, centre = idx / 2^(m+1)
    certificate: ScheduleCertificate
    eta_profile: str = ETA_PROFILE_ID
    _lookup: tuple = field(default=(), repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.d - 1

    def level_set(self, m: int) -> frozenset:
        return self._lookup[m - 1]

    def centers(self, m: int) -> np.ndarray:
        idx = np.array(self.D[m - 1], dtype=float).reshape(-1, self.k)
        return idx / 2 ** (m + 1)

    def all_balls(self):
        """Arrays (centres, radii, levels) over every retained ball."""
        cs, rs, ls = [], [], []
        for m in range(1, self.levels + 1):
            c = self.centers(m)
            cs.append(c)
            rs.append(np.full(len(c), float(self.r[m - 1])))
            ls.append(np.full(len(c), m))
        if not cs:
            return np.zeros((0, self.k)), np.zeros(0), np.zeros(0, dtype=int)
        return np.vstack(cs), np.concatenate(rs), np.concatenate(ls)

    def ball_measure(self, m: int | None = None) -> float:
        """(d-1)-dimensional Lebesgue measure of the retained ball closures."""
        om = unit_ball_volume(self.k)
        ms = range(1, self.levels + 1) if m is None else [m]
        return sum(len(self.D[j - 1]) * om * float(self.r[j - 1]) ** self.k for j in ms)

    def tail_measure_bound(self) -> float:
        """Bound on the measure of balls at levels beyond the retained ones.

        Uses at most 2^((m+1)(d-1)) centres per level and r_m <= R_m, with
        the geometric tail summed in closed form.
        """
        k = self.k
        q = 2.0 ** (k - self.a * k)
        if q >= 1:
            return math.inf
        first = 2.0 ** ((self.levels + 2) * k) * (float(self.c0) * 2.0 ** (-self.a * (self.levels + 1))) ** k
        return unit_ball_volume(k) * first / (1 - q)

    def to_json(self) -> str:
        doc = {
            "schema": HIERARCHY_SCHEMA,
            "d": self.d, "p": self.p, "levels": self.levels,
            "c0": real_str(self.c0), "a": self.a,
            "R": [real_str(x) for x in self.R],
            "r": [real_str(x) for x in self.r],
            "D": [[list(ix) for ix in lvl] for lvl in self.D],
            "eta_profile": self.eta_profile,
            "certificate": self.certificate.as_dict(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SobolevHierarchy":
        doc = json.loads(text)
        if doc.get("schema") != HIERARCHY_SCHEMA:
            raise ParameterError(f"unexpected schema {doc.get('schema')!r}")
        D = tuple(tuple(tuple(ix) for ix in lvl) for lvl in doc["D"])
        cert = certify_schedule(doc["d"], doc["p"], Fraction(doc["c0"]), doc["a"], doc["levels"])
        return cls(
            d=doc["d"], p=doc["p"], levels=doc["levels"], c0=Fraction(doc["c0"]), a=doc["a"],
            R=tuple(Fraction(x) for x in doc["R"]), r=tuple(Fraction(x) for x in doc["r"]),
            D=D, certificate=cert, eta_profile=doc["eta_profile"],
            _lookup=tuple(frozenset(lvl) for lvl in D),
        )


def _grid_box(center, radius, n: int, k: int):
    """Integer grid indices (step 1/n, inside (0,1)) within a box around center."""
    ranges = []
    for c in center:
        lo = max(1, math.ceil((c - radius) * n))
        hi = min(n - 1, math.floor((c + radius) * n))
        if lo > hi:
            return []
        ranges.append(range(lo, hi + 1))
    out = [()]
    for rg in ranges:
        out = [t + (i,) for t in out for i in rg]
    return out


def build_hierarchy(d: int, p: float, levels: int, schedule=None, max_points: int = 5_000_000) -> SobolevHierarchy:
    """Levels D_m, r_m of the ball hierarchy.

    ``schedule`` is the pair returned by :func:`radius_schedule`; it is
    computed when omitted.
    """
    if schedule is None:
        schedule = radius_schedule(d, p, levels)
    R, cert = schedule
    if len(R) < levels:
        raise ParameterError("schedule shorter than the requested number of levels")
    k = d - 1
    D, rs, lookups = [], [], []
    prior = []  # (centre as Fractions, radius)
    r_prev = Fraction(1, 4)
    total = 0
    for m in range(1, levels + 1):
        n = 2 ** (m + 1)
        count = (n - 1) ** k
        total += count
        if total > max_points:
            raise ResourceError(f"grid budget exceeded at level {m}; built {m - 1} levels")
        excluded = set()
        for c, rj in prior:
            for ix in _grid_box(c, rj, n, k):
                d2 = sum((Fraction(i, n) - ci) ** 2 for i, ci in zip(ix, c))
                if d2 <= rj * rj:
                    excluded.add(ix)
        level = set()
        for ix in np.ndindex(*([n - 1] * k)):
            t = tuple(i + 1 for i in ix)
            if t not in excluded:
                level.add(t)
        # exact lower bound on dist(D_m, earlier balls)
        dist_lb = None
        for c, rj in prior:
            best = None
            for ix in _grid_box(c, rj + Fraction(2, n), n, k):
                if ix not in level:
                    continue
                d2 = sum((Fraction(i, n) - ci) ** 2 for i, ci in zip(ix, c))
                if best is None or d2 < best:
                    best = d2
            if best is not None:
                cand = _sqrt_floor(best) - rj
                if dist_lb is None or cand < dist_lb:
                    dist_lb = cand
        r_m = min(R[m - 1], r_prev / 2)
        if dist_lb is not None:
            r_m = min(r_m, dist_lb / 2)
        if r_m <= 0:
            raise ParameterError(f"level {m}: nonpositive radius")
        ordered = tuple(sorted(level))
        D.append(ordered)
        lookups.append(frozenset(ordered))
        rs.append(r_m)
        prior.extend(((tuple(Fraction(i, n) for i in ix), r_m) for ix in ordered))
        r_prev = r_m
    c0 = cert.c0
    return SobolevHierarchy(
        d=d, p=float(p), levels=levels, c0=c0, a=cert.a, R=tuple(R[:levels]), r=tuple(rs),
        D=tuple(D), certificate=cert, _lookup=tuple(lookups),
    )


def _locate(hier: SobolevHierarchy, y):
    """(level, centre, distance) of the ball containing y, or None."""
    for m in range(1, hier.levels + 1):
        n = 2 ** (m + 1)
        ix = tuple(int(round(float(c) * n)) for c in y)
        if ix not in hier.level_set(m):
            continue
        dist = math.sqrt(sum((float(c) - i / n) ** 2 for c, i in zip(y, ix)))
        if dist < float(hier.r[m - 1]):
            return m, ix, dist
    return None


def theta3_eval(hier: SobolevHierarchy, y) -> float:
    """Conformal factor of EX3 at y in R^(d-1)."""
    hit = _locate(hier, y)
    if hit is None:
        return 2.0
    m, _, dist = hit
    return float(eta(5.0 * dist / float(hier.r[m - 1])))


def theta3_values(hier: SobolevHierarchy, Y) -> np.ndarray:
    """Vectorised :func:`theta3_eval` for an (N, d-1) array."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = np.full(len(Y), 2.0)
    for m in range(1, hier.levels + 1):
        n = 2 ** (m + 1)
        r = float(hier.r[m - 1])
        ix = np.rint(Y * n).astype(np.int64)
        dist = np.sqrt(((Y - ix / n) ** 2).sum(axis=1))
        cand = np.nonzero(dist < r)[0]
        if len(cand) == 0:
            continue
        lvl = hier.level_set(m)
        for j in cand:
            if tuple(int(v) for v in ix[j]) in lvl:
                out[j] = float(eta(5.0 * dist[j] / r))
    return out


def theta3_gradient_norm(hier: SobolevHierarchy, Y) -> np.ndarray:
    """|grad theta| for EX3 points, using the closed-form profile derivative."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = np.zeros(len(Y))
    for m in range(1, hier.levels + 1):
        n = 2 ** (m + 1)
        r = float(hier.r[m - 1])
        ix = np.rint(Y * n).astype(np.int64)
        dist = np.sqrt(((Y - ix / n) ** 2).sum(axis=1))
        lvl = hier.level_set(m)
        for j in np.nonzero(dist < r)[0]:
            if tuple(int(v) for v in ix[j]) in lvl:
                out[j] = 5.0 / r * abs(float(eta_prime(5.0 * dist[j] / r)))
    return out


@dataclass(frozen=True)
class SCertificate:
    in_S_up_to_level: bool
    tail_safe: bool
    levels: int

    @property
    def certified(self) -> bool:
        return self.in_S_up_to_level and self.tail_safe


def _thirds_exponent(q: Fraction):
    """j with denominator 3 * 2^j (numerator coprime to 3), else None."""
    den = q.denominator
    if den % 3:
        return None
    den //= 3
    if den % 3 == 0 or den & (den - 1):
        return None
    return den.bit_length() - 1


def certify_in_S(hier: SobolevHierarchy, y) -> SCertificate:
    """Exact check that y avoids every ball closure.

    Retained levels are checked directly.  For the levels beyond, y must
    have coordinates k / (3 * 2^j): such a coordinate sits at distance at
    least 1/(3 * 2^(m+1)) from the grid 2^-(m+1) Z whenever m + 1 >= j,
    which beats r_m <= R_m for every tail level.
    """
    y = [as_fraction(c) for c in y]
    if len(y) != hier.k:
        raise ParameterError(f"expected a point of R^{hier.k}")
    inside = all(0 < c < 1 for c in y)
    ok = inside
    if inside:
        for m in range(1, hier.levels + 1):
            n = 2 ** (m + 1)
            r = hier.r[m - 1]
            ix = tuple(math.floor(c * n + Fraction(1, 2)) for c in y)
            if ix in hier.level_set(m):
                d2 = sum((c - Fraction(i, n)) ** 2 for c, i in zip(y, ix))
                if d2 <= r * r:
                    ok = False
                    break
    tail = False
    if inside:
        exps = [_thirds_exponent(c) for c in y]
        if all(e is not None and e <= hier.levels + 2 for e in exps) and hier.a >= 1:
            # R_m * 3 * 2^(m+1) = 6 c0 2^-((a-1) m), decreasing in m
            m = hier.levels + 1
            tail = 6 * hier.c0 / Fraction(2) ** ((hier.a - 1) * m) < 1
    return SCertificate(ok, tail, hier.levels)


def eta_gradient_integral(p: float, k: int) -> float:
    """Integral of |grad eta(|z|)|^p over R^k."""
    from scipy.integrate import quad

    val, _ = quad(lambda t: abs(float(eta_prime(t))) ** p * t ** (k - 1), 0.5, 0.75,
                  epsabs=0, epsrel=1e-13, limit=200)
    return sphere_area(k) * val


def sobolev_seminorm_psi(hier: SobolevHierarchy, j: int, p: float | None = None) -> float:
    """||grad psi_j||_p^p over (-1,2)^(d-1).

    Each ball contributes 5^(p-k) r_j^(k-p) times the integral of
    |grad eta|^p, by the substitution y = x + (r_j / 5) z.
    """
    if not (1 <= j <= hier.levels):
        raise ParameterError(f"level {j} not in 1..{hier.levels}")
    if p is None:
        p = hier.p
    k = hier.k
    r = float(hier.r[j - 1])
    const = 5.0 ** (p - k) * eta_gradient_integral(p, k)
    value = len(hier.D[j - 1]) * const * r ** (k - p)
    assert value <= const * 2.0 ** ((j + 1) * k) * r ** (k - p) * (1 + 1e-12)
    return value


def seminorm_certificate_bound(hier: SobolevHierarchy, p: float | None = None) -> float:
    """Bound on sum_j ||grad psi_j||_p^p over all levels, from the schedule.

    |D_j| <= 2^((j+1)(d-1)) <= 2^(d-1) 2^(j d) and r_j <= R_j, so the sum is
    at most 2^(d-1) C_eta times the certified series of condition (4.2).
    """
    if p is None:
        p = hier.p
    k = hier.k
    const = 5.0 ** (p - k) * eta_gradient_integral(p, k)
    return const * 2.0 ** k * hier.certificate.sum_42


def shrinking_ball_counts(hier: SobolevHierarchy, y, r) -> list:
    """zeta_m(y, r): centres x in D_m whose closed r_m/5-ball meets the closed r-ball at y."""
    y = [as_fraction(c) for c in y]
    r = as_fraction(r)
    counts = []
    for m in range(1, hier.levels + 1):
        n = 2 ** (m + 1)
        reach = r + hier.r[m - 1] / 5
        lvl = hier.level_set(m)
        cnt = 0
        for ix in _grid_box(y, reach, n, hier.k):
            if ix in lvl and sum((Fraction(i, n) - c) ** 2 for i, c in zip(ix, y)) <= reach * reach:
                cnt += 1
        counts.append(cnt)
    return counts


def shrinking_ball_sums(hier: SobolevHierarchy, y, r):
    """(s1, s2) = (sum r_m zeta_m / r, sum r_m^(d-1) zeta_m / r^(d-1))."""
    counts = shrinking_ball_counts(hier, y, r)
    k = hier.k
    rf = float(r)
    s1 = sum(float(rm) * z for rm, z in zip(hier.r, counts)) / rf
    s2 = sum(float(rm) ** k * z for rm, z in zip(hier.r, counts)) / rf ** k
    return s1, s2


def shrinking_ball_bound(hier: SobolevHierarchy, r) -> float:
    """Right side of r^(d-2) C(d) sum_{4 r_m <= 5 r} 2^((d-1)(m+1)) r_m.

    C(d) = (25/4)^(d-1) is valid at points whose distance to each level grid
    is at least a third of its step (the certified thirds-rational points).
    """
    k = hier.k
    r = float(r)
    total = sum(2.0 ** (k * (m + 1)) * float(rm)
                for m, rm in enumerate(hier.r, start=1) if 4 * float(rm) <= 5 * r)
    return r ** (k - 1) * (25.0 / 4.0) ** k * total


# ---------------------------------------------------------------------------
# metric fields


@dataclass(frozen=True)
class MetricField:
    """g = theta * Id.  ``example`` is EX1, EX2, EX3 or CONSTANT."""

    example: str
    d: int
    payload: object = None
    constant: float = 2.0

    def theta(self, X) -> np.ndarray:
        """theta at the rows of an (N, d) array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.example == "CONSTANT":
            return np.full(len(X), float(self.constant))
        if self.example == "EX1":
            return ThetaField1D(self.payload).values(X[:, 0])
        if self.example == "EX2":
            vals = ThetaField1D(self.payload).values(X[:, 0])
            cube = np.all((X > 0) & (X < 1), axis=1)
            return np.where(cube, vals, 2.0)
        if self.example == "EX3":
            return theta3_values(self.payload, X[:, : self.d - 1])
        raise ParameterError(f"unknown example {self.example!r}")

    def __call__(self, x) -> float:
        return float(self.theta(np.asarray(x, dtype=float)[None, :])[0])

    @property
    def active_axes(self) -> tuple:
        """Coordinates on which theta depends."""
        if self.example == "CONSTANT":
            return ()
        if self.example == "EX1":
            return (0,)
        if self.example == "EX3":
            return tuple(range(self.d - 1))
        return tuple(range(self.d))

    def norm(self, x, v) -> float:
        """|v|_g at x."""
        return math.sqrt(self(x)) * float(np.linalg.norm(v))


def ex1_field(cover: RationalCover, d: int = 2) -> MetricField:
    return MetricField("EX1", d, cover)


def ex2_field(cover: RationalCover, d: int = 2) -> MetricField:
    if cover.scope != "unit_interval":
        raise ParameterError("EX2 needs a cover of (0,1)")
    return MetricField("EX2", d, cover)


def ex3_field(hier: SobolevHierarchy) -> MetricField:
    return MetricField("EX3", hier.d, hier)


def constant_field(c: float, d: int) -> MetricField:
    if not (1 <= c <= 2):
        raise ParameterError("constant factor must lie in [1, 2]")
    return MetricField("CONSTANT", d, None, float(c))
