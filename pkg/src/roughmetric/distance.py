"""Distances of the conformal metrics.

d_g is computed as the limit of the mollified distances d_{g_eps}; each
stage of a schedule runs Dijkstra on a stencil lattice with edge lengths
integrated under g_eps.  The result is reported as a bracket: the lower
edge comes from an admissible dual function w (|grad w|^2 / theta <= 1
gives d_g(x, y) >= |w(x) - w(y)|), the upper edge from the last stage.
"""

from __future__ import annotations

import csv
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .fields import MetricField, RationalCover, SobolevHierarchy, as_fraction, shrinking_ball_counts
from .lattice import Lattice, lattice_shortest_path, stencil, stencil_error, weight_table
from .mollify import mollified


class DiagnosticError(RuntimeError):
    """A bracket came out inverted: the schedule or a certificate is wrong."""


class AdmissibilityError(ValueError):
    """A proposed dual function violates |grad w|_g <= 1 at a sample."""

    def __init__(self, msg, sample=None):
        super().__init__(msg)
        self.sample = sample


# ---------------------------------------------------------------------------
# edge weights


def edge_weight(field, eps: float, a, b, rtol: float = 1e-8, max_panels: int = 1 << 16) -> float:
    """Length of the segment [a, b] under g_eps by refined Simpson quadrature."""
    mm = field if hasattr(field, "mollifier") else mollified(field, eps)
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        return 0.0

    def simpson(n):
        t = np.linspace(0.0, 1.0, n + 1)
        vals = np.sqrt(mm.theta(a[None, :] + t[:, None] * (b - a)[None, :]))
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return float(vals @ w) / (3.0 * n)

    n = 8
    prev = simpson(n)
    while n < max_panels:
        n *= 2
        cur = simpson(n)
        if abs(cur - prev) <= rtol * abs(cur):
            return cur * length
        prev = cur
    return prev * length


# ---------------------------------------------------------------------------
# dual certificates


@dataclass(frozen=True)
class DualFunction:
    """A Lipschitz function w with exact gradient and an admissibility note."""

    value: Callable
    grad: Callable
    note: str

    def __call__(self, x) -> float:
        return float(self.value(np.asarray(x, float)))


def linear_dual(v, scale: float = 1.0, note: str | None = None) -> DualFunction:
    """w(x) = scale * (x . v); admissible when scale^2 |v|^2 <= min theta."""
    v = np.asarray(v, float)
    return DualFunction(
        value=lambda x: scale * float(np.dot(x, v)),
        grad=lambda x: scale * v,
        note=note or f"linear w with |grad w|^2 = {scale * scale * float(v @ v):g} <= 1 <= theta",
    )


def dual_certificate_bound(field: MetricField, w: DualFunction, src, dst, samples=None) -> float:
    """Lower bound |w(src) - w(dst)| for d_g(src, dst).

    ``samples`` is an (N, d) array on which |grad w|^2 / theta <= 1 is
    checked; the closed-form argument for all points is carried in w.note.
    """
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    if samples is None:
        t = np.linspace(0.0, 1.0, 33)[:, None]
        samples = src[None, :] + t * (dst - src)[None, :]
    samples = np.atleast_2d(np.asarray(samples, float))
    theta = field.theta(samples)
    for x, th in zip(samples, theta):
        g = np.asarray(w.grad(x), float)
        if float(g @ g) / th > 1.0 + 1e-12:
            raise AdmissibilityError(f"|grad w|_g > 1 at {x.tolist()}", sample=x)
    if hasattr(w, "bound"):
        return max(0.0, w.bound(src, dst))
    return abs(w(src) - w(dst))


# ---------------------------------------------------------------------------
# shortest paths and estimates


def shortest_path(lattice: Lattice, field, eps: float, src, dst, refine: int = 6):
    """Dijkstra length and node path between the nodes nearest src and dst."""
    mm = field if hasattr(field, "mollifier") else mollified(field, eps)
    table = weight_table(lattice, mm, refine=refine)
    s, ds = lattice.snap(src)
    t, dt = lattice.snap(dst)
    if max(ds, dt) > lattice.h / 2 * math.sqrt(lattice.d) + 1e-12:
        raise ValueError("endpoints do not snap to the lattice")
    length, path = lattice_shortest_path(lattice, table, mm.active_axes, s, t)
    return length, [lattice.point(p) for p in path]


@dataclass
class Stage:
    eps: float
    h: float
    length: float
    runtime_ms: float
    nodes: int


@dataclass
class DistanceQuery:
    example: str
    src: tuple
    dst: tuple
    schedule: list
    stencil_k: int
    stages: list = field(default_factory=list)
    estimate: float = math.nan
    lower_bound: float = math.nan
    upper_bound: float = math.nan
    stencil_error: float = math.nan
    runtime_ms: float = 0.0

    @property
    def width(self) -> float:
        return self.upper_bound - self.lower_bound

    def contains(self, value: float, rtol: float = 0.0) -> bool:
        return self.lower_bound - rtol * abs(value) <= value <= self.upper_bound + rtol * abs(value)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower_bound + self.upper_bound)

    def csv_row(self) -> dict:
        fmt = lambda p: " ".join(repr(float(c)) for c in p)
        last = self.stages[-1]
        return {
            "example": self.example, "src": fmt(self.src), "dst": fmt(self.dst),
            "eps": repr(last.eps), "h": repr(last.h), "stencil_k": self.stencil_k,
            "estimate": repr(self.estimate), "lower_bound": repr(self.lower_bound),
            "upper_bound": repr(self.upper_bound), "runtime_ms": f"{self.runtime_ms:.1f}",
        }


CSV_COLUMNS = ["example", "src", "dst", "eps", "h", "stencil_k", "estimate", "lower_bound",
               "upper_bound", "runtime_ms"]


def append_csv(path, rows: Sequence[dict], columns=CSV_COLUMNS):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        if new:
            wr.writeheader()
        for row in rows:
            wr.writerow(row)


def check_schedule(schedule):
    if not schedule:
        raise ValueError("empty schedule")
    prev = math.inf
    for eps, h in schedule:
        if not (eps > 0 and h > 0):
            raise ValueError("eps and h must be positive")
        if eps < 2 * h - 1e-15:
            raise ValueError(f"stage (eps={eps}, h={h}) violates eps >= 2h")
        if eps >= prev:
            raise ValueError("eps must decrease along the schedule")
        prev = eps


def default_duals(field: MetricField, src, dst) -> list:
    """Always-admissible duals: the Euclidean projection onto dst - src (theta >= 1)."""
    u = np.asarray(dst, float) - np.asarray(src, float)
    n = float(np.linalg.norm(u))
    if n == 0:
        return []
    duals = [linear_dual(u / n, 1.0, "unit linear w, admissible because theta >= 1")]
    if field.example == "EX3":
        w = shadow_dual(field.payload, u)
        if w is not None:
            duals.append(w)
    return duals


def _shadow_intervals(hier: SobolevHierarchy, v):
    """Sorted disjoint union of the projections x'.v of all retained ball supports."""
    from .mollify import SUPPORT

    ivs = []
    for m in range(1, hier.levels + 1):
        c = hier.centers(m) @ v
        rad = SUPPORT * float(hier.r[m - 1])
        ivs.extend(zip(c - rad, c + rad))
    ivs.sort()
    out = []
    for lo, hi in ivs:
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return np.array(out, dtype=float).reshape(-1, 2)


def shadow_tail_length(hier: SobolevHierarchy) -> float:
    """Upper bound on the total shadow length of all levels beyond the hierarchy depth."""
    from .mollify import SUPPORT

    d, a, c0 = hier.d, hier.a, float(hier.c0)
    tot, m = 0.0, hier.levels + 1
    while True:
        term = 2.0 ** ((d - 1) * (m + 1)) * 2 * SUPPORT * c0 * 2.0 ** (-a * m)
        tot += term
        if term < 1e-18 * max(tot, 1e-300):
            break
        m += 1
    return tot


def shadow_dual(hier: SobolevHierarchy, u):
    """Dual function for EX3 adapted to the direction u.

    w(x) = G(x'.v) + a x_d with v = u'/|u'|.  Off the shadows of the balls
    G' = g_off, on them G' = g_in = sqrt(1 - a^2); since theta = 2 on S and
    theta >= 1 on the balls, g_off^2 + a^2 <= 2 and a <= 1 make w
    admissible.  The lower bound loses (g_off - g_in) times the shadow
    length, including a geometric bound for the levels not built.
    """
    u = np.asarray(u, float)
    up, ud = u[:-1], float(u[-1])
    nu = float(np.linalg.norm(up))
    if nu == 0.0:
        return None
    v = up / nu
    if abs(ud) >= nu:
        a, g_off = 1.0, 1.0
    else:
        n = float(np.linalg.norm(u))
        a, g_off = math.sqrt(2.0) * abs(ud) / n, math.sqrt(2.0) * nu / n
    a = math.copysign(a, ud) if ud else 0.0
    g_in = math.sqrt(max(0.0, 1.0 - a * a))
    shadows = _shadow_intervals(hier, v)
    tail = shadow_tail_length(hier)
    starts, ends = shadows[:, 0], shadows[:, 1]
    cum = np.concatenate([[0.0], np.cumsum(ends - starts)])

    def covered(s):
        # shadow length inside (-inf, s]
        i = int(np.searchsorted(starts, s, side="right"))
        if i == 0:
            return 0.0
        return float(cum[i - 1] + min(s, ends[i - 1]) - starts[i - 1])

    def G(s):
        cov = covered(s)
        return g_off * (s - cov) + g_in * cov

    def value(x):
        return G(float(x[:-1] @ v)) + a * float(x[-1])

    def grad(x):
        s = float(x[:-1] @ v)
        i = int(np.searchsorted(starts, s, side="right"))
        inside = i > 0 and s <= ends[i - 1]
        out = np.empty_like(u)
        out[:-1] = (g_in if inside else g_off) * v
        out[-1] = a
        return out

    class _Shadow(DualFunction):
        def bound(self, src, dst):
            # the tail shadows may sit anywhere on the path, each costs g_off - g_in
            return abs(self(src) - self(dst)) - (g_off - g_in) * tail

    return _Shadow(value=value, grad=grad,
                   note=f"shadow dual a={a:.6g} g_off={g_off:.6g} g_in={g_in:.6g}: "
                        "|grad w|^2 <= 2 on S and <= 1 on the balls")


QUADRATURE_SLACK = 1e-6


def distance_estimate(field: MetricField, src, dst, schedule, stencil_k: int = 3,
                      duals=None, margin: float | None = None, box=None,
                      refine: int = 6, bracket_tol: float = 1e-9) -> DistanceQuery:
    """Run the schedule and return the completed query with its bracket.

    The lattice box is the bounding box of src and dst enlarged by
    ``margin`` (default: half the Euclidean distance), or ``box`` =
    (lo, hi) when given; src is always a node.
    """
    check_schedule(schedule)
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    q = DistanceQuery(field.example, tuple(src), tuple(dst), list(schedule), stencil_k)
    dist_euc = float(np.linalg.norm(dst - src))
    if margin is None:
        margin = 0.5 * dist_euc
    t_start = time.perf_counter()
    for eps, h in schedule:
        t0 = time.perf_counter()
        if box is None:
            lat = Lattice.around(src, dst, h, margin, stencil_k)
        else:
            lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
            below = np.floor((src - lo) / h + 1e-9).astype(int)
            above = np.floor((hi - src) / h + 1e-9).astype(int)
            lat = Lattice(tuple(src - below * h), tuple(int(v) for v in below + above + 1), h, stencil_k)
        length, _ = shortest_path(lat, mollified(field, eps), eps, src, dst, refine=refine)
        q.stages.append(Stage(eps, h, length, 1000 * (time.perf_counter() - t0), lat.size))
    q.runtime_ms = 1000 * (time.perf_counter() - t_start)
    q.estimate = q.stages[-1].length
    q.stencil_error = stencil_error(stencil_k, field.d)
    if duals is None:
        duals = default_duals(field, src, dst)
    lows = [dual_certificate_bound(field, w, src, dst) for w in duals]
    q.lower_bound = max(lows) if lows else 0.0
    # a lattice path is an actual curve, so its g_eps length already bounds
    # d_{g_eps} from above; only the edge quadrature can push it below
    q.upper_bound = q.estimate * (1.0 + QUADRATURE_SLACK)
    if q.lower_bound > q.estimate * (1 + bracket_tol) + bracket_tol:
        raise DiagnosticError(
            f"lower bound {q.lower_bound} exceeds lattice estimate {q.estimate}")
    return q


# ---------------------------------------------------------------------------
# closed forms


def alpha_ex1(u) -> float:
    """Metric speed of direction u at density points of {theta = 2} for EX1/EX2."""
    u = np.asarray(u, float)
    a, rest = abs(u[0]), float(np.linalg.norm(u[1:]))
    if a <= rest:
        return a + rest
    return math.sqrt(2.0) * float(np.linalg.norm(u))


def alpha_ex3(u) -> float:
    """Metric speed of direction u on S x R for EX3 (last coordinate along the channels)."""
    u = np.asarray(u, float)
    a, rest = abs(u[-1]), float(np.linalg.norm(u[:-1]))
    if a >= rest:
        return a + rest
    return math.sqrt(2.0) * float(np.linalg.norm(u))


def two_segment_cost(u, c) -> float:
    """Cost |u_1| ... of riding a channel for a fraction of u' and crossing the rest.

    The decomposition travels (1 - c) u' inside a fast channel and the
    remaining (u_1, c u') through theta = 2, which costs
    (1 - c)|u'| + sqrt(2) sqrt(u_1^2 + c^2 |u'|^2).
    """
    u = np.asarray(u, float)
    a, rest = abs(u[0]), float(np.linalg.norm(u[1:]))
    return (1 - c) * rest + math.sqrt(2.0) * math.sqrt(a * a + (c * rest) ** 2)


def sigma_ex1(cover: RationalCover, x1, interval_length) -> float:
    """sup over open intervals I containing x1, |I| < L, of |avg_I theta - 2|.

    |avg_I theta - 2| is the fraction of I covered by O.  On every cell of
    the breakpoint arrangement this fraction is monotone in each endpoint,
    so the supremum is attained at (or approached towards) pairs of
    breakpoints, or at one breakpoint with |I| = L.
    """
    x = as_fraction(x1)
    L = as_fraction(interval_length)
    merged = cover.merged
    if cover.scope == "unit_interval":
        merged = tuple((max(lo, Fraction(0)), min(hi, Fraction(1))) for lo, hi in merged if hi > 0 and lo < 1)
    if not merged or L <= 0:
        return 0.0

    def mass(s, t):
        tot = Fraction(0)
        for lo, hi in merged:
            a, b = max(lo, s), min(hi, t)
            if b > a:
                tot += b - a
        return tot

    pts = sorted({p for iv in merged for p in iv})
    left = [p for p in pts if x - L < p < x] + [x - L, x]
    right = [p for p in pts if x < p < x + L] + [x + L, x]
    best = Fraction(0)
    for s in left:
        for t in right:
            if t > s and t - s <= L:
                best = max(best, mass(s, t) / (t - s))
    for s in left:
        t = s + L
        if s <= x <= t:
            best = max(best, mass(s, t) / L)
    for t in right:
        s = t - L
        if s <= x <= t:
            best = max(best, mass(s, t) / L)
    return float(best)


def sigma_ex3(hier: SobolevHierarchy, y, radius) -> float:
    """sum_m (2 r_m / 5) zeta_m(y, radius) / radius."""
    counts = shrinking_ball_counts(hier, y, radius)
    return sum(2 * float(rm) / 5 * z for rm, z in zip(hier.r, counts)) / float(radius)


# ---------------------------------------------------------------------------
# channel detours


def staircase_upper_path(field: MetricField, eps: float, src, dst, channel, tol: float | None = None):
    """Polyline detouring through a fast channel and its g_eps length.

    ``channel`` is an interval centre q (EX1/EX2, channel {x_1 = q}) or a
    ball centre x in R^(d-1) (EX3, channel {x} x R).  The path rides the
    channel for the part of the displacement the channel can carry and
    crosses the rest diagonally.
    """
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    u = dst - src
    mm = mollified(field, eps)
    if field.example in ("EX1", "EX2"):
        q = float(channel)
        along, across = 0, slice(1, None)
        ux, urest = abs(u[0]), float(np.linalg.norm(u[1:]))
        ride_possible = ux < urest
        b = ux / urest if ride_possible else 1.0
        offset = abs(q - src[0])
        alpha = alpha_ex1(u)
    elif field.example == "EX3":
        x = np.asarray(channel, float)
        urest, ux = abs(u[-1]), float(np.linalg.norm(u[:-1]))
        ride_possible = urest > ux
        b = ux / urest if ride_possible else 1.0
        offset = float(np.linalg.norm(x - src[:-1]))
        alpha = alpha_ex3(u)
    else:
        raise ValueError("channels exist only for EX1, EX2 and EX3")

    if not ride_possible:
        pts = [src, dst]
    elif field.example in ("EX1", "EX2"):
        shift = np.zeros_like(src)
        shift[0] = q - src[0]
        ride = np.zeros_like(src)
        ride[1:] = (1 - b) * u[1:]
        pts = [src, src + shift, src + shift + ride, src + ride, dst]
    else:
        shift = np.zeros_like(src)
        shift[:-1] = x - src[:-1]
        ride = np.zeros_like(src)
        ride[-1] = (1 - b) * u[-1]
        pts = [src, src + shift, src + shift + ride, src + ride, dst]
    poly = [pts[0]]
    for p in pts[1:]:
        if np.linalg.norm(p - poly[-1]) > 0:
            poly.append(p)
    length = sum(edge_weight(mm, eps, a, c) for a, c in zip(poly[:-1], poly[1:]))
    if tol is not None and length > alpha + tol:
        warnings.warn(f"channel detour length {length:.6g} exceeds alpha {alpha:.6g} by more than {tol} "
                      f"(offset {offset:.3g})", RuntimeWarning)
    return poly, length
