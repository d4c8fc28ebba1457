"""First-order calculus on the conformal examples.

Metric speeds and slopes are brackets built from distance brackets.  Test
plans are finite samples of straight curves; the weak-upper-gradient
inequality is checked on them by Monte Carlo with paired standard errors.
The minimal weak upper gradients themselves are closed forms: constants on
the irregular set, |grad_g f|_g where g is continuous.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import mpmath
import numpy as np

from .distance import alpha_ex1, alpha_ex3, distance_estimate
from .fields import (
    MetricField, ParameterError, RationalCover, SobolevHierarchy, as_fraction, certify_in_S,
)
from .profiles import plateau, plateau_prime, step_down, step_down_prime

SQRT2 = math.sqrt(2.0)


class UndefinedPointError(ValueError):
    """The point lies on a null set where the closed form is not defined."""


class ConstructionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class Curve:
    """A straight curve y + t u or a polyline, parametrised on [0, 1]."""

    kind: str
    base: tuple = ()
    direction: tuple = ()
    vertices: tuple = ()

    @classmethod
    def straight(cls, y, u) -> "Curve":
        return cls("straight", tuple(float(c) for c in y), tuple(float(c) for c in u))

    @classmethod
    def polyline(cls, vertices) -> "Curve":
        V = tuple(tuple(float(c) for c in v) for v in vertices)
        if len(V) < 2:
            raise ValueError("a polyline needs two vertices")
        return cls("polyline", vertices=V)

    def _segments(self):
        V = np.asarray(self.vertices)
        n = len(V) - 1
        return V, n

    def point(self, t: float) -> np.ndarray:
        if self.kind == "straight":
            return np.asarray(self.base) + t * np.asarray(self.direction)
        V, n = self._segments()
        s = min(max(t, 0.0), 1.0) * n
        j = min(int(s), n - 1)
        return V[j] + (s - j) * (V[j + 1] - V[j])

    def derivative(self, t: float) -> np.ndarray:
        if self.kind == "straight":
            return np.asarray(self.direction)
        V, n = self._segments()
        j = min(int(min(max(t, 0.0), 1.0) * n), n - 1)
        return n * (V[j + 1] - V[j])

    @property
    def lipschitz(self) -> float:
        if self.kind == "straight":
            return float(np.linalg.norm(self.direction))
        V, n = self._segments()
        return float(n * np.max(np.linalg.norm(np.diff(V, axis=0), axis=1)))


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A Lipschitz function with exact value and gradient evaluators."""

    __test__ = False  # not a pytest class

    id: str
    value: Callable
    grad: Callable
    n: int | None = None

    def __call__(self, x) -> float:
        return float(self.value(np.atleast_2d(np.asarray(x, float)))[0])

    def gradient(self, x) -> np.ndarray:
        return self.grad(np.atleast_2d(np.asarray(x, float)))[0]

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(f"({self.id})+({other.id})",
                            lambda X: self.value(X) + other.value(X),
                            lambda X: self.grad(X) + other.grad(X), self.n)

    def __sub__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(f"({self.id})-({other.id})",
                            lambda X: self.value(X) - other.value(X),
                            lambda X: self.grad(X) - other.grad(X), self.n)


def linear_function(v, name: str | None = None) -> TestFunction:
    v = np.asarray(v, float)
    return TestFunction(name or f"x.{v.tolist()}", lambda X: X @ v,
                        lambda X: np.broadcast_to(v, X.shape).copy())


def constant_function(c: float, d: int) -> TestFunction:
    return TestFunction(f"const {c}", lambda X: np.full(len(X), float(c)), lambda X: np.zeros_like(X))


def _product_cutoff(X, axes, lo, hi, width=1.0):
    """prod_j plateau(x_j) and its gradient (zero outside ``axes``)."""
    P = plateau(X[:, axes], lo, hi, width)
    dP = plateau_prime(X[:, axes], lo, hi, width)
    val = np.prod(P, axis=1)
    grad = np.zeros_like(X)
    for j, ax in enumerate(axes):
        others = np.prod(np.delete(P, j, axis=1), axis=1)
        grad[:, ax] = dP[:, j] * others
    return val, grad


def eta_n(x, n: int):
    """1 on (-n, n), 0 outside (-n-1, n+1), even, quintic transitions."""
    return step_down(np.abs(np.asarray(x, float)), n, n + 1)


def eta_n_prime(x, n: int):
    x = np.asarray(x, float)
    return np.sign(x) * step_down_prime(np.abs(x), n, n + 1)


def ex2_test_functions(d: int = 2) -> dict:
    """phi x_1, phi x_2, their sum and difference; phi = 1 on [-1, 2]^d, 0 off (-2, 3)^d."""
    axes = list(range(d))

    def comp(k):
        def value(X):
            phi, _ = _product_cutoff(X, axes, -1.0, 2.0)
            return phi * X[:, k]

        def grad(X):
            phi, dphi = _product_cutoff(X, axes, -1.0, 2.0)
            g = dphi * X[:, k:k + 1]
            g[:, k] += phi
            return g
        return value, grad

    f1 = TestFunction("f1", *comp(0))
    f2 = TestFunction("f2", *comp(1))
    f3, f4 = f1 + f2, f1 - f2
    return {1: f1, 2: f2, 3: TestFunction("f3", f3.value, f3.grad), 4: TestFunction("f4", f4.value, f4.grad)}


def ex3_test_functions(d: int, n: int | None = None) -> dict:
    """The EX3 family.

    With ``n`` None: phi x_1, phi |x_d| and sum/difference, phi = phi~(x')
    equal to 1 on [-2, 2]^(d-1) and 0 off (-3, 3)^(d-1).  With an integer n
    the x_d-cutoff eta_n is applied and |x_d| becomes |x_d| - n + 1.
    """
    axes = list(range(d - 1))

    def cut(X):
        phi, dphi = _product_cutoff(X, axes, -2.0, 2.0)
        if n is None:
            return phi, dphi
        e = eta_n(X[:, -1], n)
        de = eta_n_prime(X[:, -1], n)
        g = dphi * e[:, None]
        g[:, -1] = phi * de
        return phi * e, g

    shift = 0.0 if n is None else n - 1.0

    def v1(X):
        c, _ = cut(X)
        return c * X[:, 0]

    def g1(X):
        c, dc = cut(X)
        g = dc * X[:, :1]
        g[:, 0] += c
        return g

    def v2(X):
        c, _ = cut(X)
        return c * (np.abs(X[:, -1]) - shift)

    def g2(X):
        c, dc = cut(X)
        g = dc * (np.abs(X[:, -1]) - shift)[:, None]
        g[:, -1] += c * np.sign(X[:, -1])
        return g

    f1 = TestFunction("f1" if n is None else f"f1,{n}", v1, g1, n)
    f2 = TestFunction("f2" if n is None else f"f2,{n}", v2, g2, n)
    f3, f4 = f1 + f2, f1 - f2
    name = "" if n is None else f",{n}"
    return {1: f1, 2: f2, 3: TestFunction("f3" + name, f3.value, f3.grad, n),
            4: TestFunction("f4" + name, f4.value, f4.grad, n)}


def g_gradient_norm(field: MetricField, f: TestFunction) -> Callable:
    """x -> |grad_g f|_g = |grad f| / sqrt(theta)."""
    def G(X):
        X = np.atleast_2d(np.asarray(X, float))
        return np.linalg.norm(f.grad(X), axis=1) / np.sqrt(field.theta(X))
    return G


# ---------------------------------------------------------------------------
# dual norms of the limiting speeds


def alpha_dual_ex1(xi) -> float:
    """sup_u xi.u / alpha_ex1(u) = max(|xi| / sqrt 2, |xi'|)."""
    xi = np.asarray(xi, float)
    return max(float(np.linalg.norm(xi)) / SQRT2, float(np.linalg.norm(xi[1:])))


def alpha_dual_ex3(xi) -> float:
    """sup_u xi.u / alpha_ex3(u) = max(|xi| / sqrt 2, |xi_d|)."""
    xi = np.asarray(xi, float)
    return max(float(np.linalg.norm(xi)) / SQRT2, abs(float(xi[-1])))


# ---------------------------------------------------------------------------
# speeds and slopes


@dataclass(frozen=True)
class Bracket:
    lower: float
    upper: float
    h: float
    tol: float = 0.05

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def conclusive(self) -> bool:
        return self.width <= self.tol * max(abs(self.upper), 1e-300)

    def contains(self, v: float, rtol: float = 0.0) -> bool:
        return self.lower - rtol * abs(v) <= v <= self.upper + rtol * abs(v)


def _query(field, a, b, schedule, stencil_k, **kw):
    return distance_estimate(field, a, b, schedule, stencil_k, **kw)


def metric_speed(field: MetricField, curve: Curve, t: float, schedule, h: float,
                 stencil_k: int = 3, tol: float = 0.05, **kw) -> Bracket:
    """Difference quotient d(gamma_t, gamma_{t+h}) / h as a bracket."""
    if not h > 0:
        raise ValueError("h must be positive")
    q = _query(field, curve.point(t), curve.point(t + h), schedule, stencil_k, **kw)
    return Bracket(q.lower_bound / h, q.upper_bound / h, h, tol)


def slope(field: MetricField, f: TestFunction, x, directions, schedule, h: float,
          stencil_k: int = 3, tol: float = 0.05, **kw) -> Bracket:
    """max over directions of |f(x + h u) - f(x)| / d(x, x + h u), bracketed."""
    x = np.asarray(x, float)
    lo = hi = 0.0
    for u in directions:
        u = np.asarray(u, float)
        y = x + h * u / np.linalg.norm(u)
        df = abs(f(y) - f(x))
        if df == 0.0:
            continue
        q = _query(field, x, y, schedule, stencil_k, **kw)
        lo = max(lo, df / q.upper_bound)
        hi = max(hi, df / q.lower_bound if q.lower_bound > 0 else math.inf)
    return Bracket(lo, hi, h, tol)


# ---------------------------------------------------------------------------
# f_b(c) = |1 - c| + sqrt 2 sqrt(b^2 + c^2)


def fb(b, c):
    return abs(1 - c) + SQRT2 * math.hypot(b, c)


def fb_minimize(b: float):
    """Minimiser and minimum of f_b over c."""
    b = abs(float(b))
    if b <= 1.0:
        return b, 1.0 + b
    return 1.0, math.sqrt(2.0 * (1.0 + b * b))


def golden_section(f: Callable, lo, hi, tol=mpmath.mpf("1e-25"), dps: int = 50):
    """Minimiser of a unimodal f on [lo, hi] in mpmath arithmetic."""
    with mpmath.workdps(dps):
        invphi = (mpmath.sqrt(5) - 1) / 2
        a, b = mpmath.mpf(lo), mpmath.mpf(hi)
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = f(c), f(d)
        while b - a > tol:
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = f(d)
        x = (a + b) / 2
        return x, f(x)


def fb_golden(b: float):
    """Independent minimisation of f_b by golden section (high precision)."""
    bb = mpmath.mpf(b)
    f = lambda c: abs(1 - c) + mpmath.sqrt(2) * mpmath.sqrt(bb * bb + c * c)
    c, v = golden_section(f, -abs(bb) - 2, abs(bb) + 2)
    return float(c), float(v)


# ---------------------------------------------------------------------------
# test plans


@dataclass
class TestPlan:
    __test__ = False

    kind: str
    bases: np.ndarray
    direction: np.ndarray
    n: int
    seed: int
    E: str
    measure_E: float
    compression: float
    meta: dict = field(default_factory=dict)

    def curves(self):
        return [Curve.straight(y, self.direction) for y in self.bases]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def make_test_plan(kind: str, params: dict, n: int, seed: int) -> TestPlan:
    """Sample n straight curves of a plan.

    EX1: bases uniform on E = E' x (0,1)^(d-1) with E' the part of a
    subinterval of (0,1) not covered by O; curves run along e_2 for unit
    time.  The plan is the normalised Lebesgue measure on E, so
    (e_t)_# pi <= m / L^d(E) (theta >= 1 makes vol_g >= L^d).
    EX3: (d-1)-coordinates k / (3 2^j) certified in S, x_d uniform in
    (0, 1/2); curves run along e_d.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = _rng(seed)
    if kind == "EX1":
        cover: RationalCover = params["cover"]
        d = int(params.get("d", 2))
        a, b = params.get("subinterval", (0, 1))
        gaps = cover.gaps(a, b)
        lens = np.array([float(hi - lo) for lo, hi in gaps])
        mE = float(sum((hi - lo for lo, hi in gaps), Fraction(0)))
        if mE <= 0:
            raise ConstructionError("E' is empty at this depth")
        u = np.zeros(d)
        u[1] = 1.0
        bases = np.zeros((n, d))
        if n:
            k = rng.choice(len(gaps), size=n, p=lens / lens.sum())
            s = rng.random(n)
            lo = np.array([float(gaps[j][0]) for j in k])
            bases[:, 0] = lo + s * lens[k]
            bases[:, 1:] = rng.random((n, d - 1))
        return TestPlan("EX1", bases, u, n, seed, f"E' = ({a},{b}) minus O, times (0,1)^{d - 1}",
                        mE, 1.0 / mE, {"gaps": len(gaps)})
    if kind == "EX3":
        hier: SobolevHierarchy = params["hier"]
        d = hier.d
        j = int(params.get("thirds_exponent", hier.levels + 2))
        den = 3 * 2 ** j
        pool = [k for k in range(1, den) if k % 3]
        bases = np.zeros((n, d))
        got, tries = 0, 0
        while got < n:
            tries += 1
            if tries > 1000 * max(n, 1):
                raise ConstructionError("could not certify enough bases")
            ks = rng.choice(pool, size=d - 1)
            y = [Fraction(int(k), den) for k in ks]
            if certify_in_S(hier, y).certified:
                bases[got, :-1] = [float(c) for c in y]
                bases[got, -1] = 0.5 * rng.random()
                got += 1
        u = np.zeros(d)
        u[-1] = 1.0
        mE = 0.5 * (1.0 - hier.ball_measure() - hier.tail_measure_bound())
        return TestPlan("EX3", bases, u, n, seed, "S x (0, 1/2)", mE, 1.0 / mE,
                        {"thirds_denominator": den, "tries": tries})
    raise ParameterError(f"unknown plan kind {kind!r}")


def transversality_fraction(plan: TestPlan, cover: RationalCover, samples: int = 10_000) -> Fraction:
    """Exact fraction of curve samples gamma_t whose x_1 is an endpoint of O.

    Samples are spread over the plan's curves at times t = k / m; the
    coordinates are the exact rationals of the stored floats.
    """
    ends = sorted({p for iv in cover.merged for p in iv})
    if plan.n == 0:
        return Fraction(0)
    per = max(1, samples // plan.n)
    hit = total = 0
    u1 = as_fraction(plan.direction[0])
    for y in plan.bases:
        x1 = as_fraction(y[0])
        for k in range(per):
            x = x1 + Fraction(k, per) * u1
            i = bisect.bisect_left(ends, x)
            hit += i < len(ends) and ends[i] == x
            total += 1
    return Fraction(hit, total)


# ---------------------------------------------------------------------------
# weak upper gradients


@dataclass(frozen=True)
class WugCheck:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    se_diff: float
    quad_err: float
    verdict: str

    @property
    def separation(self) -> float:
        """(lhs - rhs) in units of the combined error."""
        err = math.hypot(self.se_diff, self.quad_err)
        return math.inf if err == 0 else (self.lhs - self.rhs) / err


def _mean_se(v: np.ndarray):
    n = len(v)
    if n == 0:
        return 0.0, 0.0
    mean = math.fsum(v) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def check_weak_upper_gradient(plan: TestPlan, f: TestFunction, G: Callable, speed,
                              knots: int = 1024, z: float = 5.0, atol: float = 1e-9) -> WugCheck:
    """Monte-Carlo test of int |f(g_1) - f(g_0)| dpi <= int int_0^1 G(g_t) |g'_t| dt dpi.

    ``speed`` is a number (the same metric speed on every curve) or a
    callable (P, u) -> speeds at the rows of P.  VIOLATED needs lhs - rhs above z combined
    standard errors; HOLDS needs it below two; anything between is
    INCONCLUSIVE.
    """
    n = plan.n
    u = np.asarray(plan.direction, float)
    t = np.linspace(0.0, 1.0, knots)
    w = np.full(knots, 1.0 / (knots - 1))
    w[0] = w[-1] = 0.5 / (knots - 1)
    th = np.linspace(0.0, 1.0, knots // 2)
    wh = np.full(len(th), 1.0 / (len(th) - 1))
    wh[0] = wh[-1] = 0.5 / (len(th) - 1)
    lhs = np.zeros(n)
    rhs = np.zeros(n)
    coarse = np.zeros(n)
    for j, y in enumerate(plan.bases):
        lhs[j] = abs(f(y + u) - f(y))
        P = y[None, :] + t[:, None] * u[None, :]
        Ph = y[None, :] + th[:, None] * u[None, :]
        if callable(speed):
            sp = np.asarray(speed(P, u), float)
            sph = np.asarray(speed(Ph, u), float)
        else:
            sp = sph = float(speed)
        rhs[j] = float(np.dot(w, np.asarray(G(P)) * sp))
        coarse[j] = float(np.dot(wh, np.asarray(G(Ph)) * sph))
    ml, sl = _mean_se(lhs)
    mr, sr = _mean_se(rhs)
    _, sd = _mean_se(lhs - rhs)
    quad = abs(mr - (math.fsum(coarse) / n if n else 0.0))
    err = math.hypot(sd, quad) + atol
    diff = ml - mr
    if diff > z * err:
        verdict = "VIOLATED"
    elif diff <= 2 * err:
        verdict = "HOLDS"
    else:
        verdict = "INCONCLUSIVE"
    return WugCheck(ml, mr, sl, sr, sd, quad, verdict)


VERDICT_COLUMNS = ["plan_id", "f", "G", "lhs", "rhs", "se_lhs", "se_rhs", "verdict"]


def write_verdicts_csv(path, rows: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=VERDICT_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)


def verdict_row(plan_id: str, f: str, G: str, res: WugCheck) -> dict:
    return {"plan_id": plan_id, "f": f, "G": G, "lhs": repr(res.lhs), "rhs": repr(res.rhs),
            "se_lhs": repr(res.se_lhs), "se_rhs": repr(res.se_rhs), "verdict": res.verdict}


# minimal weak upper gradients --------------------------------------------------

EX2_IRREGULAR = (1 / SQRT2, 1.0, 1.0, 1.0)   # bad set (0,1)^d minus O x (0,1)^(d-1)
EX2_CHANNEL = (1.0, 1.0, SQRT2, SQRT2)      # O x (0,1)^(d-1), theta = 1
EX2_OUTSIDE = (1 / SQRT2, 1 / SQRT2, 1.0, 1.0)  # complement of the closed cube, theta = 2
EX3_IRREGULAR = (1 / SQRT2, 1.0, 1.0, 1.0)   # S x R


def minimal_wug_ex2(i: int, x, cover: RationalCover) -> float:
    """|D f_i|_w for f_1 = x_1, f_2 = x_2, f_3 = f_1 + f_2, f_4 = f_1 - f_2 on EX2."""
    if i not in (1, 2, 3, 4):
        raise ValueError("i must be 1..4")
    x = [as_fraction(c) for c in x]
    if any(c == 0 or c == 1 for c in x) and all(0 <= c <= 1 for c in x):
        raise UndefinedPointError("point on the cube boundary")
    if not all(0 < c < 1 for c in x):
        return EX2_OUTSIDE[i - 1]
    if cover.on_boundary(x[0]):
        raise UndefinedPointError("x_1 on the boundary of O")
    return (EX2_CHANNEL if cover.contains(x[0]) else EX2_IRREGULAR)[i - 1]


def _classify_ex3(hier: SobolevHierarchy, xp):
    """'outside', 'ball' (with theta), or 'S' for x' in R^(d-1)."""
    from .fields import theta3_eval

    if any(c == 0 or c == 1 for c in xp) and all(0 <= c <= 1 for c in xp):
        raise UndefinedPointError("x' on the boundary of the unit cube")
    if not all(0 < c < 1 for c in xp):
        return "outside", 2.0
    for m in range(1, hier.levels + 1):
        nn = 2 ** (m + 1)
        ix = tuple(math.floor(c * nn + Fraction(1, 2)) for c in xp)
        if ix in hier.level_set(m):
            d2 = sum((c - Fraction(j, nn)) ** 2 for c, j in zip(xp, ix))
            r = hier.r[m - 1]
            if d2 < r * r:
                return "ball", theta3_eval(hier, [float(c) for c in xp])
            if d2 == r * r:
                raise UndefinedPointError("x' on a ball boundary")
    if certify_in_S(hier, xp).certified:
        return "S", 2.0
    raise UndefinedPointError("x' cannot be classified at the available depth")


def minimal_wug_ex3(i: int, n: int, x, hier: SobolevHierarchy) -> float:
    """|D f_{i,n}|_w at x for EX3.

    On S x (-n, n) these are the constants G_i.  Where g is continuous the
    value is |grad_g f|_g.  On the collars n <= |x_d| <= n + 1 the value is
    the one of f_{i,1} shifted by n - 1; on S it is the dual norm of the
    gradient for the limiting speed, max(|xi| / sqrt 2, |xi_d|), which
    reproduces G_i where the gradient is e_1 or e_d.
    """
    if i not in (1, 2, 3, 4):
        raise ValueError("i must be 1..4")
    d = hier.d
    xp = [as_fraction(c) for c in x[:-1]]
    xd = float(x[-1])
    if len(xp) != d - 1:
        raise ParameterError(f"expected a point of R^{d}")
    if any(abs(float(c)) >= 3 for c in xp) or abs(xd) >= n + 1:
        return 0.0
    kind, theta = _classify_ex3(hier, xp)
    X = np.array([[float(c) for c in xp] + [xd]])
    if abs(xd) < n:
        if kind == "S":
            return EX3_IRREGULAR[i - 1]
        g = ex3_test_functions(d, n)[i].gradient(X)
        return float(np.linalg.norm(g)) / math.sqrt(theta)
    # collar: shift back to the n = 1 picture
    X[0, -1] = xd - math.copysign(n - 1, xd)
    g = ex3_test_functions(d, 1)[i].gradient(X)
    if kind == "S":
        return alpha_dual_ex3(g)
    return float(np.linalg.norm(g)) / math.sqrt(theta)


EQUALITY_DIRECTIONS = {
    "EX2": {1: (1, 0), 2: (0, 1), 3: (1, 1), 4: (1, -1)},
    "EX3": {1: (1, 0, 0), 2: (0, 0, 1), 3: (1, 0, 1), 4: (1, 0, -1)},
}


def directional_ratio(i: int, u, example: str) -> float:
    """|d_u f_i| / alpha(u) on the irregular set, checked against G_i."""
    u = np.asarray(u, float)
    if not np.any(u):
        raise ValueError("u must be nonzero")
    if example == "EX2":
        e1 = np.zeros_like(u); e1[0] = 1.0
        e2 = np.zeros_like(u); e2[1] = 1.0
        alpha, bound = alpha_ex1(u), EX2_IRREGULAR
    elif example == "EX3":
        e1 = np.zeros_like(u); e1[0] = 1.0
        e2 = np.zeros_like(u); e2[-1] = 1.0
        alpha, bound = alpha_ex3(u), EX3_IRREGULAR
    else:
        raise ParameterError(f"unknown example {example!r}")
    grads = {1: e1, 2: e2, 3: e1 + e2, 4: e1 - e2}
    ratio = abs(float(grads[i] @ u)) / alpha
    assert ratio <= bound[i - 1] * (1 + 1e-12), "ratio exceeds the minimal weak upper gradient"
    return ratio


# ---------------------------------------------------------------------------
# derivative truncation


def truncate_band(ts: Sequence, fs: Sequence, a, b):
    """Truncation h = max(a, min(f, b)) of a piecewise-linear f and the integral of f' over f^-1((a, b)).

    The integral is assembled from the exact crossing times of each linear
    piece with the levels a and b.  Returns (h at the breakpoints, integral).
    """
    ts = [as_fraction(t) for t in ts]
    fs = [as_fraction(v) for v in fs]
    a, b = as_fraction(a), as_fraction(b)
    if not a < b:
        raise ValueError("need a < b")
    if len(ts) != len(fs) or len(ts) < 2:
        raise ValueError("need matching breakpoints and values")
    total = Fraction(0)
    for t0, t1, f0, f1 in zip(ts[:-1], ts[1:], fs[:-1], fs[1:]):
        if t1 <= t0:
            raise ValueError("breakpoints must increase")
        if f0 == f1:
            continue  # f' = 0 on this piece
        slope_ = (f1 - f0) / (t1 - t0)
        # times where f crosses a and b, clipped to the piece
        ta = t0 + (a - f0) / slope_
        tb = t0 + (b - f0) / slope_
        lo, hi = min(ta, tb), max(ta, tb)
        lo, hi = max(lo, t0), min(hi, t1)
        if hi > lo:
            total += slope_ * (hi - lo)
    h = [max(a, min(v, b)) for v in fs]
    assert a - b <= total <= b - a
    return h, total
