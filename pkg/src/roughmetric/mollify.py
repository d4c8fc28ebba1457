"""Mollified conformal factors theta_eps = rho_eps * theta.

The kernel is the tensor product of the normalised bump (1 - t^2)^4 on
[-1, 1], scaled to support [-eps, eps] per axis with total mass one.

For EX1/EX2 the convolution is a product of one-dimensional integrals of
indicators, so it is evaluated in closed form from the bump antiderivative.
For EX3 each ball contributes the convolution of (2 - psi_ball) with the
kernel; a ball much smaller than eps is handled by a moment expansion,
larger ones by polar (k = 2) or tensor Gauss-Legendre quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.spatial import cKDTree

from .fields import MetricField, RationalCover, SobolevHierarchy, sphere_area
from .profiles import BUMP_NORM, BUMP_PROFILE_ID, bump, bump_cdf, eta

# 2 - psi is supported in |z - c| < 0.15 r and equals 1 on |z - c| <= 0.1 r
PLATEAU = 0.1
SUPPORT = 0.15


@dataclass(frozen=True)
class Mollifier:
    eps: float
    dim: int
    profile: str = BUMP_PROFILE_ID

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def __call__(self, V) -> np.ndarray:
        """Kernel value at the rows of an (N, dim) array."""
        V = np.atleast_2d(np.asarray(V, dtype=float)) / self.eps
        return np.prod(bump(V), axis=1) / self.eps ** self.dim


def interval_smoothing(intervals, eps: float, x) -> np.ndarray:
    """(1_U * rho_eps)(x) for a finite disjoint union U of intervals."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for lo, hi in intervals:
        out += bump_cdf((x - lo) / eps) - bump_cdf((x - hi) / eps)
    return out


def _cover_intervals(cover: RationalCover):
    m = cover.merged_float()
    if cover.scope == "unit_interval":
        m = np.clip(m, 0.0, 1.0)
        m = m[m[:, 1] > m[:, 0]]
    return m


def mollify_theta1(cover: RationalCover, eps: float, x1):
    """theta_eps in the first coordinate for the rational-cover metrics."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    val = 2.0 - interval_smoothing(_cover_intervals(cover), eps, x1)
    val = np.clip(val, 1.0, 2.0)
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# EX3


def _bump_second(t):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    u = 1.0 - t * t
    val = BUMP_NORM * (-8.0 * u ** 3 + 48.0 * t * t * u ** 2)
    return np.where(inside, val, 0.0)


def _radial_moments(r: float, k: int):
    """Integrals of (2 - psi) and (2 - psi)|z|^2 for a ball of radius r in R^k."""
    from scipy.integrate import quad

    sa = sphere_area(k)
    m0 = sa * (PLATEAU * r) ** k / k
    m2 = sa * (PLATEAU * r) ** (k + 2) / (k + 2)
    f0, _ = quad(lambda s: (2.0 - float(eta(5.0 * s))) * s ** (k - 1), 0.1, 0.15, epsabs=0, epsrel=1e-13)
    f2, _ = quad(lambda s: (2.0 - float(eta(5.0 * s))) * s ** (k + 1), 0.1, 0.15, epsabs=0, epsrel=1e-13)
    m0 += sa * f0 * r ** k
    m2 += sa * f2 * r ** (k + 2)
    return m0, m2


class _BallQuadrature:
    """Quadrature rules for one ball profile, cached per (r, k)."""

    def __init__(self, r: float, k: int, order: int = 12, angles: int = 64):
        self.r, self.k = r, k
        self.m0, self.m2 = _radial_moments(r, k)
        x, w = leggauss(order)
        if k == 2:
            rad, rw = [], []
            for a, b in ((0.0, PLATEAU * r), (PLATEAU * r, SUPPORT * r)):
                rad.append(0.5 * (b - a) * x + 0.5 * (a + b))
                rw.append(0.5 * (b - a) * w)
            rad, rw = np.concatenate(rad), np.concatenate(rw)
            phi = 2 * np.pi * np.arange(angles) / angles
            R, P = np.meshgrid(rad, phi, indexing="ij")
            W = np.outer(rw * rad, np.full(angles, 2 * np.pi / angles))
            prof = (2.0 - eta(5.0 * R / r))
            self.nodes = np.stack([R * np.cos(P), R * np.sin(P)], axis=-1).reshape(-1, 2)
            self.weights = (W * prof).reshape(-1)
        else:
            # tensor rule over the support cube, split at the plateau radius
            edges = np.array([-SUPPORT, -PLATEAU, 0.0, PLATEAU, SUPPORT]) * r
            pts, wts = [], []
            for a, b in zip(edges[:-1], edges[1:]):
                pts.append(0.5 * (b - a) * x + 0.5 * (a + b))
                wts.append(0.5 * (b - a) * w)
            p1, w1 = np.concatenate(pts), np.concatenate(wts)
            grids = np.meshgrid(*([p1] * k), indexing="ij")
            Z = np.stack([g.reshape(-1) for g in grids], axis=1)
            W = np.ones(len(Z))
            for g in np.meshgrid(*([w1] * k), indexing="ij"):
                W = W * g.reshape(-1)
            rho = np.sqrt((Z ** 2).sum(axis=1))
            prof = np.where(rho < SUPPORT * r, 2.0 - eta(5.0 * rho / r), 0.0)
            self.nodes, self.weights = Z, W * prof


_QUAD_CACHE: dict = {}


def _ball_rule(r: float, k: int) -> _BallQuadrature:
    key = (r, k)
    if key not in _QUAD_CACHE:
        _QUAD_CACHE[key] = _BallQuadrature(r, k)
    return _QUAD_CACHE[key]


def ball_term(Y, center, r: float, eps: float) -> np.ndarray:
    """((2 - psi_ball) * rho_eps)(y) for the rows y of Y."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    k = Y.shape[1]
    V = Y - np.asarray(center, dtype=float)
    out = np.zeros(len(Y))
    gap = np.sqrt((np.maximum(np.abs(V) - eps, 0.0) ** 2).sum(axis=1))
    far = np.sqrt(((np.abs(V) + eps) ** 2).sum(axis=1))
    live = gap < SUPPORT * r
    inner = far <= PLATEAU * r
    out[inner] = 1.0
    mixed = live & ~inner
    if not mixed.any():
        return out
    idx = np.nonzero(mixed)[0]
    rule = _ball_rule(r, k)
    if SUPPORT * r <= 0.05 * eps:
        # kernel nearly polynomial across the ball: zeroth and second moments
        T = V[idx] / eps
        B = bump(T)
        base = np.prod(B, axis=1)
        lap = np.zeros(len(idx))
        for i in range(k):
            others = np.prod(np.delete(B, i, axis=1), axis=1)
            lap += _bump_second(T[:, i]) * others
        out[idx] = (rule.m0 * base + rule.m2 / (2 * k) * lap / eps ** 2) / eps ** k
        return out
    if SUPPORT * r <= eps:
        for j in idx:
            vals = np.prod(bump((V[j] - rule.nodes) / eps), axis=1) / eps ** k
            out[j] = float(vals @ rule.weights)
        return out
    # kernel smaller than the ball: integrate over the kernel box, doubling
    # the panels since the profile annulus may be thin at the kernel scale
    x, w = leggauss(12)
    max_panels = 32 if k <= 2 else 8

    def box_rule(vj, panels):
        edges = np.linspace(-eps, eps, panels + 1)
        p1 = np.concatenate([0.5 * (b - a) * x + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
        w1 = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
        grids = np.meshgrid(*([p1] * k), indexing="ij")
        S = np.stack([g.reshape(-1) for g in grids], axis=1)
        W = np.ones(len(S))
        for g in np.meshgrid(*([w1] * k), indexing="ij"):
            W = W * g.reshape(-1)
        kern = np.prod(bump(S / eps), axis=1) / eps ** k
        rho = np.sqrt(((vj - S) ** 2).sum(axis=1))
        prof = np.where(rho < SUPPORT * r, 2.0 - eta(5.0 * rho / r), 0.0)
        return float((W * kern) @ prof)

    for j in idx:
        panels = 4
        prev = box_rule(V[j], panels)
        while panels < max_panels:
            panels *= 2
            cur = box_rule(V[j], panels)
            done = abs(cur - prev) <= 1e-11
            prev = cur
            if done:
                break
        out[j] = prev
    return out


def mollify_theta3_values(hier: SobolevHierarchy, eps: float, Y) -> np.ndarray:
    """theta_eps at the rows of an (N, d-1) array for the ball hierarchy."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = np.full(len(Y), 2.0)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    tree = None
    for m in range(1, hier.levels + 1):
        r = float(hier.r[m - 1])
        reach = eps + SUPPORT * r
        C = hier.centers(m)
        C = C[np.all((C >= lo - reach) & (C <= hi + reach), axis=1)]
        if len(C) == 0:
            continue
        if tree is None:
            tree = cKDTree(Y)
        for c, sel in zip(C, tree.query_ball_point(C, reach, p=np.inf)):
            if sel:
                sel = np.sort(np.asarray(sel))
                out[sel] -= ball_term(Y[sel], c, r, eps)
    return np.clip(out, 1.0, 2.0)


def mollify_theta3(hier: SobolevHierarchy, eps: float, y) -> float:
    return float(mollify_theta3_values(hier, eps, np.asarray(y, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class MollifiedMetric:
    base: MetricField
    mollifier: Mollifier

    @property
    def eps(self) -> float:
        return self.mollifier.eps

    @property
    def active_axes(self) -> tuple:
        return self.base.active_axes

    def theta(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        f, eps = self.base, self.eps
        if f.example == "CONSTANT":
            return np.full(len(X), float(f.constant))
        if f.example == "EX1":
            return np.clip(2.0 - interval_smoothing(_cover_intervals(f.payload), eps, X[:, 0]), 1.0, 2.0)
        if f.example == "EX2":
            fast = interval_smoothing(_cover_intervals(f.payload), eps, X[:, 0])
            for i in range(1, f.d):
                fast = fast * interval_smoothing([(0.0, 1.0)], eps, X[:, i])
            return np.clip(2.0 - fast, 1.0, 2.0)
        if f.example == "EX3":
            return mollify_theta3_values(f.payload, eps, X[:, : f.d - 1])
        raise ValueError(f"unknown example {f.example!r}")

    def theta_active(self, P) -> np.ndarray:
        """theta_eps from the active coordinates only, as an (N, len(active_axes)) array."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        X = np.zeros((len(P), self.base.d))
        for j, ax in enumerate(self.active_axes):
            X[:, ax] = P[:, j]
        return self.theta(X)

    def __call__(self, x) -> float:
        return float(self.theta(np.asarray(x, dtype=float)[None, :])[0])


def mollified(field: MetricField, eps: float) -> MollifiedMetric:
    dim = {"EX1": 1, "EX3": field.d - 1}.get(field.example, field.d)
    return MollifiedMetric(field, Mollifier(eps, dim))
