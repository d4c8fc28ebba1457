"""Implicit stencil lattices and a Dijkstra that never materialises the graph.

Edge weights depend only on the coordinates the metric actually varies
in, so they are tabulated on the projection of the lattice onto those
axes.  The Dijkstra below reads that table on the fly, which keeps a
121^3 lattice with a radius-3 stencil well inside memory.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from numpy.polynomial.legendre import leggauss


@lru_cache(maxsize=None)
def stencil(k: int, d: int) -> np.ndarray:
    """Primitive integer vectors with Chebyshev norm <= k, in a fixed order."""
    if k < 1:
        raise ValueError("stencil radius must be >= 1")
    out = []
    for v in itertools.product(range(-k, k + 1), repeat=d):
        if any(v) and math.gcd(*[abs(c) for c in v]) == 1:
            out.append(v)
    out.sort(key=lambda v: (sum(c * c for c in v), v))
    arr = np.array(out, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def stencil_error(k: int, d: int) -> float:
    """Relative overestimate bound of stencil paths for a constant metric.

    A direction u inside the cone of a facet of the convex hull of the unit
    stencil directions is reached by a combination of that facet's vectors
    whose length is at most |u| / dist(0, facet plane).  In two dimensions
    this is sec(half the largest angular gap).
    """
    S = stencil(k, d).astype(float)
    U = S / np.linalg.norm(S, axis=1, keepdims=True)
    if d == 1:
        return 0.0
    if d == 2:
        ang = np.sort(np.arctan2(U[:, 1], U[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        return 1.0 / math.cos(gaps.max() / 2) - 1.0
    from scipy.spatial import ConvexHull

    hull = ConvexHull(U)
    offsets = -hull.equations[:, -1]  # distance from origin to each facet plane
    return float(1.0 / offsets.min() - 1.0)


@dataclass(frozen=True)
class Lattice:
    lo: tuple
    shape: tuple
    h: float
    stencil_k: int = 3

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def point(self, idx) -> np.ndarray:
        return np.asarray(self.lo) + self.h * np.asarray(idx, dtype=float)

    def snap(self, x):
        """Nearest node index and the displacement to it."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x - np.asarray(self.lo)) / self.h).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise ValueError(f"point {x} lies outside the lattice box")
        return tuple(int(i) for i in idx), float(np.linalg.norm(self.point(idx) - x))

    def flat(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def unflat(self, n: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(n, self.shape))

    @classmethod
    def around(cls, src, dst, h: float, margin: float, stencil_k: int = 3) -> "Lattice":
        """Box covering src and dst plus a margin, with src on a node."""
        src, dst = np.asarray(src, float), np.asarray(dst, float)
        lo_pt = np.minimum(src, dst) - margin
        hi_pt = np.maximum(src, dst) + margin
        below = np.ceil((src - lo_pt) / h - 1e-9).astype(int)
        above = np.ceil((hi_pt - src) / h - 1e-9).astype(int)
        lo = src - below * h
        shape = below + above + 1
        return cls(tuple(float(v) for v in lo), tuple(int(v) for v in shape), float(h), stencil_k)


# ---------------------------------------------------------------------------
# edge weight tables


def _half_stencil(S: np.ndarray) -> np.ndarray:
    """Mask of vectors whose first nonzero entry is positive."""
    first = np.array([v[np.nonzero(v)[0][0]] for v in S])
    return first > 0


def _reverse_index(S: np.ndarray) -> np.ndarray:
    lookup = {tuple(v): i for i, v in enumerate(S)}
    return np.array([lookup[tuple(-v)] for v in S])


def weight_table(lattice: Lattice, mm, refine: int = 6, antiderivative_order: int = 10) -> np.ndarray:
    """Edge lengths under the mollified metric, indexed by (active node, stencil slot).

    Entries whose target leaves the box are inf.  Reverse edges are copied
    from their forward twin so the graph is exactly symmetric.
    """
    S = stencil(lattice.stencil_k, lattice.d)
    axes = tuple(mm.active_axes)
    h = lattice.h
    lo = np.asarray(lattice.lo)
    act_shape = tuple(lattice.shape[a] for a in axes)
    n_act = int(np.prod(act_shape)) if axes else 1
    K = len(S)
    table = np.full((n_act, K), np.inf)
    lengths = np.linalg.norm(S, axis=1) * h
    pos = _half_stencil(S)
    rev = _reverse_index(S)

    if not axes:
        theta = float(mm.theta(lo[None, :])[0])
        table[0, :] = math.sqrt(theta) * lengths
        return table

    act_idx = np.stack(np.unravel_index(np.arange(n_act), act_shape), axis=1)  # (n_act, |A|)
    SA = S[:, axes]

    if len(axes) == 1:
        # metric depends on one coordinate: exact segment integrals from an antiderivative
        ax = axes[0]
        n = act_shape[0]
        xs = lo[ax] + h * np.arange(n)
        gx, gw = leggauss(antiderivative_order)
        sub = 4
        cells = []
        for s in range(sub):
            a = xs[:-1] + h * s / sub
            pts = a[:, None] + (0.5 * gx[None, :] + 0.5) * h / sub
            cells.append(pts)
        P = np.concatenate(cells, axis=1)
        vals = np.sqrt(mm.theta_active(P.reshape(-1, 1))).reshape(P.shape)
        W = np.tile(0.5 * gw * h / sub, sub)
        F = np.concatenate([[0.0], np.cumsum(vals @ W)])
        node_sqrt = np.sqrt(mm.theta_active(xs[:, None]))
        for kk in np.nonzero(pos)[0]:
            va = SA[kk, 0]
            j = np.arange(n)
            tgt = j + va
            ok = (tgt >= 0) & (tgt < n)
            if va == 0:
                w = lengths[kk] * node_sqrt
            else:
                w = np.full(n, np.inf)
                w[ok] = lengths[kk] * np.abs(F[tgt[ok]] - F[j[ok]]) / (abs(va) * h)
            table[:, kk] = np.where(ok, w, np.inf)
    else:
        R = refine
        fine_shape = tuple((s - 1) * R + 1 for s in act_shape)
        grids = np.meshgrid(*[lo[a] + (h / R) * np.arange(m) for a, m in zip(axes, fine_shape)], indexing="ij")
        P = np.stack([g.reshape(-1) for g in grids], axis=1)
        sq = np.sqrt(mm.theta_active(P)).reshape(fine_shape)
        simpson = np.ones(R + 1)
        simpson[1:-1:2] = 4.0
        simpson[2:-1:2] = 2.0
        simpson /= 3.0 * R
        for kk in np.nonzero(pos)[0]:
            va = SA[kk]
            tgt = act_idx + va
            ok = np.all((tgt >= 0) & (tgt < np.asarray(act_shape)), axis=1)
            acc = np.zeros(int(ok.sum()))
            base = act_idx[ok] * R
            for j in range(R + 1):
                fi = base + j * va
                acc += simpson[j] * sq[tuple(fi.T)]
            col = np.full(n_act, np.inf)
            col[ok] = lengths[kk] * acc
            table[:, kk] = col

    # reverse edges: w(a, -v) = w(a - v, v)
    for kk in np.nonzero(~pos)[0]:
        fwd = rev[kk]
        va = SA[kk]
        src_idx = act_idx + va  # the edge a -> a + v is the forward edge leaving a + v
        ok = np.all((src_idx >= 0) & (src_idx < np.asarray(act_shape)), axis=1)
        col = np.full(n_act, np.inf)
        flat = np.ravel_multi_index(tuple(src_idx[ok].T), act_shape)
        col[ok] = table[flat, fwd]
        table[:, kk] = col
    return table


# ---------------------------------------------------------------------------
# Dijkstra


@njit(cache=True, nogil=True)
def _dijkstra(shape, stencil_arr, table, act_axes, act_shape, src, dst):
    d = shape.shape[0]
    n = 1
    for ax in range(d):
        n *= shape[ax]
    K = stencil_arr.shape[0]
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    coord = np.empty(d, dtype=np.int64)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while len(heap) > 0:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == dst:
            break
        rem = u
        for ax in range(d - 1, -1, -1):
            coord[ax] = rem % shape[ax]
            rem //= shape[ax]
        a = 0
        for j in range(act_axes.shape[0]):
            a = a * act_shape[j] + coord[act_axes[j]]
        for kk in range(K):
            w = table[a, kk]
            if not w < np.inf:
                continue
            v = 0
            ok = True
            for ax in range(d):
                c = coord[ax] + stencil_arr[kk, ax]
                if c < 0 or c >= shape[ax]:
                    ok = False
                    break
                v = v * shape[ax] + c
            if not ok or done[v]:
                continue
            nd = du + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist[dst], pred


class DisconnectedError(RuntimeError):
    pass


def lattice_shortest_path(lattice: Lattice, table: np.ndarray, axes, src_idx, dst_idx):
    """Length and node path between two nodes for a prepared weight table."""
    S = stencil(lattice.stencil_k, lattice.d)
    shape = np.asarray(lattice.shape, dtype=np.int64)
    act_axes = np.asarray(axes, dtype=np.int64)
    act_shape = np.asarray([lattice.shape[a] for a in axes], dtype=np.int64)
    s, t = lattice.flat(src_idx), lattice.flat(dst_idx)
    length, pred = _dijkstra(shape, np.ascontiguousarray(S), table, act_axes, act_shape, s, t)
    if not np.isfinite(length):
        raise DisconnectedError("target unreachable on the lattice")
    path = [t]
    while path[-1] != s:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return float(length), [lattice.unflat(v) for v in path]
