"""Cartesian Taylor expansion of the 3D Laplace kernel about a source center.

Multi-indices up to order ``p`` are stored in one canonical ordering (total
order first, then lexicographic in ``(k1, k2, k3)``); coefficient and moment
tables share it, so a far-field evaluation is a plain dot product of two
prefixes.  Because the ordering is by total order, the table for order ``p``
is a prefix of the table for any larger order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from .errors import MACViolationError, SingularEvaluationError
from .mesh import HierarchyTree
from .quadrature import LeafQuadrature

__all__ = [
    "n_terms",
    "multi_index_enumerate",
    "multi_index_position",
    "MultiIndexTable",
    "index_table",
    "CoeffTable",
    "MomentTable",
    "NodeMoments",
    "taylor_coeffs",
    "compute_moments",
    "far_field_eval",
    "gegenbauer",
    "cartesian_term_sum",
]

INV_4PI = 1.0 / (4.0 * math.pi)


def n_terms(p: int) -> int:
    """Number of multi-indices with total order <= p."""
    return (p + 1) * (p + 2) * (p + 3) // 6


def multi_index_position(k) -> int:
    k1, k2, k3 = (int(v) for v in k)
    t = k1 + k2 + k3
    # indices of order t with first component < k1
    before = k1 * (t + 1) - k1 * (k1 - 1) // 2
    return t * (t + 1) * (t + 2) // 6 + before + k2


def multi_index_enumerate(p: int) -> np.ndarray:
    if p < 0:
        raise ValueError("order must be >= 0")
    out = [
        (k1, k2, t - k1 - k2)
        for t in range(p + 1)
        for k1 in range(t + 1)
        for k2 in range(t - k1 + 1)
    ]
    return np.array(out, dtype=np.int64).reshape(-1, 3)


@dataclass(frozen=True)
class MultiIndexTable:
    """Index arithmetic for the recurrence and the monomial build-up.

    ``minus1[j, i]`` / ``minus2[j, i]`` give the position of ``k - e_i`` /
    ``k - 2 e_i`` or ``pad`` (a slot kept at zero) when that index would be
    negative.  ``grow_parent[j]`` and ``grow_dir[j]`` express ``y^k`` as
    ``y^(k - e_d) * y_d``.
    """

    order: int
    indices: np.ndarray
    total: np.ndarray
    minus1: np.ndarray
    minus2: np.ndarray
    c1: np.ndarray  # (2|k| - 1) / |k|
    c2: np.ndarray  # (|k| - 1) / |k|
    grow_parent: np.ndarray
    grow_dir: np.ndarray

    @property
    def pad(self) -> int:
        return int(self.indices.shape[0])


@lru_cache(maxsize=64)
def index_table(p: int) -> MultiIndexTable:
    idx = multi_index_enumerate(p)
    n = idx.shape[0]
    total = idx.sum(axis=1)
    minus1 = np.full((n, 3), n, np.int64)
    minus2 = np.full((n, 3), n, np.int64)
    grow_parent = np.full(n, -1, np.int64)
    grow_dir = np.zeros(n, np.int64)
    for j, k in enumerate(idx):
        for i in range(3):
            if k[i] >= 1:
                km = k.copy()
                km[i] -= 1
                minus1[j, i] = multi_index_position(km)
                if grow_parent[j] < 0:
                    grow_parent[j] = minus1[j, i]
                    grow_dir[j] = i
            if k[i] >= 2:
                km = k.copy()
                km[i] -= 2
                minus2[j, i] = multi_index_position(km)
    t = np.maximum(total, 1).astype(np.float64)
    c1 = (2.0 * total - 1.0) / t
    c2 = (total - 1.0) / t
    c1[0] = c2[0] = 0.0
    return MultiIndexTable(p, idx, total, minus1, minus2, c1, c2, grow_parent, grow_dir)


@nb.njit(cache=True)
def fill_coeffs(d0, d1, d2, nt, minus1, minus2, c1, c2, out):
    """Write a^k for the first ``nt`` multi-indices into ``out``.

    ``out`` must be long enough to hold the pad slot of the index table and
    that slot must be zero.
    """
    r2 = d0 * d0 + d1 * d1 + d2 * d2
    inv_r2 = 1.0 / r2
    out[0] = INV_4PI / math.sqrt(r2)
    for j in range(1, nt):
        s1 = d0 * out[minus1[j, 0]] + d1 * out[minus1[j, 1]] + d2 * out[minus1[j, 2]]
        s2 = out[minus2[j, 0]] + out[minus2[j, 1]] + out[minus2[j, 2]]
        out[j] = (c1[j] * s1 - c2[j] * s2) * inv_r2


@nb.njit(cache=True)
def expand_dot(d0, d1, d2, nt, minus1, minus2, c1, c2, moments, out):
    """Coefficient recurrence fused with the dot product against ``moments``."""
    r2 = d0 * d0 + d1 * d1 + d2 * d2
    inv_r2 = 1.0 / r2
    a0 = INV_4PI / math.sqrt(r2)
    out[0] = a0
    acc = a0 * moments[0]
    for j in range(1, nt):
        s1 = d0 * out[minus1[j, 0]] + d1 * out[minus1[j, 1]] + d2 * out[minus1[j, 2]]
        s2 = out[minus2[j, 0]] + out[minus2[j, 1]] + out[minus2[j, 2]]
        a = (c1[j] * s1 - c2[j] * s2) * inv_r2
        out[j] = a
        acc += a * moments[j]
    return acc


@dataclass(frozen=True)
class CoeffTable:
    target: np.ndarray
    center: np.ndarray
    max_order: int
    values: np.ndarray


def taylor_coeffs(x, y_c, p: int) -> CoeffTable:
    """Taylor coefficients a^k = D_y^k G(x, y_c) / k! for ``||k|| <= p``."""
    if p < 0:
        raise ValueError("order must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    y_c = np.asarray(y_c, dtype=np.float64)
    d = x - y_c
    if not np.any(d):
        raise SingularEvaluationError("target coincides with expansion center")
    tab = index_table(p)
    buf = np.zeros(tab.pad + 1)
    fill_coeffs(d[0], d[1], d[2], tab.pad, tab.minus1, tab.minus2, tab.c1, tab.c2, buf)
    return CoeffTable(target=x, center=y_c, max_order=p, values=buf[: tab.pad].copy())


@dataclass(frozen=True)
class MomentTable:
    node: int
    center: np.ndarray
    max_order: int
    values: np.ndarray


@dataclass(frozen=True)
class NodeMoments:
    """Moments of every tree node, one row per node in canonical ordering."""

    max_order: int
    values: np.ndarray  # (n_nodes, n_terms(max_order))
    centers: np.ndarray  # (n_nodes, 3)

    def __getitem__(self, node: int) -> MomentTable:
        return MomentTable(int(node), self.centers[node], self.max_order, self.values[node])


@nb.njit(cache=True, parallel=True)
def _moments_kernel(level, level_offsets, leaf_offset, depth, centers, qpts, qfw, gparent, gdir, out):
    n_nodes, nt = out.shape
    nq = qpts.shape[1]
    for node in nb.prange(n_nodes):
        lvl = level[node]
        span = 1
        for _ in range(depth - 1 - lvl):
            span *= 8
        first = (node - level_offsets[lvl]) * span + leaf_offset
        mono = np.empty(nt)
        cx, cy, cz = centers[node, 0], centers[node, 1], centers[node, 2]
        for leaf in range(first, first + span):
            li = leaf - leaf_offset
            for q in range(nq):
                d = (qpts[li, q, 0] - cx, qpts[li, q, 1] - cy, qpts[li, q, 2] - cz)
                mono[0] = qfw[li, q]
                out[node, 0] += mono[0]
                for j in range(1, nt):
                    v = mono[gparent[j]] * d[gdir[j]]
                    mono[j] = v
                    out[node, j] += v


def compute_moments(tree: HierarchyTree, leaf_quad: LeafQuadrature, p_max: int) -> NodeMoments:
    """m_c^k about each node's barycenter, accumulated from descendant-leaf points."""
    tab = index_table(p_max)
    out = np.zeros((tree.n_nodes, tab.pad))
    _moments_kernel(
        tree.level,
        tree.level_offsets,
        tree.leaf_offset,
        tree.depth,
        tree.barycenter,
        leaf_quad.points,
        leaf_quad.weighted_values(),
        tab.grow_parent,
        tab.grow_dir,
        out,
    )
    return NodeMoments(max_order=p_max, values=out, centers=tree.barycenter)


def far_field_eval(coeffs: CoeffTable, moments: MomentTable, p: int) -> float:
    if p < 0 or p > min(coeffs.max_order, moments.max_order):
        raise ValueError(
            f"order {p} exceeds available tables (coeffs {coeffs.max_order}, moments {moments.max_order})"
        )
    if not np.array_equal(coeffs.center, moments.center):
        raise ValueError("coefficients and moments use different expansion centers")
    nt = n_terms(p)
    return float(np.dot(coeffs.values[:nt], moments.values[:nt]))


def gegenbauer(k: int, y):
    """C_k^{1/2}(y) (Legendre polynomial) by three-term recurrence."""
    if k < 0:
        raise ValueError("degree must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    prev, cur = np.ones_like(y), y.copy()
    if k == 0:
        return prev if prev.ndim else float(prev)
    for j in range(2, k + 1):
        prev, cur = cur, ((2 * j - 1) * y * cur - (j - 1) * prev) / j
    return cur if cur.ndim else float(cur)


def cartesian_term_sum(x, y, y_c, k: int) -> float:
    """Order-k part of the Taylor series of 1/|x - y| about y_c, evaluated at y."""
    x, y, y_c = (np.asarray(v, dtype=np.float64) for v in (x, y, y_c))
    dy = y - y_c
    if np.linalg.norm(dy) >= np.linalg.norm(x - y_c):
        raise MACViolationError("need |y - y_c| < |x - y_c| for the series to converge")
    tab = taylor_coeffs(x, y_c, k)
    lo = n_terms(k - 1) if k > 0 else 0
    mono = np.prod(dy[None, :] ** multi_index_enumerate(k)[lo:], axis=1)
    return float(4.0 * math.pi * np.dot(tab.values[lo:], mono))
