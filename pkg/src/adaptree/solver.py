"""Direct summation, the p-adaptive treecode and its direct-summation variant.

All three evaluators share one pairwise quadrature routine, and the treecode
sums its near field over leaf ids in ascending order.  A treecode run whose
far field is empty (or fully demoted) therefore reproduces the direct sum bit
for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .errors import MACViolationError
from .expansion import INV_4PI, NodeMoments, expand_dot, index_table, n_terms
from .interaction import InteractionLists, MacGeometry, build_interaction_lists
from .mesh import HierarchyTree
from .quadrature import LeafQuadrature, ScalarField, leaf_quadrature

__all__ = [
    "FALLBACK",
    "MODES",
    "SolverConfig",
    "Solution",
    "Prepared",
    "prepare",
    "direct_solve",
    "treecode1_solve",
    "treecode2_solve",
    "treecode2_far_field",
    "solve",
    "select_order",
    "order_bound",
    "estimate_f_bound",
    "calibrate_pmax",
    "Calibration",
    "warmup",
]

FALLBACK = -1
MODES = ("direct", "tc1", "tc2")
_MODE_CODE = {"tc1": 1, "tc2": 2}
SELECT_CAP = 200

# per-target statistics slots
_BOUND, _CLAMPED, _FALLBACK, _DEMOTED, _MACMAX, _NFAR = range(6)
_NSTATS = 6


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-1
    p_max: int = 10
    f_bound: float = 1.0
    mode: str = "tc1"
    uniform_p: Optional[int] = None
    mac_limit: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.p_max < 0:
            raise ValueError("p_max must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.uniform_p is not None and not 0 <= self.uniform_p <= self.p_max:
            raise ValueError("uniform_p must lie in [0, p_max]")

    @property
    def c_const(self) -> float:
        return abs(self.f_bound) / (4.0 * math.pi)


@dataclass
class Solution:
    values: np.ndarray
    order_histogram: np.ndarray  # count of far-field expansions per order
    fallback_count: int = 0
    clamped_count: int = 0
    demoted_count: int = 0
    bound: Optional[np.ndarray] = None  # per-target bound with the orders used
    clamped_per_target: Optional[np.ndarray] = None
    mac_max: float = 0.0
    prep_seconds: float = 0.0
    eval_seconds: float = 0.0

    @property
    def n_expansions(self) -> int:
        return int(self.order_histogram.sum())


@dataclass(frozen=True)
class Prepared:
    """Everything the evaluation stage reads, built once per (mesh, source, P_max)."""

    tree: HierarchyTree
    lists: InteractionLists
    leaf_quad: LeafQuadrature
    moments: NodeMoments
    prep_seconds: float


def order_bound(r: float, R: float, volume: float, p: int) -> float:
    """Single-element truncation bound r^(p+1) |K| / (R (1 - r)), without C."""
    return r ** (p + 1) * volume / (R * (1.0 - r))


def select_order(geom: MacGeometry, volume: float, cfg: SolverConfig, n: int, M: int, s: int = 0) -> int:
    """Smallest order meeting the accuracy criterion, or FALLBACK above P_max."""
    r = geom.r_K
    if not r < 1.0:
        raise MACViolationError(f"r_K = {r} >= 1; demote the node before expanding")
    if n < 1 or M < 1 or s < 0:
        raise ValueError("need n >= 1, M >= 1, s >= 0")
    rhs = cfg.epsilon / (8.0**s * n * cfg.c_const * M)
    p = _select(r, geom.R_K, volume, rhs, SELECT_CAP)
    return FALLBACK if p > cfg.p_max else p


@nb.njit(cache=True)
def _select(r, R, vol, rhs, cap):
    lhs = vol * r / (R * (1.0 - r))
    p = 0
    while not lhs < rhs:
        if p >= cap:
            return cap + 1
        lhs *= r
        p += 1
    return p


@nb.njit(cache=True)
def _pair(x0, x1, x2, qpts, qfw, li):
    acc = 0.0
    for q in range(qfw.shape[1]):
        d0 = x0 - qpts[li, q, 0]
        d1 = x1 - qpts[li, q, 1]
        d2 = x2 - qpts[li, q, 2]
        acc += qfw[li, q] / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    return acc * INV_4PI


@nb.njit(cache=True, parallel=True)
def _direct_kernel(targets, qpts, qfw, out):
    n_src = qfw.shape[0]
    for i in nb.prange(targets.shape[0]):
        x0, x1, x2 = targets[i, 0], targets[i, 1], targets[i, 2]
        acc = 0.0
        for li in range(n_src):
            acc += _pair(x0, x1, x2, qpts, qfw, li)
        out[i] = acc


@nb.njit(cache=True)
def _eval_far_node(
    x0, x1, x2, top, n_l, mode, uniform_p, p_max, rhs0, c_const, mac_limit,
    children, bary, radius, volume, leaf_offset,
    qpts, qfw, moments, minus1, minus2, c1, c2, nt_of,
    coeff_buf, stack_node, stack_s, near_buf, near_n, stats, hist,
):
    """Contribution of one interaction-list node; demoted leaves go to ``near_buf``."""
    total = 0.0
    sp = 0
    stack_node[0] = top
    stack_s[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        k = stack_node[sp]
        s = stack_s[sp]
        d0 = x0 - bary[k, 0]
        d1 = x1 - bary[k, 1]
        d2 = x2 - bary[k, 2]
        R = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        is_leaf = children[k, 0] < 0
        r = radius[k] / R if R > 0.0 else math.inf
        if not r < mac_limit:
            stats[_DEMOTED] += 1.0
            if is_leaf:
                near_buf[near_n] = k - leaf_offset
                near_n += 1
            else:
                for c in range(8):
                    stack_node[sp] = children[k, c]
                    stack_s[sp] = s + 1
                    sp += 1
            continue
        if r > stats[_MACMAX]:
            stats[_MACMAX] = r
        rhs = rhs0 / (8.0**s)
        if uniform_p >= 0:
            p = uniform_p
        else:
            p = _select(r, R, volume[k], rhs, p_max)
        if p > p_max:
            if mode == 1:
                p = p_max
                stats[_CLAMPED] += 1.0
            elif is_leaf:
                stats[_FALLBACK] += 1.0
                total += _pair(x0, x1, x2, qpts, qfw, k - leaf_offset)
                continue
            else:
                for c in range(8):
                    stack_node[sp] = children[k, c]
                    stack_s[sp] = s + 1
                    sp += 1
                continue
        total += expand_dot(d0, d1, d2, nt_of[p], minus1, minus2, c1, c2, moments[k], coeff_buf)
        stats[_BOUND] += c_const * r ** (p + 1) * volume[k] / (R * (1.0 - r))
        hist[p] += 1
    return total, near_n


@nb.njit(cache=True, parallel=True)
def _tree_kernel(
    mode, uniform_p, p_max, eps, c_const, mac_limit,
    parent, children, level, bary, radius, volume, leaf_offset, depth,
    nbr_ptr, nbr_idx, far_ptr, far_idx,
    qpts, qfw, moments, minus1, minus2, c1, c2, nt_of, pad,
    n_chunks, out_u, out_stats, hist,
):
    n_leaves = qfw.shape[0]
    chunk = (n_leaves + n_chunks - 1) // n_chunks
    stack_cap = 8 * depth + 8
    for ch in nb.prange(n_chunks):
        coeff_buf = np.zeros(pad + 1)
        stack_node = np.empty(stack_cap, np.int64)
        stack_s = np.empty(stack_cap, np.int64)
        near_buf = np.empty(n_leaves, np.int64)
        for li in range(ch * chunk, min(n_leaves, (ch + 1) * chunk)):
            leaf = li + leaf_offset
            x0, x1, x2 = bary[leaf, 0], bary[leaf, 1], bary[leaf, 2]
            stats = out_stats[li]
            near_n = 0
            for j in range(nbr_ptr[leaf], nbr_ptr[leaf + 1]):
                near_buf[near_n] = nbr_idx[j] - leaf_offset
                near_n += 1
            far = 0.0
            a = leaf
            while a >= 0:
                n_l = far_ptr[a + 1] - far_ptr[a]
                if n_l > 0:
                    rhs0 = eps / (n_l * c_const * depth)
                    for j in range(far_ptr[a], far_ptr[a + 1]):
                        v, near_n = _eval_far_node(
                            x0, x1, x2, far_idx[j], n_l, mode, uniform_p, p_max, rhs0, c_const,
                            mac_limit, children, bary, radius, volume, leaf_offset,
                            qpts, qfw, moments, minus1, minus2, c1, c2, nt_of,
                            coeff_buf, stack_node, stack_s, near_buf, near_n, stats, hist[ch],
                        )
                        far += v
                    stats[_NFAR] += n_l
                a = parent[a]
            near_sorted = np.sort(near_buf[:near_n])
            near = 0.0
            for j in range(near_n):
                near += _pair(x0, x1, x2, qpts, qfw, near_sorted[j])
            out_u[li] = near + far


def direct_solve(tree: HierarchyTree, leaf_quad: LeafQuadrature) -> Solution:
    """u at every leaf barycenter by summing all leaves' quadrature points."""
    targets = np.ascontiguousarray(tree.barycenter[tree.leaf_offset :])
    out = np.empty(targets.shape[0])
    t0 = time.perf_counter()
    _direct_kernel(targets, leaf_quad.points, leaf_quad.weighted_values(), out)
    dt = time.perf_counter() - t0
    return Solution(values=out, order_histogram=np.zeros(1, np.int64), eval_seconds=dt)


def _run_tree(tree, lists, moments, leaf_quad, cfg: SolverConfig, mode: int) -> Solution:
    if moments.max_order < cfg.p_max:
        raise ValueError(f"moments only reach order {moments.max_order} < p_max {cfg.p_max}")
    tab = index_table(moments.max_order)
    nt_of = np.array([n_terms(p) for p in range(cfg.p_max + 1)], np.int64)
    n_leaves = tree.n_leaves
    n_chunks = max(1, min(n_leaves, 4 * nb.get_num_threads()))
    out_u = np.empty(n_leaves)
    stats = np.zeros((n_leaves, _NSTATS))
    hist = np.zeros((n_chunks, cfg.p_max + 1), np.int64)
    uniform_p = -1 if cfg.uniform_p is None else int(cfg.uniform_p)
    t0 = time.perf_counter()
    _tree_kernel(
        mode, uniform_p, cfg.p_max, cfg.epsilon, cfg.c_const, cfg.mac_limit,
        tree.parent, tree.children, tree.level, tree.barycenter, tree.max_radius, tree.volume,
        tree.leaf_offset, tree.depth,
        lists.nbr_ptr, lists.nbr_idx, lists.far_ptr, lists.far_idx,
        leaf_quad.points, leaf_quad.weighted_values(), moments.values,
        tab.minus1, tab.minus2, tab.c1, tab.c2, nt_of, tab.pad,
        n_chunks, out_u, stats, hist,
    )
    dt = time.perf_counter() - t0
    return Solution(
        values=out_u,
        order_histogram=hist.sum(axis=0),
        fallback_count=int(stats[:, _FALLBACK].sum()),
        clamped_count=int(stats[:, _CLAMPED].sum()),
        demoted_count=int(stats[:, _DEMOTED].sum()),
        bound=stats[:, _BOUND].copy(),
        clamped_per_target=stats[:, _CLAMPED].astype(np.int64),
        mac_max=float(stats[:, _MACMAX].max()) if n_leaves else 0.0,
        eval_seconds=dt,
    )


def treecode1_solve(tree, lists, moments, leaf_quad, cfg: SolverConfig) -> Solution:
    """p-adaptive treecode; orders above P_max are clamped to P_max."""
    return _run_tree(tree, lists, moments, leaf_quad, cfg, 1)


def treecode2_solve(tree, lists, moments, leaf_quad, cfg: SolverConfig) -> Solution:
    """Treecode that descends (or sums directly at leaves) instead of clamping."""
    return _run_tree(tree, lists, moments, leaf_quad, cfg, 2)


def solve(prep: Prepared, cfg: SolverConfig) -> Solution:
    if cfg.mode == "direct":
        sol = direct_solve(prep.tree, prep.leaf_quad)
    elif cfg.mode == "tc1":
        sol = treecode1_solve(prep.tree, prep.lists, prep.moments, prep.leaf_quad, cfg)
    else:
        sol = treecode2_solve(prep.tree, prep.lists, prep.moments, prep.leaf_quad, cfg)
    sol.prep_seconds = prep.prep_seconds
    return sol


def treecode2_far_field(
    target, node: int, tree: HierarchyTree, moments: NodeMoments, leaf_quad: LeafQuadrature,
    cfg: SolverConfig, n: int, M: int, s: int = 0,
) -> float:
    """Far-field contribution of one node to one target, as Treecode 2 computes it."""
    x = np.asarray(target, dtype=np.float64)
    tab = index_table(moments.max_order)
    nt_of = np.array([n_terms(p) for p in range(cfg.p_max + 1)], np.int64)
    stats = np.zeros(_NSTATS)
    hist = np.zeros(cfg.p_max + 1, np.int64)
    near_buf = np.empty(tree.n_leaves, np.int64)
    cap = 8 * tree.depth + 8
    rhs0 = cfg.epsilon / (8.0**s * n * cfg.c_const * M)
    qfw = leaf_quad.weighted_values()
    uniform_p = -1 if cfg.uniform_p is None else int(cfg.uniform_p)
    val, near_n = _eval_far_node(
        x[0], x[1], x[2], int(node), n, 2, uniform_p, cfg.p_max, rhs0, cfg.c_const, cfg.mac_limit,
        tree.children, tree.barycenter, tree.max_radius, tree.volume, tree.leaf_offset,
        leaf_quad.points, qfw, moments.values, tab.minus1, tab.minus2, tab.c1, tab.c2, nt_of,
        np.zeros(tab.pad + 1), np.empty(cap, np.int64), np.empty(cap, np.int64),
        near_buf, 0, stats, hist,
    )
    for li in np.sort(near_buf[:near_n]):
        val += _pair(x[0], x[1], x[2], leaf_quad.points, qfw, li)
    return float(val)


def estimate_f_bound(leaf_quad: LeafQuadrature) -> float:
    """max |f| over the cached quadrature points."""
    if leaf_quad.values is None:
        raise ValueError("no source values attached")
    return float(np.abs(leaf_quad.values).max())


def prepare(
    tree: HierarchyTree, source: ScalarField, p_max: int, lists: Optional[InteractionLists] = None
) -> Prepared:
    """Build interaction lists, cached quadrature and moments, timing the lot."""
    from .expansion import compute_moments

    t0 = time.perf_counter()
    if lists is None:
        lists = build_interaction_lists(tree)
    lq = leaf_quadrature(tree, source)
    moments = compute_moments(tree, lq, p_max)
    return Prepared(tree, lists, lq, moments, time.perf_counter() - t0)


# -- P_max calibration --------------------------------------------------------


@nb.njit(cache=True)
def _time_expand(d0, d1, d2, nt, minus1, minus2, c1, c2, mom, buf, reps):
    acc = 0.0
    for i in range(reps):
        acc += expand_dot(d0 + i * 1e-300, d1, d2, nt, minus1, minus2, c1, c2, mom, buf)
    return acc


@nb.njit(cache=True)
def _time_direct(x0, x1, x2, qpts, qfw, li, reps, point_cost):
    acc = 0.0
    for i in range(reps):
        for c in range(point_cost):
            acc += _pair(x0 + (i + c) * 1e-300, x1, x2, qpts, qfw, li)
    return acc


@dataclass(frozen=True)
class Calibration:
    p_max: int
    crossed: bool
    t_direct: float
    t_orders: dict = field(default_factory=dict)


def calibrate_pmax(
    target, node: int, tree: HierarchyTree, moments: NodeMoments, leaf_quad: LeafQuadrature,
    orders: Sequence[int], leaf: Optional[int] = None, repeats: int = 3, reps: int = 2000,
    point_cost: int = 1,
) -> Calibration:
    """Smallest order whose expansion costs more than a direct pair sum.

    The expansion is timed including the coefficient recurrence.  The direct
    side sums a leaf's quadrature points (``leaf`` defaults to the first leaf
    below ``node``); ``point_cost`` repeats the kernel per point to emulate a
    more expensive direct path.  Each time is the median of ``repeats``
    measurements of ``reps`` evaluations.
    """
    x = np.asarray(target, dtype=np.float64)
    orders = sorted(int(p) for p in orders)
    if orders[-1] > moments.max_order:
        raise ValueError("orders exceed the available moments")
    tab = index_table(moments.max_order)
    d = x - tree.barycenter[node]
    mom = moments.values[node]
    buf = np.zeros(tab.pad + 1)
    qfw = leaf_quad.weighted_values()
    if leaf is None:
        leaf = tree.leaf_block(node)[0]
    li = int(leaf) - tree.leaf_offset

    def median_time(fn):
        fn(1)
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(reps)
            samples.append((time.perf_counter() - t0) / reps)
        return float(np.median(samples))

    t_ds = median_time(lambda k: _time_direct(x[0], x[1], x[2], leaf_quad.points, qfw, li, k, point_cost))
    table = {}
    chosen = None
    for p in orders:
        nt = n_terms(p)
        table[p] = median_time(
            lambda k: _time_expand(d[0], d[1], d[2], nt, tab.minus1, tab.minus2, tab.c1, tab.c2, mom, buf, k)
        )
        if chosen is None and table[p] > t_ds:
            chosen = p
    if chosen is None:
        return Calibration(orders[-1], False, t_ds, table)
    return Calibration(chosen, True, t_ds, table)


def warmup() -> None:
    """Trigger JIT compilation on a tiny problem so later timings exclude it."""
    from .mesh import uniform_tree

    tree = uniform_tree(cells=2, refine=1)
    prep = prepare(tree, lambda y: np.ones(len(y)), 2)
    for mode in MODES:
        solve(prep, SolverConfig(epsilon=1e-2, p_max=2, f_bound=1.0, mode=mode))
