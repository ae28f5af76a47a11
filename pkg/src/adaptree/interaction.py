"""Vertex-sharing neighbors, interaction lists and MAC geometry.

Lists are stored per node rather than per leaf.  The far field of node ``t``
at its own level is the set of children of its parent's neighbors that do not
touch ``t`` (for roots: the roots that do not touch it).  A leaf's far field is
the union of these per-node lists over the leaf and all its ancestors, so the
storage is proportional to the node count while per-leaf views are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numba as nb
import numpy as np

from .errors import CoverageError, SingularEvaluationError
from .mesh import HierarchyTree, TreeNode

__all__ = [
    "InteractionLists",
    "MacGeometry",
    "leaf_neighbors",
    "level_neighbors",
    "build_interaction_lists",
    "mac_geometry",
    "mac_scan",
    "dump_lists",
]


@nb.njit(cache=True)
def _incidence(tets, nv):
    deg = np.zeros(nv + 1, np.int64)
    for e in range(tets.shape[0]):
        for a in range(4):
            deg[tets[e, a] + 1] += 1
    ptr = np.cumsum(deg)
    fill = ptr[:-1].copy()
    idx = np.empty(ptr[-1], np.int64)
    for e in range(tets.shape[0]):
        for a in range(4):
            v = tets[e, a]
            idx[fill[v]] = e
            fill[v] += 1
    return ptr, idx


@nb.njit(cache=True)
def _neighbors_kernel(tets, nv, base):
    vptr, vidx = _incidence(tets, nv)
    n = tets.shape[0]
    counts = np.zeros(n + 1, np.int64)
    bound = 0
    for e in range(n):
        for a in range(4):
            v = tets[e, a]
            bound += vptr[v + 1] - vptr[v]
    scratch = np.empty(bound, np.int64)
    pos = 0
    starts = np.empty(n, np.int64)
    for e in range(n):
        s = pos
        for a in range(4):
            v = tets[e, a]
            for j in range(vptr[v], vptr[v + 1]):
                scratch[pos] = vidx[j]
                pos += 1
        block = np.sort(scratch[s:pos])
        m = 0
        for j in range(block.shape[0]):
            if j == 0 or block[j] != block[j - 1]:
                scratch[s + m] = block[j] + base
                m += 1
        starts[e] = s
        counts[e + 1] = m
    ptr = np.cumsum(counts)
    idx = np.empty(ptr[-1], np.int64)
    for e in range(n):
        idx[ptr[e] : ptr[e + 1]] = scratch[starts[e] : starts[e] + counts[e + 1]]
    return ptr, idx


def level_neighbors(tree: HierarchyTree, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """CSR lists of same-level nodes sharing at least one vertex id (self included)."""
    lo, hi = int(tree.level_offsets[level]), int(tree.level_offsets[level + 1])
    return _neighbors_kernel(tree.tets[lo:hi], tree.vertices.shape[0], lo)


def leaf_neighbors(tree: HierarchyTree) -> List[np.ndarray]:
    ptr, idx = level_neighbors(tree, tree.depth - 1)
    return [idx[ptr[i] : ptr[i + 1]] for i in range(ptr.shape[0] - 1)]


@nb.njit(cache=True)
def _far_kernel(n_nodes, n_roots, parent, children, nbr_ptr, nbr_idx, count_only, far_ptr, far_idx):
    """Sorted difference of candidates and own neighbors, per node."""
    counts = np.zeros(n_nodes + 1, np.int64)
    for t in range(n_nodes):
        own_lo, own_hi = nbr_ptr[t], nbr_ptr[t + 1]
        o = own_lo
        c = 0
        w = 0
        if not count_only:
            w = far_ptr[t]
        p = parent[t]
        if p < 0:
            for cand in range(n_roots):
                while o < own_hi and nbr_idx[o] < cand:
                    o += 1
                if o < own_hi and nbr_idx[o] == cand:
                    continue
                if not count_only:
                    far_idx[w + c] = cand
                c += 1
        else:
            for j in range(nbr_ptr[p], nbr_ptr[p + 1]):
                b = nbr_idx[j]
                for q in range(8):
                    cand = children[b, q]
                    while o < own_hi and nbr_idx[o] < cand:
                        o += 1
                    if o < own_hi and nbr_idx[o] == cand:
                        continue
                    if not count_only:
                        far_idx[w + c] = cand
                    c += 1
        counts[t + 1] = c
    return counts


@nb.njit(cache=True)
def _validate_kernel(level, parent, level_offsets, leaf_offset, depth, nbr_ptr, nbr_idx, far_ptr, far_idx):
    """Return -1 when lists partition the leaves for every leaf, else a bad node id."""
    n_nodes = parent.shape[0]
    # neighbors of a node lie below neighbors of its parent
    for t in range(n_nodes):
        p = parent[t]
        if p < 0:
            continue
        for j in range(nbr_ptr[t], nbr_ptr[t + 1]):
            bp = parent[nbr_idx[j]]
            lo, hi = nbr_ptr[p], nbr_ptr[p + 1]
            while lo < hi:
                mid = (lo + hi) // 2
                if nbr_idx[mid] < bp:
                    lo = mid + 1
                else:
                    hi = mid
            if lo == nbr_ptr[p + 1] or nbr_idx[lo] != bp:
                return t
    spans = np.ones(depth, np.int64)
    for lvl in range(depth - 2, -1, -1):
        spans[lvl] = spans[lvl + 1] * 8
    n_leaves = n_nodes - leaf_offset
    for leaf in range(leaf_offset, n_nodes):
        covered = nbr_ptr[leaf + 1] - nbr_ptr[leaf]
        a = leaf
        while a >= 0:
            for j in range(far_ptr[a], far_ptr[a + 1]):
                covered += spans[level[far_idx[j]]]
            a = parent[a]
        if covered != n_leaves:
            return leaf
    return -1


@dataclass(frozen=True)
class InteractionLists:
    """Neighbor and far-field lists for every node of a full tree (CSR, global ids)."""

    tree: HierarchyTree
    nbr_ptr: np.ndarray
    nbr_idx: np.ndarray
    far_ptr: np.ndarray
    far_idx: np.ndarray

    def neighbors(self, node: int) -> np.ndarray:
        return self.nbr_idx[self.nbr_ptr[node] : self.nbr_ptr[node + 1]]

    def node_far(self, node: int) -> np.ndarray:
        return self.far_idx[self.far_ptr[node] : self.far_ptr[node + 1]]

    def far_by_level(self, leaf: int) -> Dict[int, np.ndarray]:
        """Far-field nodes of ``leaf`` grouped by tree level."""
        out = {}
        a = int(leaf)
        while a >= 0:
            out[int(self.tree.level[a])] = self.node_far(a)
            a = int(self.tree.parent[a])
        return dict(sorted(out.items()))

    def far_field(self, leaf: int) -> List[Tuple[int, int]]:
        return [(int(k), lvl) for lvl, nodes in self.far_by_level(leaf).items() for k in nodes]

    def level_counts(self, leaf: int) -> Dict[int, int]:
        return {lvl: int(nodes.size) for lvl, nodes in self.far_by_level(leaf).items()}

    @property
    def n_far_entries(self) -> int:
        return int(self.far_idx.shape[0])


def build_interaction_lists(tree: HierarchyTree, validate: bool = True) -> InteractionLists:
    ptrs, idxs = [], []
    for lvl in range(tree.depth):
        ptr, idx = level_neighbors(tree, lvl)
        ptrs.append(ptr[1:] - ptr[:-1])
        idxs.append(idx)
    counts = np.concatenate(ptrs)
    nbr_ptr = np.zeros(tree.n_nodes + 1, np.int64)
    np.cumsum(counts, out=nbr_ptr[1:])
    nbr_idx = np.concatenate(idxs)

    n_roots = int(tree.level_offsets[1])
    dummy = np.zeros(0, np.int64)
    fc = _far_kernel(tree.n_nodes, n_roots, tree.parent, tree.children, nbr_ptr, nbr_idx, True, dummy, dummy)
    far_ptr = np.cumsum(fc)
    far_idx = np.empty(far_ptr[-1], np.int64)
    _far_kernel(tree.n_nodes, n_roots, tree.parent, tree.children, nbr_ptr, nbr_idx, False, far_ptr, far_idx)
    lists = InteractionLists(tree, nbr_ptr, nbr_idx, far_ptr, far_idx)
    if validate:
        bad = _validate_kernel(
            tree.level, tree.parent, tree.level_offsets, tree.leaf_offset, tree.depth,
            nbr_ptr, nbr_idx, far_ptr, far_idx,
        )
        if bad >= 0:
            raise CoverageError(f"interaction lists do not partition the leaves at node {bad}")
    return lists


@dataclass(frozen=True)
class MacGeometry:
    r_y: float
    R_K: float

    @property
    def r_K(self) -> float:
        return self.r_y / self.R_K


def mac_geometry(target, node: TreeNode) -> MacGeometry:
    dist = float(np.linalg.norm(np.asarray(target, dtype=np.float64) - node.barycenter))
    if dist == 0.0:
        raise SingularEvaluationError(f"target coincides with barycenter of node {node.index}")
    return MacGeometry(r_y=node.max_radius, R_K=dist)


@nb.njit(cache=True)
def _mac_scan_kernel(parent, leaf_offset, bary, radius, far_ptr, far_idx):
    worst = 0.0
    for leaf in range(leaf_offset, parent.shape[0]):
        a = leaf
        while a >= 0:
            for j in range(far_ptr[a], far_ptr[a + 1]):
                k = far_idx[j]
                d = 0.0
                for i in range(3):
                    d += (bary[leaf, i] - bary[k, i]) ** 2
                r = radius[k] / np.sqrt(d)
                if r > worst:
                    worst = r
            a = parent[a]
    return worst


def mac_scan(lists: InteractionLists) -> float:
    """Largest r_K over all (leaf barycenter, far-field node) pairs."""
    t = lists.tree
    return float(_mac_scan_kernel(t.parent, t.leaf_offset, t.barycenter, t.max_radius, lists.far_ptr, lists.far_idx))


def dump_lists(lists: InteractionLists, path, leaves=None) -> None:
    """Text dump: one ``leaf <id> nbr ...`` line and one ``level <l> ...`` line per level."""
    t = lists.tree
    if leaves is None:
        leaves = t.leaves
    with open(path, "w") as fh:
        for leaf in leaves:
            fh.write(f"leaf {int(leaf)} nbr " + " ".join(map(str, lists.neighbors(leaf))) + "\n")
            for lvl, nodes in lists.far_by_level(leaf).items():
                fh.write(f"  level {lvl} " + " ".join(map(str, nodes)) + "\n")
