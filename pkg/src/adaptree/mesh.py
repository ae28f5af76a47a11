"""Tetrahedral meshes and the octree-of-tetrahedra built by midpoint refinement.

The tree is stored level by level in flat arrays.  Nodes of level ``l`` occupy
the index range ``level_offsets[l]:level_offsets[l + 1]`` and the eight
children of node ``i`` at level ``l`` sit at
``level_offsets[l + 1] + 8 * (i - level_offsets[l]) + c``.  With this layout
the descendant leaves of any node form one contiguous block, which the moment
and solver kernels rely on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidDomainError

__all__ = [
    "TetMesh",
    "TreeNode",
    "HierarchyTree",
    "build_box_mesh",
    "build_tree",
    "refine_uniform",
    "uniform_tree",
    "barycenter",
    "max_radius",
    "signed_volume",
    "shares_vertex",
    "load_mesh",
    "save_mesh",
]

SPLITS = ("kuhn6", "center24")


@dataclass(frozen=True)
class TetMesh:
    vertices: np.ndarray  # (nv, 3) float64
    tets: np.ndarray  # (nt, 4) int64, positively oriented

    @property
    def n_tets(self) -> int:
        return int(self.tets.shape[0])

    def volumes(self) -> np.ndarray:
        return signed_volume(self.vertices[self.tets])


def signed_volume(corners: np.ndarray) -> np.ndarray:
    """Signed volume of tetrahedra given as ``(..., 4, 3)`` corner arrays."""
    corners = np.asarray(corners, dtype=np.float64)
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 0, :]
    e3 = corners[..., 3, :] - corners[..., 0, :]
    return np.einsum("...i,...i->...", e1, np.cross(e2, e3)) / 6.0


def barycenter(corners: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the four corners (works on stacked arrays too)."""
    return np.asarray(corners, dtype=np.float64).mean(axis=-2)


def max_radius(corners: np.ndarray) -> np.ndarray:
    """Largest corner distance from the barycenter."""
    corners = np.asarray(corners, dtype=np.float64)
    c = barycenter(corners)[..., None, :]
    return np.sqrt(((corners - c) ** 2).sum(axis=-1)).max(axis=-1)


def _orient(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = tets.copy()
    neg = signed_volume(vertices[tets]) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def build_box_mesh(
    lo: Sequence[float],
    hi: Sequence[float],
    cells_per_axis: int,
    split: str = "kuhn6",
) -> TetMesh:
    """Conforming tetrahedral mesh of the box ``[lo, hi]``.

    ``split="kuhn6"`` cuts each of the ``cells_per_axis**3`` sub-cubes into six
    tetrahedra around the cube diagonal.  ``split="center24"`` adds cube and
    face centers and cuts each sub-cube into 24 tetrahedra, which is the base
    needed to hit element counts such as 1536 or 12288 after refinement.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,):
        raise InvalidDomainError("lo and hi must be 3-vectors")
    if np.any(lo >= hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise InvalidDomainError(f"degenerate box lo={lo.tolist()} hi={hi.tolist()}")
    c = int(cells_per_axis)
    if c < 1:
        raise InvalidDomainError("cells_per_axis must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")

    if split == "kuhn6":
        stride, lattice = 1, c + 1
    else:
        stride, lattice = 2, 2 * c + 1

    def vid(ijk: np.ndarray) -> np.ndarray:
        return (ijk[..., 0] * lattice + ijk[..., 1]) * lattice + ijk[..., 2]

    base = stride * np.array(list(itertools.product(range(c), repeat=3)), dtype=np.int64)
    cell_tets = []
    if split == "kuhn6":
        eye = np.eye(3, dtype=np.int64)
        for perm in itertools.permutations(range(3)):
            p1 = eye[perm[0]]
            p2 = p1 + eye[perm[1]]
            path = [np.zeros(3, np.int64), p1, p2, np.ones(3, np.int64)]
            cell_tets.append(np.stack([vid(base + q) for q in path], axis=1))
    else:
        center = base + 1
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            for side in (0, 2):
                face = np.ones(3, np.int64)
                face[axis] = side
                ring = []
                for u, v in ((0, 0), (2, 0), (2, 2), (0, 2)):
                    q = np.zeros(3, np.int64)
                    q[axis] = side
                    q[others[0]] = u
                    q[others[1]] = v
                    ring.append(q)
                for e in range(4):
                    a, b = ring[e], ring[(e + 1) % 4]
                    cell_tets.append(
                        np.stack([vid(center), vid(base + face), vid(base + a), vid(base + b)], axis=1)
                    )
    tets = np.concatenate(cell_tets, axis=0)
    # cube-major ordering keeps elements of one cube adjacent
    n_cells = base.shape[0]
    tets = tets.reshape(len(cell_tets), n_cells, 4).transpose(1, 0, 2).reshape(-1, 4)

    used, inverse = np.unique(tets, return_inverse=True)
    tets = inverse.reshape(-1, 4).astype(np.int64)
    ijk = np.stack(np.unravel_index(used, (lattice,) * 3), axis=1).astype(np.float64)
    vertices = lo + (hi - lo) * ijk / (lattice - 1)
    return TetMesh(vertices=vertices, tets=_orient(vertices, tets))


@dataclass(frozen=True)
class TreeNode:
    """Read-only view of one node of a :class:`HierarchyTree`."""

    index: int
    vertex_ids: Tuple[int, int, int, int]
    level: int
    parent: Optional[int]
    children: Tuple[int, ...]
    barycenter: np.ndarray
    max_radius: float
    volume: float

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class HierarchyTree:
    """Full octree of tetrahedra.

    Attributes
    ----------
    vertices:
        ``(nv, 3)`` coordinates shared by all levels; every edge midpoint
        created during refinement has exactly one id.
    tets:
        ``(n_nodes, 4)`` vertex ids of each node's tetrahedron.
    level, parent:
        Per-node level and parent id (``-1`` for roots).
    children:
        ``(n_nodes, 8)`` child ids, ``-1`` rows for leaves.
    barycenter, max_radius, volume:
        Per-node geometry, computed once at construction.
    level_offsets:
        Node index range of each level.
    """

    vertices: np.ndarray
    tets: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    children: np.ndarray
    barycenter: np.ndarray
    max_radius: np.ndarray
    volume: np.ndarray
    level_offsets: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.tets.shape[0])

    @property
    def depth(self) -> int:
        return int(self.level_offsets.shape[0] - 1)

    @property
    def roots(self) -> np.ndarray:
        return np.arange(self.level_offsets[0], self.level_offsets[1])

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.children[:, 0] < 0)

    @property
    def n_leaves(self) -> int:
        return int(self.level_offsets[-1] - self.level_offsets[-2])

    @property
    def leaf_offset(self) -> int:
        return int(self.level_offsets[-2])

    @property
    def domain_volume(self) -> float:
        return float(self.volume[self.roots].sum())

    def level_range(self, level: int) -> np.ndarray:
        return np.arange(self.level_offsets[level], self.level_offsets[level + 1])

    def node(self, i: int) -> TreeNode:
        kids = tuple(int(c) for c in self.children[i] if c >= 0)
        par = int(self.parent[i])
        return TreeNode(
            index=int(i),
            vertex_ids=tuple(int(v) for v in self.tets[i]),
            level=int(self.level[i]),
            parent=None if par < 0 else par,
            children=kids,
            barycenter=self.barycenter[i].copy(),
            max_radius=float(self.max_radius[i]),
            volume=float(self.volume[i]),
        )

    def corners(self, i) -> np.ndarray:
        return self.vertices[self.tets[i]]

    def leaf_block(self, i: int) -> Tuple[int, int]:
        """Half-open node-id range of the leaves below node ``i``."""
        lvl = int(self.level[i])
        span = 8 ** (self.depth - 1 - lvl)
        first = self.leaf_offset + (int(i) - int(self.level_offsets[lvl])) * span
        return first, first + span

    def ancestor(self, i: int, level: int) -> int:
        i = int(i)
        while self.level[i] > level:
            i = int(self.parent[i])
        return i

    def mesh(self, level: Optional[int] = None) -> TetMesh:
        """The conforming mesh formed by the nodes of one level (default: leaves)."""
        if level is None:
            level = self.depth - 1
        return TetMesh(self.vertices, self.tets[self.level_range(level)])


def _geometry(vertices: np.ndarray, tets: np.ndarray):
    corners = vertices[tets]
    vol = signed_volume(corners)
    if np.any(vol <= 0):
        raise InvalidDomainError("mesh contains degenerate or inverted tetrahedra")
    return barycenter(corners), max_radius(corners), vol


def build_tree(mesh: TetMesh) -> HierarchyTree:
    """Depth-1 tree whose roots are the base mesh elements."""
    tets = _orient(mesh.vertices, np.asarray(mesh.tets, dtype=np.int64))
    if np.any([len(set(t)) != 4 for t in tets.tolist()]):
        raise InvalidDomainError("tetrahedron with repeated vertex ids")
    bary, rad, vol = _geometry(mesh.vertices, tets)
    n = tets.shape[0]
    return HierarchyTree(
        vertices=np.asarray(mesh.vertices, dtype=np.float64).copy(),
        tets=tets,
        level=np.zeros(n, np.int64),
        parent=np.full(n, -1, np.int64),
        children=np.full((n, 8), -1, np.int64),
        barycenter=bary,
        max_radius=rad,
        volume=vol,
        level_offsets=np.array([0, n], np.int64),
    )


# Octahedron diagonals (pairs of midpoint slots) and the 4-cycle of the
# remaining midpoints around each.  Midpoint slots: 0=m01 1=m02 2=m03
# 3=m12 4=m13 5=m23.
_DIAGONALS = ((0, 5), (1, 4), (2, 3))
_RINGS = ((1, 2, 4, 3), (0, 2, 5, 3), (0, 1, 5, 4))
_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def _refine_once(vertices: np.ndarray, tets: np.ndarray):
    nv = vertices.shape[0]
    pairs = np.stack([tets[:, list(e)] for e in _EDGES], axis=1)  # (nt, 6, 2)
    pairs = np.sort(pairs, axis=2)
    keys = pairs[..., 0] * nv + pairs[..., 1]
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    a, b = np.divmod(uniq, nv)
    mid_xyz = 0.5 * (vertices[a] + vertices[b])
    new_vertices = np.concatenate([vertices, mid_xyz], axis=0)
    m = (nv + inverse).reshape(-1, 6)

    v0, v1, v2, v3 = tets.T
    m01, m02, m03, m12, m13, m23 = m.T
    corner_kids = [
        np.stack([v0, m01, m02, m03], axis=1),
        np.stack([m01, v1, m12, m13], axis=1),
        np.stack([m02, m12, v2, m23], axis=1),
        np.stack([m03, m13, m23, v3], axis=1),
    ]
    # shortest octahedron diagonal; ties go to the first listed
    diag_len = np.stack(
        [np.linalg.norm(new_vertices[m[:, i]] - new_vertices[m[:, j]], axis=1) for i, j in _DIAGONALS],
        axis=1,
    )
    choice = np.argmin(diag_len, axis=1)
    inner = np.empty((tets.shape[0], 4, 4), np.int64)
    for d, ((i, j), ring) in enumerate(zip(_DIAGONALS, _RINGS)):
        sel = choice == d
        if not np.any(sel):
            continue
        ms = m[sel]
        for q in range(4):
            inner[sel, q] = np.stack(
                [ms[:, i], ms[:, j], ms[:, ring[q]], ms[:, ring[(q + 1) % 4]]], axis=1
            )
    kids = np.concatenate([np.stack(corner_kids, axis=1), inner], axis=1)  # (nt, 8, 4)
    kids = kids.reshape(-1, 4)
    return new_vertices, _orient(new_vertices, kids)


def refine_uniform(tree: HierarchyTree, times: int) -> HierarchyTree:
    """Refine every leaf ``times`` times by edge-midpoint octasection."""
    if times < 0:
        raise ValueError("times must be >= 0")
    vertices = tree.vertices
    tets = [tree.tets]
    level = [tree.level]
    parent = [tree.parent]
    children = tree.children.copy()
    bary, rad, vol = [tree.barycenter], [tree.max_radius], [tree.volume]
    offsets = list(tree.level_offsets)
    leaf_tets = tree.tets[offsets[-2] : offsets[-1]]
    for _ in range(times):
        lo, hi = offsets[-2], offsets[-1]
        vertices, kids = _refine_once(vertices, leaf_tets)
        n_new = kids.shape[0]
        new_ids = hi + np.arange(n_new, dtype=np.int64)
        children[lo:hi] = new_ids.reshape(-1, 8)
        children = np.concatenate([children, np.full((n_new, 8), -1, np.int64)])
        b, r, v = _geometry(vertices, kids)
        tets.append(kids)
        level.append(np.full(n_new, len(offsets) - 1, np.int64))
        parent.append(np.repeat(np.arange(lo, hi, dtype=np.int64), 8))
        bary.append(b)
        rad.append(r)
        vol.append(v)
        offsets.append(hi + n_new)
        leaf_tets = kids
    return HierarchyTree(
        vertices=vertices,
        tets=np.concatenate(tets),
        level=np.concatenate(level),
        parent=np.concatenate(parent),
        children=children,
        barycenter=np.concatenate(bary),
        max_radius=np.concatenate(rad),
        volume=np.concatenate(vol),
        level_offsets=np.asarray(offsets, np.int64),
    )


def uniform_tree(
    lo: Sequence[float] = (-2.0, -2.0, -2.0),
    hi: Sequence[float] = (2.0, 2.0, 2.0),
    cells: int = 1,
    refine: int = 0,
    split: str = "kuhn6",
) -> HierarchyTree:
    """Box mesh, wrapped as a tree and refined ``refine`` times."""
    return refine_uniform(build_tree(build_box_mesh(lo, hi, cells, split)), refine)


def shares_vertex(tree: HierarchyTree, a: int, b: int) -> bool:
    if tree.level[a] != tree.level[b]:
        raise ValueError(
            f"shares_vertex needs nodes on one level (got {tree.level[a]} and {tree.level[b]})"
        )
    return bool(np.intersect1d(tree.tets[a], tree.tets[b]).size)


def save_mesh(mesh: TetMesh, path) -> None:
    """Write ``nv nt``, then vertex rows, then 0-based tet rows."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.vertices.shape[0]} {mesh.tets.shape[0]}\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for t in mesh.tets:
            fh.write(" ".join(str(int(i)) for i in t) + "\n")


def load_mesh(path) -> TetMesh:
    tokens = Path(path).read_text().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: missing header")
    nv, nt = int(tokens[0]), int(tokens[1])
    need = 2 + 3 * nv + 4 * nt
    if len(tokens) != need:
        raise ValueError(f"{path}: expected {need} tokens, found {len(tokens)}")
    vertices = np.array(tokens[2 : 2 + 3 * nv], dtype=np.float64).reshape(nv, 3)
    tets = np.array(tokens[2 + 3 * nv :], dtype=np.int64).reshape(nt, 4)
    if tets.size and (tets.min() < 0 or tets.max() >= nv):
        raise ValueError(f"{path}: vertex index out of range")
    return TetMesh(vertices=vertices, tets=tets)
