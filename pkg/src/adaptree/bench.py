"""Test problems, error metrics, experiment grids and CSV reports."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .interaction import build_interaction_lists
from .mesh import HierarchyTree, build_tree, load_mesh, refine_uniform, uniform_tree
from .quadrature import ScalarField
from .solver import Prepared, Solution, SolverConfig, estimate_f_bound, prepare, solve

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "N", "mode", "epsilon", "p_max", "uniform_p", "E1", "E2", "E_DT",
    "prep_s", "eval_s", "mac_max", "clamped_count",
)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    lo: tuple
    hi: tuple
    source: ScalarField
    exact: Optional[ScalarField] = None
    f_bound: Optional[float] = None


def gaussian_problem() -> ProblemSpec:
    """u = 2 exp(-pi (x1^2 + 2 x2^2 + 3 x3^2)) on [-2, 2]^3 with f = -Laplace(u)."""
    pi = math.pi

    def exact(x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * np.exp(-pi * (x[..., 0] ** 2 + 2.0 * x[..., 1] ** 2 + 3.0 * x[..., 2] ** 2))

    def source(x):
        x = np.asarray(x, dtype=np.float64)
        q = 4 * pi**2 * x[..., 0] ** 2 + 16 * pi**2 * x[..., 1] ** 2 + 36 * pi**2 * x[..., 2] ** 2
        return -(q - 12 * pi) * exact(x)

    return ProblemSpec("gaussian", (-2.0,) * 3, (2.0,) * 3, source, exact, 24.0 * pi)


def gaussian_sum_problem(path, lo=(-2.0,) * 3, hi=(2.0,) * 3) -> ProblemSpec:
    """Source read from lines ``A a1 a2 a3`` meaning A exp(-pi (a1 x1^2 + a2 x2^2 + a3 x3^2))."""
    terms = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'amplitude a1 a2 a3'")
        terms.append(tuple(float(v) for v in parts))
    if not terms:
        raise ValueError(f"{path}: no source terms")
    amp = np.array([t[0] for t in terms])
    rates = np.array([t[1:] for t in terms])

    def source(x):
        x = np.asarray(x, dtype=np.float64)
        expo = -math.pi * (x[..., None, :] ** 2 * rates).sum(axis=-1)
        return (amp * np.exp(expo)).sum(axis=-1)

    return ProblemSpec(Path(path).stem, tuple(lo), tuple(hi), source, None, float(np.abs(amp).sum()))


def discrete_l2(values_a, values_b, tree: HierarchyTree) -> float:
    """Barycenter-sampled, piecewise-constant L2 norm of a - b over the leaves."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.shape != (tree.n_leaves,):
        raise ValueError(f"value arrays must both have one entry per leaf ({tree.n_leaves})")
    vol = tree.volume[tree.leaf_offset :]
    return float(np.sqrt(((a - b) ** 2 * vol).sum()))


# barycentric sample points per boundary triangle: corners, edge midpoints,
# centroid and the degree-4 Dunavant interior orbits
_TRI_SAMPLES = np.array(
    [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5], [1 / 3, 1 / 3, 1 / 3]]
    + [list(p) for p in set(itertools.permutations((0.108103018168070, 0.445948490915965, 0.445948490915965)))]
    + [list(p) for p in set(itertools.permutations((0.816847572980459, 0.091576213509771, 0.091576213509771)))]
)


def boundary_faces(tree: HierarchyTree) -> np.ndarray:
    """Vertex-id triples of leaf faces that belong to exactly one leaf."""
    tets = tree.tets[tree.leaf_offset :]
    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 2, 3]], tets[:, [0, 1, 3]], tets[:, [0, 1, 2]]])
    faces = np.sort(faces, axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    return uniq[counts == 1]


def truncation_error(problem: ProblemSpec, tree: HierarchyTree) -> float:
    """max |u| over sample points of the boundary faces of the mesh."""
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    tri = tree.vertices[boundary_faces(tree)]  # (nf, 3, 3)
    pts = np.einsum("sa,fai->fsi", _TRI_SAMPLES, tri).reshape(-1, 3)
    return float(np.abs(problem.exact(pts)).max())


@dataclass
class RunReport:
    N: int
    mode: str
    epsilon: Optional[float]
    p_max: Optional[int]
    uniform_p: Optional[int]
    E1: Optional[float]
    E2: Optional[float]
    E_DT: Optional[float]
    prep_s: float
    eval_s: float
    mac_max: float
    clamped_count: int
    order_histogram: Optional[np.ndarray] = None
    fallback_count: int = 0
    demoted_count: int = 0
    # E2 over the targets that saw no clamped expansion (None when all did)
    E2_unclamped: Optional[float] = None

    def row(self) -> Dict[str, object]:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class ExperimentGrid:
    problem: ProblemSpec = field(default_factory=gaussian_problem)
    cells: int = 1
    split: str = "kuhn6"
    refines: Sequence[int] = (2,)
    modes: Sequence[str] = ("tc1",)
    epsilons: Sequence[float] = (1e-1,)
    p_maxes: Sequence[int] = (10,)
    uniform_ps: Sequence[int] = ()
    direct_cap: int = 20000
    base_mesh: Optional[str] = None


def _tree_for(grid: ExperimentGrid, refine: int) -> HierarchyTree:
    if grid.base_mesh is not None:
        return refine_uniform(build_tree(load_mesh(grid.base_mesh)), refine)
    return uniform_tree(grid.problem.lo, grid.problem.hi, grid.cells, refine, grid.split)


def _report(tree, mode, cfg, sol: Solution, prep_s, problem, ref: Optional[np.ndarray], e_dt):
    e1 = discrete_l2(sol.values, problem.exact(tree.barycenter[tree.leaf_offset :]), tree) if problem.exact else None
    e2 = discrete_l2(sol.values, ref, tree) if ref is not None else None
    e2_unclamped = None
    if ref is not None:
        keep = sol.clamped_per_target == 0 if sol.clamped_per_target is not None else np.ones(tree.n_leaves, bool)
        if keep.any():
            vol = tree.volume[tree.leaf_offset :][keep]
            e2_unclamped = float(np.sqrt(((sol.values[keep] - ref[keep]) ** 2 * vol).sum()))
    return RunReport(
        N=tree.n_leaves,
        mode=mode,
        epsilon=None if mode == "direct" or cfg.uniform_p is not None else cfg.epsilon,
        p_max=None if mode == "direct" else cfg.p_max,
        uniform_p=cfg.uniform_p,
        E1=e1,
        E2=e2,
        E_DT=e_dt,
        prep_s=prep_s,
        eval_s=sol.eval_seconds,
        mac_max=sol.mac_max,
        clamped_count=sol.clamped_count,
        order_histogram=sol.order_histogram,
        fallback_count=sol.fallback_count,
        demoted_count=sol.demoted_count,
        E2_unclamped=e2_unclamped,
    )


def run_experiment(grid: ExperimentGrid) -> List[RunReport]:
    """One report per grid combination, with E2 against a cached direct solve."""
    problem = grid.problem
    reports: List[RunReport] = []
    for refine in grid.refines:
        tree = _tree_for(grid, refine)
        n = tree.n_leaves
        e_dt = truncation_error(problem, tree) if problem.exact else None
        lists = build_interaction_lists(tree)
        orders = sorted({int(p) for p in grid.p_maxes if any(m != "direct" for m in grid.modes)}
                        | {int(p) for p in grid.uniform_ps} | {0})
        preps: Dict[int, Prepared] = {}
        for p in orders:
            preps[p] = prepare(tree, problem.source, p, lists=lists)
        base = preps[orders[0]]
        f_bound = problem.f_bound if problem.f_bound is not None else estimate_f_bound(base.leaf_quad)

        ref = None
        direct_sol = None
        if n <= grid.direct_cap:
            direct_sol = solve(base, SolverConfig(mode="direct", f_bound=f_bound))
            ref = direct_sol.values
        else:
            warnings.warn(f"N={n} exceeds direct cap {grid.direct_cap}; E2 omitted")

        for mode in grid.modes:
            if mode == "direct":
                if direct_sol is None:
                    continue
                cfg = SolverConfig(mode="direct", f_bound=f_bound)
                reports.append(_report(tree, "direct", cfg, direct_sol, base.prep_seconds, problem, ref, e_dt))
                continue
            for p_max, eps in itertools.product(grid.p_maxes, grid.epsilons):
                cfg = SolverConfig(epsilon=eps, p_max=int(p_max), f_bound=f_bound, mode=mode)
                sol = solve(preps[int(p_max)], cfg)
                reports.append(_report(tree, mode, cfg, sol, preps[int(p_max)].prep_seconds, problem, ref, e_dt))
                log.info("N=%d %s eps=%g p_max=%d eval=%.3fs", n, mode, eps, p_max, sol.eval_seconds)
        for p in grid.uniform_ps:
            cfg = SolverConfig(epsilon=1.0, p_max=int(p), f_bound=f_bound, mode="tc1", uniform_p=int(p))
            sol = solve(preps[int(p)], cfg)
            reports.append(_report(tree, "tc1", cfg, sol, preps[int(p)].prep_seconds, problem, ref, e_dt))
            log.info("N=%d uniform p=%d eval=%.3fs", n, p, sol.eval_seconds)
    return reports


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def emit_csv(reports: Sequence[RunReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for rep in reports:
            w.writerow([_fmt(rep.row()[k]) for k in CSV_FIELDS])


_INT_FIELDS = {"N", "p_max", "uniform_p", "clamped_count"}


def read_csv(path) -> List[Dict[str, object]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec: Dict[str, object] = {}
            for k, v in row.items():
                if k == "mode":
                    rec[k] = v
                elif v == "":
                    rec[k] = None
                elif k in _INT_FIELDS:
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out
