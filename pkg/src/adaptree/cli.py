"""Command-line entry point: ``adaptree solve|sweep|calibrate|mesh-info``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from typing import Optional, Sequence

import numba
import numpy as np
from numba.core.errors import NumbaWarning

from .bench import (
    ExperimentGrid,
    ProblemSpec,
    emit_csv,
    gaussian_problem,
    gaussian_sum_problem,
    run_experiment,
)
from .interaction import build_interaction_lists, mac_scan
from .mesh import SPLITS, build_tree, load_mesh, refine_uniform, save_mesh, uniform_tree
from .solver import MODES, calibrate_pmax, prepare, warmup

log = logging.getLogger("adaptree")


def _domain(text: str):
    """Parse ``lo..hi`` (cube) or ``x0,y0,z0..x1,y1,z1``."""
    try:
        lo_s, hi_s = text.split("..")
        lo = [float(v) for v in lo_s.split(",")]
        hi = [float(v) for v in hi_s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad domain {text!r}; expected lo..hi") from None
    if len(lo) == 1:
        lo = lo * 3
    if len(hi) == 1:
        hi = hi * 3
    if len(lo) != 3 or len(hi) != 3:
        raise argparse.ArgumentTypeError(f"bad domain {text!r}; need 1 or 3 values per side")
    return tuple(lo), tuple(hi)


def _list_of(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


def _problem(args) -> ProblemSpec:
    if args.problem == "gaussian":
        prob = gaussian_problem()
        if args.domain is not None:
            prob = ProblemSpec(prob.name, args.domain[0], args.domain[1], prob.source, prob.exact, prob.f_bound)
        return prob
    if args.problem_file is None:
        raise ValueError("--problem file needs --problem-file PATH")
    lo, hi = args.domain if args.domain is not None else ((-2.0,) * 3, (2.0,) * 3)
    return gaussian_sum_problem(args.problem_file, lo, hi)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--domain", type=_domain, default=None, help="box as lo..hi (default -2..2)")
    p.add_argument("--cells", type=int, default=1, help="sub-cubes per axis of the base mesh")
    p.add_argument("--split", choices=SPLITS, default="kuhn6", help="tets per sub-cube: kuhn6 (6) or center24 (24)")
    p.add_argument("--mesh", default=None, help="base mesh file instead of a box")
    p.add_argument("--problem", choices=("gaussian", "file"), default="gaussian")
    p.add_argument("--problem-file", default=None, help="lines 'amplitude a1 a2 a3'")
    p.add_argument("--threads", type=int, default=1, help="solver threads (>1 marks timings non-benchmark)")


def _run_args(p: argparse.ArgumentParser, plural: bool) -> None:
    if plural:
        p.add_argument("--refine", type=_list_of(int), default=[2])
        p.add_argument("--mode", type=_list_of(str), default=["tc1"])
        p.add_argument("--epsilon", type=_list_of(float), default=[1e-1])
        p.add_argument("--p-max", type=_list_of(int), default=[10])
        p.add_argument("--uniform-p", type=_list_of(int), default=[])
    else:
        p.add_argument("--refine", type=int, default=2)
        p.add_argument("--mode", choices=MODES, default="tc1")
        p.add_argument("--epsilon", type=float, default=1e-1)
        p.add_argument("--p-max", type=int, default=10)
        p.add_argument("--uniform-p", type=int, default=None, help="fixed order; disables adaptivity")
    p.add_argument("--direct-cap", type=int, default=20000, help="largest N for the direct oracle")
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--no-warmup", action="store_true", help="skip JIT warmup before timing")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaptree", description="p-adaptive treecode for the 3D Poisson potential")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="one run")
    _common(p)
    _run_args(p, plural=False)

    p = sub.add_parser("sweep", help="grid of runs; comma-separated lists")
    _common(p)
    _run_args(p, plural=True)

    p = sub.add_parser("calibrate", help="find the P_max where expansion stops beating direct summation")
    _common(p)
    p.add_argument("--refine", type=int, default=2)
    p.add_argument("--orders", type=_list_of(int), default=list(range(2, 41, 2)))
    p.add_argument("--point-cost", type=int, default=1, help="kernel repetitions per quadrature point")
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("mesh-info", help="mesh and interaction-list statistics")
    _common(p)
    p.add_argument("--refine", type=int, default=2)
    p.add_argument("--save", default=None, help="write the leaf mesh to this file")
    return ap


def _tree(args, problem: ProblemSpec, refine: int):
    if args.mesh is not None:
        return refine_uniform(build_tree(load_mesh(args.mesh)), refine)
    return uniform_tree(problem.lo, problem.hi, args.cells, refine, args.split)


def _print_reports(reports, threads: int) -> None:
    tag = "" if threads == 1 else "  [non-benchmark timing]"
    for r in reports:
        fields = [f"N={r.N}", f"mode={r.mode}"]
        if r.uniform_p is not None:
            fields.append(f"uniform_p={r.uniform_p}")
        elif r.epsilon is not None:
            fields.append(f"eps={r.epsilon:g} p_max={r.p_max}")
        for name in ("E1", "E2", "E_DT"):
            v = getattr(r, name)
            if v is not None:
                fields.append(f"{name}={v:.6e}")
        fields.append(f"eval={r.eval_s:.4f}s mac_max={r.mac_max:.4f} clamped={r.clamped_count}")
        print(" ".join(fields) + tag)


def _cmd_run(args, plural: bool) -> int:
    problem = _problem(args)
    if not args.no_warmup:
        warmup()
    grid = ExperimentGrid(
        problem=problem,
        cells=args.cells,
        split=args.split,
        refines=tuple(args.refine) if plural else (args.refine,),
        modes=tuple(args.mode) if plural else (args.mode,),
        epsilons=tuple(args.epsilon) if plural else (args.epsilon,),
        p_maxes=tuple(args.p_max) if plural else (args.p_max,),
        uniform_ps=tuple(args.uniform_p) if plural else (() if args.uniform_p is None else (args.uniform_p,)),
        direct_cap=args.direct_cap,
        base_mesh=args.mesh,
    )
    bad = [m for m in grid.modes if m not in MODES]
    if bad:
        raise ValueError(f"unknown mode {bad[0]!r}; expected one of {MODES}")
    if not plural and args.uniform_p is not None:
        # a fixed order replaces the adaptive run rather than adding to it
        grid.modes = tuple(m for m in grid.modes if m == "direct")
    reports = run_experiment(grid)
    _print_reports(reports, args.threads)
    if args.out:
        emit_csv(reports, args.out)
    return 0


def _cmd_calibrate(args) -> int:
    problem = _problem(args)
    tree = _tree(args, problem, args.refine)
    orders = sorted(set(args.orders))
    prep = prepare(tree, problem.source, max(orders))
    # expansion cost does not depend on geometry; any admissible pair will do
    leaf = int(tree.leaves[0])
    node = None
    a = leaf
    while node is None and a >= 0:
        far = prep.lists.node_far(a)
        if far.size:
            d = np.linalg.norm(tree.barycenter[far] - tree.barycenter[leaf], axis=1)
            node = int(far[np.argmax(d)])
        a = int(tree.parent[a])
    if node is None:
        raise ValueError("mesh too coarse: no far-field node to calibrate against")
    cal = calibrate_pmax(
        tree.barycenter[leaf], node, tree, prep.moments, prep.leaf_quad, orders,
        repeats=args.repeats, point_cost=args.point_cost,
    )
    print(f"direct leaf sum: {cal.t_direct * 1e9:.1f} ns")
    for p, t in cal.t_orders.items():
        print(f"  p={p:3d}  expansion {t * 1e9:9.1f} ns")
    suffix = "" if cal.crossed else " (no crossover within the given orders)"
    print(f"P_max = {cal.p_max}{suffix}")
    return 0


def _cmd_mesh_info(args) -> int:
    problem = _problem(args)
    tree = _tree(args, problem, args.refine)
    lists = build_interaction_lists(tree)
    vol = tree.volume[tree.leaf_offset :]
    ratio = tree.max_radius[tree.leaf_offset :] / np.cbrt(vol)
    nbr = np.diff(lists.nbr_ptr)[tree.leaf_offset :]
    print(f"vertices        {tree.vertices.shape[0]}")
    print(f"levels          {tree.depth}")
    print(f"roots           {tree.roots.size}")
    print(f"leaves (N)      {tree.n_leaves}")
    print(f"domain volume   {tree.domain_volume:.12g}")
    print(f"leaf volume     min {vol.min():.6g} max {vol.max():.6g}")
    print(f"shape ratio     max {ratio.max():.6g}")
    print(f"near field      mean {nbr.mean():.2f} max {nbr.max()}")
    print(f"far entries     {lists.n_far_entries}")
    print(f"max r_K         {mac_scan(lists):.6f}")
    if args.save:
        save_mesh(tree.mesh(), args.save)
        print(f"saved leaf mesh to {args.save}")
    return 0


def _one_line_warning(message, category, filename, lineno, file=None, line=None):
    print(f"adaptree: warning: {message}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    warnings.simplefilter("ignore", category=NumbaWarning)
    warnings.showwarning = _one_line_warning
    try:
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        if args.command == "solve":
            return _cmd_run(args, plural=False)
        if args.command == "sweep":
            return _cmd_run(args, plural=True)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        return _cmd_mesh_info(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"adaptree: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
