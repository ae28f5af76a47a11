"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line (collected into the terminal summary by
conftest.py) before asserting.  Tolerances are fixed by the criteria; a
criterion that cannot be met stays red.
"""

import math
import time

import mpmath
import numba
import numpy as np
import pytest

from adaptree.bench import discrete_l2, gaussian_problem, truncation_error
from adaptree.expansion import (
    cartesian_term_sum,
    gegenbauer,
    multi_index_enumerate,
    multi_index_position,
    taylor_coeffs,
)
from adaptree.mesh import TetMesh, build_tree, uniform_tree
from adaptree.quadrature import integrate
from adaptree.solver import (
    SolverConfig,
    calibrate_pmax,
    direct_solve,
    prepare,
    solve,
    treecode1_solve,
    warmup,
)

pytestmark = pytest.mark.slow

F_BOUND = 24 * math.pi
REF_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


@pytest.fixture(scope="session", autouse=True)
def single_thread():
    # benchmark timings are single-worker; JIT compilation is excluded
    numba.set_num_threads(1)
    warmup()


@pytest.fixture(scope="session")
def gaussian():
    return gaussian_problem()


@pytest.fixture(scope="session")
def mesh1536(gaussian):
    tree = uniform_tree(gaussian.lo, gaussian.hi, 1, 2, "center24")
    assert tree.n_leaves == 1536
    prep = prepare(tree, gaussian.source, 50)
    ref = direct_solve(tree, prep.leaf_quad).values
    return prep, ref


@pytest.fixture(scope="session")
def mesh12288(gaussian):
    tree = uniform_tree(gaussian.lo, gaussian.hi, 1, 3, "center24")
    assert tree.n_leaves == 12288
    prep = prepare(tree, gaussian.source, 10)
    ref = direct_solve(tree, prep.leaf_quad).values
    return prep, ref


def e2(sol, ref, tree):
    return discrete_l2(sol.values, ref, tree)


# -- 1 ------------------------------------------------------------------------


def test_criterion_01_quadrature_exactness(record_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for a in range(7):
        for b in range(7 - a):
            for c in range(7 - a - b):
                exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)
                got = integrate(lambda x: x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c, REF_TET)
                worst = max(worst, abs(got / exact - 1))
                count += 1
    dt = time.perf_counter() - t0
    ok = count == 84 and worst <= 1e-13 and dt < 1.0
    record_criterion(1, ok, f"{count} monomials, max rel err {worst:.2e} (tol 1e-13), {dt:.2f}s (< 1s)")


# -- 2 ------------------------------------------------------------------------


def _fd(x, y_c, k):
    with mpmath.workdps(30):
        xs = [mpmath.mpf(v) for v in x]

        def g(a, b, c):
            return 1 / (4 * mpmath.pi * mpmath.sqrt((xs[0] - a) ** 2 + (xs[1] - b) ** 2 + (xs[2] - c) ** 2))

        d = mpmath.diff(g, tuple(mpmath.mpf(v) for v in y_c), tuple(int(v) for v in k))
        return float(d) / (math.factorial(k[0]) * math.factorial(k[1]) * math.factorial(k[2]))


def test_criterion_02_recurrence(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    idx = multi_index_enumerate(6)
    worst_fd = 0.0
    worst_closed = 0.0
    c = 1 / (4 * math.pi)
    for _ in range(20):
        y_c = rng.uniform(-1, 1, 3)
        u = rng.normal(size=3)
        x = y_c + rng.uniform(1.0, 3.0) * u / np.linalg.norm(u)
        a = taylor_coeffs(x, y_c, 6).values
        d = x - y_c
        r = np.linalg.norm(d)
        for j, k in enumerate(idx):
            ref = _fd(x, y_c, k)
            # guard coefficients that are small through cancellation
            scale = max(abs(ref), c / r ** (1 + k.sum()))
            worst_fd = max(worst_fd, abs(a[j] - ref) / scale)
        closed = {(0, 0, 0): c / r}
        for i in range(3):
            e = [0, 0, 0]
            e[i] = 1
            closed[tuple(e)] = c * d[i] / r**3
            e[i] = 2
            closed[tuple(e)] = c * (3 * d[i] ** 2 - r**2) / (2 * r**5)
            for m in range(i + 1, 3):
                e = [0, 0, 0]
                e[i] = e[m] = 1
                closed[tuple(e)] = 3 * c * d[i] * d[m] / r**5
        for k, v in closed.items():
            worst_closed = max(worst_closed, abs(a[multi_index_position(k)] - v) / abs(v))
    dt = time.perf_counter() - t0
    ok = worst_fd <= 1e-6 and worst_closed <= 1e-12 and dt < 5.0
    record_criterion(
        2, ok,
        f"finite differences max rel {worst_fd:.1e} (tol 1e-6); closed forms max rel {worst_closed:.1e} "
        f"(tol 1e-12); {dt:.1f}s (< 5s)",
    )


# -- 3 ------------------------------------------------------------------------


def test_criterion_03_legendre_expansion(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        y_c = rng.uniform(-1, 1, 3)
        x = y_c + rng.normal(size=3)
        R = np.linalg.norm(x - y_c)
        u = rng.normal(size=3)
        rho = rng.uniform(0.01, 0.7) * R
        y = y_c + rho * u / np.linalg.norm(u)
        cos_g = np.dot(x - y_c, y - y_c) / (R * rho)
        for k in range(16):
            scale = rho**k / R ** (k + 1)
            diff = cartesian_term_sum(x, y, y_c, k) - scale * gegenbauer(k, cos_g)
            worst = max(worst, abs(diff) / scale)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 5.0
    record_criterion(3, ok, f"100 configs, k <= 15, max err / (rho^k/R^(k+1)) = {worst:.1e} (tol 1e-10), {dt:.1f}s")


# -- 4 ------------------------------------------------------------------------


def test_criterion_04_oracle_equivalence(record_criterion, gaussian):
    t0 = time.perf_counter()
    rel = []
    one = build_tree(TetMesh(REF_TET.copy(), np.array([[0, 1, 2, 3]])))
    prep = prepare(one, gaussian.source, 4)
    assert prep.lists.n_far_entries == 0
    tc = treecode1_solve(one, prep.lists, prep.moments, prep.leaf_quad, SolverConfig(p_max=4, f_bound=F_BOUND))
    ds = direct_solve(one, prep.leaf_quad)
    rel.append(np.max(np.abs(tc.values - ds.values) / np.abs(ds.values)))

    tree = uniform_tree(gaussian.lo, gaussian.hi, 1, 2)
    assert tree.n_leaves == 384
    prep = prepare(tree, gaussian.source, 4)
    cfg = SolverConfig(epsilon=1e-3, p_max=4, f_bound=F_BOUND, mac_limit=0.0)
    tc = treecode1_solve(tree, prep.lists, prep.moments, prep.leaf_quad, cfg)
    ds = direct_solve(tree, prep.leaf_quad)
    rel.append(np.max(np.abs(tc.values - ds.values) / np.abs(ds.values)))
    dt = time.perf_counter() - t0
    ok = max(rel) <= 1e-15 and tc.order_histogram.sum() == 0 and dt < 30
    record_criterion(
        4, ok,
        f"single root: max rel {rel[0]:.1e}; N=384 all demoted ({tc.demoted_count} demotions): "
        f"max rel {rel[1]:.1e} (tol 1e-15), {dt:.1f}s",
    )


# -- 5 ------------------------------------------------------------------------


def test_criterion_05_bound_validity(record_criterion, mesh1536):
    prep, ref = mesh1536
    violations, clamped, ratios = {}, {}, {}
    for eps in (1e-1, 1e-3, 1e-5):
        sol = solve(prep, SolverConfig(epsilon=eps, p_max=50, f_bound=F_BOUND))
        err = np.abs(sol.values - ref)
        violations[eps] = int(np.sum(err > sol.bound))
        clamped[eps] = sol.clamped_count
        ratios[eps] = float(np.max(err / sol.bound))
    ok_bound = all(v == 0 for v in violations.values())
    ok_clamp = all(c == 0 for c in clamped.values())
    detail = "; ".join(
        f"eps={e:g}: violations {violations[e]}, max err/bound {ratios[e]:.1e}, clamped {clamped[e]}"
        for e in violations
    )
    record_criterion(5, ok_bound and ok_clamp, f"bound {'ok' if ok_bound else 'VIOLATED'}, clamped==0 "
                     f"{'ok' if ok_clamp else 'NOT MET'}; {detail}")


# -- 6 ------------------------------------------------------------------------


def test_criterion_06_eps_control(record_criterion, mesh1536):
    prep, ref = mesh1536
    tree = prep.tree
    eps_list = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
    errs = [e2(solve(prep, SolverConfig(epsilon=e, p_max=50, f_bound=F_BOUND)), ref, tree) for e in eps_list]
    below_eps = all(err <= e for err, e in zip(errs, eps_list))
    # argwise monotonicity with the 2x cancellation slack
    monotone = all(errs[i + 1] <= 2.0 * errs[i] for i in range(len(errs) - 1))
    strict = all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
    uniform = e2(solve(prep, SolverConfig(p_max=50, uniform_p=50, f_bound=F_BOUND)), ref, tree)
    floor_ok = uniform <= 1e-9
    table = ", ".join(f"{e:g}:{err:.3e}" for e, err in zip(eps_list, errs))
    record_criterion(
        6, below_eps and monotone and floor_ok,
        f"E2<=eps {below_eps}; non-increasing (2x slack) {monotone}, strictly decreasing {strict}; "
        f"uniform p=50 E2={uniform:.2e} (need <= 1e-9) -> {floor_ok}; E2 by eps [{table}]",
    )


# -- 7 ------------------------------------------------------------------------


def test_criterion_07_clamp_plateau(record_criterion, mesh12288):
    prep, ref = mesh12288
    tree = prep.tree
    eps_list = [1e-1, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12]
    plateau = {}
    lines = []
    ok = True
    for p_max in (4, 10):
        errs, sat = [], []
        for eps in eps_list:
            sol = solve(prep, SolverConfig(epsilon=eps, p_max=p_max, f_bound=F_BOUND))
            errs.append(e2(sol, ref, tree))
            h = sol.order_histogram
            sat.append(h[p_max] / h.sum())
        full = [i for i, s in enumerate(sat) if s == 1.0]
        # once every selected order sits at P_max the run is identical
        flat = len(full) >= 2 and all(errs[i] == errs[full[0]] for i in full)
        ok &= flat
        plateau[p_max] = errs[-1]
        lines.append(
            f"P_max={p_max}: saturated from eps={eps_list[full[0]]:g} " if full else f"P_max={p_max}: never saturated "
        )
        lines[-1] += f"plateau E2={errs[-1]:.3e} flat={flat}"
    ok &= plateau[10] < plateau[4]
    record_criterion(7, ok, f"N={tree.n_leaves}; " + "; ".join(lines))


# -- 8 and 9 ------------------------------------------------------------------


@pytest.fixture(scope="session")
def scaling_runs(gaussian):
    """kuhn6, cells=1, refine 2..5: N = 384, 3072, 24576, 196608."""
    out = []
    for refine in (2, 3, 4, 5):
        tree = uniform_tree(gaussian.lo, gaussian.hi, 1, refine)
        prep = prepare(tree, gaussian.source, 10)
        exact = gaussian.exact(tree.barycenter[tree.leaf_offset :])
        row = {"N": tree.n_leaves}
        for name, cfg in (
            ("adaptive", SolverConfig(epsilon=0.1, p_max=10, f_bound=F_BOUND)),
            ("p2", SolverConfig(p_max=10, uniform_p=2, f_bound=F_BOUND)),
            ("p10", SolverConfig(p_max=10, uniform_p=10, f_bound=F_BOUND)),
        ):
            sol = solve(prep, cfg)
            row[name] = discrete_l2(sol.values, exact, tree)
            row[name + "_t"] = sol.eval_seconds
        if refine <= 3:
            times = []
            for _ in range(3):
                times.append(direct_solve(tree, prep.leaf_quad).eval_seconds)
            row["direct_t"] = float(np.median(times))
        out.append(row)
        del prep
    return out


def test_criterion_08_convergence_shape(record_criterion, scaling_runs):
    runs = scaling_runs[1:]  # the three finest levels
    ad = [r["adaptive"] for r in runs]
    p10 = [r["p10"] for r in runs]
    p2 = [r["p2"] for r in runs]
    dec_ad = all(b < a for a, b in zip(ad, ad[1:]))
    dec_p10 = all(b < a for a, b in zip(p10, p10[1:]))
    last_drop = 1 - p2[-1] / p2[-2]
    stagnant = last_drop < 0.20
    fmt = lambda v: "/".join(f"{x:.3e}" for x in v)
    record_criterion(
        8, dec_ad and dec_p10 and stagnant,
        f"N={'/'.join(str(r['N']) for r in runs)}: adaptive {fmt(ad)} decreasing {dec_ad}; "
        f"p=10 {fmt(p10)} decreasing {dec_p10}; p=2 {fmt(p2)} final drop {100 * last_drop:.1f}% (< 20%)",
    )


def test_criterion_09_complexity(record_criterion, scaling_runs):
    n = np.array([r["N"] for r in scaling_runs], dtype=float)
    t = np.array([r["adaptive_t"] for r in scaling_runs])
    slope_tc = np.polyfit(np.log(n), np.log(t), 1)[0]
    nd = np.array([r["N"] for r in scaling_runs if "direct_t" in r], dtype=float)
    td = np.array([r["direct_t"] for r in scaling_runs if "direct_t" in r])
    slope_ds = np.polyfit(np.log(nd), np.log(td), 1)[0]
    ok = 0.9 <= slope_tc <= 1.4 and 1.8 <= slope_ds <= 2.2
    record_criterion(
        9, ok,
        f"tc1 slope {slope_tc:.3f} in [0.9,1.4] over N={n.astype(int).tolist()} "
        f"(t={', '.join(f'{v:.3g}s' for v in t)}); direct slope {slope_ds:.3f} in [1.8,2.2] "
        f"(t={', '.join(f'{v:.3g}s' for v in td)})",
    )


# -- 10 -----------------------------------------------------------------------


def test_criterion_10_treecode2(record_criterion, mesh12288, gaussian):
    prep, ref = mesh12288
    tree = prep.tree
    # representative well-separated pair: first leaf and its farthest far-field node
    leaf = int(tree.leaves[0])
    far = np.concatenate(list(prep.lists.far_by_level(leaf).values()))
    node = int(far[np.argmax(np.linalg.norm(tree.barycenter[far] - tree.barycenter[leaf], axis=1))])
    cal = calibrate_pmax(tree.barycenter[leaf], node, tree, prep.moments, prep.leaf_quad, list(range(1, 11)))
    p_max = cal.p_max
    if not cal.crossed:
        # crossover beyond the prepared orders: rebuild moments up to 40
        big = prepare(tree, gaussian.source, 40, lists=prep.lists)
        cal = calibrate_pmax(tree.barycenter[leaf], node, tree, big.moments, big.leaf_quad, list(range(1, 41)))
        p_max = cal.p_max
        prep = big
    cfg1 = SolverConfig(epsilon=1e-8, p_max=p_max, f_bound=F_BOUND, mode="tc1")
    cfg2 = SolverConfig(epsilon=1e-8, p_max=p_max, f_bound=F_BOUND, mode="tc2")
    s1 = solve(prep, cfg1)
    s2 = solve(prep, cfg2)
    err2 = np.abs(s2.values - ref)
    # per target: error within the bound of the orders used, and that bound
    # within the budget eps (each accepted node met eps / (8^s n_l C M))
    # direct fallbacks sum in a different order than the oracle; allow
    # random-walk roundoff over all quadrature points
    n_points = prep.leaf_quad.points.shape[0] * prep.leaf_quad.points.shape[1]
    tol = np.finfo(float).eps * math.sqrt(n_points) * np.abs(ref).max()
    bound_ok = bool(np.all(err2 <= s2.bound + tol)) and bool(np.all(s2.bound <= cfg2.epsilon))
    faster = s2.eval_seconds <= s1.eval_seconds
    record_criterion(
        10, faster and bound_ok,
        f"calibrated P_max={p_max}; eval tc1 {s1.eval_seconds:.2f}s, "
        f"tc2 {s2.eval_seconds:.2f}s -> tc2<=tc1 {faster}; E2 tc1 {e2(s1, ref, tree):.2e}, "
        f"tc2 {e2(s2, ref, tree):.2e}; tc2 per-target bound holds {bound_ok}",
    )


# -- 11 -----------------------------------------------------------------------


def test_criterion_11_truncation(record_criterion, gaussian, mesh1536):
    prep, _ = mesh1536
    e_dt = truncation_error(gaussian, prep.tree)
    expected = 2 * math.exp(-4 * math.pi)
    rel = abs(e_dt / expected - 1)
    record_criterion(11, rel <= 1e-3, f"E_DT={e_dt:.6e}, 2exp(-4pi)={expected:.6e}, rel {rel:.1e} (tol 1e-3)")
