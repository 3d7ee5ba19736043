import itertools
import math

import numpy as np
import pytest

from opskit.formulate import LinExpr, MixedIntegerModel, build_dc, build_soc
from opskit.mipsolve import (SolveOptions, SolverError, cone_converged_lp,
                             lp_stats, reset_lp_stats, separate_cone, solve_lp,
                             solve_mip)
from opskit.scenario import Scenario


def _model(name="m"):
    return MixedIntegerModel(name)


# --- plain LP ---------------------------------------------------------------

def test_lp_single_variable():
    m = _model()
    x = m.add_variable(("x",), "x", 0.0, math.inf)
    m.add_row("cap", [(x, 1.0)], hi=1.0)
    m.objective = [(x, 1.0)]
    res = solve_lp(m)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(1.0, abs=1e-9)
    assert res.primal[x.index] == pytest.approx(1.0, abs=1e-9)


def test_lp_two_variable_vertex():
    m = _model()
    x = m.add_variable(("x",), "x", 0.0, math.inf)
    y = m.add_variable(("y",), "y", 0.0, math.inf)
    m.add_row("sum", [(x, 1.0), (y, 1.0)], hi=1.0)
    m.add_row("order", [(x, 1.0), (y, -1.0)], hi=0.0)
    m.objective = [(x, 1.0), (y, 1.0)]
    res = solve_lp(m)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(1.0, abs=1e-9)
    px, py = res.primal[x.index], res.primal[y.index]
    assert px + py == pytest.approx(1.0, abs=1e-9)
    assert px <= py + 1e-9


def test_lp_unbounded():
    m = _model()
    x = m.add_variable(("x",), "x", 0.0, math.inf)
    m.objective = [(x, 1.0)]
    assert solve_lp(m).status == "unbounded"


def test_lp_infeasible():
    m = _model()
    x = m.add_variable(("x",), "x", 0.0, 1.0)
    m.add_row("lo", [(x, 1.0)], lo=2.0)
    m.objective = [(x, 1.0)]
    assert solve_lp(m).status == "infeasible"


def test_lp_duality_tracking(case5):
    reset_lp_stats()
    scn = Scenario(id=0, alpha=0.4, risk={l: 1.0 for l in case5.lines}, seed=0)
    res = solve_lp(build_dc(case5, scn))
    assert res.status == "optimal"
    stats = lp_stats()
    assert stats["count"] >= 1
    assert stats["max_rel_duality_gap"] <= 1e-6
    assert res.duality_gap <= 1e-6 * (1.0 + abs(res.objective))


# --- cone separation --------------------------------------------------------

def _thermal_cone(m, t_hi=1.0):
    p = m.add_variable(("p",), "p", -10.0, 10.0)
    q = m.add_variable(("q",), "q", -10.0, 10.0)
    z = m.add_variable(("z",), "z", 0.0, 1.0)
    cone = m.add_cone("rating",
                      [LinExpr(((p, 1.0),)), LinExpr(((q, 1.0),))],
                      LinExpr(((z, t_hi),)))
    return p, q, z, cone


def test_separate_cone_returns_supporting_cut():
    m = _model()
    p, q, z, cone = _thermal_cone(m)
    point = np.zeros(3)
    point[p.index], point[q.index], point[z.index] = 1.0, 0.0, 0.5
    cut = separate_cone(cone, point)
    assert cut is not None
    # gradient at (1, 0) is (1, 0): cut is p - z <= 0, violated by 0.5
    coeffs = {v.index: c for v, c in cut.terms}
    assert coeffs[p.index] == pytest.approx(1.0)
    assert coeffs.get(q.index, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert coeffs[z.index] == pytest.approx(-1.0)
    slack = sum(c * point[i] for i, c in coeffs.items())
    assert slack - cut.hi == pytest.approx(0.5, abs=1e-9)


def test_separate_cone_inside_point():
    m = _model()
    p, q, z, cone = _thermal_cone(m)
    point = np.zeros(3)
    point[p.index], point[q.index], point[z.index] = 0.3, 0.4, 1.0
    assert separate_cone(cone, point) is None


def test_separate_cone_zero_lhs():
    m = _model()
    p, q, z, cone = _thermal_cone(m)
    point = np.zeros(3)
    point[z.index] = -0.1  # rhs slightly negative, lhs exactly zero
    assert separate_cone(cone, point) is None


def test_cone_refinement_converges_quickly():
    # maximize p + q under a disc of radius 1: optimum sqrt(2) at 45 degrees
    m = _model()
    p, q, z, cone = _thermal_cone(m)
    m.add_row("on", [(z, 1.0)], lo=1.0)
    m.objective = [(p, 1.0), (q, 1.0)]
    res = cone_converged_lp(m, max_rounds=50)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(math.sqrt(2.0), abs=1e-5)
    val = math.hypot(res.primal[p.index], res.primal[q.index])
    assert val <= 1.0 + 1e-6


# --- branch and bound -------------------------------------------------------

def _knapsack(weights, values, cap, name="knap"):
    m = _model(name)
    xs = [m.add_variable(("x", i), f"x_{i}", 0.0, 1.0, binary=True)
          for i in range(len(weights))]
    m.add_row("cap", [(x, w) for x, w in zip(xs, weights)], hi=cap)
    m.objective = [(x, v) for x, v in zip(xs, values)]
    return m, xs


def test_all_binaries_fixed_single_node():
    m = _model()
    x = m.add_variable(("x",), "x", 1.0, 1.0, binary=True)
    y = m.add_variable(("y",), "y", 0.0, 2.0)
    m.add_row("link", [(y, 1.0), (x, -1.5)], hi=0.0)
    m.objective = [(y, 1.0)]
    res = solve_mip(m)
    assert res.status == "optimal"
    assert res.nodes == 1
    assert res.objective == pytest.approx(1.5, abs=1e-9)


def test_milp_against_bruteforce():
    rng = np.random.default_rng(0)
    for trial in range(5):
        w = rng.uniform(0.5, 2.0, 6)
        v = rng.uniform(0.1, 1.0, 6)
        cap = float(w.sum() * 0.45)
        m, xs = _knapsack(w, v, cap, name=f"knap{trial}")
        res = solve_mip(m)
        assert res.status == "optimal"
        best = max(float(v @ np.array(bits))
                   for bits in itertools.product((0, 1), repeat=6)
                   if float(w @ np.array(bits)) <= cap + 1e-12)
        assert res.objective == pytest.approx(best, abs=1e-6)
        assert res.best_bound >= res.objective - 1e-9
        assert res.gap >= 0.0


def _misocp(seed):
    # pick at most two of four unit discs; payout differs per disc
    rng = np.random.default_rng(seed)
    m = _model(f"misocp{seed}")
    pays = rng.uniform(0.5, 1.5, 4)
    zs, ps = [], []
    for i in range(4):
        p = m.add_variable(("p", i), f"p_{i}", -2.0, 2.0)
        q = m.add_variable(("q", i), f"q_{i}", -2.0, 2.0)
        z = m.add_variable(("z", i), f"z_{i}", 0.0, 1.0, binary=True)
        m.add_cone(f"disc_{i}", [LinExpr(((p, 1.0),)), LinExpr(((q, 1.0),))],
                   LinExpr(((z, 1.0),)))
        zs.append(z)
        ps.append(p)
    m.add_row("pick2", [(z, 1.0) for z in zs], hi=2.0)
    m.objective = [(p, c) for p, c in zip(ps, pays)]
    return m, zs, pays


def test_misocp_against_cone_converged_oracle():
    m, zs, pays = _misocp(7)
    res = solve_mip(m)
    assert res.status == "optimal"
    best = -math.inf
    for bits in itertools.product((0, 1), repeat=4):
        if sum(bits) > 2:
            continue
        fix = _misocp(7)[0]
        for z, b in zip(fix.variables[2::3], bits):
            fix.add_row(f"pin_{z.name}", [(z, 1.0)], lo=b, hi=b)
        sub = cone_converged_lp(fix)
        if sub.status == "optimal":
            best = max(best, sub.objective)
    assert res.objective == pytest.approx(best, abs=1e-6)


def test_incumbent_satisfies_everything():
    m, zs, pays = _misocp(3)
    res = solve_mip(m)
    assert res.status == "optimal"
    x = res.incumbent
    for row in m.linear_rows:
        val = sum(c * x[v.index] for v, c in row.terms)
        assert row.lo - 1e-7 <= val <= row.hi + 1e-7
    for cone in m.cone_rows:
        lhs = math.sqrt(sum(e.value(x) ** 2 for e in cone.lhs))
        assert lhs <= cone.rhs.value(x) + 1e-6
    for v in m.variables:
        if v.is_binary:
            assert abs(x[v.index] - round(x[v.index])) <= 1e-6


def test_monotone_best_bound():
    rng = np.random.default_rng(5)
    w = rng.uniform(0.5, 2.0, 8)
    v = rng.uniform(0.1, 1.0, 8)
    m, _ = _knapsack(w, v, float(w.sum() * 0.4))
    res = solve_mip(m)
    bounds = [entry["bound"] for entry in res.node_log]
    assert len(bounds) == res.nodes
    assert all(b1 >= b2 - 1e-9 for b1, b2 in zip(bounds, bounds[1:]))


def test_determinism(case3):
    scn = Scenario(id=0, alpha=0.5, risk={l: float(l) for l in case3.lines},
                   seed=0)
    r1 = solve_mip(build_soc(case3, scn))
    r2 = solve_mip(build_soc(case3, scn))
    assert r1.status == r2.status == "optimal"
    assert r1.nodes == r2.nodes
    assert r1.objective == r2.objective
    assert np.array_equal(r1.incumbent, r2.incumbent)


def test_dc_incumbent_matches_enumeration(case3):
    scn = Scenario(id=0, alpha=0.5,
                   risk=dict(zip(case3.lines, (1.0, 2.0, 3.0))), seed=0)
    res = solve_mip(build_dc(case3, scn))
    assert res.status == "optimal"
    best = -math.inf
    for bits in itertools.product((0, 1), repeat=3):
        m = build_dc(case3, scn)
        for lid, b in zip(case3.lines, bits):
            m.add_row(f"pin_{lid}", [(m[("line", lid, "z")], 1.0)], lo=b, hi=b)
        sub = solve_mip(m)
        if sub.status == "optimal":
            best = max(best, sub.objective)
    assert res.objective == pytest.approx(best, abs=1e-6)


def test_soc_incumbent_beats_ac_enumeration(case3):
    from opskit.acpower import ac_ops_enumerate
    scn = Scenario(id=0, alpha=0.5,
                   risk=dict(zip(case3.lines, (1.0, 2.0, 3.0))), seed=0)
    m = build_soc(case3, scn)
    res = solve_mip(m, SolveOptions(rel_gap_tol=1e-8))
    assert res.status == "optimal"
    exact = ac_ops_enumerate(case3, scn)
    assert res.objective >= exact.objective - 1e-6
    x = res.incumbent
    for cone in m.cone_rows:
        lhs = math.sqrt(sum(e.value(x) ** 2 for e in cone.lhs))
        assert lhs <= cone.rhs.value(x) + 1e-6


def test_time_limit_reports_progress():
    rng = np.random.default_rng(11)
    n = 24
    w = rng.uniform(0.5, 2.0, n)
    v = rng.uniform(0.1, 1.0, n)
    m, _ = _knapsack(w, v, float(w.sum() * 0.5))
    res = solve_mip(m, SolveOptions(time_limit=1e-4, rel_gap_tol=1e-12))
    assert res.status in ("time_limit", "optimal")
    if res.status == "time_limit" and res.incumbent is not None:
        assert res.best_bound >= res.objective - 1e-9


def test_options_validation():
    with pytest.raises(ValueError, match="positive"):
        SolveOptions(time_limit=0.0)
    with pytest.raises(ValueError, match="positive"):
        SolveOptions(rel_gap_tol=-1e-9)
    with pytest.raises(ValueError, match="max_cuts_per_node"):
        SolveOptions(max_cuts_per_node=0)
    with pytest.raises(ValueError, match="node selection"):
        SolveOptions(node_selection="dfs")
    with pytest.raises(ValueError, match="branch rule"):
        SolveOptions(branch_rule="pseudo-cost")


def test_mip_infeasible():
    m = _model()
    x = m.add_variable(("x",), "x", 0.0, 1.0, binary=True)
    m.add_row("gap", [(x, 1.0)], lo=0.25, hi=0.75)
    m.objective = [(x, 1.0)]
    res = solve_mip(m)
    assert res.status == "infeasible"
    assert res.incumbent is None
