import itertools
import math

import numpy as np
import pytest

from opskit.formulate import (build_dc, build_nf, build_objective, build_soc,
                              extract_solution, theta_delta_max, w_bounds,
                              write_lp)
from opskit.mipsolve import cone_converged_lp, solve_lp, solve_mip
from opskit.netcase import Line, parse_native
from opskit.scenario import Scenario, generate_scenarios

from conftest import bus, gen, line, load, native_doc


def _line(ang_lo, ang_hi):
    return Line(id=1, from_bus=1, to_bus=2, g_series=0.0, b_series=-10.0,
                g_fr=0.0, b_fr=0.0, g_to=0.0, b_to=0.0, tap_re=1.0,
                tap_im=0.0, thermal=10.0, ang_min=ang_lo, ang_max=ang_hi)


def _pin(model, key, value):
    model.add_row(f"pin_{key}", [(model[key], 1.0)], lo=value, hi=value)


def _scn(net, alpha, risk=None):
    if risk is None:
        risk = {lid: 1.0 for lid in net.lines}
    return Scenario(id=0, alpha=alpha, risk=risk, seed=0)


# --- angle spread bound -----------------------------------------------------

def test_theta_delta_max_case3(case3):
    # three lines, each window +-30 degrees
    assert theta_delta_max(case3) == pytest.approx(math.pi / 2)


def test_theta_delta_max_single_line():
    doc = native_doc(buses=[bus(1), bus(2)], lines=[line(1, 1, 2, ang=0.2)],
                     generators=[gen(1, 1)], loads=[load(1, 2, 1.0)])
    assert theta_delta_max(parse_native(doc)) == pytest.approx(0.2)


def test_theta_delta_max_bounds_feasible_spreads(case3):
    # within any component connected by energized lines, the angle gap
    # between two buses telescopes over line windows and stays within the
    # bound, so the big-M relaxation never cuts a feasible point
    limit = theta_delta_max(case3)
    scn = _scn(case3, 0.3)
    for pattern in itertools.product((0, 1), repeat=len(case3.lines)):
        m = build_dc(case3, scn)
        for lid, v in zip(case3.lines, pattern):
            _pin(m, ("line", lid, "z"), v)
        res = solve_mip(m)
        if res.status != "optimal":
            continue
        comp = {b: b for b in case3.buses}

        def root(b):
            while comp[b] != b:
                b = comp[b]
            return b

        for lid, v in zip(case3.lines, pattern):
            if v:
                ln = case3.lines[lid]
                comp[root(ln.from_bus)] = root(ln.to_bus)
        groups = {}
        for b in case3.buses:
            groups.setdefault(root(b), []).append(
                res.incumbent[m[("bus", b, "theta")].index])
        for thetas in groups.values():
            assert max(thetas) - min(thetas) <= limit + 1e-9, pattern


# --- voltage product bounds -------------------------------------------------

def test_w_bounds_nonnegative_window():
    got = w_bounds(_line(0.0, math.pi / 6), 0.9, 1.1, 0.9, 1.1)
    expect = (0.81 * math.cos(math.pi / 6), 1.21, 0.0, 1.21 * 0.5)
    assert got == pytest.approx(expect, abs=5e-6)
    assert got[0] == pytest.approx(0.70148, abs=5e-6)


def test_w_bounds_nonpositive_window():
    got = w_bounds(_line(-math.pi / 6, 0.0), 0.9, 1.1, 0.9, 1.1)
    assert got == pytest.approx((0.70148, 1.21, -0.605, 0.0), abs=5e-6)


def test_w_bounds_straddling_window():
    got = w_bounds(_line(-math.pi / 6, math.pi / 6), 0.9, 1.1, 0.9, 1.1)
    assert got == pytest.approx((0.70148, 1.21, -0.605, 0.605), abs=5e-6)


def test_w_bounds_rejects_wide_window():
    with pytest.raises(ValueError, match="angle window"):
        w_bounds(_line(-2.0, 0.3), 0.9, 1.1, 0.9, 1.1)
    with pytest.raises(ValueError, match="angle window"):
        w_bounds(_line(0.0, math.pi / 2), 0.9, 1.1, 0.9, 1.1)


@pytest.mark.parametrize("window", [(-0.52, 0.52), (0.05, 0.5), (-0.5, -0.05),
                                    (-0.3, 0.1)])
def test_w_bounds_sampling_soundness(window):
    rng = np.random.default_rng(1)
    vi_lo, vi_hi, vj_lo, vj_hi = 0.88, 1.06, 0.94, 1.12
    wr_lo, wr_hi, wi_lo, wi_hi = w_bounds(_line(*window), vi_lo, vi_hi,
                                          vj_lo, vj_hi)
    vi = rng.uniform(vi_lo, vi_hi, 4000)
    vj = rng.uniform(vj_lo, vj_hi, 4000)
    d = rng.uniform(window[0], window[1], 4000)
    wr = vi * vj * np.cos(d)
    wi = vi * vj * np.sin(d)
    assert wr.min() >= wr_lo - 1e-9 and wr.max() <= wr_hi + 1e-9
    assert wi.min() >= wi_lo - 1e-9 and wi.max() <= wi_hi + 1e-9


# --- objective --------------------------------------------------------------

@pytest.fixture()
def two_load_net():
    doc = native_doc(buses=[bus(1), bus(2), bus(3)],
                     lines=[line(1, 1, 2), line(2, 1, 3)],
                     generators=[gen(1, 1)],
                     loads=[load(1, 2, 1.0), load(2, 3, 1.0)])
    return parse_native(doc)


def test_objective_example(two_load_net):
    scn = _scn(two_load_net, 0.5, risk={1: 3.0, 2: 9.0})
    coeffs = build_objective(two_load_net, scn)
    assert coeffs[("load", 1, "x")] == pytest.approx(0.25)
    assert coeffs[("load", 2, "x")] == pytest.approx(0.25)
    assert coeffs[("line", 1, "z")] == pytest.approx(-0.125)
    assert coeffs[("line", 2, "z")] == pytest.approx(-0.375)
    assert len(coeffs) == 4


def test_objective_endpoints(two_load_net):
    at0 = build_objective(two_load_net, _scn(two_load_net, 0.0))
    assert all(v == 0.0 for k, v in at0.items() if k[0] == "line")
    at1 = build_objective(two_load_net, _scn(two_load_net, 1.0))
    assert all(v == 0.0 for k, v in at1.items() if k[0] == "load")


def test_objective_errors(two_load_net):
    with pytest.raises(ValueError, match="lacks risk"):
        build_objective(two_load_net, _scn(two_load_net, 0.5, risk={1: 1.0}))
    with pytest.raises(ValueError, match="risk must be positive"):
        build_objective(two_load_net, _scn(two_load_net, 0.5,
                                           risk={1: 0.0, 2: 0.0}))
    with pytest.raises(ValueError, match="alpha"):
        build_objective(two_load_net, _scn(two_load_net, 1.5))
    nodemand = parse_native(native_doc(
        buses=[bus(1), bus(2)], lines=[line(1, 1, 2)],
        generators=[gen(1, 1)], loads=[load(1, 2, 0.0)]))
    with pytest.raises(ValueError, match="demand"):
        build_objective(nodemand, _scn(nodemand, 0.5))


# --- network flow model -----------------------------------------------------

def test_nf_single_bus_serves_everything(single_bus_net):
    scn = Scenario(id=0, alpha=0.0, risk={}, seed=0)
    m = build_nf(single_bus_net, scn)
    res = solve_mip(m)
    sol = extract_solution(single_bus_net, scn, m, res, "nf")
    assert res.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-9)
    assert sol.x_load[1] == pytest.approx(1.0)


@pytest.mark.parametrize("builder", [build_nf, build_dc, build_soc])
def test_alpha_one_shuts_everything(case3, builder):
    m = builder(case3, _scn(case3, 1.0))
    res = solve_mip(m)
    sol = extract_solution(case3, _scn(case3, 1.0), m, res, builder.__name__[-2:]
                           if builder is not build_soc else "soc")
    assert res.status == "optimal"
    assert all(v == 0 for v in sol.z_line.values())
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_nf_row_inventory(two_bus):
    # closed form for the emitted rows: per gen an energization row and a
    # two-sided capability box, per line two energization rows and a
    # two-sided rating box, per load and shunt one energization row, one
    # active-power balance per bus
    m = build_nf(two_bus, _scn(two_bus, 0.5))
    g, l = len(two_bus.generators), len(two_bus.lines)
    d, s, b = len(two_bus.loads), len(two_bus.shunts), len(two_bus.buses)
    assert len(m.linear_rows) == 3 * g + 4 * l + d + s + b
    assert m.stats()["cone_rows"] == 0
    assert not any(k[2] == "theta" for k in m.var_map)


def test_nf_stats_smoke(case14):
    m = build_nf(case14, _scn(case14, 0.5))
    st = m.stats()
    # one binary per bus, line and gen
    assert st["binaries"] == len(case14.buses) + len(case14.lines) + len(
        case14.generators)


# --- dc model ---------------------------------------------------------------

def test_dc_flow_tracks_angle_difference():
    net = parse_native(native_doc(
        buses=[bus(1), bus(2)], lines=[line(1, 1, 2, b=-10.0)],
        generators=[gen(1, 1, pmax=2.0)], loads=[load(1, 2, 1.0)]))
    m = build_dc(net, _scn(net, 0.5))
    _pin(m, ("line", 1, "z"), 1)
    for b in net.buses:
        _pin(m, ("bus", b, "z"), 1)
    # bus 1 is the angle reference (fixed 0), so put the gap on bus 2
    _pin(m, ("bus", 2, "theta"), -0.1)
    res = solve_lp(m)
    assert res.status == "optimal"
    p = res.primal[m[("line", 1, "p")].index]
    # b_series = -10, so P = -b * (theta_1 - theta_2) = 1.0
    assert p == pytest.approx(1.0, abs=1e-8)


def test_dc_deenergized_line_carries_nothing(two_bus):
    base = build_dc(two_bus, _scn(two_bus, 0.5))
    _pin(base, ("line", 1, "z"), 0)
    pvar = base[("line", 1, "p")]
    for sense in (1.0, -1.0):
        base.objective = [(pvar, sense)]
        res = solve_lp(base)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(0.0, abs=1e-9)


def test_dc_matches_pattern_enumeration(case3):
    # exhaustive line-state enumeration (buses and gens held on, which is
    # harmless here since every pmin <= 0) must agree with the solver
    assert all(g.pmin <= 0 for g in case3.generators.values())
    scn = _scn(case3, 0.5, risk={lid: (10.0 if i == 0 else 0.1)
                                 for i, lid in enumerate(case3.lines)})
    best_obj, best_pattern = -math.inf, None
    for pattern in itertools.product((0, 1), repeat=len(case3.lines)):
        m = build_dc(case3, scn)
        for lid, v in zip(case3.lines, pattern):
            _pin(m, ("line", lid, "z"), v)
        for b in case3.buses:
            _pin(m, ("bus", b, "z"), 1)
        for g in case3.generators:
            _pin(m, ("gen", g, "z"), 1)
        res = solve_lp(m)
        if res.status == "optimal" and res.objective > best_obj + 1e-12:
            best_obj, best_pattern = res.objective, pattern
    m = build_dc(case3, scn)
    res = solve_mip(m)
    sol = extract_solution(case3, scn, m, res, "dc")
    assert res.status == "optimal"
    assert res.objective == pytest.approx(best_obj, abs=1e-6)
    assert tuple(sol.z_line[lid] for lid in case3.lines) == best_pattern


# --- soc model --------------------------------------------------------------

def test_soc_energized_line_links_voltage_copies(case3):
    scn = _scn(case3, 0.5)
    lid = next(iter(case3.lines))
    wfr = None
    for sense in (1.0, -1.0):
        m = build_soc(case3, scn)
        _pin(m, ("line", lid, "z"), 1)
        ln = case3.lines[lid]
        wfr, wii = m[("line", lid, "w_fr")], m[("bus", ln.from_bus, "w")]
        m.objective = [(wfr, sense), (wii, -sense)]
        res = solve_lp(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(0.0, abs=1e-9)


def test_soc_deenergized_line_zeroes_lifted_vars(case3):
    scn = _scn(case3, 0.5)
    lid = next(iter(case3.lines))
    for role in ("w_fr", "w_to", "w_re", "w_im", "p_fr", "q_fr", "p_to", "q_to"):
        for sense in (1.0, -1.0):
            m = build_soc(case3, scn)
            _pin(m, ("line", lid, "z"), 0)
            m.objective = [(m[("line", lid, role)], sense)]
            res = solve_lp(m)
            assert res.status == "optimal", role
            assert res.objective == pytest.approx(0.0, abs=1e-9), role


def test_soc_upper_bounds_ac_when_intact(case3):
    from opskit.acpower import Topology, redispatch
    scn = _scn(case3, 0.0)
    m = build_soc(case3, scn)
    for key in list(m.var_map):
        if key[2] == "z":
            _pin(m, key, 1)
    res = cone_converged_lp(m)
    assert res.status == "optimal"
    rd = redispatch(case3, scn, Topology.all_on(case3))
    assert rd.status == "feasible"
    pd_tot = sum(d.pd for d in case3.loads.values())
    assert res.objective >= rd.load_served / pd_tot - 1e-6


# --- shared infrastructure --------------------------------------------------

@pytest.mark.parametrize("builder", [build_nf, build_dc, build_soc])
def test_model_determinism(tmp_path, case5, builder):
    scn = generate_scenarios(case5, 1, seed=3)[0]
    a, b = tmp_path / "a.lp", tmp_path / "b.lp"
    write_lp(builder(case5, scn), a)
    write_lp(builder(case5, scn), b)
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert "z_line_" in text and "balance_p_" in text


def test_write_lp_cone_sidecar(tmp_path, case3):
    import json
    path = tmp_path / "soc.lp"
    model = build_soc(case3, _scn(case3, 0.5))
    write_lp(model, path)
    cones = json.loads((tmp_path / "soc.lp.cones.json").read_text())
    assert len(cones) == len(model.cone_rows) > 0
    assert all("name" in c and "lhs" in c and "rhs" in c for c in cones)


def test_extract_solution_fractions(case3):
    scn = _scn(case3, 0.25)
    m = build_dc(case3, scn)
    res = solve_mip(m)
    sol = extract_solution(case3, scn, m, res, "dc")
    pd_tot = sum(d.pd for d in case3.loads.values())
    r_tot = sum(scn.risk.values())
    load = sum(d.pd * sol.x_load[d.id] for d in case3.loads.values()) / pd_tot
    risk = sum(scn.risk[l] * sol.z_line[l] for l in case3.lines) / r_tot
    assert sol.load_served_frac == pytest.approx(load, abs=1e-9)
    assert sol.risk_served_frac == pytest.approx(risk, abs=1e-9)
    assert sol.objective == pytest.approx(
        0.75 * load - 0.25 * risk, abs=1e-9)
