"""Mixed-integer model builders for the optimal shutoff problem.

Given a network and a risk scenario, each ``build_*`` function produces a
:class:`MixedIntegerModel` maximizing

    (1 - alpha) * sum_d x_d * w_d * Pd_d / Pd_total
        - alpha * sum_l z_l * R_l / R_total

subject to energization logic (nothing operates on a de-energized bus) and
one of three physics approximations:

* ``build_nf``   -- network flow: line flows limited only by ratings,
* ``build_dc``   -- linearized active-power flow with big-M decoupling of
                    de-energized lines,
* ``build_soc``  -- second-order-cone relaxation in squared-voltage and
                    voltage-product variables.

Models are deterministic: building the same (net, scenario) twice yields
identical variable and row sequences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .netcase import Line, Network
from .scenario import Scenario

__all__ = [
    "VariableRef", "LinExpr", "LinearRow", "ConeRow", "MixedIntegerModel",
    "ShutoffSolution", "theta_delta_max", "w_bounds", "flow_coefficients",
    "build_objective", "build_nf", "build_dc", "build_soc",
    "extract_solution", "write_lp",
]

INF = math.inf


@dataclass(frozen=True)
class VariableRef:
    index: int
    name: str
    lo: float
    hi: float
    is_binary: bool = False


@dataclass(frozen=True)
class LinExpr:
    """Affine expression: sum of (var, coeff) terms plus a constant."""
    terms: tuple[tuple[VariableRef, float], ...]
    const: float = 0.0

    def value(self, x) -> float:
        return self.const + sum(c * x[v.index] for v, c in self.terms)


@dataclass(frozen=True)
class LinearRow:
    name: str
    terms: tuple[tuple[VariableRef, float], ...]
    lo: float
    hi: float


@dataclass(frozen=True)
class ConeRow:
    """Second-order cone membership: || lhs ||_2 <= rhs."""
    name: str
    lhs: tuple[LinExpr, ...]
    rhs: LinExpr


class MixedIntegerModel:
    """Maximization model over box-bounded variables, linear rows and
    second-order-cone rows. ``var_map`` resolves (component kind, id, role)
    to the variable, e.g. ``("line", 3, "z")`` or ``("gen", 2, "p")``."""

    def __init__(self, name: str):
        self.name = name
        self.variables: list[VariableRef] = []
        self.linear_rows: list[LinearRow] = []
        self.cone_rows: list[ConeRow] = []
        self.objective: list[tuple[VariableRef, float]] = []
        self.var_map: dict[tuple, VariableRef] = {}

    def add_variable(self, key: tuple, name: str, lo: float, hi: float,
                     binary: bool = False) -> VariableRef:
        if key in self.var_map:
            raise ValueError(f"duplicate variable key {key}")
        ref = VariableRef(len(self.variables), name, lo, hi, binary)
        self.variables.append(ref)
        self.var_map[key] = ref
        return ref

    def add_row(self, name: str, terms, lo: float = -INF, hi: float = INF) -> LinearRow:
        row = LinearRow(name, tuple(terms), lo, hi)
        self.linear_rows.append(row)
        return row

    def add_cone(self, name: str, lhs, rhs: LinExpr) -> ConeRow:
        row = ConeRow(name, tuple(lhs), rhs)
        self.cone_rows.append(row)
        return row

    def __getitem__(self, key: tuple) -> VariableRef:
        return self.var_map[key]

    def stats(self) -> dict:
        return {
            "variables": len(self.variables),
            "binaries": sum(1 for v in self.variables if v.is_binary),
            "linear_rows": len(self.linear_rows),
            "cone_rows": len(self.cone_rows),
        }


def theta_delta_max(net: Network) -> float:
    """Worst-case angle spread: sum over lines of the larger absolute
    angle-difference limit. Used to size big-M constants."""
    return sum(max(abs(ln.ang_min), abs(ln.ang_max)) for ln in net.lines.values())


def w_bounds(line: Line, vi_lo: float, vi_hi: float,
             vj_lo: float, vj_hi: float) -> tuple[float, float, float, float]:
    """Bounds on the voltage products Vi*Vj*cos(d) and Vi*Vj*sin(d) for
    d in the line's angle window and each magnitude in its box.

    Returns (wr_lo, wr_hi, wi_lo, wi_hi). Requires the angle window to sit
    strictly inside (-pi/2, pi/2) so cos stays positive.
    """
    tl, th = line.ang_min, line.ang_max
    if not (-math.pi / 2 < tl <= th < math.pi / 2):
        raise ValueError(f"line {line.id}: angle window ({tl}, {th}) "
                         "not inside (-pi/2, pi/2)")
    if min(vi_lo, vj_lo) < 0:
        raise ValueError("voltage bounds must be nonnegative")
    lo = vi_lo * vj_lo
    hi = vi_hi * vj_hi
    if tl >= 0.0:
        # cos decreasing, sin increasing and nonnegative on [tl, th]
        return lo * math.cos(th), hi * math.cos(tl), lo * math.sin(tl), hi * math.sin(th)
    if th <= 0.0:
        return lo * math.cos(tl), hi * math.cos(th), hi * math.sin(tl), lo * math.sin(th)
    # window straddles zero: cos peaks at d = 0
    return lo * min(math.cos(tl), math.cos(th)), hi, hi * math.sin(tl), hi * math.sin(th)


def flow_coefficients(line: Line) -> dict[str, float]:
    """Coefficients of the branch power flows in the quantities

        wf = Vi^2,  wt = Vj^2,
        wr = Vi Vj cos(ti - tj),  wi = Vi Vj sin(ti - tj)

    for a line with series admittance g+jb, end shunts and an ideal
    transformer tap_re + j tap_im on the from side:

        p_fr = pf_wf * wf + pf_re * wr + pf_im * wi      (and so on)

    The same coefficients serve the exact equations (products of an actual
    operating point) and the cone relaxation (products replaced by lifted
    variables).
    """
    g, b = line.g_series, line.b_series
    tr, ti = line.tap_re, line.tap_im
    tm2 = line.tap_mag2
    return {
        "pf_wf": (g + line.g_fr) / tm2,
        "pf_re": (-g * tr + b * ti) / tm2,
        "pf_im": (-b * tr - g * ti) / tm2,
        "qf_wf": -(b + line.b_fr) / tm2,
        "qf_re": (b * tr + g * ti) / tm2,
        "qf_im": (-g * tr + b * ti) / tm2,
        "pt_wt": g + line.g_to,
        "pt_re": (-g * tr - b * ti) / tm2,
        "pt_im": (b * tr - g * ti) / tm2,
        "qt_wt": -(b + line.b_to),
        "qt_re": (b * tr - g * ti) / tm2,
        "qt_im": (g * tr + b * ti) / tm2,
    }


def build_objective(net: Network, scn: Scenario) -> dict[tuple, float]:
    """Objective coefficients keyed like ``var_map``: load served minus
    energized risk, both normalized, weighted (1 - alpha) / alpha."""
    a = scn.alpha
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {a}")
    missing = [lid for lid in net.lines if lid not in scn.risk]
    if missing:
        raise ValueError(f"scenario {scn.id} lacks risk values for lines {missing}")
    r_tot = sum(scn.risk[lid] for lid in net.lines)
    if net.lines and r_tot <= 0.0:
        raise ValueError(f"scenario {scn.id}: total line risk must be positive")
    pd_tot = sum(d.pd for d in net.loads.values())
    if pd_tot <= 0.0:
        raise ValueError("network has no active-power demand")
    coeffs: dict[tuple, float] = {}
    for d in net.loads.values():
        coeffs[("load", d.id, "x")] = (1.0 - a) * d.weight * d.pd / pd_tot
    for lid in net.lines:
        coeffs[("line", lid, "z")] = -a * scn.risk[lid] / r_tot
    return coeffs


def _add_shutoff_core(m: MixedIntegerModel, net: Network, scn: Scenario,
                      reactive: bool) -> None:
    """Shared part of all formulations: energization binaries, service
    fractions, generator dispatch boxes tied to their binaries, objective."""
    for bus in net.buses.values():
        m.add_variable(("bus", bus.id, "z"), f"z_bus_{bus.id}", 0.0, 1.0, binary=True)
    for ln in net.lines.values():
        m.add_variable(("line", ln.id, "z"), f"z_line_{ln.id}", 0.0, 1.0, binary=True)
    for g in net.generators.values():
        m.add_variable(("gen", g.id, "z"), f"z_gen_{g.id}", 0.0, 1.0, binary=True)
    for d in net.loads.values():
        m.add_variable(("load", d.id, "x"), f"x_load_{d.id}", 0.0, 1.0)
    for s in net.shunts.values():
        m.add_variable(("shunt", s.id, "x"), f"x_shunt_{s.id}", 0.0, 1.0)
    for g in net.generators.values():
        m.add_variable(("gen", g.id, "p"), f"p_gen_{g.id}",
                       min(g.pmin, 0.0), max(g.pmax, 0.0))
        if reactive:
            m.add_variable(("gen", g.id, "q"), f"q_gen_{g.id}",
                           min(g.qmin, 0.0), max(g.qmax, 0.0))

    # nothing runs on a de-energized bus
    for g in net.generators.values():
        m.add_row(f"gen_on_{g.id}",
                  [(m[("gen", g.id, "z")], 1.0), (m[("bus", g.bus, "z")], -1.0)],
                  hi=0.0)
    for ln in net.lines.values():
        m.add_row(f"line_on_fr_{ln.id}",
                  [(m[("line", ln.id, "z")], 1.0), (m[("bus", ln.from_bus, "z")], -1.0)],
                  hi=0.0)
        m.add_row(f"line_on_to_{ln.id}",
                  [(m[("line", ln.id, "z")], 1.0), (m[("bus", ln.to_bus, "z")], -1.0)],
                  hi=0.0)
    for d in net.loads.values():
        m.add_row(f"load_on_{d.id}",
                  [(m[("load", d.id, "x")], 1.0), (m[("bus", d.bus, "z")], -1.0)],
                  hi=0.0)
    for s in net.shunts.values():
        m.add_row(f"shunt_on_{s.id}",
                  [(m[("shunt", s.id, "x")], 1.0), (m[("bus", s.bus, "z")], -1.0)],
                  hi=0.0)

    # dispatch boxes scale with the unit binary
    for g in net.generators.values():
        m.add_row(f"gen_p_hi_{g.id}",
                  [(m[("gen", g.id, "p")], 1.0), (m[("gen", g.id, "z")], -g.pmax)],
                  hi=0.0)
        m.add_row(f"gen_p_lo_{g.id}",
                  [(m[("gen", g.id, "p")], 1.0), (m[("gen", g.id, "z")], -g.pmin)],
                  lo=0.0)
        if reactive:
            m.add_row(f"gen_q_hi_{g.id}",
                      [(m[("gen", g.id, "q")], 1.0), (m[("gen", g.id, "z")], -g.qmax)],
                      hi=0.0)
            m.add_row(f"gen_q_lo_{g.id}",
                      [(m[("gen", g.id, "q")], 1.0), (m[("gen", g.id, "z")], -g.qmin)],
                      lo=0.0)

    for key, coeff in build_objective(net, scn).items():
        m.objective.append((m[key], coeff))


def _balance_terms_nf(m: MixedIntegerModel, net: Network, bus_id: int):
    """Active-power balance terms with one flow variable per line (positive
    from -> to) and service-scaled shunt conductance at flat voltage."""
    terms = [(m[("gen", g.id, "p")], 1.0) for g in net.generators_at(bus_id)]
    for ln in net.lines.values():
        if ln.from_bus == bus_id:
            terms.append((m[("line", ln.id, "p")], -1.0))
        elif ln.to_bus == bus_id:
            terms.append((m[("line", ln.id, "p")], 1.0))
    for d in net.loads_at(bus_id):
        terms.append((m[("load", d.id, "x")], -d.pd))
    for s in net.shunts_at(bus_id):
        terms.append((m[("shunt", s.id, "x")], -s.gs))
    return terms


def build_nf(net: Network, scn: Scenario) -> MixedIntegerModel:
    """Network-flow formulation: a single rating-limited flow variable per
    line, no voltages or angles.

    Row inventory: 3 per generator, 2 coupling + 2 rating per line, 1 per
    load, 1 per shunt, 1 balance per bus.
    """
    m = MixedIntegerModel(f"nf_{net.name}_s{scn.id}")
    _add_shutoff_core(m, net, scn, reactive=False)
    for ln in net.lines.values():
        m.add_variable(("line", ln.id, "p"), f"p_line_{ln.id}", -ln.thermal, ln.thermal)
    for ln in net.lines.values():
        p, z = m[("line", ln.id, "p")], m[("line", ln.id, "z")]
        m.add_row(f"rating_hi_{ln.id}", [(p, 1.0), (z, -ln.thermal)], hi=0.0)
        m.add_row(f"rating_lo_{ln.id}", [(p, 1.0), (z, ln.thermal)], lo=0.0)
    for bus in net.buses.values():
        m.add_row(f"balance_p_{bus.id}", _balance_terms_nf(m, net, bus.id),
                  lo=0.0, hi=0.0)
    return m


def build_dc(net: Network, scn: Scenario) -> MixedIntegerModel:
    """Linearized active-power formulation: network flow plus bus angles.

    Energized lines couple flow to the angle difference through the series
    susceptance (referred through the tap magnitude); de-energized lines
    are released by big-M slack on both the flow link and the angle window.
    The lowest-id bus is the angle reference. Adds to the network-flow
    inventory: one angle variable per bus and 4 rows per line.
    """
    m = build_nf(net, scn)
    m.name = f"dc_{net.name}_s{scn.id}"
    spread = theta_delta_max(net)
    ref = min(net.buses)
    for bus in net.buses.values():
        lim = 0.0 if bus.id == ref else spread
        m.add_variable(("bus", bus.id, "theta"), f"theta_bus_{bus.id}", -lim, lim)
    for ln in net.lines.values():
        p, z = m[("line", ln.id, "p")], m[("line", ln.id, "z")]
        ti, tj = m[("bus", ln.from_bus, "theta")], m[("bus", ln.to_bus, "theta")]
        b = ln.b_series / ln.tap_mag2
        # flow and angle-window rows must stay slack for any two island
        # placements when z = 0, hence the widened constants
        m_flow = abs(b) * 2.0 * spread
        m_ang = spread + max(abs(ln.ang_min), abs(ln.ang_max))
        m.add_row(f"dc_flow_hi_{ln.id}",
                  [(p, 1.0), (ti, b), (tj, -b), (z, m_flow)], hi=m_flow)
        m.add_row(f"dc_flow_lo_{ln.id}",
                  [(p, 1.0), (ti, b), (tj, -b), (z, -m_flow)], lo=-m_flow)
        m.add_row(f"angle_hi_{ln.id}",
                  [(ti, 1.0), (tj, -1.0), (z, m_ang)], hi=ln.ang_max + m_ang)
        m.add_row(f"angle_lo_{ln.id}",
                  [(ti, 1.0), (tj, -1.0), (z, -m_ang)], lo=ln.ang_min - m_ang)
    return m


def build_soc(net: Network, scn: Scenario) -> MixedIntegerModel:
    """Second-order-cone relaxation in squared voltages and voltage
    products.

    Per bus: squared magnitude w tied to the bus binary. Per line: from/to
    squared-magnitude copies, real/imaginary product variables with
    energization-scaled bounds and angle-window tangent rows, four linear
    flow equations, two rating cones, and three product-consistency cones.
    Per shunt: an envelope variable for (squared voltage) * (service
    fraction). Balances include reactive power.
    """
    m = MixedIntegerModel(f"soc_{net.name}_s{scn.id}")
    _add_shutoff_core(m, net, scn, reactive=True)
    for bus in net.buses.values():
        m.add_variable(("bus", bus.id, "w"), f"w_bus_{bus.id}", 0.0, bus.vmax ** 2)
    for ln in net.lines.values():
        bi, bj = net.buses[ln.from_bus], net.buses[ln.to_bus]
        wr_lo, wr_hi, wi_lo, wi_hi = w_bounds(ln, bi.vmin, bi.vmax, bj.vmin, bj.vmax)
        m.add_variable(("line", ln.id, "w_fr"), f"wfr_line_{ln.id}", 0.0, bi.vmax ** 2)
        m.add_variable(("line", ln.id, "w_to"), f"wto_line_{ln.id}", 0.0, bj.vmax ** 2)
        m.add_variable(("line", ln.id, "w_re"), f"wre_line_{ln.id}",
                       min(wr_lo, 0.0), max(wr_hi, 0.0))
        m.add_variable(("line", ln.id, "w_im"), f"wim_line_{ln.id}",
                       min(wi_lo, 0.0), max(wi_hi, 0.0))
        for role, tag in (("p_fr", "pfr"), ("q_fr", "qfr"), ("p_to", "pto"), ("q_to", "qto")):
            m.add_variable(("line", ln.id, role), f"{tag}_line_{ln.id}",
                           -ln.thermal, ln.thermal)
    for s in net.shunts.values():
        m.add_variable(("shunt", s.id, "w"), f"w_shunt_{s.id}", 0.0,
                       net.buses[s.bus].vmax ** 2)

    for bus in net.buses.values():
        w, z = m[("bus", bus.id, "w")], m[("bus", bus.id, "z")]
        m.add_row(f"w_hi_{bus.id}", [(w, 1.0), (z, -bus.vmax ** 2)], hi=0.0)
        m.add_row(f"w_lo_{bus.id}", [(w, 1.0), (z, -bus.vmin ** 2)], lo=0.0)

    for ln in net.lines.values():
        bi, bj = net.buses[ln.from_bus], net.buses[ln.to_bus]
        wr_lo, wr_hi, wi_lo, wi_hi = w_bounds(ln, bi.vmin, bi.vmax, bj.vmin, bj.vmax)
        z = m[("line", ln.id, "z")]
        wi_, wj_ = m[("bus", ln.from_bus, "w")], m[("bus", ln.to_bus, "w")]
        wf, wt = m[("line", ln.id, "w_fr")], m[("line", ln.id, "w_to")]
        wre, wim = m[("line", ln.id, "w_re")], m[("line", ln.id, "w_im")]

        for tag, wcopy, wbus, vmax2 in (("fr", wf, wi_, bi.vmax ** 2),
                                        ("to", wt, wj_, bj.vmax ** 2)):
            vmin2 = (bi if tag == "fr" else bj).vmin ** 2
            m.add_row(f"w_{tag}_hi_{ln.id}", [(wcopy, 1.0), (z, -vmax2)], hi=0.0)
            m.add_row(f"w_{tag}_lo_{ln.id}", [(wcopy, 1.0), (z, -vmin2)], lo=0.0)
            # the copy equals the bus value when energized, 0 otherwise
            m.add_row(f"w_{tag}_link_hi_{ln.id}", [(wcopy, 1.0), (wbus, -1.0)], hi=0.0)
            m.add_row(f"w_{tag}_link_lo_{ln.id}",
                      [(wcopy, 1.0), (wbus, -1.0), (z, -vmax2)], lo=-vmax2)

        m.add_row(f"w_re_hi_{ln.id}", [(wre, 1.0), (z, -wr_hi)], hi=0.0)
        m.add_row(f"w_re_lo_{ln.id}", [(wre, 1.0), (z, -wr_lo)], lo=0.0)
        m.add_row(f"w_im_hi_{ln.id}", [(wim, 1.0), (z, -wi_hi)], hi=0.0)
        m.add_row(f"w_im_lo_{ln.id}", [(wim, 1.0), (z, -wi_lo)], lo=0.0)
        m.add_row(f"tangent_lo_{ln.id}",
                  [(wre, math.tan(ln.ang_min)), (wim, -1.0)], hi=0.0)
        m.add_row(f"tangent_hi_{ln.id}",
                  [(wim, 1.0), (wre, -math.tan(ln.ang_max))], hi=0.0)

        c = flow_coefficients(ln)
        pf, qf = m[("line", ln.id, "p_fr")], m[("line", ln.id, "q_fr")]
        pt, qt = m[("line", ln.id, "p_to")], m[("line", ln.id, "q_to")]
        m.add_row(f"flow_p_fr_{ln.id}",
                  [(pf, 1.0), (wf, -c["pf_wf"]), (wre, -c["pf_re"]), (wim, -c["pf_im"])],
                  lo=0.0, hi=0.0)
        m.add_row(f"flow_q_fr_{ln.id}",
                  [(qf, 1.0), (wf, -c["qf_wf"]), (wre, -c["qf_re"]), (wim, -c["qf_im"])],
                  lo=0.0, hi=0.0)
        m.add_row(f"flow_p_to_{ln.id}",
                  [(pt, 1.0), (wt, -c["pt_wt"]), (wre, -c["pt_re"]), (wim, -c["pt_im"])],
                  lo=0.0, hi=0.0)
        m.add_row(f"flow_q_to_{ln.id}",
                  [(qt, 1.0), (wt, -c["qt_wt"]), (wre, -c["qt_re"]), (wim, -c["qt_im"])],
                  lo=0.0, hi=0.0)

        # linear shadows of the rating cones (|p| and |q| each bounded by
        # the cone radius); they tighten relaxations before any cuts land
        for var, tag in ((pf, "pfr"), (qf, "qfr"), (pt, "pto"), (qt, "qto")):
            m.add_row(f"rating_{tag}_hi_{ln.id}",
                      [(var, 1.0), (z, -ln.thermal)], hi=0.0)
            m.add_row(f"rating_{tag}_lo_{ln.id}",
                      [(var, 1.0), (z, ln.thermal)], lo=0.0)
        m.add_cone(f"rating_fr_{ln.id}",
                   [LinExpr(((pf, 1.0),)), LinExpr(((qf, 1.0),))],
                   LinExpr(((z, ln.thermal),)))
        m.add_cone(f"rating_to_{ln.id}",
                   [LinExpr(((pt, 1.0),)), LinExpr(((qt, 1.0),))],
                   LinExpr(((z, ln.thermal),)))

        # wre^2 + wim^2 <= A*B for three (A, B) pairs, written as the
        # rotated cone ||(2 wre, 2 wim, A - B)|| <= A + B
        pairs = [
            ("ww", ((wi_, 1.0),), ((wj_, 1.0),)),
            ("wz_to", ((wi_, 1.0),), ((z, bj.vmax ** 2),)),
            ("wz_fr", ((z, bi.vmax ** 2),), ((wj_, 1.0),)),
        ]
        for tag, a_terms, b_terms in pairs:
            diff = tuple(a_terms) + tuple((v, -cf) for v, cf in b_terms)
            total = tuple(a_terms) + tuple(b_terms)
            m.add_cone(f"product_{tag}_{ln.id}",
                       [LinExpr(((wre, 2.0),)), LinExpr(((wim, 2.0),)),
                        LinExpr(diff)],
                       LinExpr(total))

    for s in net.shunts.values():
        vmax2 = net.buses[s.bus].vmax ** 2
        ws, wb = m[("shunt", s.id, "w")], m[("bus", s.bus, "w")]
        xs = m[("shunt", s.id, "x")]
        # envelope of (bus squared voltage) * (service fraction)
        m.add_row(f"shunt_w_hi_w_{s.id}", [(ws, 1.0), (wb, -1.0)], hi=0.0)
        m.add_row(f"shunt_w_hi_x_{s.id}", [(ws, 1.0), (xs, -vmax2)], hi=0.0)
        m.add_row(f"shunt_w_lo_{s.id}",
                  [(ws, 1.0), (wb, -1.0), (xs, -vmax2)], lo=-vmax2)

    for bus in net.buses.values():
        p_terms = [(m[("gen", g.id, "p")], 1.0) for g in net.generators_at(bus.id)]
        q_terms = [(m[("gen", g.id, "q")], 1.0) for g in net.generators_at(bus.id)]
        for ln in net.lines.values():
            if ln.from_bus == bus.id:
                p_terms.append((m[("line", ln.id, "p_fr")], -1.0))
                q_terms.append((m[("line", ln.id, "q_fr")], -1.0))
            elif ln.to_bus == bus.id:
                p_terms.append((m[("line", ln.id, "p_to")], -1.0))
                q_terms.append((m[("line", ln.id, "q_to")], -1.0))
        for d in net.loads_at(bus.id):
            p_terms.append((m[("load", d.id, "x")], -d.pd))
            q_terms.append((m[("load", d.id, "x")], -d.qd))
        for s in net.shunts_at(bus.id):
            p_terms.append((m[("shunt", s.id, "w")], -s.gs))
            q_terms.append((m[("shunt", s.id, "w")], s.bs))
        m.add_row(f"balance_p_{bus.id}", p_terms, lo=0.0, hi=0.0)
        m.add_row(f"balance_q_{bus.id}", q_terms, lo=0.0, hi=0.0)
    return m


@dataclass
class ShutoffSolution:
    """A solved shutoff decision in network terms."""
    formulation: str
    scenario_id: int
    alpha: float
    z_bus: dict[int, int]
    z_line: dict[int, int]
    z_gen: dict[int, int]
    x_load: dict[int, float]
    x_shunt: dict[int, float]
    pg: dict[int, float]
    qg: dict[int, float]
    flows: dict[int, tuple]
    objective: float
    load_served_frac: float
    risk_served_frac: float
    status: str
    gap: float
    nodes: int
    wall_time_s: float


def _fractions(net: Network, scn: Scenario, x_load: dict[int, float],
               z_line: dict[int, int]) -> tuple[float, float]:
    pd_tot = sum(d.pd for d in net.loads.values())
    r_tot = sum(scn.risk[lid] for lid in net.lines)
    load = sum(d.weight * d.pd * x_load[d.id] for d in net.loads.values()) / pd_tot
    risk = (sum(scn.risk[lid] * z_line[lid] for lid in net.lines) / r_tot
            if r_tot > 0.0 else 0.0)
    return load, risk


def extract_solution(net: Network, scn: Scenario, model: MixedIntegerModel,
                     result, formulation: str) -> ShutoffSolution:
    """Read a solver result back into network terms. Binaries are rounded;
    service fractions are clipped into [0, 1] against roundoff."""
    x = result.incumbent
    if x is None:
        raise ValueError(f"{model.name}: no incumbent to extract (status {result.status})")

    def val(key):
        return float(x[model.var_map[key].index])

    def frac(key):
        return min(1.0, max(0.0, val(key)))

    z_bus = {b: int(round(val(("bus", b, "z")))) for b in net.buses}
    z_line = {l: int(round(val(("line", l, "z")))) for l in net.lines}
    z_gen = {g: int(round(val(("gen", g, "z")))) for g in net.generators}
    x_load = {d: frac(("load", d, "x")) for d in net.loads}
    x_shunt = {s: frac(("shunt", s, "x")) for s in net.shunts}
    pg = {g: val(("gen", g, "p")) for g in net.generators}
    qg = {g: val(("gen", g, "q")) for g in net.generators} \
        if ("gen", next(iter(net.generators), 0), "q") in model.var_map else {}
    flows: dict[int, tuple] = {}
    for l in net.lines:
        if ("line", l, "p_fr") in model.var_map:
            flows[l] = (val(("line", l, "p_fr")), val(("line", l, "q_fr")),
                        val(("line", l, "p_to")), val(("line", l, "q_to")))
        else:
            flows[l] = (val(("line", l, "p")),)
    load_frac, risk_frac = _fractions(net, scn, x_load, z_line)
    return ShutoffSolution(
        formulation=formulation, scenario_id=scn.id, alpha=scn.alpha,
        z_bus=z_bus, z_line=z_line, z_gen=z_gen, x_load=x_load, x_shunt=x_shunt,
        pg=pg, qg=qg, flows=flows, objective=result.objective,
        load_served_frac=load_frac, risk_served_frac=risk_frac,
        status=result.status, gap=result.gap, nodes=result.nodes,
        wall_time_s=result.wall_time_s)


def _lp_expr(terms, const: float = 0.0) -> str:
    parts = []
    for v, c in terms:
        parts.append(f"{'+' if c >= 0 else '-'} {abs(c):.17g} {v.name}")
    if const:
        parts.append(f"{'+' if const >= 0 else '-'} {abs(const):.17g}")
    text = " ".join(parts) if parts else "0"
    return text[2:] if text.startswith("+ ") else text


def write_lp(model: MixedIntegerModel, path: str | Path) -> None:
    """Dump the linear part in LP text format for inspection with outside
    tools; cone rows go to a JSON sidecar (<path>.cones.json)."""
    path = Path(path)
    lines = [f"\\ {model.name}", "Maximize", f" obj: {_lp_expr(model.objective)}",
             "Subject To"]
    for row in model.linear_rows:
        if row.lo == row.hi:
            lines.append(f" {row.name}: {_lp_expr(row.terms)} = {row.lo:.17g}")
            continue
        if row.hi != INF:
            lines.append(f" {row.name}_u: {_lp_expr(row.terms)} <= {row.hi:.17g}")
        if row.lo != -INF:
            lines.append(f" {row.name}_l: {_lp_expr(row.terms)} >= {row.lo:.17g}")
    lines.append("Bounds")
    for v in model.variables:
        lo = "-inf" if v.lo == -INF else f"{v.lo:.17g}"
        hi = "+inf" if v.hi == INF else f"{v.hi:.17g}"
        lines.append(f" {lo} <= {v.name} <= {hi}")
    binaries = [v.name for v in model.variables if v.is_binary]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    path.write_text("\n".join(lines) + "\n")

    cones = [{"name": c.name,
              "lhs": [{"terms": [[v.name, cf] for v, cf in e.terms], "const": e.const}
                      for e in c.lhs],
              "rhs": {"terms": [[v.name, cf] for v, cf in c.rhs.terms],
                      "const": c.rhs.const}}
             for c in model.cone_rows]
    Path(str(path) + ".cones.json").write_text(json.dumps(cones, indent=2))
