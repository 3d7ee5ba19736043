"""AC power flow and feasible-load recovery for shutoff decisions.

A :class:`Topology` freezes the binary half of a shutoff decision. This
module answers the question the relaxations cannot: how much load can the
network actually deliver under that decision, respecting full AC physics
with every limit enforced.

Recovery runs per electrical island: a Newton-Raphson solve energizes the
island at zero load, then sequential linear steps (trust region on voltage
magnitudes and angles) push load pickup, re-converging the power flow after
every step and keeping only iterates that pass the feasibility certificate.
Islands that never produce a certified point are reported dark.

``ac_ops_enumerate`` wraps recovery in brute force over all line states,
which is the exact (if exponential) solution of the shutoff problem under
AC physics at small scale.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .formulate import MixedIntegerModel, ShutoffSolution, flow_coefficients
from .netcase import Network
from .scenario import Scenario
from . import mipsolve

__all__ = [
    "Topology", "AcState", "PfResult", "RedispatchResult", "IslandReport",
    "islands", "line_flows", "ac_residual", "newton_pf", "verify_feasible",
    "redispatch", "ac_ops_enumerate",
]

CERT_TOL = 1e-6
PF_TOL = 1e-8


@dataclass(frozen=True)
class Topology:
    """Energization states for buses, lines and generators."""
    z_bus: dict[int, int]
    z_line: dict[int, int]
    z_gen: dict[int, int]

    @classmethod
    def all_on(cls, net: Network) -> "Topology":
        return cls({b: 1 for b in net.buses}, {l: 1 for l in net.lines},
                   {g: 1 for g in net.generators})

    @classmethod
    def all_off(cls, net: Network) -> "Topology":
        return cls({b: 0 for b in net.buses}, {l: 0 for l in net.lines},
                   {g: 0 for g in net.generators})

    @classmethod
    def from_line_states(cls, net: Network, states: dict[int, int]) -> "Topology":
        """Derive bus and generator states from a line on/off pattern: a bus
        stays energized if it has an energized incident line or hosts a
        generator (letting it serve its own load); generators follow their
        bus."""
        z_line = {l: int(states[l]) for l in net.lines}
        z_bus = {}
        for b in net.buses:
            touched = any(z_line[ln.id] for ln in net.lines_at(b))
            z_bus[b] = 1 if touched or net.generators_at(b) else 0
        z_gen = {g.id: z_bus[g.bus] for g in net.generators.values()}
        return cls(z_bus, z_line, z_gen)

    @classmethod
    def from_solution(cls, net: Network, sol: ShutoffSolution) -> "Topology":
        """Topology of a solved model, repaired downward so nothing stays
        energized on a de-energized bus."""
        z_bus = dict(sol.z_bus)
        z_line = {l: min(sol.z_line[l], z_bus[net.lines[l].from_bus],
                         z_bus[net.lines[l].to_bus]) for l in net.lines}
        z_gen = {g: min(sol.z_gen[g], z_bus[net.generators[g].bus])
                 for g in net.generators}
        return cls(z_bus, z_line, z_gen)

    def line_states(self, net: Network) -> tuple[int, ...]:
        return tuple(self.z_line[l] for l in net.lines)

    def validate(self, net: Network) -> None:
        """Reject anything energized on a de-energized bus."""
        problems = []
        for ln in net.lines.values():
            if self.z_line[ln.id] and not (self.z_bus[ln.from_bus]
                                           and self.z_bus[ln.to_bus]):
                problems.append(f"line {ln.id} energized on dark bus")
        for g in net.generators.values():
            if self.z_gen[g.id] and not self.z_bus[g.bus]:
                problems.append(f"generator {g.id} energized on dark bus")
        if problems:
            raise ValueError("inconsistent topology: " + "; ".join(problems))


@dataclass
class AcState:
    """Operating point over the whole network. De-energized buses carry
    zero voltage, dark components zero output."""
    vm: dict[int, float]
    va: dict[int, float]
    pg: dict[int, float]
    qg: dict[int, float]
    x_load: dict[int, float]
    x_shunt: dict[int, float]


def islands(net: Network, topo: Topology) -> list[list[int]]:
    """Connected components of the energized subgraph, as sorted bus id
    lists ordered by their smallest bus."""
    parent = {b: b for b in net.buses if topo.z_bus[b]}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ln in net.lines.values():
        if topo.z_line[ln.id]:
            parent[find(ln.from_bus)] = find(ln.to_bus)
    groups: dict[int, list[int]] = {}
    for b in parent:
        groups.setdefault(find(b), []).append(b)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def line_flows(net: Network, topo: Topology, state: AcState) -> dict[int, tuple]:
    """Per line (p_fr, q_fr, p_to, q_to); zero for de-energized lines."""
    out = {}
    for ln in net.lines.values():
        if not topo.z_line[ln.id]:
            out[ln.id] = (0.0, 0.0, 0.0, 0.0)
            continue
        vi, vj = state.vm[ln.from_bus], state.vm[ln.to_bus]
        d = state.va[ln.from_bus] - state.va[ln.to_bus]
        wf, wt = vi * vi, vj * vj
        wr, wi = vi * vj * math.cos(d), vi * vj * math.sin(d)
        c = flow_coefficients(ln)
        out[ln.id] = (
            c["pf_wf"] * wf + c["pf_re"] * wr + c["pf_im"] * wi,
            c["qf_wf"] * wf + c["qf_re"] * wr + c["qf_im"] * wi,
            c["pt_wt"] * wt + c["pt_re"] * wr + c["pt_im"] * wi,
            c["qt_wt"] * wt + c["qt_re"] * wr + c["qt_im"] * wi,
        )
    return out


def ac_residual(net: Network, topo: Topology, state: AcState) -> np.ndarray:
    """Power balance mismatch, active then reactive per bus in case order.
    De-energized buses contribute zero rows."""
    bus_ids = list(net.buses)
    pos = {b: k for k, b in enumerate(bus_ids)}
    res = np.zeros(2 * len(bus_ids))
    flows = line_flows(net, topo, state)
    for g in net.generators.values():
        if topo.z_gen[g.id]:
            res[pos[g.bus]] += state.pg[g.id]
            res[len(bus_ids) + pos[g.bus]] += state.qg[g.id]
    for ln in net.lines.values():
        if not topo.z_line[ln.id]:
            continue
        pf, qf, pt, qt = flows[ln.id]
        res[pos[ln.from_bus]] -= pf
        res[len(bus_ids) + pos[ln.from_bus]] -= qf
        res[pos[ln.to_bus]] -= pt
        res[len(bus_ids) + pos[ln.to_bus]] -= qt
    for d in net.loads.values():
        if topo.z_bus[d.bus]:
            res[pos[d.bus]] -= state.x_load[d.id] * d.pd
            res[len(bus_ids) + pos[d.bus]] -= state.x_load[d.id] * d.qd
    for s in net.shunts.values():
        if topo.z_bus[s.bus]:
            v2 = state.vm[s.bus] ** 2
            res[pos[s.bus]] -= s.gs * v2 * state.x_shunt[s.id]
            res[len(bus_ids) + pos[s.bus]] += s.bs * v2 * state.x_shunt[s.id]
    for k, b in enumerate(bus_ids):
        if not topo.z_bus[b]:
            res[k] = res[len(bus_ids) + k] = 0.0
    return res


def _island_ybus(net: Network, topo: Topology, island: list[int],
                 x_shunt: dict[int, float]) -> np.ndarray:
    pos = {b: k for k, b in enumerate(island)}
    n = len(island)
    Y = np.zeros((n, n), dtype=complex)
    for ln in net.lines.values():
        if not topo.z_line[ln.id] or ln.from_bus not in pos:
            continue
        y = complex(ln.g_series, ln.b_series)
        t = complex(ln.tap_re, ln.tap_im)
        i, j = pos[ln.from_bus], pos[ln.to_bus]
        Y[i, i] += (y + complex(ln.g_fr, ln.b_fr)) / ln.tap_mag2
        Y[i, j] += -y / t.conjugate()
        Y[j, i] += -y / t
        Y[j, j] += y + complex(ln.g_to, ln.b_to)
    for s in net.shunts.values():
        if s.bus in pos:
            Y[pos[s.bus], pos[s.bus]] += complex(s.gs, s.bs) * x_shunt.get(s.id, 0.0)
    return Y


def _ds_dv(Y: np.ndarray, V: np.ndarray):
    """Derivatives of bus injections S = V (Y V)* with respect to angle and
    magnitude (dense, islands are small)."""
    I = Y @ V
    diagV = np.diag(V)
    diagVnorm = np.diag(V / np.abs(V))
    dva = 1j * diagV @ (np.diag(I) - Y @ diagV).conjugate()
    dvm = diagV @ (Y @ diagVnorm).conjugate() + np.diag(I).conjugate() @ diagVnorm
    return dva, dvm


@dataclass
class PfResult:
    status: str                     # converged | diverged | no_generators
    vm: dict[int, float] = field(default_factory=dict)
    va: dict[int, float] = field(default_factory=dict)
    pg: dict[int, float] = field(default_factory=dict)
    qg: dict[int, float] = field(default_factory=dict)
    slack_bus: int | None = None
    iterations: int = 0


def _slack_gen(net: Network, topo: Topology, island: list[int]):
    gens = [g for g in net.generators.values()
            if topo.z_gen[g.id] and g.bus in island]
    if not gens:
        return None, []
    return max(gens, key=lambda g: (g.pmax, -g.id)), gens


def newton_pf(net: Network, topo: Topology, island: list[int], *,
              pg: dict[int, float] | None = None,
              vset: dict[int, float] | None = None,
              x_load: dict[int, float] | None = None,
              x_shunt: dict[int, float] | None = None,
              warm: tuple | None = None,
              tol: float = PF_TOL, max_iter: int = 50) -> PfResult:
    """Newton-Raphson power flow on one island with fixed dispatch and shed.

    The energized generator with the largest capability anchors the island
    (slack); other generator buses hold their voltage setpoint while their
    aggregate reactive range allows, then drop to fixed reactive injection
    at the violated limit. Missing dispatch entries default to zero output,
    missing shed entries to nothing served.
    """
    pg = pg or {}
    vset = vset or {}
    x_load = x_load or {}
    x_shunt = x_shunt or {}
    slack, gens = _slack_gen(net, topo, island)
    if slack is None:
        return PfResult("no_generators")

    pos = {b: k for k, b in enumerate(island)}
    n = len(island)
    Y = _island_ybus(net, topo, island, x_shunt)

    gen_buses = sorted({g.bus for g in gens})
    q_ranges = {b: (sum(g.qmin for g in gens if g.bus == b),
                    sum(g.qmax for g in gens if g.bus == b)) for b in gen_buses}
    slack_pos = pos[slack.bus]

    p_spec = np.zeros(n)
    q_load = np.zeros(n)
    for g in gens:
        if g.bus != slack.bus:
            p_spec[pos[g.bus]] += pg.get(g.id, min(max(0.0, g.pmin), g.pmax))
    for d in net.loads.values():
        if d.bus in pos:
            p_spec[pos[d.bus]] -= x_load.get(d.id, 0.0) * d.pd
            q_load[pos[d.bus]] += x_load.get(d.id, 0.0) * d.qd

    vm = np.ones(n)
    va = np.zeros(n)
    if warm is not None:
        wvm, wva = warm
        for b, k in pos.items():
            vm[k] = wvm.get(b, 1.0)
            va[k] = wva.get(b, 0.0)
    for b in gen_buses:
        bus = net.buses[b]
        vm[pos[b]] = min(max(vset.get(b, 1.0), bus.vmin), bus.vmax)
    va -= va[slack_pos]

    pv = [pos[b] for b in gen_buses if pos[b] != slack_pos]
    q_clamp: dict[int, float] = {}
    total_iters = 0

    for _ in range(len(pv) + 2):
        pq = [k for k in range(n) if k != slack_pos and k not in pv]
        q_spec = -q_load.copy()
        for k, qv in q_clamp.items():
            q_spec[k] = qv - q_load[k]
        pvpq = [k for k in range(n) if k != slack_pos]
        converged = False
        for it in range(max_iter):
            total_iters += 1
            V = vm * np.exp(1j * va)
            S = V * (Y @ V).conjugate()
            fp = S.real[pvpq] - p_spec[pvpq]
            fq = S.imag[pq] - q_spec[pq]
            f = np.concatenate([fp, fq])
            if not np.all(np.isfinite(f)) or np.max(np.abs(f), initial=0.0) > 1e6:
                return PfResult("diverged", iterations=total_iters)
            if np.max(np.abs(f), initial=0.0) <= tol:
                converged = True
                break
            dva_m, dvm_m = _ds_dv(Y, V)
            J = np.block([
                [dva_m.real[np.ix_(pvpq, pvpq)], dvm_m.real[np.ix_(pvpq, pq)]],
                [dva_m.imag[np.ix_(pq, pvpq)], dvm_m.imag[np.ix_(pq, pq)]],
            ])
            try:
                dx = np.linalg.solve(J, -f)
            except np.linalg.LinAlgError:
                return PfResult("diverged", iterations=total_iters)
            va[pvpq] += dx[:len(pvpq)]
            vm[pq] += dx[len(pvpq):]
            if np.any(vm < 0.05) or np.any(vm > 3.0):
                return PfResult("diverged", iterations=total_iters)
        if not converged:
            return PfResult("diverged", iterations=total_iters)

        # generator buses holding voltage must stay inside their aggregate
        # reactive range; violators flip to fixed injection at the limit
        V = vm * np.exp(1j * va)
        S = V * (Y @ V).conjugate()
        flipped = False
        for k in list(pv):
            b = island[k]
            need = S.imag[k] + q_load[k]
            qlo, qhi = q_ranges[b]
            if need < qlo - 1e-9:
                q_clamp[k] = qlo
            elif need > qhi + 1e-9:
                q_clamp[k] = qhi
            else:
                continue
            pv.remove(k)
            flipped = True
        if not flipped:
            break

    V = vm * np.exp(1j * va)
    S = V * (Y @ V).conjugate()
    out_pg: dict[int, float] = {}
    out_qg: dict[int, float] = {}
    for b in gen_buses:
        k = pos[b]
        members = [g for g in gens if g.bus == b]
        q_total = S.imag[k] + q_load[k]
        qlo = sum(g.qmin for g in members)
        qrange = sum(g.qmax - g.qmin for g in members)
        t = 0.0 if qrange <= 0 else (q_total - qlo) / qrange
        for g in members:
            out_qg[g.id] = g.qmin + t * (g.qmax - g.qmin)
        if b == slack.bus:
            p_total = S.real[k] + sum(x_load.get(d.id, 0.0) * d.pd
                                      for d in net.loads.values() if d.bus == b)
            plo = sum(g.pmin for g in members)
            prange = sum(g.pmax - g.pmin for g in members)
            t = 0.0 if prange <= 0 else (p_total - plo) / prange
            for g in members:
                out_pg[g.id] = g.pmin + t * (g.pmax - g.pmin)
        else:
            for g in members:
                out_pg[g.id] = pg.get(g.id, min(max(0.0, g.pmin), g.pmax))

    return PfResult("converged",
                    vm={b: float(vm[pos[b]]) for b in island},
                    va={b: float(va[pos[b]]) for b in island},
                    pg=out_pg, qg=out_qg, slack_bus=slack.bus,
                    iterations=total_iters)


def verify_feasible(net: Network, topo: Topology, state: AcState,
                    tol: float = CERT_TOL) -> list[str]:
    """Independent certificate: every limit of the shutoff problem with the
    binaries fixed. Returns one message per violation; an empty list means
    the point is a genuine operating point within ``tol``."""
    bad = []
    for b, bus in net.buses.items():
        if topo.z_bus[b]:
            if not (bus.vmin - tol <= state.vm[b] <= bus.vmax + tol):
                bad.append(f"bus {b}: vm {state.vm[b]:.6f} outside "
                           f"[{bus.vmin}, {bus.vmax}]")
        elif abs(state.vm[b]) > tol:
            bad.append(f"bus {b}: de-energized but vm {state.vm[b]:.6f}")
    for g in net.generators.values():
        p, q = state.pg[g.id], state.qg[g.id]
        if topo.z_gen[g.id]:
            if not (g.pmin - tol <= p <= g.pmax + tol):
                bad.append(f"generator {g.id}: p {p:.6f} outside [{g.pmin}, {g.pmax}]")
            if not (g.qmin - tol <= q <= g.qmax + tol):
                bad.append(f"generator {g.id}: q {q:.6f} outside [{g.qmin}, {g.qmax}]")
        elif abs(p) > tol or abs(q) > tol:
            bad.append(f"generator {g.id}: dark but dispatched ({p:.6f}, {q:.6f})")
    for d in net.loads.values():
        x = state.x_load[d.id]
        if not (-tol <= x <= 1.0 + tol):
            bad.append(f"load {d.id}: fraction {x:.6f} outside [0, 1]")
        if not topo.z_bus[d.bus] and x > tol:
            bad.append(f"load {d.id}: served on de-energized bus {d.bus}")
    for s in net.shunts.values():
        x = state.x_shunt[s.id]
        if not (-tol <= x <= 1.0 + tol):
            bad.append(f"shunt {s.id}: fraction {x:.6f} outside [0, 1]")
        if not topo.z_bus[s.bus] and x > tol:
            bad.append(f"shunt {s.id}: active on de-energized bus {s.bus}")
    res = ac_residual(net, topo, state)
    worst = float(np.max(np.abs(res), initial=0.0))
    if worst > tol:
        bad.append(f"power balance mismatch {worst:.3e}")
    flows = line_flows(net, topo, state)
    for ln in net.lines.values():
        if not topo.z_line[ln.id]:
            continue
        pf, qf, pt, qt = flows[ln.id]
        if math.hypot(pf, qf) > ln.thermal + tol:
            bad.append(f"line {ln.id}: from-end loading {math.hypot(pf, qf):.6f} "
                       f"over rating {ln.thermal}")
        if math.hypot(pt, qt) > ln.thermal + tol:
            bad.append(f"line {ln.id}: to-end loading {math.hypot(pt, qt):.6f} "
                       f"over rating {ln.thermal}")
        diff = state.va[ln.from_bus] - state.va[ln.to_bus]
        if not (ln.ang_min - tol <= diff <= ln.ang_max + tol):
            bad.append(f"line {ln.id}: angle difference {diff:.6f} outside "
                       f"[{ln.ang_min:.6f}, {ln.ang_max:.6f}]")
    return bad


@dataclass
class IslandReport:
    buses: tuple[int, ...]
    slack_bus: int | None
    certified: bool
    slp_iterations: int


@dataclass
class RedispatchResult:
    status: str                     # feasible | trivial | failed
    state: AcState
    load_served: float              # weighted p.u. active power delivered
    recovered_objective: float
    islands: list[IslandReport]
    violations: list[str]
    effective: Topology | None = None   # decision minus islands that went dark


class _IslandSlp:
    """Load pickup on one island by sequential linear steps."""

    TR_INIT, TR_MIN, TR_MAX = 0.1, 1e-7, 1.0
    MAX_ITER = 100

    def __init__(self, net: Network, topo: Topology, island: list[int]):
        self.net = net
        self.topo = topo
        self.island = island
        self.loads = [d for d in net.loads.values() if d.bus in set(island)]
        self.shunts = [s for s in net.shunts.values() if s.bus in set(island)]
        self.lines = [ln for ln in net.lines.values()
                      if topo.z_line[ln.id] and ln.from_bus in set(island)]
        self.slack, self.gens = _slack_gen(net, topo, island)

    def run(self):
        """Returns (certified point dict | None, slp iterations). The point
        carries vm/va per island bus, pg/qg per island gen, x_load/x_shunt."""
        if self.slack is None:
            return None, 0
        net, topo, island = self.net, self.topo, self.island
        x_load = {d.id: 0.0 for d in self.loads}
        x_shunt = {s.id: 0.0 for s in self.shunts}
        pg = {g.id: min(max(0.0, g.pmin), g.pmax) for g in self.gens
              if g.id != self.slack.id}
        vset = {b: 1.0 for b in sorted({g.bus for g in self.gens})}
        pf = newton_pf(net, topo, island, pg=pg, vset=vset,
                       x_load=x_load, x_shunt=x_shunt)
        if pf.status != "converged":
            return None, 0

        best = None
        cur = (pf, dict(x_load), dict(x_shunt))
        if not self._violations(pf, x_load, x_shunt):
            best = cur
        tr = self.TR_INIT
        accepts_in_row = 0
        it = 0
        while it < self.MAX_ITER and tr >= self.TR_MIN:
            it += 1
            pf, x_load, x_shunt = cur
            step = self._lp_step(pf, x_load, x_shunt, tr)
            if step is None:
                tr *= 0.5
                accepts_in_row = 0
                continue
            new_pg, new_vset, new_xd, new_xs, size = step
            if size < 1e-6:
                break
            # full step first; on failure back off along the same direction
            # (overshoot of the linearization is second order, so a half
            # step usually lands inside and keeps the trust region alive)
            accepted = None
            for frac in (1.0, 0.5, 0.25):
                cand_pg = _blend(pf.pg, new_pg, frac)
                cand_vset = {b: pf.vm[b] + frac * (new_vset[b] - pf.vm[b])
                             for b in new_vset}
                cand_xd = _blend(x_load, new_xd, frac)
                cand_xs = _blend(x_shunt, new_xs, frac)
                cand = newton_pf(net, topo, island, pg=cand_pg, vset=cand_vset,
                                 x_load=cand_xd, x_shunt=cand_xs,
                                 warm=(pf.vm, pf.va))
                ok = cand.status == "converged" and \
                    not self._violations(cand, cand_xd, cand_xs)
                if ok and (best is None or
                           self._score(cand_xd) > self._score(best[1]) + 1e-12):
                    accepted = (cand, cand_xd, cand_xs)
                    break
            if accepted is not None:
                cur = accepted
                best = cur
                accepts_in_row += 1
                if accepts_in_row >= 2:
                    tr = min(2.0 * tr, self.TR_MAX)
            else:
                tr *= 0.5
                accepts_in_row = 0
        return best, it

    def _score(self, x_load) -> float:
        return sum(d.weight * d.pd * x_load[d.id] for d in self.loads)

    def _violations(self, pf: PfResult, x_load, x_shunt) -> list[str]:
        sub = Topology(
            {b: (1 if b in pf.vm else 0) for b in self.net.buses},
            {l: (1 if any(ln.id == l for ln in self.lines) else 0)
             for l in self.net.lines},
            {g.id: (1 if g.bus in pf.vm and self.topo.z_gen[g.id] else 0)
             for g in self.net.generators.values()})
        state = AcState(
            vm={b: pf.vm.get(b, 0.0) for b in self.net.buses},
            va={b: pf.va.get(b, 0.0) for b in self.net.buses},
            pg={g: pf.pg.get(g, 0.0) for g in self.net.generators},
            qg={g: pf.qg.get(g, 0.0) for g in self.net.generators},
            x_load={d: x_load.get(d, 0.0) for d in self.net.loads},
            x_shunt={s: x_shunt.get(s, 0.0) for s in self.net.shunts})
        return verify_feasible(self.net, sub, state)

    def _lp_step(self, pf: PfResult, x_load, x_shunt, tr):
        """One trust-region LP around the converged point. Returns proposed
        controls and the step size, or None if the LP fails."""
        net, island = self.net, self.island
        pos = {b: k for k, b in enumerate(island)}
        n = len(island)
        vm = np.array([pf.vm[b] for b in island])
        va = np.array([pf.va[b] for b in island])
        V = vm * np.exp(1j * va)
        Y = _island_ybus(net, self.topo, island, x_shunt)
        dva_m, dvm_m = _ds_dv(Y, V)
        S = V * (Y @ V).conjugate()

        m = MixedIntegerModel(f"slp_island_{island[0]}")
        slack_pos = pos[pf.slack_bus]
        for b in island:
            bus = net.buses[b]
            k = pos[b]
            lo = max(bus.vmin - vm[k], -tr)
            hi = min(bus.vmax - vm[k], tr)
            if lo > hi:
                # box unreachable within the trust region: step toward it
                lo = hi = tr if bus.vmin - vm[k] > tr else -tr
            m.add_variable(("bus", b, "dvm"), f"dvm_{b}", lo, hi)
            alim = 0.0 if k == slack_pos else tr
            m.add_variable(("bus", b, "dva"), f"dva_{b}", -alim, alim)
        for g in self.gens:
            m.add_variable(("gen", g.id, "dp"), f"dp_{g.id}",
                           g.pmin - pf.pg[g.id], g.pmax - pf.pg[g.id])
            m.add_variable(("gen", g.id, "dq"), f"dq_{g.id}",
                           g.qmin - pf.qg[g.id], g.qmax - pf.qg[g.id])
        for d in self.loads:
            m.add_variable(("load", d.id, "dx"), f"dxd_{d.id}",
                           -x_load[d.id], 1.0 - x_load[d.id])
        for s in self.shunts:
            m.add_variable(("shunt", s.id, "dx"), f"dxs_{s.id}",
                           -x_shunt[s.id], 1.0 - x_shunt[s.id])

        res_p = np.zeros(n)
        res_q = np.zeros(n)
        for g in self.gens:
            res_p[pos[g.bus]] += pf.pg[g.id]
            res_q[pos[g.bus]] += pf.qg[g.id]
        for d in self.loads:
            res_p[pos[d.bus]] -= x_load[d.id] * d.pd
            res_q[pos[d.bus]] -= x_load[d.id] * d.qd
        res_p -= S.real
        res_q -= S.imag

        for b in island:
            k = pos[b]
            p_terms = [(m[("gen", g.id, "dp")], 1.0) for g in self.gens
                       if g.bus == b]
            q_terms = [(m[("gen", g.id, "dq")], 1.0) for g in self.gens
                       if g.bus == b]
            for d in self.loads:
                if d.bus == b:
                    p_terms.append((m[("load", d.id, "dx")], -d.pd))
                    q_terms.append((m[("load", d.id, "dx")], -d.qd))
            for s in self.shunts:
                if s.bus == b:
                    v2 = vm[pos[s.bus]] ** 2
                    p_terms.append((m[("shunt", s.id, "dx")], -s.gs * v2))
                    q_terms.append((m[("shunt", s.id, "dx")], s.bs * v2))
            for c in range(n):
                if dva_m[k, c] != 0.0:
                    p_terms.append((m[("bus", island[c], "dva")], -dva_m[k, c].real))
                    q_terms.append((m[("bus", island[c], "dva")], -dva_m[k, c].imag))
                if dvm_m[k, c] != 0.0:
                    p_terms.append((m[("bus", island[c], "dvm")], -dvm_m[k, c].real))
                    q_terms.append((m[("bus", island[c], "dvm")], -dvm_m[k, c].imag))
            m.add_row(f"bal_p_{b}", p_terms, lo=-res_p[k], hi=-res_p[k])
            m.add_row(f"bal_q_{b}", q_terms, lo=-res_q[k], hi=-res_q[k])

        flows = {}
        for ln in self.lines:
            i, j = pos[ln.from_bus], pos[ln.to_bus]
            c = flow_coefficients(ln)
            d = va[i] - va[j]
            cd, sd = math.cos(d), math.sin(d)
            prod = vm[i] * vm[j]
            for end, pv_, qv_ in (("fr", "pf", "qf"), ("to", "pt", "qt")):
                wkey = f"{pv_}_wf" if end == "fr" else f"{pv_}_wt"
                wself = vm[i] if end == "fr" else vm[j]
                p0 = (c[wkey] * wself ** 2 + c[f"{pv_}_re"] * prod * cd
                      + c[f"{pv_}_im"] * prod * sd)
                q0 = (c[f"{qv_}_wf" if end == "fr" else f"{qv_}_wt"] * wself ** 2
                      + c[f"{qv_}_re"] * prod * cd + c[f"{qv_}_im"] * prod * sd)
                flows[(ln.id, end)] = (p0, q0)
                # rating in squared form: (p0 + dp)^2 + (q0 + dq)^2 <= T^2,
                # linearized at (p0, q0)
                dp = self._flow_grad(ln, c, pv_, end, vm, va, pos, m)
                dq = self._flow_grad(ln, c, qv_, end, vm, va, pos, m)
                terms = [(v, p0 * cf) for v, cf in dp] + [(v, q0 * cf) for v, cf in dq]
                slackv = (ln.thermal ** 2 - p0 * p0 - q0 * q0) / 2.0
                if terms:
                    m.add_row(f"rating_{end}_{ln.id}", _merge_terms(terms), hi=slackv)
            m.add_row(f"angle_{ln.id}",
                      [(m[("bus", ln.from_bus, "dva")], 1.0),
                       (m[("bus", ln.to_bus, "dva")], -1.0)],
                      lo=ln.ang_min - (va[i] - va[j]),
                      hi=ln.ang_max - (va[i] - va[j]))

        for d in self.loads:
            m.objective.append((m[("load", d.id, "dx")], d.weight * d.pd))

        try:
            sol = mipsolve.solve_lp(m)
        except mipsolve.SolverError:
            return None
        if sol.status != "optimal":
            return None

        def val(key):
            return float(sol.primal[m.var_map[key].index])

        new_pg = {g.id: min(max(pf.pg[g.id] + val(("gen", g.id, "dp")), g.pmin), g.pmax)
                  for g in self.gens if g.id != self.slack.id}
        new_vset = {}
        for b in sorted({g.bus for g in self.gens}):
            bus = net.buses[b]
            new_vset[b] = min(max(vm[pos[b]] + val(("bus", b, "dvm")), bus.vmin),
                              bus.vmax)
        new_xd = {d.id: min(max(x_load[d.id] + val(("load", d.id, "dx")), 0.0), 1.0)
                  for d in self.loads}
        new_xs = {s.id: min(max(x_shunt[s.id] + val(("shunt", s.id, "dx")), 0.0), 1.0)
                  for s in self.shunts}
        size = max((abs(val(("bus", b, "dvm"))) for b in island), default=0.0)
        size = max(size, max((abs(val(("bus", b, "dva"))) for b in island), default=0.0))
        size = max(size, max((abs(val(("load", d.id, "dx"))) for d in self.loads),
                             default=0.0))
        size = max(size, max((abs(val(("shunt", s.id, "dx"))) for s in self.shunts),
                             default=0.0))
        return new_pg, new_vset, new_xd, new_xs, size

    def _flow_grad(self, ln, c, which, end, vm, va, pos, m):
        """Gradient terms of one flow component in the dvm/dva variables."""
        i, j = pos[ln.from_bus], pos[ln.to_bus]
        d = va[i] - va[j]
        cd, sd = math.cos(d), math.sin(d)
        re_c, im_c = c[f"{which}_re"], c[f"{which}_im"]
        wkey = f"{which}_wf" if end == "fr" else f"{which}_wt"
        kself = i if end == "fr" else j
        kother = j if end == "fr" else i
        # d/dVself, d/dVother, d/d(delta)
        dself = 2.0 * c[wkey] * vm[kself] + (re_c * cd + im_c * sd) * vm[kother]
        dother = (re_c * cd + im_c * sd) * vm[kself]
        ddelta = (-re_c * sd + im_c * cd) * vm[i] * vm[j]
        bus_self, bus_other = self.island[kself], self.island[kother]
        return [
            (m[("bus", bus_self, "dvm")], dself),
            (m[("bus", bus_other, "dvm")], dother),
            (m[("bus", ln.from_bus, "dva")], ddelta),
            (m[("bus", ln.to_bus, "dva")], -ddelta),
        ]


def _blend(base: dict, target: dict, frac: float) -> dict:
    return {k: base.get(k, 0.0) + frac * (v - base.get(k, 0.0))
            for k, v in target.items()}


def _merge_terms(terms):
    acc: dict[int, list] = {}
    for v, c in terms:
        slot = acc.setdefault(v.index, [v, 0.0])
        slot[1] += c
    return [(v, c) for v, c in acc.values() if c != 0.0]


def _recover(net: Network, topo: Topology, cache: dict | None = None):
    """Certified load recovery for a fixed topology: per-island SLP with
    dark fallback. Returns (status, effective topology, AcState, weighted
    load served, island reports). Cacheable across scenarios."""
    key = topo.line_states(net) + tuple(topo.z_bus[b] for b in net.buses) \
        + tuple(topo.z_gen[g] for g in net.generators)
    if cache is not None and key in cache:
        return cache[key]

    isl = islands(net, topo)
    reports = []
    kept: list[tuple] = []
    dark_buses: set[int] = set()
    for group in isl:
        slp = _IslandSlp(net, topo, group)
        point, iters = slp.run()
        if point is None:
            reports.append(IslandReport(tuple(group), None, False, iters))
            dark_buses.update(group)
        else:
            pf, x_load, x_shunt = point
            reports.append(IslandReport(tuple(group), pf.slack_bus, True, iters))
            kept.append((group, pf, x_load, x_shunt))

    # islands that produced no certified point are reported dark: their
    # buses, lines and generators drop out of the effective decision
    eff = Topology(
        {b: (0 if b in dark_buses else topo.z_bus[b]) for b in net.buses},
        {l: (0 if (net.lines[l].from_bus in dark_buses
                   or net.lines[l].to_bus in dark_buses) else topo.z_line[l])
         for l in net.lines},
        {g: (0 if net.generators[g].bus in dark_buses else topo.z_gen[g])
         for g in net.generators})

    vm = {b: 0.0 for b in net.buses}
    va = {b: 0.0 for b in net.buses}
    pg = {g: 0.0 for g in net.generators}
    qg = {g: 0.0 for g in net.generators}
    x_load = {d: 0.0 for d in net.loads}
    x_shunt = {s: 0.0 for s in net.shunts}
    for group, pf, xd, xs in kept:
        vm.update(pf.vm)
        va.update(pf.va)
        pg.update(pf.pg)
        qg.update(pf.qg)
        x_load.update(xd)
        x_shunt.update(xs)
    state = AcState(vm, va, pg, qg, x_load, x_shunt)
    load = sum(d.weight * d.pd * x_load[d.id] for d in net.loads.values())
    status = "feasible" if kept else "trivial"
    out = (status, eff, state, load, reports)
    if cache is not None:
        cache[key] = out
    return out


def redispatch(net: Network, scn: Scenario, topo: Topology,
               cache: dict | None = None) -> RedispatchResult:
    """Best certified AC delivery for a fixed shutoff decision.

    The load term of the recovered objective uses what was actually
    delivered; the risk term keeps the original decision's energized lines
    (de-energizing is a decision, going dark involuntarily is not).
    """
    topo.validate(net)
    status, eff, state, load, reports = _recover(net, topo, cache)
    violations = verify_feasible(net, eff, state)
    if violations:
        status = "failed"
    pd_tot = sum(d.pd for d in net.loads.values())
    r_tot = sum(scn.risk[lid] for lid in net.lines)
    risk = (sum(scn.risk[l] * topo.z_line[l] for l in net.lines) / r_tot
            if r_tot > 0.0 else 0.0)
    objective = (1.0 - scn.alpha) * load / pd_tot - scn.alpha * risk
    return RedispatchResult(status, state, load, objective, reports, violations,
                            effective=eff)


def ac_ops_enumerate(net: Network, scn: Scenario, max_switchable: int = 12,
                     cache: dict | None = None) -> ShutoffSolution:
    """Exact shutoff optimization under AC physics by enumeration of line
    on/off patterns (bus and generator states derived). Exponential: refuses
    networks with more switchable lines than ``max_switchable``."""
    n = len(net.lines)
    if n > max_switchable:
        raise ValueError(f"{n} switchable lines exceed the enumeration limit "
                         f"{max_switchable}")
    t0 = time.monotonic()
    line_ids = list(net.lines)
    pd_tot = sum(d.pd for d in net.loads.values())
    r_tot = sum(scn.risk[lid] for lid in net.lines)
    own_cache: dict = {} if cache is None else cache

    best = None
    for states in itertools.product((0, 1), repeat=n):
        topo = Topology.from_line_states(net, dict(zip(line_ids, states)))
        status, eff, state, load, reports = _recover(net, topo, own_cache)
        risk = sum(scn.risk[l] * topo.z_line[l] for l in net.lines)
        score = (1.0 - scn.alpha) * load / pd_tot - scn.alpha * risk / r_tot
        if best is None or score > best[0] + 1e-12:
            best = (score, topo, state, load, risk)

    score, topo, state, load, risk = best
    flows = line_flows(net, topo, state)
    return ShutoffSolution(
        formulation="acx", scenario_id=scn.id, alpha=scn.alpha,
        z_bus=dict(topo.z_bus), z_line=dict(topo.z_line), z_gen=dict(topo.z_gen),
        x_load=dict(state.x_load), x_shunt=dict(state.x_shunt),
        pg=dict(state.pg), qg=dict(state.qg), flows=flows,
        objective=score,
        load_served_frac=load / pd_tot,
        risk_served_frac=risk / r_tot,
        status="optimal", gap=0.0, nodes=2 ** n,
        wall_time_s=time.monotonic() - t0)
