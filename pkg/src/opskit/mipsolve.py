"""Branch-and-cut solver for the model IR.

Linear relaxations are solved through scipy's HiGHS interface (dual
simplex, single threaded, deterministic). Everything above the LP is
implemented here: best-bound branch and bound on the binary variables,
lazy outer-approximation cuts for second-order-cone rows, and bound
propagation along the energization implication chains.

Every LP solve is verified: primal feasibility within 1e-7 and a primal
versus dual objective agreement within 1e-6 * (1 + |objective|). A solve
that cannot meet those after a retry raises :class:`SolverError` rather
than returning a questionable answer.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .formulate import ConeRow, LinearRow, MixedIntegerModel

__all__ = [
    "SolveOptions", "LpSolution", "MipResult", "SolverError",
    "solve_lp", "separate_cone", "cone_converged_lp", "solve_mip",
    "lp_stats", "reset_lp_stats",
]

FEAS_TOL = 1e-7
DUALITY_REL_TOL = 1e-6


class SolverError(RuntimeError):
    """Numerical breakdown or an LP the backend could not resolve."""


@dataclass
class SolveOptions:
    time_limit: float = 1800.0
    rel_gap_tol: float = 1e-4
    int_tol: float = 1e-6
    cone_viol_tol: float = 1e-6
    max_cuts_per_node: int = 20
    node_selection: str = "best-bound"
    branch_rule: str = "most-fractional"
    node_log: object = None  # callable(dict) or file-like, optional

    def __post_init__(self):
        for name in ("time_limit", "rel_gap_tol", "int_tol", "cone_viol_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_cuts_per_node < 1:
            raise ValueError("max_cuts_per_node must be at least 1")
        if self.node_selection != "best-bound":
            raise ValueError(f"unsupported node selection {self.node_selection!r}")
        if self.branch_rule != "most-fractional":
            raise ValueError(f"unsupported branch rule {self.branch_rule!r}")


@dataclass
class LpSolution:
    status: str                 # optimal | infeasible | unbounded
    objective: float            # maximization value (nan unless optimal)
    primal: np.ndarray | None
    duals: np.ndarray | None    # one per linear row then per cut, max convention
    duality_gap: float
    max_violation: float


@dataclass
class MipResult:
    status: str                 # optimal | time_limit | infeasible
    objective: float
    best_bound: float
    incumbent: np.ndarray | None
    gap: float
    nodes: int
    cuts: int
    wall_time_s: float
    node_log: list = field(default_factory=list, repr=False)


# running account of every LP solved in this process, for end-to-end checks
_LP_STATS = {"count": 0, "max_rel_duality_gap": 0.0, "max_violation": 0.0}


def lp_stats() -> dict:
    return dict(_LP_STATS)


def reset_lp_stats() -> None:
    _LP_STATS.update(count=0, max_rel_duality_gap=0.0, max_violation=0.0)


class _Compiled:
    """Split of the model's linear rows into equality and upper-bound form
    with bookkeeping to reassemble per-row duals."""

    def __init__(self, model: MixedIntegerModel):
        self.model = model
        n = len(model.variables)
        self.n = n
        self.obj = np.zeros(n)
        for v, c in model.objective:
            self.obj[v.index] += c
        self.lo = np.array([v.lo for v in model.variables])
        self.hi = np.array([v.hi for v in model.variables])
        self.binary_idx = np.array([v.index for v in model.variables if v.is_binary],
                                   dtype=int)

        eq_rows, eq_rhs = [], []
        ub_rows, ub_rhs = [], []
        # (row position, kind, slot): kind "eq" or "+"/"-" ub parts
        self.row_slots: list[list[tuple[str, int]]] = []
        self.implications: list[tuple[int, int]] = []
        for r, row in enumerate(model.linear_rows):
            idx = np.array([v.index for v, _ in row.terms], dtype=int)
            coef = np.array([c for _, c in row.terms])
            slots = []
            if row.lo == row.hi:
                slots.append(("eq", len(eq_rows)))
                eq_rows.append((idx, coef))
                eq_rhs.append(row.hi)
            else:
                if math.isfinite(row.hi):
                    slots.append(("+", len(ub_rows)))
                    ub_rows.append((idx, coef))
                    ub_rhs.append(row.hi)
                if math.isfinite(row.lo):
                    slots.append(("-", len(ub_rows)))
                    ub_rows.append((idx, -coef))
                    ub_rhs.append(-row.lo)
            self.row_slots.append(slots)
            # x_a <= x_b rows drive bound propagation during search
            if (len(row.terms) == 2 and row.hi == 0.0 and not math.isfinite(row.lo)
                    and row.terms[0][1] == 1.0 and row.terms[1][1] == -1.0):
                self.implications.append((row.terms[0][0].index, row.terms[1][0].index))

        self.A_eq = self._assemble(eq_rows, n)
        self.b_eq = np.array(eq_rhs)
        self.A_ub = self._assemble(ub_rows, n)
        self.b_ub = np.array(ub_rhs)
        self.n_ub_base = len(ub_rhs)

    @staticmethod
    def _assemble(rows, n):
        if not rows:
            return sparse.csr_matrix((0, n))
        data, ri, ci = [], [], []
        for k, (idx, coef) in enumerate(rows):
            ri.extend([k] * len(idx))
            ci.extend(idx)
            data.extend(coef)
        return sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

    def cut_matrix(self, cuts: list[LinearRow]):
        rows = []
        rhs = []
        for cut in cuts:
            idx = np.array([v.index for v, _ in cut.terms], dtype=int)
            coef = np.array([c for _, c in cut.terms])
            rows.append((idx, coef))
            rhs.append(cut.hi)
        return self._assemble(rows, self.n), np.array(rhs)


def _compiled(model: MixedIntegerModel) -> _Compiled:
    cache = getattr(model, "_compiled_cache", None)
    if cache is None:
        cache = _Compiled(model)
        model._compiled_cache = cache
    return cache


def _dual_objective(res, b_ub, b_eq, lo, hi) -> float:
    """Dual value of the min-form LP from the backend marginals; infinite
    bounds pair with zero multipliers."""
    total = 0.0
    if len(b_ub):
        total += float(res.ineqlin.marginals @ b_ub)
    if len(b_eq):
        total += float(res.eqlin.marginals @ b_eq)
    ml, mu = res.lower.marginals, res.upper.marginals
    lmask, umask = ml != 0.0, mu != 0.0
    total += float(ml[lmask] @ lo[lmask]) + float(mu[umask] @ hi[umask])
    return total


def solve_lp(model: MixedIntegerModel, *, bounds: tuple | None = None,
             cuts: list[LinearRow] | None = None) -> LpSolution:
    """Solve the linear relaxation (cone rows ignored, binaries relaxed to
    their boxes) plus any cut rows. ``bounds`` overrides the variable boxes
    with a (lo, hi) array pair."""
    comp = _compiled(model)
    lo = comp.lo if bounds is None else np.asarray(bounds[0], dtype=float)
    hi = comp.hi if bounds is None else np.asarray(bounds[1], dtype=float)
    if np.any(lo > hi + 1e-12):
        return LpSolution("infeasible", math.nan, None, None, 0.0, 0.0)

    A_ub, b_ub = comp.A_ub, comp.b_ub
    if cuts:
        A_cut, b_cut = comp.cut_matrix(cuts)
        A_ub = sparse.vstack([A_ub, A_cut], format="csr")
        b_ub = np.concatenate([b_ub, b_cut])

    var_bounds = np.column_stack([lo, hi])
    last = None
    tight = {"primal_feasibility_tolerance": 1e-9,
             "dual_feasibility_tolerance": 1e-9}
    for options in (tight, {**tight, "presolve": False}):
        res = linprog(-comp.obj, A_ub=A_ub, b_ub=b_ub, A_eq=comp.A_eq,
                      b_eq=comp.b_eq, bounds=var_bounds, method="highs",
                      options=options)
        last = res
        if res.status == 2:
            return LpSolution("infeasible", math.nan, None, None, 0.0, 0.0)
        if res.status == 3:
            return LpSolution("unbounded", math.inf, None, None, 0.0, 0.0)
        if res.status != 0:
            continue
        x = res.x
        viol = 0.0
        if len(b_ub):
            viol = max(viol, float((A_ub @ x - b_ub).max(initial=0.0)))
        if len(comp.b_eq):
            viol = max(viol, float(np.abs(comp.A_eq @ x - comp.b_eq).max(initial=0.0)))
        viol = max(viol, float((lo - x).max(initial=0.0)), float((x - hi).max(initial=0.0)))
        dual_min = _dual_objective(res, b_ub, comp.b_eq, lo, hi)
        gap = abs(res.fun - dual_min)
        if viol <= FEAS_TOL and gap <= DUALITY_REL_TOL * (1.0 + abs(res.fun)):
            obj = -res.fun
            duals = _reassemble_duals(comp, res, len(cuts) if cuts else 0)
            _LP_STATS["count"] += 1
            rel = gap / (1.0 + abs(res.fun))
            if rel > _LP_STATS["max_rel_duality_gap"]:
                _LP_STATS["max_rel_duality_gap"] = rel
            if viol > _LP_STATS["max_violation"]:
                _LP_STATS["max_violation"] = viol
            return LpSolution("optimal", obj, x, duals, gap, viol)
    raise SolverError(
        f"{model.name}: LP not resolved cleanly (backend status {last.status}, "
        f"{last.message!r})")


def _reassemble_duals(comp: _Compiled, res, n_cuts: int) -> np.ndarray:
    """Per-row duals in the maximization convention: positive when the row
    binds at its upper bound, negative at its lower bound."""
    out = np.zeros(len(comp.row_slots) + n_cuts)
    m_eq = res.eqlin.marginals
    m_ub = res.ineqlin.marginals
    for r, slots in enumerate(comp.row_slots):
        val = 0.0
        for kind, k in slots:
            if kind == "eq":
                val -= m_eq[k]
            elif kind == "+":
                val -= m_ub[k]
            else:
                val += m_ub[k]
        out[r] = val
    for j in range(n_cuts):
        out[len(comp.row_slots) + j] = -m_ub[comp.n_ub_base + j]
    return out


def separate_cone(cone: ConeRow, point: np.ndarray, tol: float = 1e-6) -> LinearRow | None:
    """Supporting-hyperplane cut for ``||lhs|| <= rhs`` violated at a point.

    Returns None when the point satisfies the cone within ``tol``. The cut
    is valid for the whole cone and is violated by at least the same margin
    at the separating point.
    """
    e = np.array([expr.value(point) for expr in cone.lhs])
    r = cone.rhs.value(point)
    norm = float(np.linalg.norm(e))
    if norm <= r + tol or norm <= 1e-12:
        return None
    ehat = e / norm
    acc: dict[int, list] = {}
    const = -cone.rhs.const
    for em, expr in zip(ehat, cone.lhs):
        const += em * expr.const
        for v, c in expr.terms:
            slot = acc.setdefault(v.index, [v, 0.0])
            slot[1] += em * c
    for v, c in cone.rhs.terms:
        slot = acc.setdefault(v.index, [v, 0.0])
        slot[1] -= c
    terms = tuple((v, c) for v, c in (acc[i] for i in sorted(acc)) if c != 0.0)
    return LinearRow(f"oa_{cone.name}", terms, -math.inf, -const)


def _violations(model: MixedIntegerModel, point: np.ndarray) -> list[tuple[float, ConeRow]]:
    out = []
    for cone in model.cone_rows:
        e = np.array([expr.value(point) for expr in cone.lhs])
        v = float(np.linalg.norm(e)) - cone.rhs.value(point)
        if v > 0.0:
            out.append((v, cone))
    return out


def cone_converged_lp(model: MixedIntegerModel, *, bounds: tuple | None = None,
                      tol: float = 1e-6, max_rounds: int = 2000) -> LpSolution:
    """Linear relaxation refined with outer-approximation cuts until every
    cone row holds within ``tol``. The returned objective is a valid upper
    bound of the cone-constrained relaxation at the given bounds."""
    cuts: list[LinearRow] = []
    seen = set()
    sol = solve_lp(model, bounds=bounds, cuts=cuts)
    for _ in range(max_rounds):
        if sol.status != "optimal":
            return sol
        new = 0
        for viol, cone in sorted(_violations(model, sol.primal),
                                 key=lambda t: -t[0]):
            if viol <= tol:
                continue
            cut = separate_cone(cone, sol.primal, tol)
            if cut is None:
                continue
            key = (tuple((v.index, c) for v, c in cut.terms), cut.hi)
            if key in seen:
                continue
            seen.add(key)
            cuts.append(cut)
            new += 1
        if new == 0:
            return sol
        sol = solve_lp(model, bounds=bounds, cuts=cuts)
    raise SolverError(f"{model.name}: cone refinement did not settle "
                      f"within {max_rounds} rounds")


def _propagate(comp: _Compiled, lo: np.ndarray, hi: np.ndarray) -> bool:
    """Fixed-point pass over a <= b implications. Returns False on a
    provably empty box."""
    changed = True
    while changed:
        changed = False
        for a, b in comp.implications:
            if hi[b] < 0.5 and hi[a] > 0.0:     # b off forces a off
                if lo[a] > FEAS_TOL:
                    return False
                hi[a] = 0.0
                changed = True
            if lo[a] > 0.5 and lo[b] < 1.0:     # a on forces b on
                if hi[b] < 0.5:
                    return False
                lo[b] = 1.0
                changed = True
    return True


def _emit_log(opts: SolveOptions, record: dict, trail: list) -> None:
    trail.append(record)
    sink = opts.node_log
    if sink is None:
        return
    if callable(sink):
        sink(record)
    else:
        lp = "-" if record["lp"] is None else f"{record['lp']:.8f}"
        sink.write(f"node={record['node']} depth={record['depth']} lp={lp} "
                   f"bound={record['bound']:.8f} "
                   f"incumbent={record['incumbent']} cuts={record['cuts']}\n")


def solve_mip(model: MixedIntegerModel, options: SolveOptions | None = None) -> MipResult:
    """Best-bound branch and bound with lazy cone cuts.

    Nodes fix binary variables through their bounds; each node inherits the
    global cut pool (outer-approximation cuts are valid everywhere). A node
    whose relaxation is integral gets refined until its cones are clean, so
    incumbents always satisfy every cone row within tolerance.
    """
    opts = options or SolveOptions()
    comp = _compiled(model)
    t0 = time.monotonic()
    cuts: list[LinearRow] = []
    seen_cuts: set = set()
    trail: list = []

    def add_cuts(point: np.ndarray, budget: int) -> int:
        added = 0
        for viol, cone in sorted(_violations(model, point), key=lambda t: -t[0]):
            if added >= budget or viol <= opts.cone_viol_tol:
                break
            cut = separate_cone(cone, point, opts.cone_viol_tol)
            if cut is None:
                continue
            key = (tuple((v.index, c) for v, c in cut.terms), cut.hi)
            if key in seen_cuts:
                continue
            seen_cuts.add(key)
            cuts.append(cut)
            added += 1
        return added

    incumbent = None
    inc_obj = -math.inf
    nodes = 0
    seq = 0
    root_lo, root_hi = comp.lo.copy(), comp.hi.copy()
    heap: list = []
    if _propagate(comp, root_lo, root_hi):
        heapq.heappush(heap, (-math.inf, seq, root_lo, root_hi, 0))

    def heap_bound():
        return -heap[0][0] if heap else -math.inf

    def log_node(depth, lp_obj):
        _emit_log(opts, {"node": nodes, "depth": depth, "lp": lp_obj,
                         "bound": max(heap_bound(), inc_obj),
                         "incumbent": (inc_obj if incumbent is not None else None),
                         "cuts": len(cuts)}, trail)

    # primal heuristics: assignments are characterized by the binaries that
    # carry objective weight (the risk terms); zero-cost binaries only relax
    # constraints, so trying them at 1 is weakly dominant whenever something
    # downstream gains, and shutdown is the cleaner tie-break when nothing does
    cost_idx = [int(i) for i in comp.binary_idx if comp.obj[i] != 0.0]
    free_idx = [int(i) for i in comp.binary_idx if comp.obj[i] == 0.0]
    binary_set = {int(i) for i in comp.binary_idx}
    free_fill = 1.0 if any(comp.obj[i] > 0.0 for i in range(len(comp.obj))
                           if i not in binary_set) else 0.0
    tried_patterns: set = set()
    best_pattern: tuple | None = None

    def try_pattern(pattern: tuple) -> None:
        """Fix a full binary assignment and refine its relaxation to cone
        feasibility; a clean solve yields a feasible incumbent."""
        nonlocal incumbent, inc_obj, best_pattern
        if pattern in tried_patterns:
            return
        tried_patterns.add(pattern)
        lo, hi = root_lo.copy(), root_hi.copy()
        for i in free_idx:
            if free_fill:
                lo[i] = 1.0
            else:
                hi[i] = 0.0
        for i, v in zip(cost_idx, pattern):
            lo[i] = hi[i] = float(v)
        if np.any(lo > hi) or not _propagate(comp, lo, hi):
            return
        sol = solve_lp(model, bounds=(lo, hi), cuts=cuts)
        for _ in range(2000):
            if sol.status != "optimal" or sol.objective <= inc_obj + 1e-9:
                return
            if add_cuts(sol.primal, 10 ** 6) == 0:
                break
            sol = solve_lp(model, bounds=(lo, hi), cuts=cuts)
        if sol.status == "optimal" and sol.objective > inc_obj and \
                max((v for v, _ in _violations(model, sol.primal)), default=0.0) \
                <= opts.cone_viol_tol:
            incumbent = sol.primal.copy()
            inc_obj = sol.objective
            best_pattern = pattern

    def try_rounding(point: np.ndarray) -> None:
        if not cost_idx:
            if free_idx:
                try_pattern(())
            return
        try_pattern(tuple(int(round(point[i])) for i in cost_idx))

    def local_search() -> None:
        """First-improvement single flips around the incumbent pattern."""
        while best_pattern is not None:
            before = inc_obj
            for j in range(len(best_pattern)):
                flipped = list(best_pattern)
                flipped[j] = 1 - flipped[j]
                try_pattern(tuple(flipped))
                if inc_obj > before + 1e-9:
                    break
            if inc_obj <= before + 1e-9:
                return

    status = None
    while heap:
        if time.monotonic() - t0 > opts.time_limit:
            status = "time_limit"
            break
        neg_bound, _, lo, hi, depth = heapq.heappop(heap)
        bound = -neg_bound
        if bound <= inc_obj + 1e-9:
            continue
        if incumbent is not None and \
                bound - inc_obj <= opts.rel_gap_tol * max(1.0, abs(inc_obj)):
            seq += 1
            heapq.heappush(heap, (neg_bound, seq, lo, hi, depth))
            status = "optimal"
            break

        sol = solve_lp(model, bounds=(lo, hi), cuts=cuts)
        nodes += 1
        if sol.status == "unbounded":
            raise SolverError(f"{model.name}: unbounded relaxation")
        if sol.status != "optimal" or sol.objective <= inc_obj + 1e-9:
            log_node(depth, sol.objective if sol.status == "optimal" else None)
            continue

        # refine this node with cone cuts; the root and integral points are
        # driven to cone feasibility no matter the per-node budget
        node_cuts = 0
        while True:
            frac = sol.primal[comp.binary_idx]
            dist = np.abs(frac - np.round(frac))
            integral = bool(np.all(dist <= opts.int_tol)) if len(dist) else True
            budget = (10 ** 6) if (integral or depth == 0) \
                else opts.max_cuts_per_node - node_cuts
            added = add_cuts(sol.primal, budget) if budget > 0 else 0
            if added == 0:
                break
            node_cuts += added
            if node_cuts > 10 ** 6:
                raise SolverError(f"{model.name}: cone refinement stalled")
            sol = solve_lp(model, bounds=(lo, hi), cuts=cuts)
            if sol.status != "optimal" or sol.objective <= inc_obj + 1e-9:
                break

        if sol.status != "optimal" or sol.objective <= inc_obj + 1e-9:
            log_node(depth, sol.objective if sol.status == "optimal" else None)
            continue
        frac = sol.primal[comp.binary_idx]
        dist = np.abs(frac - np.round(frac))
        integral = bool(np.all(dist <= opts.int_tol)) if len(dist) else True

        if integral:
            if max((v for v, _ in _violations(model, sol.primal)), default=0.0) \
                    <= opts.cone_viol_tol:
                # canonicalize through the pattern heuristic first (it fills
                # the cost-free binaries); keep the raw point only if better
                node_obj = sol.objective
                try_pattern(tuple(int(round(sol.primal[i])) for i in cost_idx))
                if node_obj > inc_obj:
                    incumbent = sol.primal.copy()
                    inc_obj = node_obj
                    if cost_idx:
                        best_pattern = tuple(int(round(sol.primal[i]))
                                             for i in cost_idx)
                local_search()
                log_node(depth, sol.objective)
                continue
            # numerically stuck integral point: treat as fathomed
            log_node(depth, sol.objective)
            continue

        before = inc_obj
        try_rounding(sol.primal)
        if inc_obj > before:
            local_search()
        if sol.objective <= inc_obj + 1e-9:
            log_node(depth, sol.objective)
            continue

        # most-fractional branching, lowest index on ties
        scores = np.minimum(frac, 1.0 - frac)
        scores[dist <= opts.int_tol] = -1.0
        pick = comp.binary_idx[int(np.argmax(scores))]
        for fix in (0.0, 1.0):
            clo, chi = lo.copy(), hi.copy()
            if fix == 0.0:
                chi[pick] = 0.0
            else:
                clo[pick] = 1.0
            if clo[pick] > chi[pick]:
                continue
            if not _propagate(comp, clo, chi):
                continue
            seq += 1
            heapq.heappush(heap, (-sol.objective, seq, clo, chi, depth + 1))
        log_node(depth, sol.objective)

    if status is None:
        status = "optimal" if incumbent is not None else "infeasible"
    if status == "time_limit" and incumbent is None:
        best_bound = heap_bound()
        return MipResult("time_limit", math.nan, best_bound, None, math.inf,
                         nodes, len(cuts), time.monotonic() - t0, trail)
    best_bound = max(inc_obj, heap_bound()) if status != "infeasible" else math.nan
    gap = 0.0 if status == "infeasible" else \
        max(0.0, (best_bound - inc_obj) / max(1.0, abs(inc_obj)))
    return MipResult(status, inc_obj if incumbent is not None else math.nan,
                     best_bound, incumbent, gap, nodes, len(cuts),
                     time.monotonic() - t0, trail)
