"""Experiment harness: scenario sweeps, aggregation, and plots.

``run_experiment`` drives the full pipeline for each scenario and enabled
formulation: build, solve under a time limit, then recover what the network
can actually deliver for the chosen shutoff. One row lands in a flat CSV
per (scenario, formulation) pair, written by a single writer in scenario
order no matter how the parallel solves finish, and flushed row by row so
a killed sweep resumes where it stopped.

``summarize`` folds the CSV into three views: per-formulation means of the
claimed and recovered objectives, pairwise recovered-objective differences,
and counts of scenarios where a formulation oversold load delivery by more
than twenty percent. ``plot_scatter`` renders the per-scenario cloud with a
rolling trend line to an SVG next to the CSV.
"""

from __future__ import annotations

import csv
import math
import os
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

from .acpower import Topology, ac_ops_enumerate, redispatch
from .formulate import build_dc, build_nf, build_soc, extract_solution
from .mipsolve import SolveOptions, solve_mip
from .netcase import Network, load_case
from .scenario import Scenario

__all__ = ["RunRecord", "SummaryTable", "CSV_HEADER", "FORMULATIONS",
           "run_experiment", "read_records", "summarize", "plot_scatter"]

CSV_HEADER = ("case,scenario,alpha,formulation,objective,load_served_frac,"
              "risk_served_frac,status,gap,nodes,wall_time_s,"
              "ac_feasible_load_frac,ac_feasible_objective,redispatch_status")

FORMULATIONS = ("nf", "dc", "soc", "acx")

_BUILDERS = {"nf": build_nf, "dc": build_dc, "soc": build_soc}

# drop rule needs a few completed rows before a timeout fraction means anything
_DROP_MIN_SAMPLES = 5


@dataclass
class RunRecord:
    """One solved (scenario, formulation) pair plus its recovered delivery."""
    case_name: str
    scenario_id: int
    alpha: float
    formulation: str
    objective: float
    load_served_frac: float
    risk_served_frac: float
    status: str
    gap: float
    nodes: int
    wall_time_s: float
    ac_feasible_load_frac: float
    ac_feasible_objective: float
    redispatch_status: str

    @property
    def overestimate_frac(self) -> float:
        return self.load_served_frac - self.ac_feasible_load_frac

    def to_csv_row(self) -> str:
        return ",".join([
            self.case_name, str(self.scenario_id), repr(self.alpha),
            self.formulation, repr(self.objective),
            repr(self.load_served_frac), repr(self.risk_served_frac),
            self.status, repr(self.gap), str(self.nodes),
            repr(self.wall_time_s), repr(self.ac_feasible_load_frac),
            repr(self.ac_feasible_objective), self.redispatch_status,
        ])

    @classmethod
    def from_csv_row(cls, row: list[str]) -> "RunRecord":
        return cls(row[0], int(row[1]), float(row[2]), row[3], float(row[4]),
                   float(row[5]), float(row[6]), row[7], float(row[8]),
                   int(row[9]), float(row[10]), float(row[11]), float(row[12]),
                   row[13])


_worker_nets: dict[str, Network] = {}
_worker_caches: dict[str, dict] = {}


def _worker_net(case_src: str) -> Network:
    net = _worker_nets.get(case_src)
    if net is None:
        net = load_case(case_src)
        _worker_nets[case_src] = net
    return net


def solve_one(case_src: str, scn: Scenario, formulation: str,
              time_limit: float) -> RunRecord:
    """Solve one pair and recover its AC-feasible delivery. Safe to call in
    a worker process; per-process caches make repeat topologies cheap."""
    net = _worker_net(case_src)
    cache = _worker_caches.setdefault(case_src, {})
    pd_tot = sum(d.pd for d in net.loads.values())

    if formulation == "acx":
        sol = ac_ops_enumerate(net, scn, cache=cache)
        return RunRecord(net.name, scn.id, scn.alpha, "acx", sol.objective,
                         sol.load_served_frac, sol.risk_served_frac,
                         sol.status, sol.gap, sol.nodes, sol.wall_time_s,
                         sol.load_served_frac, sol.objective, "feasible")

    model = _BUILDERS[formulation](net, scn)
    result = solve_mip(model, SolveOptions(time_limit=time_limit))
    if result.incumbent is None:
        return RunRecord(net.name, scn.id, scn.alpha, formulation,
                         float("nan"), float("nan"), float("nan"),
                         result.status, result.gap, result.nodes,
                         result.wall_time_s, float("nan"), float("nan"),
                         "none")
    sol = extract_solution(net, scn, model, result, formulation)
    topo = Topology.from_solution(net, sol)
    rd = redispatch(net, scn, topo, cache)
    return RunRecord(net.name, scn.id, scn.alpha, formulation, sol.objective,
                     sol.load_served_frac, sol.risk_served_frac, sol.status,
                     result.gap, result.nodes, result.wall_time_s,
                     rd.load_served / pd_tot, rd.recovered_objective,
                     rd.status)


def _read_existing(path: Path) -> list[RunRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and ",".join(header) != CSV_HEADER:
            raise ValueError(f"unexpected results header in {path}")
        for row in reader:
            records.append(RunRecord.from_csv_row(row))
    return records


def read_records(source: str | Path) -> list[RunRecord]:
    """Load results from a CSV file or a directory holding results.csv."""
    path = Path(source)
    if path.is_dir():
        path = path / "results.csv"
    if not path.exists():
        raise FileNotFoundError(f"no results at {path}")
    return _read_existing(path)


class _DropRule:
    """Once too many solves of a formulation hit the time limit, stop
    scheduling it (the paper drops formulations the same way rather than
    letting one of them eat the whole budget)."""

    def __init__(self, frac: float | None):
        self.frac = frac
        self.timeouts: dict[str, int] = {}
        self.totals: dict[str, int] = {}
        self.dropped: set[str] = set()

    def record(self, rec: RunRecord) -> None:
        self.totals[rec.formulation] = self.totals.get(rec.formulation, 0) + 1
        if rec.status == "time_limit":
            self.timeouts[rec.formulation] = \
                self.timeouts.get(rec.formulation, 0) + 1
        if self.frac is None:
            return
        total = self.totals[rec.formulation]
        if total >= _DROP_MIN_SAMPLES and \
                self.timeouts.get(rec.formulation, 0) / total > self.frac:
            self.dropped.add(rec.formulation)

    def skip(self, formulation: str) -> bool:
        return formulation in self.dropped


def run_experiment(case_src: str, scenarios: list[Scenario],
                   formulations: list[str] | tuple[str, ...], out_dir: str | Path,
                   *, workers: int = 1, time_limit: float = 1800.0,
                   skip_if_timeout_frac: float | None = None) -> Path:
    """Sweep all scenarios across the given formulations into
    ``out_dir/results.csv``. Resumable: pairs already present are not rerun,
    and rerunning a finished sweep changes nothing.
    """
    formulations = list(formulations)
    for f in formulations:
        if f not in FORMULATIONS:
            raise ValueError(f"unknown formulation {f!r}; "
                             f"expected one of {', '.join(FORMULATIONS)}")
    if len(set(formulations)) != len(formulations):
        raise ValueError("duplicate formulation names")
    if len({s.id for s in scenarios}) != len(scenarios):
        raise ValueError("duplicate scenario ids")
    net = load_case(case_src)
    for scn in scenarios:
        if set(scn.risk) != set(net.lines):
            raise ValueError(f"scenario {scn.id} risk keys do not match the "
                             f"lines of case {net.name}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "results.csv"
    drop = _DropRule(skip_if_timeout_frac)
    done: set[tuple[int, str]] = set()
    if path.exists():
        for rec in _read_existing(path):
            done.add((rec.scenario_id, rec.formulation))
            drop.record(rec)
    else:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")

    tasks = [(scn, f) for scn in scenarios for f in formulations
             if (scn.id, f) not in done]
    if not tasks:
        return path

    with open(path, "a") as fh:
        def emit(rec: RunRecord | None) -> None:
            if rec is None:
                return
            fh.write(rec.to_csv_row() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            drop.record(rec)

        if workers <= 1:
            for scn, f in tasks:
                if drop.skip(f):
                    continue
                emit(solve_one(case_src, scn, f, time_limit))
            return path

        results: dict[tuple[int, str], RunRecord | None] = {}
        next_out = 0
        pending = deque(tasks)
        in_flight: dict = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            while pending or in_flight:
                while pending and len(in_flight) < 2 * workers:
                    scn, f = pending.popleft()
                    if drop.skip(f):
                        results[(scn.id, f)] = None
                        continue
                    fut = pool.submit(solve_one, case_src, scn, f, time_limit)
                    in_flight[fut] = (scn.id, f)
                if in_flight:
                    finished, _ = wait(in_flight, return_when=FIRST_COMPLETED)
                    for fut in finished:
                        results[in_flight.pop(fut)] = fut.result()
                # single writer drains in task order
                while next_out < len(tasks):
                    key = (tasks[next_out][0].id, tasks[next_out][1])
                    if key not in results:
                        break
                    emit(results.pop(key))
                    next_out += 1
    return path


# ---------------------------------------------------------------------------
# aggregation

_PAIRS = (("dc", "nf", "DC-NF"), ("soc", "dc", "SOC-DC"),
          ("acx", "dc", "AC-DC"), ("soc", "acx", "SOC-AC"))


@dataclass
class SummaryTable:
    """Aggregates of one results file.

    ``objective_means`` maps (case, formulation) to (n, mean objective, mean
    AC-feasible objective, difference of the two means). ``pairwise`` maps
    case to label -> mean AC-feasible difference over shared scenarios (None
    when a side is absent). ``overestimates`` maps (case, formulation) to
    (count of scenarios oversold by more than 20% of total load, n).
    """
    objective_means: dict[tuple[str, str], tuple[int, float, float, float]]
    pairwise: dict[str, dict[str, float | None]]
    overestimates: dict[tuple[str, str], tuple[int, int]]

    def render(self) -> str:
        lines = []
        forms = sorted({k[1] for k in self.objective_means},
                       key=lambda f: (FORMULATIONS.index(f)
                                      if f in FORMULATIONS else 99))
        cases = sorted({k[0] for k in self.objective_means})
        lines.append("Average objective, AC-feasible objective, difference")
        lines.append(f"{'case':<16}{'form':<6}{'n':>5}{'objective':>13}"
                     f"{'ac-feasible':>13}{'difference':>13}")
        for c in cases:
            for f in forms:
                if (c, f) not in self.objective_means:
                    continue
                n, obj, feas, diff = self.objective_means[(c, f)]
                lines.append(f"{c:<16}{f:<6}{n:>5}{obj:>13.6f}"
                             f"{feas:>13.6f}{diff:>13.6f}")
        lines.append("")
        lines.append("Mean pairwise AC-feasible objective differences")
        labels = [p[2] for p in _PAIRS]
        lines.append(f"{'case':<16}" + "".join(f"{l:>11}" for l in labels))
        for c in cases:
            row = [f"{c:<16}"]
            for l in labels:
                v = self.pairwise.get(c, {}).get(l)
                row.append(f"{'--':>11}" if v is None else f"{v:>11.6f}")
            lines.append("".join(row))
        lines.append("")
        lines.append("Scenarios overestimating AC-feasible load delivery "
                     "by more than 20%")
        lines.append(f"{'case':<16}{'form':<6}{'count':>7}{'n':>5}")
        for c in cases:
            for f in forms:
                if (c, f) not in self.overestimates:
                    continue
                count, n = self.overestimates[(c, f)]
                lines.append(f"{c:<16}{f:<6}{count:>7}{n:>5}")
        return "\n".join(lines) + "\n"


def summarize(source: str | Path) -> SummaryTable:
    records = [r for r in read_records(source)
               if math.isfinite(r.objective)
               and math.isfinite(r.ac_feasible_objective)]
    if not records:
        raise ValueError("empty results")

    grouped: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        grouped.setdefault((r.case_name, r.formulation), []).append(r)

    objective_means = {}
    overestimates = {}
    for key, rows in grouped.items():
        n = len(rows)
        obj = sum(r.objective for r in rows) / n
        feas = sum(r.ac_feasible_objective for r in rows) / n
        objective_means[key] = (n, obj, feas, obj - feas)
        overestimates[key] = (sum(1 for r in rows
                                  if r.overestimate_frac > 0.20), n)

    pairwise: dict[str, dict[str, float | None]] = {}
    for case in {r.case_name for r in records}:
        by_form: dict[str, dict[int, float]] = {}
        for r in records:
            if r.case_name == case:
                by_form.setdefault(r.formulation, {})[r.scenario_id] = \
                    r.ac_feasible_objective
        row: dict[str, float | None] = {}
        for a, b, label in _PAIRS:
            if a in by_form and b in by_form:
                common = sorted(set(by_form[a]) & set(by_form[b]))
                row[label] = (sum(by_form[a][s] - by_form[b][s]
                                  for s in common) / len(common)
                              if common else None)
            else:
                row[label] = None
        pairwise[case] = row
    return SummaryTable(objective_means, pairwise, overestimates)


# ---------------------------------------------------------------------------
# plots

_Y_FIELDS = {
    "objective": "objective",
    "load": "load_served_frac",
    "risk": "risk_served_frac",
    "time": "wall_time_s",
}
_NUMERIC_FIELDS = ("objective", "load_served_frac", "risk_served_frac",
                   "gap", "wall_time_s", "ac_feasible_load_frac",
                   "ac_feasible_objective")


def _nearest_window_means(alphas: list[float], ys: list[float],
                          k: int = 30) -> list[float]:
    """Mean of the k records nearest by alpha, per record; inputs sorted."""
    n = len(alphas)
    width = min(k, n)
    out = []
    for i in range(n):
        lo = hi = i
        while hi - lo + 1 < width:
            left = alphas[i] - alphas[lo - 1] if lo > 0 else math.inf
            right = alphas[hi + 1] - alphas[i] if hi < n - 1 else math.inf
            if left <= right:
                lo -= 1
            else:
                hi += 1
        out.append(sum(ys[lo:hi + 1]) / (hi - lo + 1))
    return out


def plot_scatter(source: str | Path, y_field: str, out: str | Path,
                 window: int = 30) -> Path:
    """Scatter of the chosen quantity against alpha, one series per
    formulation, with a trend line through the rolling mean of the nearest
    ``window`` records. Deterministic SVG bytes for a fixed input."""
    field = _Y_FIELDS.get(y_field, y_field)
    if field not in _NUMERIC_FIELDS:
        raise ValueError(f"unknown field {y_field!r}; expected one of "
                         f"{', '.join(sorted(set(_Y_FIELDS) | set(_NUMERIC_FIELDS)))}")
    records = read_records(source)

    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "ops"

    colors = {"nf": "C0", "dc": "C1", "soc": "C2", "acx": "C3"}
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    forms = sorted({r.formulation for r in records},
                   key=lambda f: (FORMULATIONS.index(f)
                                  if f in FORMULATIONS else 99))
    plotted = False
    for f in forms:
        pts = sorted(((r.alpha, getattr(r, field)) for r in records
                      if r.formulation == f
                      and math.isfinite(getattr(r, field))),
                     key=lambda t: t[0])
        if not pts:
            continue
        plotted = True
        a = [p[0] for p in pts]
        y = [p[1] for p in pts]
        color = colors.get(f, "C4")
        ax.scatter(a, y, s=9, alpha=0.45, color=color, label=f, linewidths=0)
        ax.plot(a, _nearest_window_means(a, y, window), color=color, lw=1.6)
    if not plotted:
        raise ValueError("no finite records to plot")
    ax.set_xlabel("risk weight alpha")
    ax.set_ylabel(field.replace("_", " "))
    ax.legend(loc="best")
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
