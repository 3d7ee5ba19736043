"""Command line front end.

Four subcommands mirror the experiment pipeline: ``gen-scenarios`` draws a
risk/alpha sample set, ``run`` sweeps it across formulations into a results
directory, ``summarize`` prints the aggregate tables, and ``plot`` renders
a scatter figure. Every flag of ``gen-scenarios`` and ``run`` can instead
come from a JSON config file (``--config``); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .mipsolve import SolverError
from .netcase import CaseError, load_case
from .scenario import generate_scenarios, read_scenarios, write_scenarios

_DEFAULTS = {
    "sigma": 1.0,
    "alpha": "uniform",
    "seed": 0,
    "formulations": "nf,dc,soc",
    "time_limit": 1800.0,
    "workers": 1,
    "y": "objective",
}


def _merged(args: argparse.Namespace, keys: list[str]) -> dict:
    """Resolve each option: explicit flag, then config file, then default."""
    config = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(config) - set(keys)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None:
            v = config.get(k, _DEFAULTS.get(k))
        out[k] = v
    return out


def _require(opts: dict, *names: str) -> None:
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise ValueError("missing required option(s): "
                         + ", ".join(f"--{n.replace('_', '-')}" for n in missing))


def _cmd_gen_scenarios(args) -> int:
    opts = _merged(args, ["case", "count", "sigma", "alpha", "seed", "out"])
    _require(opts, "case", "count", "out")
    net = load_case(opts["case"])
    scenarios = generate_scenarios(net, int(opts["count"]),
                                   sigma=float(opts["sigma"]),
                                   alpha=opts["alpha"], seed=int(opts["seed"]))
    write_scenarios(opts["out"], net.name, float(opts["sigma"]),
                    int(opts["seed"]), scenarios)
    print(f"wrote {len(scenarios)} scenarios to {opts['out']}")
    return 0


def _cmd_run(args) -> int:
    opts = _merged(args, ["case", "scenarios", "count", "sigma", "alpha",
                          "seed", "formulations", "time_limit", "workers",
                          "out", "skip_if_timeout_frac"])
    _require(opts, "case", "out")
    net = load_case(opts["case"])
    if opts["scenarios"]:
        _, scenarios = read_scenarios(opts["scenarios"])
    elif opts["count"]:
        scenarios = generate_scenarios(net, int(opts["count"]),
                                       sigma=float(opts["sigma"]),
                                       alpha=opts["alpha"],
                                       seed=int(opts["seed"]))
    else:
        raise ValueError("provide --scenarios FILE or --count N")
    forms = [f.strip() for f in str(opts["formulations"]).split(",") if f.strip()]
    skip = opts["skip_if_timeout_frac"]
    path = bench.run_experiment(
        opts["case"], scenarios, forms, opts["out"],
        workers=int(opts["workers"]), time_limit=float(opts["time_limit"]),
        skip_if_timeout_frac=None if skip is None else float(skip))
    print(f"results in {path}")
    return 0


def _cmd_summarize(args) -> int:
    table = bench.summarize(args.results)
    text = table.render()
    sys.stdout.write(text)
    results = Path(args.results)
    if results.is_dir():
        (results / "summary.txt").write_text(text)
    return 0


def _cmd_plot(args) -> int:
    opts = _merged(args, ["y", "out"])
    out = opts["out"]
    if out is None:
        base = Path(args.results)
        if not base.is_dir():
            base = base.parent
        out = base / f"scatter_{opts['y']}.svg"
    path = bench.plot_scatter(args.results, opts["y"], out)
    print(f"figure in {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ops",
        description="Build, solve and evaluate power shutoff decisions "
                    "across power flow formulations.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenarios",
                       help="sample per-line risk and alpha values")
    g.add_argument("--case", help="bundled case name or case file path")
    g.add_argument("--count", type=int, help="number of scenarios")
    g.add_argument("--sigma", type=float, help="risk distribution scale")
    g.add_argument("--alpha", help="'uniform' or 'fixed:VALUE'")
    g.add_argument("--seed", type=int, help="sampling seed")
    g.add_argument("--out", help="scenario file to write")
    g.add_argument("--config", help="JSON file with these options")
    g.set_defaults(func=_cmd_gen_scenarios)

    r = sub.add_parser("run", help="solve scenarios across formulations")
    r.add_argument("--case", help="bundled case name or case file path")
    r.add_argument("--scenarios", help="scenario file from gen-scenarios")
    r.add_argument("--count", type=int,
                   help="generate this many scenarios instead of reading a file")
    r.add_argument("--sigma", type=float, help="risk scale when generating")
    r.add_argument("--alpha", help="alpha mode when generating")
    r.add_argument("--seed", type=int, help="seed when generating")
    r.add_argument("--formulations",
                   help="comma list out of nf,dc,soc,acx (default nf,dc,soc)")
    r.add_argument("--time-limit", type=float, dest="time_limit",
                   help="seconds per solve (default 1800)")
    r.add_argument("--workers", type=int, help="parallel scenario solves")
    r.add_argument("--out", help="results directory")
    r.add_argument("--skip-if-timeout-frac", type=float,
                   dest="skip_if_timeout_frac",
                   help="stop scheduling a formulation once this fraction "
                        "of its solves hit the time limit")
    r.add_argument("--config", help="JSON file with these options")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("summarize", help="aggregate a results directory")
    s.add_argument("results", help="results directory or CSV file")
    s.set_defaults(func=_cmd_summarize)

    f = sub.add_parser("plot", help="scatter a results quantity against alpha")
    f.add_argument("results", help="results directory or CSV file")
    f.add_argument("--y", help="objective|load|risk|time or a CSV column")
    f.add_argument("--out", help="SVG path (default: next to the results)")
    f.set_defaults(func=_cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseError, SolverError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
