"""Wildfire risk scenarios.

A scenario assigns every line an independent Rayleigh-distributed risk
value and fixes the risk/load trade-off weight alpha. Sampling is fully
reproducible: each scenario id gets its own counter-based RNG stream, so
scenario k is the same no matter how many scenarios are generated or in
which order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netcase import Network

__all__ = [
    "Scenario", "rayleigh_inverse_cdf", "generate_scenarios",
    "write_scenarios", "read_scenarios",
]


@dataclass(frozen=True)
class Scenario:
    id: int
    alpha: float
    risk: dict[int, float]  # line id -> risk value, all >= 0
    seed: int

    def total_risk(self) -> float:
        return sum(self.risk.values())


def rayleigh_inverse_cdf(u: float, sigma: float = 1.0) -> float:
    """Quantile function of the Rayleigh distribution with scale sigma.

    Maps u in [0, 1) to sigma * sqrt(-2 ln(1 - u)). Monotone, 0 at u=0.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    # log1p(-u) keeps precision for small u
    return sigma * math.sqrt(-2.0 * math.log1p(-u))


def _parse_alpha_mode(alpha) -> tuple[str, float]:
    if isinstance(alpha, str):
        if alpha == "uniform":
            return "uniform", math.nan
        if alpha.startswith("fixed:"):
            alpha = float(alpha.split(":", 1)[1])
        else:
            raise ValueError(f"alpha mode must be 'uniform' or 'fixed:VALUE', got {alpha!r}")
    value = float(alpha)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"fixed alpha must lie in [0, 1], got {value}")
    return "fixed", value


def generate_scenarios(net: Network, count: int, *, sigma: float = 1.0,
                       alpha="uniform", seed: int = 0) -> list[Scenario]:
    """Sample ``count`` scenarios for a network.

    ``alpha`` is either the string ``"uniform"`` (drawn from U[0,1] per
    scenario), a number, or ``"fixed:VALUE"``. Per scenario the draw order
    is one uniform per line in line-id order (risk via the Rayleigh
    quantile), then the alpha uniform when applicable. The stream for
    scenario k is keyed by (seed, k), independent of ``count``.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    mode, fixed_alpha = _parse_alpha_mode(alpha)
    line_ids = list(net.lines)
    out = []
    for k in range(count):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=k))
        draws = rng.random(len(line_ids) + 1)
        risk = {lid: rayleigh_inverse_cdf(draws[j], sigma)
                for j, lid in enumerate(line_ids)}
        a = draws[-1] if mode == "uniform" else fixed_alpha
        out.append(Scenario(id=k, alpha=float(a), risk=risk, seed=seed))
    return out


def write_scenarios(path: str | Path, case_name: str, sigma: float, seed: int,
                    scenarios: list[Scenario]) -> None:
    doc = {
        "case_name": case_name,
        "sigma": sigma,
        "seed": seed,
        "scenarios": [
            {"id": s.id, "alpha": s.alpha,
             "risk": {str(lid): r for lid, r in s.risk.items()}}
            for s in scenarios
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_scenarios(path: str | Path) -> tuple[dict, list[Scenario]]:
    """Read a scenario file. Returns (metadata, scenarios)."""
    doc = json.loads(Path(path).read_text())
    meta = {"case_name": doc["case_name"], "sigma": doc["sigma"], "seed": doc["seed"]}
    scenarios = []
    for entry in doc["scenarios"]:
        risk = {int(lid): float(r) for lid, r in entry["risk"].items()}
        if any(r < 0 for r in risk.values()):
            raise ValueError(f"scenario {entry['id']}: negative risk value")
        a = float(entry["alpha"])
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"scenario {entry['id']}: alpha {a} outside [0, 1]")
        scenarios.append(Scenario(id=int(entry["id"]), alpha=a, risk=risk,
                                  seed=int(doc["seed"])))
    return meta, scenarios
