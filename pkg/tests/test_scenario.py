import math

import numpy as np
import pytest

from opskit.scenario import (generate_scenarios, rayleigh_inverse_cdf,
                             read_scenarios, write_scenarios)


def test_quantile_endpoints_and_known_point():
    assert rayleigh_inverse_cdf(0.0) == 0.0
    # u = 1 - exp(-1/2) puts the argument of sqrt at exactly 1
    u = 1.0 - math.exp(-0.5)
    assert rayleigh_inverse_cdf(u, sigma=2.0) == pytest.approx(2.0, abs=1e-12)


def test_quantile_monotone():
    us = np.linspace(0.0, 0.999, 500)
    vals = [rayleigh_inverse_cdf(float(u), sigma=0.7) for u in us]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_quantile_validation():
    with pytest.raises(ValueError, match="sigma"):
        rayleigh_inverse_cdf(0.5, sigma=0.0)
    with pytest.raises(ValueError, match="u must"):
        rayleigh_inverse_cdf(1.0)
    with pytest.raises(ValueError, match="u must"):
        rayleigh_inverse_cdf(-0.1)


def test_sample_mean_matches_rayleigh(case3):
    # E[X] = sigma * sqrt(pi/2) ~= 1.2533 at sigma=1
    scns = generate_scenarios(case3, 400_000 // len(case3.lines),
                              sigma=1.0, seed=7)
    vals = [r for s in scns for r in s.risk.values()]
    assert np.mean(vals) == pytest.approx(math.sqrt(math.pi / 2), abs=0.01)


def test_pooled_risks_pass_ks(case14):
    # compare pooled empirical CDF against the Rayleigh CDF
    sigma = 1.3
    n = 10_000 // len(case14.lines) + 1
    scns = generate_scenarios(case14, n, sigma=sigma, seed=3)
    vals = np.sort([r for s in scns for r in s.risk.values()])
    cdf = 1.0 - np.exp(-(vals ** 2) / (2.0 * sigma ** 2))
    k = len(vals)
    emp_hi = np.arange(1, k + 1) / k
    emp_lo = np.arange(0, k) / k
    ks = max(np.max(np.abs(emp_hi - cdf)), np.max(np.abs(emp_lo - cdf)))
    assert ks < 0.02


def test_determinism(case5):
    a = generate_scenarios(case5, 20, sigma=2.0, alpha="uniform", seed=42)
    b = generate_scenarios(case5, 20, sigma=2.0, alpha="uniform", seed=42)
    assert a == b
    c = generate_scenarios(case5, 20, sigma=2.0, alpha="uniform", seed=43)
    assert a != c


def test_prefix_stability(case5):
    # scenario k is identical no matter how many scenarios were requested
    short = generate_scenarios(case5, 5, seed=11)
    longer = generate_scenarios(case5, 50, seed=11)
    assert longer[:5] == short


def test_fixed_alpha(case3):
    scns = generate_scenarios(case3, 10, alpha="fixed:0.25", seed=0)
    assert all(s.alpha == 0.25 for s in scns)
    scns = generate_scenarios(case3, 4, alpha=0.8, seed=0)
    assert all(s.alpha == 0.8 for s in scns)


def test_uniform_alpha_covers_unit_interval(case3):
    scns = generate_scenarios(case3, 500, alpha="uniform", seed=1)
    alphas = [s.alpha for s in scns]
    assert all(0.0 <= a <= 1.0 for a in alphas)
    assert np.mean(alphas) == pytest.approx(0.5, abs=0.05)


def test_risk_keys_cover_all_lines(case14):
    (scn,) = generate_scenarios(case14, 1, seed=9)
    assert set(scn.risk) == set(case14.lines)
    assert all(r >= 0.0 for r in scn.risk.values())


def test_alpha_mode_validation(case3):
    with pytest.raises(ValueError, match="alpha"):
        generate_scenarios(case3, 1, alpha="weird")
    with pytest.raises(ValueError, match="alpha"):
        generate_scenarios(case3, 1, alpha=1.5)
    with pytest.raises(ValueError, match="count"):
        generate_scenarios(case3, -1)
    with pytest.raises(ValueError, match="sigma"):
        generate_scenarios(case3, 1, sigma=-2.0)


def test_file_round_trip(tmp_path, case5):
    scns = generate_scenarios(case5, 12, sigma=1.7, alpha="uniform", seed=5)
    path = tmp_path / "scens.json"
    write_scenarios(path, case5.name, 1.7, 5, scns)
    meta, again = read_scenarios(path)
    assert again == scns
    assert meta["case_name"] == case5.name
    assert meta["sigma"] == 1.7
    assert meta["seed"] == 5


def test_read_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}")
    with pytest.raises((KeyError, ValueError)):
        read_scenarios(path)


def test_read_rejects_bad_values(tmp_path, case3):
    from opskit.scenario import generate_scenarios as gen
    scns = gen(case3, 1, seed=0)
    path = tmp_path / "scens.json"
    write_scenarios(path, case3.name, 1.0, 0, scns)
    text = path.read_text().replace(f'"alpha": {scns[0].alpha}',
                                    '"alpha": 1.5')
    path.write_text(text)
    with pytest.raises(ValueError, match="alpha"):
        read_scenarios(path)
