import json
import math

import numpy as np
import pytest

import levcool as lc

TWO_PI = 2 * math.pi


@pytest.fixture
def paper():
    p = lc.OscillatorParams(1e-18, TWO_PI * 77.6e3, TWO_PI * 21.9)
    b = lc.budget_from_rates(TWO_PI * 1.33e3, TWO_PI * 5.5e3, 3.0)
    return p, b


def test_budget_and_bound(paper):
    _, b = paper
    assert b.eta_meas == pytest.approx(0.2418, abs=1e-4)
    g = lc.optimal_gamma(b)
    assert g / TWO_PI == pytest.approx(10818.5, rel=1e-4)
    assert lc.cold_damping_occupation(g, b) == pytest.approx(lc.conditional_occupation(b.eta_meas), rel=1e-12)


def test_invalid_input_raises_value_error():
    with pytest.raises(ValueError):
        lc.OscillatorParams(-1.0, 1.0, 0.0)


def test_simulation_psd_matches_free_oscillator(paper):
    p, b = paper
    chain = lc.paper_chain(lc.smallest_stable_delay(p, 0))
    out = lc.simulate_closed_loop(p, b, chain, 0.0, 0.4, seed=3, imprecision_on=False, decimation=4)
    z = out["z"]["samples"]
    assert z.dtype == np.float64 and len(z) > 1000
    s = lc.estimate_psd(z, out["z"]["sample_rate"], 8192)
    assert s.n_averages == len(z) // 8192
    grid = np.asarray(s.grid)
    assert np.all(np.diff(grid) > 0)


def test_unstable_gain_is_refused(paper):
    p, b = paper
    chain = lc.paper_chain(3 * lc.smallest_stable_delay(p, 0))
    assert not lc.stability_check(p, chain, lc.optimal_gamma(b))[0]
    with pytest.raises(lc.NumericalError):
        lc.simulate_closed_loop(p, b, chain, lc.optimal_gamma(b), 0.01)


def test_heterodyne_round_trip(paper):
    p, _ = paper
    gamma = TWO_PI * 2e3
    r = p.mass * gamma * lc.HBAR * p.omega_z / math.pi
    bg = r / (p.mass**2 * gamma**2 * p.omega_z**2)
    traces = lc.synthesize_heterodyne(p, 1.0, gamma, 20.0, bg, bg, seed=5)
    t_r, t_b = traces["i_r"], traces["i_b"]
    res, fit = lc.sideband_asymmetry(t_r["samples"], t_b["samples"], t_r["sample_rate"], t_r["demod_hz"])
    assert res.n_bar == pytest.approx(1.0, abs=5 * res.sigma)
    assert "ratio" in fit.names


def test_squashing_table_runs():
    cfg = json.loads(lc.default_config_json())
    rows = lc.squashing_table(json.dumps(cfg))
    assert len(rows) == 8
    assert rows[0]["inloop_over_imp"] > 0.99
    stable = [r for r in rows if r["stable"]]
    assert stable[-1]["inloop_over_imp"] < 0.1
    assert all(r["true_over_force_min"] >= 1.0 - 1e-12 for r in rows)
