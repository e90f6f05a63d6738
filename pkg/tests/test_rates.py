import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cavityjumps.errors import NegativeDecayError, TooFewDwellsError, TraceTooShortError
from cavityjumps.params import JumpRates
from cavityjumps.rates import (CorrelationCurve, autocovariance, bootstrap_rates, dwell_time_rates,
                               dwell_times, fit_rates)
from cavityjumps.reconstruct import STATE_F3, STATE_F4, SpinTrace
from cavityjumps.telegraph import sample_spin_path, trace_seed

R43, R34 = 106.0, 42.0
R = R43 + R34
P4 = R34 / R


def spin(states, bin_ms=2.0):
    states = np.asarray(states, dtype=np.int8)
    return SpinTrace(bin_ms, states, np.where(states == STATE_F4, "f4", "f3"))


def sampled_traces(n, duration_ms, bin_ms, seed, stationary=True):
    """Ideal spin traces: the true state at each bin centre."""
    out = []
    for i in range(n):
        path = sample_spin_path(JumpRates(R43, R34), duration_ms, None if stationary else 4,
                                np.random.default_rng(trace_seed(seed, i)))
        centres = bin_ms * (np.arange(int(round(duration_ms / bin_ms))) + 0.5)
        st_ = path.states[np.searchsorted(path.times_ms, centres, side="right") - 1]
        out.append(spin(np.where(st_ == 4, STATE_F4, STATE_F3), bin_ms))
    return out


def exact_curve(rate_per_ms, p4, bin_ms=0.5, n_lags=200):
    lags = bin_ms * np.arange(n_lags)
    return CorrelationCurve(lags, p4 * (1 - p4) * np.exp(-rate_per_ms * lags),
                            np.full(n_lags, 10**6), p4, 10**7, bin_ms)


def test_constant_trace():
    c = autocovariance(spin([STATE_F4] * 200), 10.0)
    np.testing.assert_array_equal(c.values, 0.0)


def test_alternating_trace():
    c = autocovariance(spin([0, 1] * 100), 4.0)
    assert c.values[0] == pytest.approx(0.25) and c.values[1] == pytest.approx(-0.25)
    assert c.values[2] == pytest.approx(0.25)
    assert c.at(-2.0) == c.at(2.0)


@given(st.lists(st.integers(0, 1), min_size=30, max_size=300))
def test_zero_lag_identity(bits):
    c = autocovariance(spin(bits), 2.0)
    p = np.mean(np.asarray(bits) == STATE_F4)
    assert c.values[0] == pytest.approx(p * (1 - p), abs=1e-12)
    assert c.p_f4 == pytest.approx(p)


def test_too_short():
    with pytest.raises(TraceTooShortError):
        autocovariance(spin([0, 1] * 5), 2.0)


def test_monte_carlo_exponential():
    traces = sampled_traces(1000, 400.0, 0.5, seed=1)
    c = autocovariance(traces, 20.0)
    model = P4 * (1 - P4) * np.exp(-R * 1e-3 * c.lags_ms)
    # 1000 traces of 400 ms: statistical error on C is below 0.003
    assert np.abs(c.values - model).max() < 0.004
    assert 1e3 / R == pytest.approx(6.76, abs=0.01)


def test_fit_symmetric():
    est = fit_rates(exact_curve(0.1, 0.5), 0.5)
    assert est.r_4to3 == pytest.approx(50, rel=1e-6) and est.r_3to4 == pytest.approx(50, rel=1e-6)
    assert est.stderr_4to3 >= 0 and est.method == "correlation"


def test_fit_doubling():
    a = fit_rates(exact_curve(0.148, P4), P4)
    b = fit_rates(exact_curve(0.296, P4), P4)
    assert a.r_4to3 == pytest.approx(106, rel=1e-6) and a.r_3to4 == pytest.approx(42, rel=1e-6)
    assert b.r_4to3 == pytest.approx(2 * a.r_4to3, rel=1e-6)
    assert b.r_3to4 == pytest.approx(2 * a.r_3to4, rel=1e-6)


def test_fit_ignores_lag_zero_pedestal():
    c = exact_curve(0.148, P4)
    c.values[0] += 0.02
    assert fit_rates(c).total_rate == pytest.approx(148, rel=1e-6)


def test_negative_decay():
    c = exact_curve(0.1, 0.5)
    c.values[:] = 0.0
    with pytest.raises(NegativeDecayError):
        fit_rates(c)
    c = exact_curve(0.1, 0.5)
    c.values[1:] = 0.25 * np.exp(0.01 * c.lags_ms[1:])
    with pytest.raises(NegativeDecayError):
        fit_rates(c)


def test_dwell_exact():
    block = [STATE_F4] * 5 + [STATE_F3] * 10   # 10 ms in F=4, 20 ms in F=3 at 2 ms bins
    est = dwell_time_rates(spin([STATE_F3] + block * 12 + [STATE_F4]))
    assert est.r_4to3 == pytest.approx(100) and est.r_3to4 == pytest.approx(50)
    assert est.stderr_4to3 == pytest.approx(100 / math.sqrt(12))


def test_dwell_edges_censored():
    d4, d3 = dwell_times(spin([0, 0, 1, 1, 1, 0, 1]))
    np.testing.assert_array_equal(d3, [6.0])
    np.testing.assert_array_equal(d4, [2.0])


def test_too_few_dwells():
    with pytest.raises(TooFewDwellsError):
        dwell_time_rates(spin([STATE_F4] * 500))


def test_consistency_at_ten_times_data():
    # 10x the 163 x 400 ms data volume as longer traces, resolved finely enough
    # that bins hide no jumps. Dropping edge-cut dwells favours short ones, a
    # bias of order (mean dwell) / (trace length) that longer traces suppress.
    traces = sampled_traces(163, 4000.0, 0.1, seed=2)
    corr = fit_rates(autocovariance(traces, 20.0))
    dwell = dwell_time_rates(traces)
    for est in (corr, dwell):
        assert abs(est.r_4to3 / R43 - 1) < 0.03
        assert abs(est.r_3to4 / R34 - 1) < 0.03


def test_dwell_censoring_bias_with_short_traces():
    traces = sampled_traces(1630, 400.0, 0.1, seed=2)
    assert dwell_time_rates(traces).r_3to4 / R34 - 1 > 0.03


def test_binning_bias_bounded():
    traces = sampled_traces(1630, 400.0, 2.0, seed=3)
    est = fit_rates(autocovariance(traces, 30.0))
    bias = est.total_rate / R - 1
    assert abs(bias) < 0.10


def test_stderr_and_bootstrap():
    traces = sampled_traces(163, 400.0, 2.0, seed=4)
    est = fit_rates(autocovariance(traces, 30.0))
    sd43, sd34 = bootstrap_rates(traces, 30.0, n_boot=50, seed=1)
    assert 0 < est.stderr_4to3 and 0 < sd43 < 30 and 0 < sd34 < 10
    assert abs(est.r_4to3 - R43) < 4 * sd43 and abs(est.r_3to4 - R34) < 4 * sd34


def test_outputs(tmp_path):
    c = autocovariance(spin([0, 1, 1] * 40), 6.0)
    c.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "lag_ms,C,n_pairs"
    est = fit_rates(exact_curve(0.1, 0.5))
    est.to_json(tmp_path / "r.json")
    import json
    assert json.loads((tmp_path / "r.json").read_text())["method"] == "correlation"
