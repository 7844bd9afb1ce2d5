import numpy as np
import pytest
from conftest import random_market_inputs
from hypothesis import given, settings
from hypothesis import strategies as st

from freqreg.errors import ParameterError
from freqreg.market import (EPSILON_W, WITHDRAW, Bid, CertStatus, MarketInputs,
                            PerformanceScore, Settlement, bid_violations, certify,
                            export_scores, export_settlements, hourly_settlement,
                            oracle_bid_search, optimize_bid, performance_score, saving,
                            saving_slope_bound, score_window, target_power, target_series)
from freqreg.signals import generate_signal

BID = Bid(1000.0, 300.0, 200.0)


# --- target_power --------------------------------------------------------------

def test_target_examples():
    assert target_power(BID, 0.0) == 1000.0
    assert target_power(BID, 1.0) == 1200.0
    assert target_power(BID, -0.5) == 850.0


def test_target_rejects_out_of_range():
    with pytest.raises(ParameterError):
        target_power(BID, 1.2)
    with pytest.raises(ParameterError):
        target_series(BID, [0.0, -1.5])


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50))
def test_target_series_matches_scalar(rs):
    assert np.allclose(target_series(BID, rs), [target_power(BID, r) for r in rs])


def test_bid_invariants():
    with pytest.raises(ParameterError):
        Bid(100.0, -1.0, 0.0)
    with pytest.raises(ParameterError):
        Bid(100.0, 1.0, 2.0, symmetric=True)


# --- scoring ----------------------------------------------------------------------

def noisy(seed=0, n=450):
    return generate_signal("N", n * 2.0, 2.0, 0.005, seed=seed).samples


def test_perfect_tracking_scores_one():
    s = noisy()
    sc = score_window(s, s, 2.0)
    assert (sc.delay, sc.accuracy, sc.precision, sc.composite) == (1.0, 1.0, 1.0, 1.0)


def test_sixty_second_lag():
    s = generate_signal("HT", 3600, 2, 0.005, seed=1).samples
    lag = 30  # samples
    q = np.concatenate([np.full(lag, s[0]), s[:-lag]])
    sc = score_window(s[:450], q[:450], 2.0)
    assert sc.delay == pytest.approx(0.8)
    assert sc.accuracy == pytest.approx(1.0, abs=1e-9)


def test_zero_response_fails_certification_bar():
    s = noisy(3)
    sc = score_window(s, np.zeros_like(s), 2.0)
    assert sc.precision == pytest.approx(1 - np.mean(np.abs(s)))
    assert sc.composite < 0.75


def test_degenerate_window_rule():
    s = np.full(450, 1.0)
    assert score_window(s, s + 0.01, 2.0).delay == 1.0
    bad = score_window(s, s - 0.5, 2.0)
    assert bad.delay == bad.accuracy == 0.0


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0.5, 2000), st.floats(-5000, 5000))
def test_score_invariant_to_watt_relabeling(seed, scale, offset):
    s = noisy(seed, 900)
    rng = np.random.default_rng(seed)
    bid = Bid(1000.0, 250.0, 250.0, True)
    achieved = target_series(bid, s) + rng.normal(0, 20, s.size)
    base = performance_score(s, achieved, bid)
    bid2 = Bid(bid.p_fr * scale + offset, bid.r_up * scale, bid.r_down * scale, True)
    other = performance_score(s, achieved * scale + offset, bid2)
    for a, b in zip(base, other):
        assert a.composite == pytest.approx(b.composite, abs=1e-9)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=5))
def test_composite_is_mean_and_bounded(vals):
    s = noisy(1)
    q = s + np.random.default_rng(len(vals)).normal(0, vals[0], s.size)
    sc = score_window(s, q, 2.0)
    for v in (sc.delay, sc.accuracy, sc.precision):
        assert 0 <= v <= 1
    assert sc.composite == pytest.approx((sc.delay + sc.accuracy + sc.precision) / 3)


def test_windows_are_fifteen_minutes():
    s = noisy(0, 1800)
    scores = performance_score(s, target_series(BID, s), BID, t0=3600.0)
    assert [w.window_start for w in scores] == [3600.0, 4500.0, 5400.0, 6300.0]


# --- certification ---------------------------------------------------------------

def test_certify_examples():
    assert certify([0.8, 0.8, 0.8]) is CertStatus.CERTIFIED
    assert certify([0.8, 0.6, 0.8, 0.8, 0.8]) is CertStatus.CERTIFIED
    assert certify([0.8, 0.6, 0.8, 0.8]) is CertStatus.UNCERTIFIED
    assert certify([0.8, 0.8, 0.8, 0.35]) is CertStatus.REVOKED
    assert certify([0.35, 0.8]) is CertStatus.UNCERTIFIED


def first_certified(history):
    for i in range(len(history) + 1):
        if certify(history[:i]) is not CertStatus.UNCERTIFIED:
            return i
    return None


@given(st.lists(st.floats(0, 1), max_size=12), st.lists(st.floats(0, 0.74), max_size=5))
def test_prepending_low_scores_never_certifies_earlier(history, low):
    a = first_certified(history)
    b = first_certified(low + history)
    if a is None:
        assert b is None
    else:
        assert b is not None and b - len(low) >= a


# --- settlement ------------------------------------------------------------------------

def test_settlement_hand_arithmetic():
    inputs = MarketInputs(1000.0, 0.0, 2000.0, 1e-4, 5e-4, 5e-4)
    bid = Bid(1100.0, 100.0, 100.0, True)
    st_ = hourly_settlement(bid, [0.9], inputs)
    # independent recomputation
    energy = 1100 * 1e-4
    reward = (100 * 5e-4 + 100 * 5e-4) * 0.9
    assert st_.energy_cost == pytest.approx(energy) == pytest.approx(0.11)
    assert st_.reward == pytest.approx(reward) == pytest.approx(0.09)
    assert st_.saving == pytest.approx(1000 * 1e-4 - energy + reward) == pytest.approx(0.08)


def test_zero_provision_settlement():
    inputs = MarketInputs(1000.0, 0.0, 2000.0, 1e-4, 5e-4, 5e-4)
    st_ = hourly_settlement(Bid(1050.0, 0.0, 0.0), [0.9], inputs)
    assert st_.reward == 0
    assert st_.saving == pytest.approx(-50 * 1e-4)


def test_zero_performance_forfeits_reward():
    inputs = MarketInputs(1000.0, 0.0, 2000.0, 1e-4, 5e-4, 5e-4)
    assert hourly_settlement(Bid(1100.0, 100.0, 100.0), [0.0], inputs).reward == 0


def test_settlement_needs_scores():
    with pytest.raises(ParameterError):
        hourly_settlement(BID, [], MarketInputs(1000.0, 0.0, 2000.0, 1e-4, 5e-4, 5e-4))


# --- optimizer --------------------------------------------------------------------------

def test_zero_reward_with_priced_energy_withdraws():
    # any P_f.r. above P_avg costs more than P_avg, so threshold <= 1 cannot hold
    inputs = MarketInputs(1000.0, 200.0, 1800.0, 1e-4, 0.0, 0.0)
    assert optimize_bid(inputs).withdraw
    assert oracle_bid_search(inputs).withdraw


def test_zero_reward_hugs_lower_bound():
    inputs = MarketInputs(1000.0, 200.0, 1800.0, 0.0, 0.0, 0.0)
    dec = optimize_bid(inputs)
    assert dec.bid.r_up == dec.bid.r_down == 0
    assert dec.bid.p_fr == pytest.approx(1100.0 + EPSILON_W)
    assert dec.predicted_saving == pytest.approx(-(100.0 + EPSILON_W) * inputs.cost)


def test_zero_threshold_forces_withdraw():
    inputs = MarketInputs(1000.0, 200.0, 1800.0, 1e-4, 1e-6, 1e-6, threshold=0.0)
    assert optimize_bid(inputs) is WITHDRAW or optimize_bid(inputs).withdraw
    assert oracle_bid_search(inputs).withdraw


def test_zero_threshold_with_large_reward_bids():
    inputs = MarketInputs(1000.0, 200.0, 1800.0, 1e-4, 1e-3, 1e-3, threshold=0.0)
    dec = optimize_bid(inputs)
    assert not dec.withdraw and bid_violations(inputs, dec.bid) == []


def test_no_room_to_bid():
    with pytest.raises(ParameterError):
        optimize_bid(MarketInputs(1000.0, 200.0, 1100.0, 1e-4, 1e-4, 1e-4))


def test_hand_solved_symmetric_instance():
    # floor 1000, p_max 1600: symmetric provision peaks at p_fr = 1300, R = 300
    inputs = MarketInputs(1000.0, 0.0, 1600.0, 1e-5, 1e-4, 1e-4, perf_score=1.0)
    dec = optimize_bid(inputs, symmetric=True)
    assert dec.bid.p_fr == pytest.approx(1300.0)
    assert dec.bid.r_up == dec.bid.r_down == pytest.approx(300.0)
    assert dec.predicted_saving == pytest.approx(1000e-5 - 1300e-5 + 600e-4)


def test_oracle_examples_agree():
    for inputs in (MarketInputs(1000.0, 200.0, 1800.0, 0.0, 0.0, 0.0),
                   MarketInputs(1000.0, 0.0, 1600.0, 1e-5, 1e-4, 1e-4, perf_score=1.0)):
        for sym in (False, True):
            a, b = optimize_bid(inputs, sym), oracle_bid_search(inputs, sym, 10_000)
            res = saving_slope_bound(inputs) * (inputs.p_max - inputs.floor) / 9_999
            assert a.predicted_saving >= b.predicted_saving - 1e-12
            assert a.predicted_saving - b.predicted_saving <= res + 1e-12


def test_oracle_grid_minimum():
    with pytest.raises(ParameterError):
        oracle_bid_search(MarketInputs(1000.0, 0.0, 1600.0, 1e-5, 1e-4, 1e-4), grid_steps=10)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_optimizer_output_satisfies_constraints(seed, symmetric):
    inputs = random_market_inputs(np.random.default_rng(seed))
    dec = optimize_bid(inputs, symmetric)
    if dec.withdraw:
        return
    assert bid_violations(inputs, dec.bid, tol=1e-9) == []
    assert dec.bid.p_fr > inputs.floor and dec.bid.p_fr < inputs.p_max
    if symmetric:
        assert dec.bid.r_up == dec.bid.r_down


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_optimizer_beats_random_feasible_candidates(seed, symmetric):
    rng = np.random.default_rng(seed)
    inputs = random_market_inputs(rng)
    dec = optimize_bid(inputs, symmetric)
    lo, hi = inputs.floor + EPSILON_W, inputs.p_max - EPSILON_W
    p = rng.uniform(lo, hi, 10_000)
    u = rng.uniform(0, 1, p.size) * (p - inputs.floor)
    d = rng.uniform(0, 1, p.size) * (inputs.p_max - p)
    if symmetric:
        u = d = np.minimum(u, d)
    vals = saving(inputs, p, u, d)
    cost_fr = p * inputs.cost - (u * inputs.rew_up + d * inputs.rew_down) * inputs.perf_score
    ok = cost_fr <= inputs.p_avg * inputs.cost * inputs.threshold
    if not ok.any():
        return
    assert not dec.withdraw
    assert dec.predicted_saving >= vals[ok].max() - 1e-12


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_doubling_rewards_never_lowers_saving(seed, symmetric):
    inputs = random_market_inputs(np.random.default_rng(seed))
    rich = MarketInputs(inputs.p_avg, inputs.p_var, inputs.p_max, inputs.cost,
                        2 * inputs.rew_up, 2 * inputs.rew_down, inputs.perf_score,
                        inputs.threshold)
    a = oracle_bid_search(inputs, symmetric, 1000)
    b = oracle_bid_search(rich, symmetric, 1000)
    if a.withdraw:
        return
    assert not b.withdraw and b.predicted_saving >= a.predicted_saving - 1e-12
    assert optimize_bid(rich, symmetric).predicted_saving >= \
        optimize_bid(inputs, symmetric).predicted_saving - 1e-12


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_oracle_symmetric_flag(seed):
    dec = oracle_bid_search(random_market_inputs(np.random.default_rng(seed)), True, 200)
    if not dec.withdraw:
        assert dec.bid.r_up == dec.bid.r_down


def test_violation_checker_catches_each_constraint():
    inputs = MarketInputs(1000.0, 200.0, 1800.0, 1e-4, 1e-4, 1e-4, threshold=1.0)
    assert "p_fr > p_avg + p_var/2" in bid_violations(inputs, Bid(1050.0, 0.0, 0.0))
    assert "p_fr < p_max" in bid_violations(inputs, Bid(1900.0, 0.0, 0.0))
    assert any("r_up" in v for v in bid_violations(inputs, Bid(1200.0, 150.0, 0.0)))
    assert any("r_down" in v for v in bid_violations(inputs, Bid(1700.0, 0.0, 150.0)))
    poor = MarketInputs(1000.0, 200.0, 1800.0, 1e-4, 0.0, 0.0, threshold=0.5)
    assert any("threshold" in v for v in bid_violations(poor, Bid(1200.0, 0.0, 0.0)))


# --- CSV ---------------------------------------------------------------------------------

def test_exports(tmp_path):
    p = export_scores([PerformanceScore(1.0, 0.5, 0.25, 900.0)], tmp_path / "s.csv")
    assert p.read_text().splitlines()[1] == "900.000000,1.000000,0.500000,0.250000,0.583333"
    p = export_settlements([(0, Settlement(0.1, 0.2, 0.3))], tmp_path / "t.csv")
    assert p.read_text().splitlines() == ["hour,energy_cost,reward,saving",
                                          "0,0.100000000,0.200000000,0.300000000"]
