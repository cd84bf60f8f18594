import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyfed.channel import (ChannelConfigError, ChannelModel, ChannelSnapshot,
                             InsufficientSamplesError, LinkBudget, LossDistribution, LossModel,
                             PostureChain, PostureState, default_channel_model, fit_loss_model,
                             read_loss_csv, realize_link, retransmission_factor, step_posture,
                             transmit_update)
from bodyfed.rng import substream


def snapshot(per, rate=1e6, eta=1e-9):
    return ChannelSnapshot(0, 60.0, per, rate, eta, retransmission_factor(per), False)


# -- fitting

def test_fit_constant_group_has_zero_spread():
    m = fit_loss_model([("wrist", None, 60.0)] * 8)
    d = m.get("wrist", "default")
    assert d.mu_db == 60.0 and d.sigma_db == 0.0


def test_fit_uses_sample_stddev():
    # 4 x 50 dB and 4 x 70 dB: squared deviations sum to 800, ddof=1 -> sqrt(800 / 7)
    samples = [("chest", "sitting", v) for v in [50, 70] * 4]
    d = fit_loss_model(samples).get("chest", "sitting")
    assert d.mu_db == pytest.approx(60.0)
    assert d.sigma_db == pytest.approx(10.690449676496975, rel=1e-12)


def test_fit_sample_stddev_of_two_points_matches_hand_value():
    # the two-point case {50, 70}: sqrt(((-10)^2 + 10^2) / 1)
    assert np.std([50.0, 70.0], ddof=1) == pytest.approx(14.142135623730951)


def test_fit_rejects_small_group_and_names_it():
    samples = [("ankle", "walking", 70.0)] * 3 + [("chest", None, 55.0)] * 8
    with pytest.raises(InsufficientSamplesError, match="ankle.*walking"):
        fit_loss_model(samples)


def test_fit_empirical_stores_sorted_table_deterministically():
    vals = [63.0, 61.0, 67.0, 60.0, 66.0, 62.0, 64.0, 65.0]
    a = fit_loss_model([("wrist", "", v) for v in vals], family="empirical")
    b = fit_loss_model([("wrist", "", v) for v in vals], family="empirical")
    assert a.get("wrist", "default").table == tuple(sorted(vals))
    assert a == b


def test_empirical_table_must_be_sorted():
    with pytest.raises(ChannelConfigError):
        LossDistribution("empirical", 0.0, 0.0, (3.0, 1.0))


# -- posture chain

def test_single_posture_is_absorbing():
    chain = PostureChain.from_matrix(["still"], [[1.0]])
    s = chain.states[0]
    rng = np.random.default_rng(0)
    assert all(step_posture(s, chain, rng) is s for _ in range(20))


def test_deterministic_row_always_moves():
    chain = PostureChain.from_matrix(["a", "b"], [[0.0, 1.0], [1.0, 0.0]])
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert step_posture(chain.states[0], chain, rng).id == 1


def test_inverse_cdf_by_hand():
    chain = PostureChain.from_matrix(["a", "b"], [[0.5, 0.5], [0.5, 0.5]])
    assert step_posture(chain.states[0], chain, u=0.3).id == 0
    assert step_posture(chain.states[0], chain, u=0.5).id == 1
    assert step_posture(chain.states[0], chain, u=0.7).id == 1


def test_transition_row_must_sum_to_one():
    with pytest.raises(ChannelConfigError):
        PostureState(0, "a", (0.5, 0.4))
    with pytest.raises(ChannelConfigError):
        PostureChain(())


# -- link budget and realization

def test_per_at_midpoint_is_half():
    b = LinkBudget(loss_midpoint_db=70.0, eps_floor=0.0, eps_ceil=0.99)
    per = b.packet_error_rate(70.0)
    assert per == 0.5
    assert retransmission_factor(per) == 2.0


def test_per_clamped_at_ceiling():
    b = LinkBudget(loss_midpoint_db=50.0, loss_slope_db=1.0, eps_ceil=0.9)
    per = b.packet_error_rate(200.0)
    assert per == 0.9
    assert retransmission_factor(per) == pytest.approx(10.0, rel=1e-15)


def test_eps_ceil_must_stay_below_one():
    with pytest.raises(ChannelConfigError):
        LinkBudget(eps_ceil=1.0)
    with pytest.raises(ChannelConfigError):
        LinkBudget(retry_cap=0)
    with pytest.raises(ChannelConfigError):
        LinkBudget(rate_tiers=((60.0, 1e3), (80.0, 1e6)))


def test_rate_tiers_first_match():
    b = LinkBudget(rate_tiers=((60.0, 1e6), (75.0, 2e5), (1e9, 5e4)))
    assert b.rate(55.0) == 1e6
    assert b.rate(60.0) == 1e6
    assert b.rate(70.0) == 2e5
    assert b.rate(90.0) == 5e4


def test_zero_sigma_draws_the_mean():
    lm = LossModel({("chest", "sitting"): LossDistribution("lognormal", 61.5, 0.0)})
    chain = PostureChain.from_matrix(["sitting"], [[1.0]])
    rng = np.random.default_rng(3)
    for _ in range(10):
        snap = realize_link(0, "chest", lm, chain.states[0], LinkBudget(), rng)
        assert snap.loss_db == 61.5


def test_missing_group_is_a_config_error():
    lm = LossModel({("chest", "sitting"): LossDistribution("lognormal", 61.5, 1.0)})
    walking = PostureState(0, "walking", (1.0,))
    with pytest.raises(ChannelConfigError, match="ankle"):
        realize_link(0, "ankle", lm, walking, LinkBudget(), np.random.default_rng(0))


def test_same_seed_same_snapshots():
    model = default_channel_model(["chest", "wrist", "ankle"])
    def seq(seed):
        out, post = [], model.postures.states[0]
        for t in range(20):
            post = step_posture(post, model.postures, substream(seed, "posture", t))
            out.extend(realize_link(i, loc, model.loss_model, post, model.budget,
                                    substream(seed, "link", t, i))
                       for i, loc in enumerate(["chest", "wrist", "ankle"]))
        return out
    assert seq(7) == seq(7)
    assert seq(7) != seq(8)


@given(st.floats(0.0, 0.98), st.floats(0.0, 0.98))
def test_rho_monotone_in_per(a, b):
    lo, hi = sorted((a, b))
    assert retransmission_factor(lo) <= retransmission_factor(hi)
    assert retransmission_factor(0.0) == 1.0


@given(st.floats(20.0, 140.0), st.floats(0.01, 20.0))
def test_per_increases_with_loss_between_clamps(loss, step):
    b = LinkBudget(loss_midpoint_db=80.0, loss_slope_db=4.0, eps_floor=0.0, eps_ceil=0.99)
    p1, p2 = b.packet_error_rate(loss), b.packet_error_rate(loss + step)
    assert p2 >= p1
    if 1e-6 < p1 and p2 < 0.99 and p2 - p1 > 1e-15:
        assert p2 > p1


# -- transmission

def test_lossless_link_delivers_everything():
    b = LinkBudget(packet_payload_bits=100)
    res = transmit_update(snapshot(0.0), 1050, b, np.random.default_rng(0))
    assert res.delivered and res.packets_total == 11 and res.packets_sent == 11
    assert res.reliability_r == 1.0
    assert res.tx_energy_j == pytest.approx(1e-9 * 100 * 11)
    assert res.tx_time_s == pytest.approx(1100 / 1e6)


def test_empty_payload():
    res = transmit_update(snapshot(0.4), 0, LinkBudget(), np.random.default_rng(0))
    assert res.delivered and res.packets_sent == 0 and res.tx_energy_j == 0.0


def test_single_attempt_delivery_fraction_matches_bernoulli():
    b = LinkBudget(packet_payload_bits=8, retry_cap=1, eps_ceil=0.99)
    res = transmit_update(snapshot(0.5), 8 * 1000, b, np.random.default_rng(11))
    assert res.packets_total == 1000
    assert abs(res.packets_delivered / 1000 - 0.5) <= 0.05
    assert res.reliability_r == res.packets_delivered / 1000
    assert not res.delivered


def test_mean_transmissions_converge_to_rho():
    per, n = 0.3, 20_000
    b = LinkBudget(packet_payload_bits=1, retry_cap=50)
    res = transmit_update(snapshot(per), n, b, np.random.default_rng(5))
    mean = res.packets_sent / n
    # geometric: variance per / (1 - per)^2
    se = math.sqrt(per) / (1 - per) / math.sqrt(n)
    assert abs(mean - 1 / (1 - per)) <= 3 * se


# -- persistence

def test_channel_model_json_roundtrip(tmp_path):
    model = default_channel_model(["chest", "ankle"])
    p = tmp_path / "ch.json"
    model.save(p)
    again = ChannelModel.load(p)
    assert again.to_dict() == model.to_dict()
    again.save(tmp_path / "ch2.json")
    assert (tmp_path / "ch2.json").read_bytes() == p.read_bytes()
    doc = model.to_dict()
    assert {"posture_chain", "loss_model", "link_budget"} <= set(doc)
    assert {"mu_db", "sigma_db", "family", "location", "posture"} <= set(doc["loss_model"][0])


def test_read_loss_csv_reports_row(tmp_path):
    p = tmp_path / "loss.csv"
    p.write_text("location,posture,loss_db\nwrist,,60\nwrist,sitting,abc\n")
    with pytest.raises(ChannelConfigError, match="row 3"):
        read_loss_csv(p)
    p.write_text("location,loss_db\nwrist,60\n")
    with pytest.raises(ChannelConfigError, match="posture"):
        read_loss_csv(p)
    p.write_text("location,posture,loss_db\nwrist,,60\n")
    assert read_loss_csv(p) == [("wrist", None, 60.0)]
