import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyfed.channel import ChannelSnapshot
from bodyfed.datasets import ClientPartition
from bodyfed.learning import ModelParams, cross_entropy
from bodyfed.scheduler import (ClientState, CovarianceTrackers, SchedulerConfig,
                               SchedulerInvariantError, SelectionProblem, UtilityTerms,
                               brute_force_select, chosen_gains_nonincreasing,
                               estimate_utilities, greedy_select, logdet_gains_diminish,
                               selection_objective, total_variation, update_trackers)


def random_psd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T / n


def problem(net, sigma_delta=None, sigma_c=None, rho1=0.0, rho2=0.0, k=None):
    net = np.asarray(net, dtype=float)
    n = net.size
    return SelectionProblem(net, np.eye(n) if sigma_delta is None else sigma_delta,
                            np.eye(n) if sigma_c is None else sigma_c, rho1, rho2,
                            n if k is None else k)


def explicit_objective(z, net, sigma_delta, sigma_c, rho1, rho2):
    """Full N x N gated form with diag(z)."""
    Z = np.diag(z.astype(float))
    _, ld = np.linalg.slogdet(np.eye(len(z)) + Z @ sigma_delta @ Z)
    return float(z @ net + rho1 * ld - rho2 * z @ sigma_c @ z)


# -- objective

def test_empty_set_scores_zero():
    assert problem([1.0, -2.0], rho1=1.0, rho2=1.0).objective([]) == 0.0


def test_identity_diversity_three_clients():
    p = problem(np.zeros(3), rho1=1.0)
    assert p.objective([0, 1, 2]) == pytest.approx(3 * math.log(2), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_submatrix_form_matches_gated_form(seed):
    rng = np.random.default_rng(seed)
    n = 3
    net = rng.normal(size=n)
    sd, sc = random_psd(rng, n), random_psd(rng, n)
    p = problem(net, sd, sc, rho1=rng.uniform(0, 2), rho2=rng.uniform(0, 2))
    for mask in range(8):
        z = np.array([(mask >> i) & 1 for i in range(n)])
        S = [i for i in range(n) if z[i]]
        assert p.objective(S) == pytest.approx(
            explicit_objective(z, net, sd, sc, p.rho1, p.rho2), abs=1e-12)


def test_no_diversity_terms_gives_modular_sum():
    rng = np.random.default_rng(1)
    net = rng.normal(size=5)
    p = problem(net, random_psd(rng, 5), random_psd(rng, 5))
    assert p.objective([0, 3, 4]) == net[[0, 3, 4]].sum()


def test_non_psd_submatrix_is_an_invariant_breach():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(SchedulerInvariantError):
        problem([0.0, 0.0], bad, rho1=1.0).objective([0, 1])


def test_selection_objective_wrapper_applies_shrinkage():
    cfg = SchedulerConfig(alpha_v=1, alpha_d=0, alpha_h=0, lambda_c=0, lambda_e=0, lambda_p=0,
                          rho1=1.0, rho2=0.0, shrinkage=1.0)
    terms = UtilityTerms.normalized(v=[1.0, 0.5], d_nov=[0, 0], h=[0, 0], c=[0, 0], e=[0, 0],
                                    p=[0, 0])
    tr = CovarianceTrackers.create(2, 4, 3, 0.5, 1.0, seed=0)
    # shrinkage 1 -> identity similarity
    assert selection_objective([0, 1], terms, cfg, tr) == pytest.approx(1.5 + 2 * math.log(2))


# -- greedy and brute force

def test_k1_greedy_is_argmax_and_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = problem(rng.uniform(0, 1, 6), random_psd(rng, 6), rho1=0.7, k=1)
        g = greedy_select(p, [True] * 6)
        best, val = brute_force_select(p, [True] * 6)
        assert tuple(g.selected) == best and g.objective == val
        singles = [p.objective([i]) for i in range(6)]
        assert g.selected == [int(np.argmax(singles))]


def test_one_feasible_client():
    g = greedy_select(problem([0.3, 0.9, 0.4]), [True, False, False])
    assert g.selected == [0]


def test_ties_go_to_lowest_id():
    g = greedy_select(problem([0.5, 0.5, 0.5], k=2), [True] * 3)
    assert g.selected == [0, 1]


def test_greedy_stops_at_nonpositive_gain():
    g = greedy_select(problem([0.4, -0.1, 0.2, 0.0]), [True] * 4)
    assert g.selected == [0, 2]


def test_brute_force_examples():
    assert brute_force_select(problem([0.2, 0.1, 0.3]), [True] * 3)[0] == (0, 1, 2)
    assert brute_force_select(problem([-0.5]), [True]) == ((), 0.0)
    with pytest.raises(ValueError):
        brute_force_select(problem(np.zeros(17)), [True] * 17)


def test_greedy_is_deterministic():
    rng = np.random.default_rng(8)
    p = problem(rng.uniform(0, 1, 7), random_psd(rng, 7), rho1=0.5, k=3)
    assert greedy_select(p, [True] * 7) == greedy_select(p, [True] * 7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 4))
def test_greedy_respects_k_feasibility_and_approximation(seed, n, k):
    rng = np.random.default_rng(seed)
    feasible = rng.uniform(size=n) < 0.8
    p = problem(rng.uniform(0, 1, n), random_psd(rng, n), rho1=rng.uniform(0, 2), k=k)
    g = greedy_select(p, feasible)
    assert len(g.selected) <= k and all(feasible[i] for i in g.selected)
    _, opt = brute_force_select(p, feasible)
    assert g.objective >= (1 - 1 / math.e) * opt - 1e-12
    assert logdet_gains_diminish(g)
    assert chosen_gains_nonincreasing(g)


def test_correlated_failure_pair_is_split():
    sc = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    p = problem([1.0, 0.99, 0.98], sigma_c=sc, rho2=0.3, k=2)
    # after 0: client 1 gains 0.99 - 0.3 * 3 = 0.09, client 2 gains 0.98 - 0.3 = 0.68
    g = greedy_select(p, [True] * 3)
    assert g.selected == [0, 2]
    assert g.steps[1].candidates[1][0] == pytest.approx(0.09)


# -- trackers

def test_identical_updates_drive_similarity_to_one():
    tr = CovarianceTrackers.create(3, 10, 4, beta=0.2, gamma=0.05, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.normal(size=10)
        tr = update_trackers(tr, {0: d, 1: 2 * d, 2: rng.normal(size=10)}, [0, 0, 0])
    assert tr.sigma_delta_raw()[0, 1] == pytest.approx(1.0, abs=1e-9)
    assert abs(tr.sigma_delta_raw()[0, 2]) < 0.9


def test_zero_delta_leaves_entries_alone():
    tr = CovarianceTrackers.create(2, 5, 3, beta=0.3, gamma=0.05, seed=1)
    tr = update_trackers(tr, {0: np.ones(5), 1: np.arange(5.0)}, [0, 1])
    before = tr.sigma_delta_raw().copy()
    after = update_trackers(tr, {0: np.zeros(5)}, [0, 1]).sigma_delta_raw()
    np.testing.assert_array_equal(before, after)


def test_independent_failures_decorrelate():
    rng = np.random.default_rng(4)
    tr = CovarianceTrackers.create(4, 3, 2, beta=0.01, gamma=0.05, seed=0)
    for _ in range(3000):
        tr = update_trackers(tr, {}, (rng.uniform(size=4) < 0.3).astype(float))
    off = tr.sigma_c_raw[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off)) < 0.06
    np.testing.assert_allclose(np.diag(tr.sigma_c_raw), 0.21, atol=0.06)


def test_common_failures_correlate():
    rng = np.random.default_rng(5)
    tr = CovarianceTrackers.create(3, 3, 2, beta=0.05, gamma=0.05, seed=0)
    for _ in range(500):
        f = float(rng.uniform() < 0.5)
        tr = update_trackers(tr, {}, [f, f, float(rng.uniform() < 0.5)])
    s = tr.sigma_c_raw
    assert s[0, 1] > 0.15 and abs(s[0, 2]) < 0.1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_trackers_stay_symmetric_psd(seed, rounds):
    rng = np.random.default_rng(seed)
    n = 5
    tr = CovarianceTrackers.create(n, 8, 4, beta=rng.uniform(0.05, 1.0),
                                   gamma=rng.uniform(0.01, 1.0), seed=seed)
    for _ in range(rounds):
        ups = {int(i): rng.normal(size=8) for i in np.flatnonzero(rng.uniform(size=n) < 0.5)}
        tr = update_trackers(tr, ups, (rng.uniform(size=n) < 0.4).astype(float))
        for m in (tr.sigma_delta(), tr.sigma_c()):
            np.testing.assert_allclose(m, m.T, atol=1e-9)
            assert np.linalg.eigvalsh(m)[0] >= -1e-8
        np.testing.assert_allclose(np.diag(tr.sigma_delta_raw()), 1.0)


# -- utilities

def _client(cid, X, y, classes=2):
    part = ClientPartition(cid, f"loc{cid}", X, y, X, y, classes)
    return ClientState.create(part, probe_size=len(y), seed=0)


def _snap(cid, rho=1.0, rate=1e6):
    return ChannelSnapshot(cid, 60.0, 1 - 1 / rho, rate, 1e-9, rho, False)


def test_value_ordering_follows_loss():
    params = ModelParams(np.array([1.0, 0.0, -1.0, 0.0]), 1, 2)
    X = np.array([[1.0], [2.0], [-1.0]])
    easy, hard = np.array([0, 0, 1]), np.array([1, 1, 0])
    cls = [_client(0, X, easy), _client(1, X, hard)]
    terms = estimate_utilities(cls, [_snap(0), _snap(1)], params, 100, [1e-4, 1e-4], [1.0, 1.0])
    l0, l1 = cross_entropy(params, X, easy), cross_entropy(params, X, hard)
    assert l1 > l0
    assert terms.v[1] == 1.0 and terms.v[0] == pytest.approx(l0 / l1)
    assert terms.divisors["v"] == pytest.approx(l1)


def test_identical_clients_give_equal_terms():
    X = np.array([[0.5], [1.5]])
    y = np.array([0, 1])
    cls = [_client(i, X, y) for i in range(3)]
    terms = estimate_utilities(cls, [_snap(i, 1.5, 2e5) for i in range(3)],
                               ModelParams.zeros(1, 2), 500, [1e-4] * 3, [1e-3] * 3)
    for name in ("v", "d_nov", "c", "e"):
        assert np.all(getattr(terms, name) == 1.0)
    assert np.all(terms.h == 0.0) and np.all(terms.p == 0.0)


def test_unchanged_buffer_has_no_novelty():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([0, 1, 1])
    a, b = _client(0, X, y), _client(1, X, y)
    a.hist_at_last_success = a.partition.label_histogram()
    terms = estimate_utilities([a, b], [_snap(0), _snap(1)], ModelParams.zeros(1, 2), 10,
                               [0.0, 0.0], [1.0, 1.0])
    assert terms.d_nov[0] == 0.0 and terms.d_nov[1] == 1.0


def test_cost_terms_and_privacy_clip():
    X = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    a, b = _client(0, X, y), _client(1, X, y)
    a.last_update_norm, b.last_update_norm = 5.0, 0.25
    a.rounds_since_selected, b.rounds_since_selected = 4, 1
    terms = estimate_utilities([a, b], [_snap(0, 2.0, 1e6), _snap(1, 1.0, 5e4)],
                               ModelParams.zeros(1, 2), 1000, [2e-4, 1e-4], [1e-3, 0.0],
                               clip_norm=1.0)
    # airtime: 2e-3 s vs 2e-2 s
    np.testing.assert_allclose(terms.c, [0.1, 1.0])
    # energy fraction: 0.2 vs exhausted budget -> 1
    np.testing.assert_allclose(terms.e, [0.2, 1.0])
    np.testing.assert_allclose(terms.p, [1.0, 0.25])
    np.testing.assert_allclose(terms.h, [1.0, 0.25])


def test_total_variation():
    assert total_variation([0.5, 0.5, 0], [0, 0.5, 0.5]) == 0.5
    assert total_variation([1, 0], [1, 0]) == 0.0
