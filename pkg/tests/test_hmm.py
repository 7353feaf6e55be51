import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldwpdm.domain import ObservablePoint
from ldwpdm.errors import NumericalUnderflow, SequenceTooShort
from ldwpdm.gmm import GmmModel
from ldwpdm.hmm import (
    ForwardState, PdmModel, TransitionMatrix, assign_mode, assign_modes, build_pdm, count_transitions,
    estimate_transitions, forward_step, infer_yaw_rate, init_forward,
)

from conftest import random_gmm_params, random_spd


def pair_count_oracle(seq, K):
    F = [[0] * K for _ in range(K)]
    for a, b in zip(seq[:-1], seq[1:]):
        F[a][b] += 1
    return np.array(F)


def gauss(x, mu, S):
    d = x - mu
    return math.exp(-0.5 * d @ np.linalg.solve(S, d)) / math.sqrt((2 * math.pi) ** len(mu) * np.linalg.det(S))


def make_pdm(rng, K, T=None):
    w, mu, cov = random_gmm_params(rng, K, 5)
    g = GmmModel(w, mu, cov)
    if T is None:
        T = rng.dirichlet(np.ones(K), size=K)
    return PdmModel(g, TransitionMatrix(T, np.zeros((K, K)), np.zeros(K)))


# -- mode assignment -------------------------------------------------------------------

def test_point_at_own_mean_is_own_mode():
    g = GmmModel([0.9, 0.1], [[0.0, 0.0], [10.0, 10.0]], np.stack([np.eye(2)] * 2))
    assert assign_mode([10.0, 10.0], g) == 1
    assert assign_mode([0.0, 0.0], g) == 0


def test_tie_goes_to_lowest_index():
    g = GmmModel([0.3, 0.7], [[-1.0, 0.0], [1.0, 0.0]], np.stack([np.eye(2)] * 2))
    assert assign_mode([0.0, 5.0], g) == 0


def test_assignment_ignores_weights_and_matches_scan():
    rng = np.random.default_rng(0)
    w, mu, cov = random_gmm_params(rng, 4, 3)
    g = GmmModel(w, mu, cov)
    X = rng.normal(0, 4, (1000, 3))
    scan = [int(np.argmax([gauss(x, mu[k], cov[k]) for k in range(4)])) for x in X]
    assert assign_modes(X, g).tolist() == scan


# -- transitions --------------------------------------------------------------------------

def test_absorbing_mode_and_unvisited_fallback():
    T = estimate_transitions([0, 0, 0, 0], 2)
    np.testing.assert_array_equal(T.entries, [[1.0, 0.0], [0.5, 0.5]])
    assert T.state_totals.tolist() == [3, 0]


def test_strict_alternation():
    T = estimate_transitions([0, 1, 0, 1, 0], 2)
    np.testing.assert_array_equal(T.entries, [[0.0, 1.0], [1.0, 0.0]])


def test_short_sequence_raises():
    with pytest.raises(SequenceTooShort):
        estimate_transitions([1], 3)


@given(st.lists(st.integers(0, 4), min_size=2, max_size=300))
def test_counts_match_oracle(seq):
    T = estimate_transitions(seq, 5)
    np.testing.assert_array_equal(T.counts, pair_count_oracle(seq, 5))
    np.testing.assert_allclose(T.entries.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((T.entries >= 0) & (T.entries <= 1))
    for i in range(5):
        if T.state_totals[i]:
            np.testing.assert_array_equal(T.entries[i], T.counts[i] / T.state_totals[i])


def test_transition_json_roundtrip():
    T = estimate_transitions(np.random.default_rng(1).integers(0, 3, 100), 3)
    back = TransitionMatrix.from_dict(json.loads(json.dumps(T.to_dict())))
    np.testing.assert_array_equal(back.entries, T.entries)
    np.testing.assert_array_equal(back.counts, T.counts)


def test_build_counts_within_sequences_only():
    g = GmmModel([0.5, 0.5], [[0.0], [10.0]], [[[1.0]], [[1.0]]], dim_labels=("x",))
    seqs = [np.array([[0.0], [0.1]]), np.array([[10.0], [10.1]])]
    modes = [assign_modes(s, g) for s in seqs]
    assert sum(count_transitions(m, 2) for m in modes).tolist() == [[1, 0], [0, 1]]


# -- forward recursion ---------------------------------------------------------------------

def test_single_mode_is_certain():
    rng = np.random.default_rng(2)
    g = GmmModel([1.0], rng.normal(size=(1, 5)), [random_spd(rng, 5)])
    m = PdmModel(g, TransitionMatrix.from_counts(np.ones((1, 1))))
    s = init_forward(ObservablePoint(20, 0.0, 0.0, 1.0), m)
    s = forward_step(s, ObservablePoint(21, 0.01, 0.0, 0.9), m)
    assert s.beta.tolist() == [1.0] and s.t == 1


def test_init_matches_brute_force():
    rng = np.random.default_rng(3)
    m = make_pdm(rng, 4)
    z = rng.normal(0, 3, 4)
    num = np.array([m.gmm.weights[k] * gauss(z, m.mu_z[k], m.gmm.covariances[k][:4, :4]) for k in range(4)])
    np.testing.assert_allclose(init_forward(z, m).beta, num / num.sum(), atol=1e-12)


def test_forward_step_matches_hand_recursion():
    rng = np.random.default_rng(4)
    m = make_pdm(rng, 3)
    beta = np.array([0.2, 0.5, 0.3])
    z = rng.normal(0, 2, 4)
    T = m.transitions.entries
    num = np.array([sum(beta[j] * T[j, k] for j in range(3)) * gauss(z, m.mu_z[k], m.gmm.covariances[k][:4, :4])
                    for k in range(3)])
    out = forward_step(ForwardState(beta, 0), z, m)
    np.testing.assert_allclose(out.beta, num / num.sum(), atol=1e-12)


def test_identity_transitions_concentrate_on_nearby_mode():
    mu = np.zeros((3, 5))
    mu[1, :4] = 50.0
    mu[2, :4] = -50.0
    g = GmmModel([1 / 3] * 3, mu, np.stack([np.eye(5)] * 3))
    m = PdmModel(g, TransitionMatrix(np.eye(3), np.zeros((3, 3)), np.zeros(3)))
    s = forward_step(ForwardState(np.full(3, 1 / 3)), mu[1, :4] + 0.1, m)
    assert s.beta[1] > 1 - 1e-12


def test_uniform_transitions_and_identical_marginals_stay_uniform():
    rng = np.random.default_rng(5)
    S = random_spd(rng, 5)
    mu = np.tile(rng.normal(size=5), (3, 1))
    mu[:, 4] = [0.0, 1.0, 2.0]
    g = GmmModel([1 / 3] * 3, mu, np.stack([S] * 3))
    m = PdmModel(g, TransitionMatrix(np.full((3, 3), 1 / 3), np.zeros((3, 3)), np.zeros(3)))
    s = ForwardState(np.full(3, 1 / 3))
    for _ in range(5):
        s = forward_step(s, rng.normal(size=4), m)
    np.testing.assert_allclose(s.beta, 1 / 3, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_log_and_linear_domains_agree(seed):
    rng = np.random.default_rng(seed)
    m = make_pdm(rng, 4)
    beta = rng.dirichlet(np.ones(4), size=6)
    Z = m.mu_z[rng.integers(0, 4, 6)] + rng.normal(0, 0.5, (6, 4))
    a = m.advance(beta, Z)
    b = m.advance_linear(beta, Z)
    np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(a >= 0)


def test_linear_domain_underflows_where_log_domain_does_not():
    rng = np.random.default_rng(6)
    m = make_pdm(rng, 3)
    far = np.full((1, 4), 1e4)
    beta = np.full((1, 3), 1 / 3)
    with pytest.raises(NumericalUnderflow):
        m.advance_linear(beta, far)
    out = m.advance(beta, far)
    assert abs(out.sum() - 1) < 1e-12


def test_filter_equals_stepwise_recursion():
    rng = np.random.default_rng(7)
    m = make_pdm(rng, 3)
    Z = rng.normal(0, 2, (20, 4))
    B = m.filter(Z)
    s = init_forward(Z[0], m)
    np.testing.assert_allclose(B[0], s.beta, atol=1e-14)
    for i in range(1, 20):
        s = forward_step(s, Z[i], m)
        np.testing.assert_allclose(B[i], s.beta, atol=1e-13)


# -- yaw-rate regression ---------------------------------------------------------------------

def test_single_component_regression_is_the_gaussian_conditional_mean():
    rng = np.random.default_rng(8)
    S = random_spd(rng, 5)
    mu = rng.normal(size=5)
    m = PdmModel(GmmModel([1.0], [mu], [S]), TransitionMatrix.from_counts(np.ones((1, 1))))
    for _ in range(50):
        z = rng.normal(0, 2, 4)
        expected = mu[4] + S[4, :4] @ np.linalg.inv(S[:4, :4]) @ (z - mu[:4])
        assert infer_yaw_rate(ForwardState(np.ones(1)), z, m) == pytest.approx(expected, abs=1e-10)


def test_regression_through_the_mean():
    rng = np.random.default_rng(9)
    m = make_pdm(rng, 3)
    beta = np.array([0.0, 1.0, 0.0])
    assert infer_yaw_rate(ForwardState(beta), m.mu_z[1], m) == pytest.approx(m.mu_y[1], abs=1e-12)


def test_zero_cross_covariance_ignores_zeta():
    rng = np.random.default_rng(10)
    cov = np.stack([random_spd(rng, 5) for _ in range(2)])
    cov[:, 4, :4] = cov[:, :4, 4] = 0.0
    mu = rng.normal(size=(2, 5))
    m = PdmModel(GmmModel([0.4, 0.6], mu, cov), TransitionMatrix.from_counts(np.ones((2, 2))))
    beta = np.array([0.3, 0.7])
    for z in rng.normal(0, 5, (5, 4)):
        assert infer_yaw_rate(ForwardState(beta), z, m) == pytest.approx(beta @ mu[:, 4], abs=1e-12)


def test_partition_validation():
    rng = np.random.default_rng(11)
    g = GmmModel(*random_gmm_params(rng, 2, 5))
    T = TransitionMatrix.from_counts(np.ones((2, 2)))
    with pytest.raises(ValueError):
        PdmModel(g, T, zeta_index=(0, 1, 2), target_index=4)
    with pytest.raises(ValueError):
        PdmModel(g, TransitionMatrix.from_counts(np.ones((3, 3))))


def test_pdm_json_roundtrip(small_pdm):
    back = PdmModel.from_dict(json.loads(json.dumps(small_pdm.to_dict())))
    Z = np.column_stack([np.full(5, 20.0), np.linspace(-0.02, 0.02, 5), np.zeros(5), np.linspace(0, 2, 5)])
    np.testing.assert_array_equal(back.filter(Z), small_pdm.filter(Z))
    assert back.to_dict()["partition"]["target"] == "psidot"


def test_build_pdm_from_events(driver_events, small_pdm):
    _, _, events = driver_events
    T = small_pdm.transitions
    assert T.counts.sum() == sum(len(e) - 1 for e in events)
    again = build_pdm([e.xi for e in events], small_pdm.gmm)
    np.testing.assert_array_equal(again.transitions.entries, T.entries)
