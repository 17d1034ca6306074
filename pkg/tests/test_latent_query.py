from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentquery.autodiff import ShapeError, Tensor
from latentquery.bpe import BpeSequence
from latentquery.latent_query import (QueryBelief, anneal_delta, calibrate, entropy, kl_to_uniform, posterior,
                                      posterior_dropout, query_focused_view, query_loss, query_loss_terms,
                                      score)
from latentquery.nn import ConfigError
from latentquery.params import ModelParams


def scorer_params(w_h, b_h, w_s, b_s) -> ModelParams:
    p = ModelParams()
    p.add("lq.hidden.weight", np.asarray(w_h, dtype=np.float64))
    p.add("lq.hidden.bias", np.asarray(b_h, dtype=np.float64))
    p.add("lq.out.weight", np.asarray(w_s, dtype=np.float64))
    p.add("lq.out.bias", np.asarray(b_s, dtype=np.float64))
    return p


def seq(ids):
    return BpeSequence(tuple(ids), tuple(str(i) for i in ids), tuple(range(len(ids))))


def test_scorer_hand_example():
    p = scorer_params(np.eye(2), [0, 0], [[0, math.log(3)], [0, 0]], [0, 0])
    h = Tensor(np.array([[1.0, -2.0]]))
    logits = score(h, p)
    np.testing.assert_allclose(logits.data, [[0.0, math.log(3)]])
    np.testing.assert_allclose(posterior(logits, 1.0).numpy(), [0.75])


def test_zero_scorer_gives_half():
    p = scorer_params(np.zeros((3, 3)), np.zeros(3), np.zeros((3, 2)), np.zeros(2))
    q = posterior(score(Tensor(np.ones((4, 3))), p), 0.9)
    np.testing.assert_allclose(q.numpy(), 0.5)


def test_scorer_shape_check():
    p = scorer_params(np.eye(2), [0, 0], np.zeros((2, 2)), [0, 0])
    with pytest.raises(ShapeError):
        score(Tensor(np.ones((4, 3))), p)


def test_lower_temperature_sharpens():
    logits = Tensor(np.array([[0.0, 1.0], [2.0, 0.5]]))
    hot, cold = posterior(logits, 1.0).numpy(), posterior(logits, 0.5).numpy()
    assert (np.abs(cold - 0.5) > np.abs(hot - 0.5)).all()


def test_train_mode_noise_is_reproducible():
    logits = Tensor(np.zeros((5, 2)))
    a = posterior(logits, 0.9, "train", np.random.default_rng(3)).numpy()
    b = posterior(logits, 0.9, "train", np.random.default_rng(3)).numpy()
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, 0.5)


def test_posterior_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        posterior(Tensor(np.zeros((2, 2))), 0.0)
    with pytest.raises(ConfigError):
        posterior(Tensor(np.zeros((2, 2))), 1.0, "train")
    with pytest.raises(ShapeError):
        posterior(Tensor(np.zeros((2, 3))), 1.0)


def test_query_view_gates_rows():
    h = Tensor(np.arange(6.0).reshape(3, 2))
    q = query_focused_view(QueryBelief(np.array([1.0, 0.0, 0.5])), h)
    np.testing.assert_allclose(q.data, [[0, 1], [0, 0], [2, 2.5]])
    with pytest.raises(ShapeError):
        query_focused_view(QueryBelief(np.array([1.0, 0.0])), h)


def test_query_loss_single_unit_value():
    loss = query_loss(QueryBelief(np.array([0.5])), [1], omega=10.0, beta=0.1)
    assert loss.item() == pytest.approx(10 * math.log(2) - 0.1 * math.log(2), abs=1e-9)
    assert loss.item() == pytest.approx(6.8622, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8), st.floats(0.0, 2.0))
def test_omega_zero_leaves_scaled_negative_entropy(qs, beta):
    q = np.array(qs)
    loss = query_loss(QueryBelief(q), np.zeros_like(q), omega=0.0, beta=beta).item()
    assert loss == pytest.approx(-beta * entropy(q).sum(), rel=1e-9, abs=1e-12)


def test_loss_is_batch_mean_of_unit_sums():
    q = np.array([[0.2, 0.7], [0.9, 0.4]])
    z = np.array([[0, 1], [1, 1]])
    tag, ent = query_loss_terms(QueryBelief(q), z)
    expect = (np.log([0.8, 0.7]).sum() + np.log([0.9, 0.4]).sum()) / 2
    assert tag.item() == pytest.approx(expect)
    assert ent.item() == pytest.approx(-entropy(q).sum() / 2)


def test_loss_clamp_keeps_extremes_finite():
    loss = query_loss(QueryBelief(np.array([0.0, 1.0])), [1, 0], 10.0, 0.1)
    assert np.isfinite(loss.item())


def test_loss_rejects_negative_weights():
    with pytest.raises(ConfigError):
        query_loss(QueryBelief(np.array([0.5])), [1], -1.0, 0.1)


def test_dropout_extremes():
    b = QueryBelief(Tensor(np.array([[0.3, 0.6]]), requires_grad=True))
    z = np.array([[1.0, 0.0]])
    rng = np.random.default_rng(0)
    assert posterior_dropout(b, z, 0.0, rng).probs is b.probs
    out = posterior_dropout(b, z, 1.0, rng)
    assert out.source == "weak_supervision" and out.numpy().tolist() == [[1.0, 0.0]]


def test_dropout_rate_monte_carlo():
    n = 20000
    b = QueryBelief(np.full((n, 3), 0.5))
    out = posterior_dropout(b, np.ones((n, 3)), 0.5, np.random.default_rng(11))
    rate = out.replaced.mean()
    assert 0.48 <= rate <= 0.52
    # whole examples are swapped, never single units
    rows = out.numpy()
    assert set(np.unique(rows.min(axis=1) == rows.max(axis=1))) == {True}


def test_dropout_replaced_rows_carry_no_gradient():
    probs = Tensor(np.array([[0.3, 0.6], [0.2, 0.1]]), requires_grad=True)
    out = posterior_dropout(QueryBelief(probs), np.ones((2, 2)), 0.5, None, draw=np.array([True, False]))
    out.probs.sum().backward()
    np.testing.assert_array_equal(probs.grad, [[0, 0], [1, 1]])


def test_anneal_schedule():
    assert anneal_delta(0, 100) == 1.0
    assert anneal_delta(100, 100) == 0.5
    assert anneal_delta(50, 100) == pytest.approx(0.75)
    with pytest.raises(ConfigError):
        anneal_delta(101, 100)


def test_calibration_example():
    b = QueryBelief(np.array([0.2, 0.9, 0.4]))
    out = calibrate(b, seq([1, 2, 3]), seq([3, 9]))
    np.testing.assert_allclose(out.numpy(), [0.2, 0.9, 1.0])
    assert out.source == "calibrated"


def test_empty_query_leaves_belief_untouched():
    b = QueryBelief(np.array([0.2, 0.9]))
    assert calibrate(b, seq([1, 2]), None) is b
    assert calibrate(b, seq([1, 2]), seq([])) is b


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.floats(0, 1)), min_size=1, max_size=10),
       st.lists(st.integers(0, 4), max_size=6))
def test_calibration_monotone_and_idempotent(units, query):
    ids, probs = zip(*units)
    doc = seq(ids)
    b = QueryBelief(np.array(probs))
    once = calibrate(b, doc, seq(query))
    twice = calibrate(QueryBelief(once.numpy()), doc, seq(query))
    assert (once.numpy() >= b.numpy()).all() and (once.numpy() <= 1).all()
    np.testing.assert_array_equal(once.numpy(), twice.numpy())


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0))
def test_kl_to_uniform_is_log2_minus_entropy(q):
    assert kl_to_uniform(q) == pytest.approx(math.log(2) - entropy(q), abs=1e-9)
