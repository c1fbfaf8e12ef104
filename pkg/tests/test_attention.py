import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from anhp.attention import attend, attention_head, feed_forward, layer_embed, layer_norm
from anhp.autodiff import Tensor


def hand_head(q, ks, vs):
    num = 0.0
    den = 1.0
    for k, v in zip(ks, vs):
        a = math.exp(float(np.dot(k, q)) / math.sqrt(len(q)))
        num = num + a * np.asarray(v, dtype=float)
        den += a
    return num / den


def test_empty_history_gives_exact_zero():
    out = attention_head(Tensor(np.ones(3)), Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 5))))
    np.testing.assert_array_equal(out.value, np.zeros(5))
    batched = attend(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))), Tensor(np.ones((4, 5))),
                     np.zeros((2, 4), bool))
    np.testing.assert_array_equal(batched.value, np.zeros((2, 5)))


def test_single_event_with_orthogonal_key_halves_value():
    out = attention_head(Tensor([1.0]), Tensor([[0.0]]), Tensor([[3.0]]))
    assert out.value[0] == 1.5


def test_two_events_match_hand_evaluation():
    q = np.array([0.5, -1.0])
    ks = [np.array([1.0, 0.2]), np.array([-0.3, 0.8])]
    vs = [np.array([2.0, 0.0, 1.0]), np.array([-1.0, 4.0, 0.5])]
    # a1 = exp(0.3/sqrt2), a2 = exp(-0.95/sqrt2)
    a1, a2 = math.exp(0.3 / math.sqrt(2)), math.exp(-0.95 / math.sqrt(2))
    expect = (a1 * vs[0] + a2 * vs[1]) / (1 + a1 + a2)
    out = attention_head(Tensor(q), Tensor(np.stack(ks)), Tensor(np.stack(vs))).value
    np.testing.assert_allclose(out, expect, rtol=1e-14)
    np.testing.assert_allclose(out, hand_head(q, ks, vs), rtol=1e-14)


def test_large_scores_do_not_overflow():
    q = np.array([1000.0])
    out = attention_head(Tensor(q), Tensor([[1000.0], [999.0]]), Tensor([[1.0], [3.0]])).value
    e = math.exp(-1000.0)
    np.testing.assert_allclose(out, [(1.0 + 3.0 * e) / (1.0 + e)], rtol=1e-12)


def test_layer_with_no_heads_is_the_residual():
    prev = Tensor(np.array([0.1, -0.2]))
    assert layer_embed(prev, []) is prev
    zero = Tensor(np.zeros(2))
    np.testing.assert_array_equal(layer_embed(prev, [zero, zero]).value, prev.value)


def test_two_rule_heads_are_summed_inside_tanh():
    prev = np.array([0.1, -0.2])
    h1, h2 = np.array([0.4, 0.3]), np.array([-0.1, 0.9])
    out = layer_embed(Tensor(prev), [Tensor(h1), Tensor(h2)]).value
    np.testing.assert_allclose(out, prev + np.tanh(h1 + h2), rtol=1e-15)


def test_batched_rows_equal_single_queries():
    rng = np.random.default_rng(0)
    Q, K, V = rng.normal(size=(4, 3)), rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    mask = rng.uniform(size=(4, 6)) < 0.6
    mask[2] = False
    out = attend(Tensor(Q), Tensor(K), Tensor(V), mask).value
    for i in range(4):
        keep = np.nonzero(mask[i])[0]
        single = attention_head(Tensor(Q[i]), Tensor(K[keep]), Tensor(V[keep])).value
        np.testing.assert_allclose(out[i], single, rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(out[2], 0.0)


def test_vanishing_weights_degrade_to_residual():
    q = np.array([1.0, 1.0])
    V = np.array([[5.0, -5.0]])
    prev = np.array([0.3, 0.7])
    outs = []
    for s in [1.0, 10.0, 100.0, 1000.0]:
        K = np.array([[-s, -s]])
        head = attention_head(Tensor(q), Tensor(K), Tensor(V))
        outs.append(np.abs(layer_embed(Tensor(prev), [head]).value - prev).max())
    assert outs == sorted(outs, reverse=True)
    assert outs[-1] == 0.0


def test_head_is_continuous_in_query():
    rng = np.random.default_rng(5)
    K, V = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    q = rng.normal(size=3)
    base = attention_head(Tensor(q), Tensor(K), Tensor(V)).value
    for eps in [1e-3, 1e-6, 1e-9]:
        moved = attention_head(Tensor(q + eps), Tensor(K), Tensor(V)).value
        assert np.abs(moved - base).max() < 100 * eps


@given(seed=st.integers(0, 10_000), n=st.integers(1, 8))
def test_history_order_does_not_matter(seed, n):
    rng = np.random.default_rng(seed)
    q, K, V = rng.normal(size=3), rng.normal(size=(n, 3)), rng.normal(size=(n, 4))
    perm = rng.permutation(n)
    a = attention_head(Tensor(q), Tensor(K), Tensor(V)).value
    b = attention_head(Tensor(q), Tensor(K[perm]), Tensor(V[perm])).value
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@given(seed=st.integers(0, 10_000))
def test_head_output_lies_in_hull_of_zero_and_values(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    q, K, V = rng.normal(size=2) * 3, rng.normal(size=(n, 2)) * 3, rng.normal(size=(n, 3))
    out = attention_head(Tensor(q), Tensor(K), Tensor(V)).value
    assert np.all(out <= np.maximum(V.max(axis=0), 0) + 1e-12)
    assert np.all(out >= np.minimum(V.min(axis=0), 0) - 1e-12)


def test_layer_norm_standardises_rows():
    x = np.array([[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 0.0, 5.0]])
    out = layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0).value
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-15)
    np.testing.assert_allclose(out.std(axis=1), 1.0, rtol=1e-12)


def test_feed_forward_matches_numpy():
    rng = np.random.default_rng(1)
    x, W1, b1, W2, b2 = (rng.normal(size=s) for s in [(3, 4), (5, 4), (5,), (4, 5), (4,)])
    out = feed_forward(Tensor(x), Tensor(W1), Tensor(b1), Tensor(W2), Tensor(b2)).value
    np.testing.assert_allclose(out, np.maximum(x @ W1.T + b1, 0) @ W2.T + b2, rtol=1e-13)
