import math

import numpy as np
import pytest

from dsf import reference as ref
from dsf.errors import DimensionError, NormalizationError
from dsf.registry import parse_kind, random_input, random_weights


def _attn(seed=0, d=4, m=4, heads=1):
    return random_weights(parse_kind("linear" if heads == 1 else f"multihead:{heads}"), d, m // heads, seed)


def test_softplus_and_sigmoid_values():
    assert ref.softplus(0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert ref.sigmoid(0.0) == 0.5
    assert ref.softplus(800.0) == 800.0
    assert ref.sigmoid(-800.0) == 0.0


def test_elu_plus_one_positive():
    x = np.linspace(-50, 5, 101)
    assert np.all(ref.elu_plus_one(x) > 0)
    assert ref.elu_plus_one(0.0) == 1.0


def test_softmax_first_row_copies_first_value():
    w = _attn()
    u = random_input(5, 4, 1)
    y = ref.softmax_attention_ref(u, w)
    assert np.allclose(y[0], w.W_V @ u[0], atol=1e-15, rtol=0)


def test_softmax_rows_are_stochastic_and_causal():
    w = _attn()
    u = random_input(9, 4, 2)
    A = ref.softmax_weights(u, w)
    assert np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-12
    assert not np.any(np.triu(A, 1))


def test_softmax_chunking_matches_full_matrix(monkeypatch):
    w = _attn()
    u = random_input(13, 4, 3)
    full = ref.softmax_weights(u, w) @ (u @ w.W_V.T)
    monkeypatch.setattr(ref, "CHUNK_ELEMENTS", 20)
    assert np.max(np.abs(ref.softmax_attention_ref(u, w) - full)) <= 1e-14


def test_linear_rows_sum_to_one():
    w = _attn()
    u = random_input(11, 4, 4)
    A = ref.linear_attention_weights(u, w)
    assert np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-12


def test_sigmoid_normalizer_doubles_unnormalized_output():
    w = _attn()
    w = ref.AttentionWeights(w.W_Q, w.W_K, w.W_V, np.zeros((1, 4)))
    u = random_input(6, 4, 5)
    raw = np.tril((u @ w.W_Q.T) @ (u @ w.W_K.T).T) @ (u @ w.W_V.T)
    assert np.allclose(ref.normalized_attention_ref(u, w, "sigmoid"), 2 * raw, atol=1e-13, rtol=0)
    assert np.allclose(ref.normalized_attention_ref(u, w, "exp"), raw, atol=1e-13, rtol=0)


def test_exp_normalizer_underflow():
    w = _attn()
    w = ref.AttentionWeights(w.W_Q, w.W_K, w.W_V, np.full((1, 4), -1e4))
    u = np.ones((3, 4))
    with pytest.raises(NormalizationError):
        ref.normalized_attention_ref(u, w, "exp")


def test_multihead_block_diagonal_splits_into_heads():
    rng = np.random.default_rng(7)
    blocks = [[rng.standard_normal((2, 2)) for _ in range(2)] for _ in range(3)]
    z = np.zeros((2, 2))
    WQ, WK, WV = (np.block([[b[0], z], [z, b[1]]]) for b in blocks)
    w = ref.AttentionWeights(WQ, WK, WV, heads=2)
    u = random_input(7, 4, 6)
    y = ref.multihead_softmax_ref(u, w)
    for h in range(2):
        single = ref.AttentionWeights(blocks[0][h], blocks[1][h], blocks[2][h])
        part = ref.softmax_attention_ref(u[:, 2 * h : 2 * h + 2], single)
        assert np.allclose(y[:, 2 * h : 2 * h + 2], part, atol=1e-14, rtol=0)


def test_heads_must_divide_width():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        ref.AttentionWeights(rng.standard_normal((4, 6)), rng.standard_normal((4, 6)), np.eye(6), heads=3)


def test_single_head_oracles_reject_multihead_weights():
    w = _attn(heads=2)
    with pytest.raises(DimensionError):
        ref.softmax_attention_ref(random_input(3, 4, 0), w)


def test_s6_constant_step_gives_half_decay():
    d, n = 3, 2
    w = ref.S6Weights(
        A=np.ones((n, d)),
        W_B=np.ones((n, d)),
        W_C=np.ones((n, d)),
        W_delta=np.zeros((d, 1)),
        W_u=np.zeros((1, d)),
        b_delta=np.zeros(d),
    )
    u = random_input(4, d, 0)
    delta = ref.s6_delta(u, w)
    assert np.allclose(delta, math.log(2), atol=1e-15, rtol=0)
    assert np.allclose(np.exp(-delta * 1.0), 0.5, atol=1e-15, rtol=0)


def test_s6_rank_must_be_below_width():
    d, n = 2, 1
    with pytest.raises(DimensionError):
        ref.S6Weights(np.ones((n, d)), np.ones((n, d)), np.ones((n, d)), np.ones((d, 2)), np.ones((2, d)), np.zeros(d))


def test_qlstm_closed_forget_gate():
    d = 3
    w = ref.QlstmWeights(W_f=-1000 * np.eye(d), W_i=np.zeros((d, d)), W_o=np.zeros((d, d)), W_u=np.eye(d))
    u = np.abs(random_input(6, d, 1)) + 0.1
    assert np.allclose(ref.qlstm_ref(u, w), 0.25 * u, atol=1e-12, rtol=0)


def test_rglru_zero_weights_example():
    d = 2
    w = ref.RgLruWeights(np.zeros((d, d)), np.zeros((d, d)), np.zeros(d), c=8.0)
    a = math.exp(-8 * 0.5 * math.log(2))
    assert a == pytest.approx(0.0625, abs=1e-15)
    scale = math.sqrt(1 - a * a)
    assert scale == pytest.approx(math.sqrt(0.99609375), abs=1e-15)
    assert scale == pytest.approx(0.9980450, abs=1e-7)
    u = random_input(3, d, 2)
    x, expected = np.zeros(d), []
    for ui in u:
        x = a * x + scale * 0.5 * ui
        expected.append(x)
    assert np.allclose(ref.rglru_ref(u, w), expected, atol=1e-15, rtol=0)


def test_rglru_rejects_bad_c():
    with pytest.raises(DimensionError):
        ref.RgLruWeights(np.eye(2), np.eye(2), np.zeros(2), c=0.0)


def test_oracle_input_width_checked():
    with pytest.raises(DimensionError):
        ref.linear_attention_ref(np.zeros((3, 5)), _attn())
