import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.exceptions import ShapeError
from app.ml.embeddings import Vocabulary, random_table
from app.ml.encoder import (
    CellState,
    LSTMParams,
    RNNParams,
    encode_sentence,
    encode_sentence_rnn,
    lm_pretrain,
    lstm_backward,
    lstm_forward,
    lstm_step,
    rnn_backward,
    rnn_forward,
)
from app.ml.mathcore import Rng


def numeric_grad(loss, arr, h=1e-6):
    """Central differences over every entry of a live parameter array."""
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        saved = arr[idx]
        arr[idx] = saved + h
        plus = loss()
        arr[idx] = saved - h
        minus = loss()
        arr[idx] = saved
        grad[idx] = (plus - minus) / (2 * h)
    return grad


class TestLSTMForward:
    def test_zero_weights_give_known_state(self):
        params = LSTMParams.init(2, 3, Rng(0), scale=0.0)
        state = lstm_step(params, CellState.zeros(2), np.ones(3))
        # f = sigmoid(1), i = o = 0.5, c_input = 0
        assert_array_equal(state.c, np.zeros(2))
        assert_array_equal(state.h, np.zeros(2))

    def test_zero_params_halve_the_previous_cell(self):
        params = LSTMParams.init(1, 2, Rng(0), scale=0.0)
        params.b_f[...] = 0.0
        prev = CellState(h=np.zeros(1), c=np.array([2.0]))
        state = lstm_step(params, prev, np.array([0.7, -3.0]))
        assert state.c[0] == pytest.approx(1.0, abs=1e-12)
        assert state.h[0] == pytest.approx(0.38079708, abs=1e-8)

    def test_step_is_pure(self, rng):
        params = LSTMParams.init(3, 2, rng, scale=0.5)
        prev = CellState(h=rng.uniform(-1, 1, 3), c=rng.uniform(-1, 1, 3))
        x = rng.normal(2)
        a, b = lstm_step(params, prev, x), lstm_step(params, prev, x)
        assert_array_equal(a.h, b.h)
        assert_array_equal(a.c, b.c)

    def test_forget_bias_is_one(self, rng):
        params = LSTMParams.init(4, 3, rng)
        assert_array_equal(params.b_f, np.ones(4))
        assert_array_equal(params.b_i, np.zeros(4))

    def test_wrong_input_dim(self, rng):
        params = LSTMParams.init(4, 3, rng)
        with pytest.raises(ShapeError):
            lstm_step(params, CellState.zeros(4), np.ones(5))

    def test_hidden_state_is_bounded(self, rng):
        params = LSTMParams.init(4, 3, rng, scale=2.0)
        state, traces = lstm_forward(params, rng.normal((6, 3), scale=5.0))
        assert len(traces) == 6
        assert np.all(np.abs(state.h) < 1.0)

    def test_sentence_vector_depends_on_token_order(self, rng):
        params = LSTMParams.init(4, 3, rng, scale=0.5)
        a, b = rng.normal(3), rng.normal(3)
        assert not np.allclose(encode_sentence(params, [a, b]), encode_sentence(params, [b, a]))

    def test_empty_sentence_encodes_to_zero(self, rng):
        params = LSTMParams.init(5, 3, rng)
        assert_array_equal(encode_sentence(params, []), np.zeros(5))


class TestLSTMBackward:
    def test_matches_finite_differences(self):
        rng = Rng(11)
        params = LSTMParams.init(3, 2, rng, scale=0.5)
        xs = rng.normal((4, 2))
        weights = rng.normal(3)

        def loss():
            state, _ = lstm_forward(params, xs)
            return float(weights @ state.h)

        _, traces = lstm_forward(params, xs)
        grads, dxs = lstm_backward(params, traces, weights)
        for name, arr in params.blocks().items():
            assert_allclose(grads.blocks()[name], numeric_grad(loss, arr), rtol=1e-5, atol=1e-8, err_msg=name)
        assert_allclose(dxs, numeric_grad(loss, xs), rtol=1e-5, atol=1e-8)

    def test_empty_traces_give_zero_gradients(self, rng):
        params = LSTMParams.init(3, 2, rng)
        grads, dxs = lstm_backward(params, [], np.ones(3))
        assert dxs.shape == (0, 2)
        for arr in grads.blocks().values():
            assert not arr.any()


class TestRNN:
    def test_backward_matches_finite_differences(self):
        rng = Rng(5)
        params = RNNParams.init(3, 2, rng, scale=0.5)
        xs = rng.normal((3, 2))
        weights = rng.normal(3)

        def loss():
            h, _ = rnn_forward(params, xs)
            return float(weights @ h)

        _, traces = rnn_forward(params, xs)
        grads, dxs = rnn_backward(params, traces, weights)
        assert_allclose(grads.W, numeric_grad(loss, params.W), rtol=1e-5, atol=1e-8)
        assert_allclose(grads.b, numeric_grad(loss, params.b), rtol=1e-5, atol=1e-8)
        assert_allclose(dxs, numeric_grad(loss, xs), rtol=1e-5, atol=1e-8)

    def test_empty_sentence(self, rng):
        assert_array_equal(encode_sentence_rnn(RNNParams.init(4, 2, rng), []), np.zeros(4))


class TestLanguageModelPretraining:
    def test_loss_decreases(self):
        rng = Rng(3)
        corpus = [["the", "kernel", "panics"], ["the", "kernel", "boots"], ["grub", "loads", "the", "kernel"]] * 3
        vocab = Vocabulary(sorted({t for s in corpus for t in s}))
        table = random_table(len(vocab), 6, rng)
        history = []
        lm_pretrain(LSTMParams.init(8, 6, rng), table, vocab, corpus, epochs=5, learning_rate=0.1,
                    rng=rng.derive(1), history=history)
        assert len(history) == 6
        assert history[-1] < history[0]

    def test_repeated_sentence_loss_never_rises(self):
        rng = Rng(6)
        vocab = Vocabulary(["a", "b"])
        table = random_table(len(vocab), 4, rng)
        history = []
        lm_pretrain(LSTMParams.init(4, 4, rng), table, vocab, [["a", "b"]], epochs=200, learning_rate=0.1,
                    rng=rng.derive(1), history=history)
        assert len(history) == 201
        for before, after in zip(history, history[1:]):
            assert after <= before + 1e-12
        assert history[-1] < 0.5 * history[0]

    def test_zero_epochs_return_copy(self, rng):
        vocab = Vocabulary(["a", "b"])
        params = LSTMParams.init(3, 2, rng)
        out = lm_pretrain(params, random_table(len(vocab), 2, rng), vocab, [["a", "b"]], epochs=0)
        assert out is not params
        assert_array_equal(out.W_f, params.W_f)

    def test_input_params_untouched(self, rng):
        vocab = Vocabulary(["a", "b"])
        params = LSTMParams.init(3, 2, rng)
        before = params.W_i.copy()
        lm_pretrain(params, random_table(len(vocab), 2, rng), vocab, [["a", "b", "a"]], epochs=2)
        assert_array_equal(params.W_i, before)
