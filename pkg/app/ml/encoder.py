"""
Sentence Encoder Module

Standard LSTM (no peepholes) mapping a token-vector sequence to a sentence
vector: the final hidden state. Also hosts the vanilla tanh RNN encoder used
by the RNN variant of the affinity baseline, hand-derived backpropagation
through time for both, and optional language-model pretraining.

Gate order is fixed as f, i, o, c_input; each gate matrix has shape
hidden x (hidden + input) and acts on z = [h_prev, x].

Features:
- lstm_step / lstm_forward / lstm_backward
- encode_sentence (zero vector for an empty utterance)
- rnn_step / rnn_forward / rnn_backward / encode_sentence_rnn
- lm_pretrain: next-token softmax cross-entropy
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import InternalConsistencyError, ShapeError
from app.ml.embeddings import EmbeddingTable, Vocabulary
from app.ml.mathcore import DTYPE, Rng, ensure_finite, sigmoid, tanh_vec
from app.ml.optim import sgd_update, sgd_update_rows

logger = logging.getLogger(__name__)

INIT_RANGE = 0.1
FORGET_BIAS = 1.0


@dataclass
class CellState:
    """Hidden state h and memory cell c of a recurrent cell."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "CellState":
        return cls(h=np.zeros(hidden, dtype=DTYPE), c=np.zeros(hidden, dtype=DTYPE))


class ParamBlocks:
    """Mixin for parameter dataclasses whose fields are all numpy arrays."""

    def blocks(self) -> "OrderedDict[str, np.ndarray]":
        """Live arrays by field name, in declaration order."""
        return OrderedDict((f.name, getattr(self, f.name)) for f in fields(self))

    def zeros_like(self):
        return type(self)(**{name: np.zeros_like(arr) for name, arr in self.blocks().items()})

    def copy(self):
        return type(self)(**{name: arr.copy() for name, arr in self.blocks().items()})


@dataclass
class LSTMParams(ParamBlocks):
    """
    LSTM weights.

    Attributes:
        W_f, W_i, W_o, W_c (np.ndarray): hidden x (hidden + input)
        b_f, b_i, b_o, b_c (np.ndarray): hidden
    """

    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def validate(self) -> None:
        hidden, width = self.W_f.shape
        for name in ("W_f", "W_i", "W_o", "W_c"):
            if getattr(self, name).shape != (hidden, width):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden, width)}")
        for name in ("b_f", "b_i", "b_o", "b_c"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden,)}")

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: Rng, scale: float = INIT_RANGE) -> "LSTMParams":
        """Uniform[-scale, scale] weights, zero biases except b_f = 1."""
        shape = (hidden, hidden + input_dim)
        return cls(
            W_f=rng.uniform(-scale, scale, shape),
            W_i=rng.uniform(-scale, scale, shape),
            W_o=rng.uniform(-scale, scale, shape),
            W_c=rng.uniform(-scale, scale, shape),
            b_f=np.full(hidden, FORGET_BIAS, dtype=DTYPE),
            b_i=np.zeros(hidden, dtype=DTYPE),
            b_o=np.zeros(hidden, dtype=DTYPE),
            b_c=np.zeros(hidden, dtype=DTYPE),
        )


@dataclass
class LSTMStepTrace:
    """Forward quantities of one LSTM step kept for backpropagation."""

    z: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    c_input: np.ndarray
    c: np.ndarray
    h: np.ndarray


def _check_input(params, x: np.ndarray) -> None:
    if x.shape != (params.input_dim,):
        raise ShapeError(f"input x has shape {x.shape}, W_f expects input dim {params.input_dim}")


def lstm_gates(params: LSTMParams, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """f, i, o, c_input for the concatenated input z = [h_prev, x]."""
    f = sigmoid(params.W_f @ z + params.b_f)
    i = sigmoid(params.W_i @ z + params.b_i)
    o = sigmoid(params.W_o @ z + params.b_o)
    c_input = tanh_vec(params.W_c @ z + params.b_c)
    return f, i, o, c_input


def _lstm_step_traced(params: LSTMParams, prev: CellState, x: np.ndarray) -> Tuple[CellState, LSTMStepTrace]:
    z = np.concatenate([prev.h, x])
    f, i, o, c_input = lstm_gates(params, z)
    c = f * prev.c + i * c_input
    h = o * tanh_vec(c)
    return CellState(h=h, c=c), LSTMStepTrace(z=z, c_prev=prev.c, f=f, i=i, o=o, c_input=c_input, c=c, h=h)


def lstm_step(params: LSTMParams, prev: CellState, x: np.ndarray) -> CellState:
    """
    One LSTM step.

    Args:
        params: LSTM weights
        prev: Previous (h, c)
        x: Input vector of the configured input dim

    Returns:
        CellState: c = f*c_prev + i*c_input, h = o*tanh(c)

    Raises:
        ShapeError: If a weight or the input has the wrong shape
    """
    params.validate()
    x = np.asarray(x, dtype=DTYPE)
    _check_input(params, x)
    state, _ = _lstm_step_traced(params, prev, x)
    return state


def lstm_forward(
    params: LSTMParams,
    xs: Sequence[np.ndarray],
    prev: Optional[CellState] = None,
) -> Tuple[CellState, List[LSTMStepTrace]]:
    """Run the LSTM over a sequence from `prev` (zero state by default)."""
    params.validate()
    state = prev or CellState.zeros(params.hidden_dim)
    traces = []
    for x in xs:
        x = np.asarray(x, dtype=DTYPE)
        _check_input(params, x)
        state, trace = _lstm_step_traced(params, state, x)
        traces.append(trace)
    return state, traces


def backprop_gates(params: LSTMParams, grads: LSTMParams, trace, dh: np.ndarray, dc_total: np.ndarray) -> np.ndarray:
    """
    Accumulate the four standard gate gradients of one step into `grads`.

    `dc_total` is the full gradient on c_t (including the path through h_t).

    Returns:
        np.ndarray: gradient on z = [h_prev, x]
    """
    tanh_c = np.tanh(trace.c)
    do = dh * tanh_c
    da_f = dc_total * trace.c_prev * trace.f * (1.0 - trace.f)
    da_i = dc_total * trace.c_input * trace.i * (1.0 - trace.i)
    da_o = do * trace.o * (1.0 - trace.o)
    da_c = dc_total * trace.i * (1.0 - trace.c_input ** 2)
    for gate, da in (("f", da_f), ("i", da_i), ("o", da_o), ("c", da_c)):
        getattr(grads, "W_" + gate)[...] += np.outer(da, trace.z)
        getattr(grads, "b_" + gate)[...] += da
    return params.W_f.T @ da_f + params.W_i.T @ da_i + params.W_o.T @ da_o + params.W_c.T @ da_c


def cell_gradient(trace, dh: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Gradient on c_t from the carried dc plus the path through h_t = o*tanh(c_t)."""
    tanh_c = np.tanh(trace.c)
    return dc + dh * trace.o * (1.0 - tanh_c ** 2)


def lstm_backward(
    params: LSTMParams,
    traces: Sequence[LSTMStepTrace],
    grad_h_final: np.ndarray,
    grad_hs: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[LSTMParams, np.ndarray]:
    """
    Backpropagation through time.

    Args:
        params: Weights used by the forward pass
        traces: Step traces of that forward pass
        grad_h_final: Gradient on the last hidden state
        grad_hs: Optional extra gradient on every hidden state (language modelling)

    Returns:
        Tuple[LSTMParams, np.ndarray]: weight gradients and the T x input gradient on the inputs
    """
    hidden = params.hidden_dim
    grads = params.zeros_like()
    dxs = np.zeros((len(traces), params.input_dim), dtype=DTYPE)
    if not traces:
        return grads, dxs
    if traces[0].z.shape != (hidden + params.input_dim,):
        raise InternalConsistencyError("LSTM traces do not match the parameter shapes")
    dh = np.array(grad_h_final, dtype=DTYPE)
    dc = np.zeros(hidden, dtype=DTYPE)
    for t in reversed(range(len(traces))):
        trace = traces[t]
        if grad_hs is not None:
            dh = dh + grad_hs[t]
        dc_total = cell_gradient(trace, dh, dc)
        dz = backprop_gates(params, grads, trace, dh, dc_total)
        dxs[t] = dz[hidden:]
        dh = dz[:hidden]
        dc = dc_total * trace.f
    return grads, dxs


def encode_sentence(params: LSTMParams, token_vectors: Sequence[np.ndarray]) -> np.ndarray:
    """
    Sentence vector: the final hidden state of the LSTM run from zero state.

    An empty utterance encodes to the zero vector of the hidden dim.
    """
    if len(token_vectors) == 0:
        return np.zeros(params.hidden_dim, dtype=DTYPE)
    state, _ = lstm_forward(params, token_vectors)
    return state.h


@dataclass
class RNNParams(ParamBlocks):
    """Vanilla tanh recurrence h = tanh(W [h_prev, x] + b)."""

    W: np.ndarray
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1] - self.W.shape[0]

    def validate(self) -> None:
        if self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"b has shape {self.b.shape}, expected {(self.W.shape[0],)}")

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: Rng, scale: float = INIT_RANGE) -> "RNNParams":
        return cls(W=rng.uniform(-scale, scale, (hidden, hidden + input_dim)), b=np.zeros(hidden, dtype=DTYPE))


@dataclass
class RNNStepTrace:
    z: np.ndarray
    h: np.ndarray


def rnn_step(params: RNNParams, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    _check_input(params, x)
    return tanh_vec(params.W @ np.concatenate([h_prev, x]) + params.b)


def rnn_forward(params: RNNParams, xs: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[RNNStepTrace]]:
    params.validate()
    h = np.zeros(params.hidden_dim, dtype=DTYPE)
    traces = []
    for x in xs:
        x = np.asarray(x, dtype=DTYPE)
        _check_input(params, x)
        z = np.concatenate([h, x])
        h = tanh_vec(params.W @ z + params.b)
        traces.append(RNNStepTrace(z=z, h=h))
    return h, traces


def rnn_backward(params: RNNParams, traces: Sequence[RNNStepTrace], grad_h_final: np.ndarray) -> Tuple[RNNParams, np.ndarray]:
    hidden = params.hidden_dim
    grads = params.zeros_like()
    dxs = np.zeros((len(traces), params.input_dim), dtype=DTYPE)
    dh = np.array(grad_h_final, dtype=DTYPE)
    for t in reversed(range(len(traces))):
        da = dh * (1.0 - traces[t].h ** 2)
        grads.W += np.outer(da, traces[t].z)
        grads.b += da
        dz = params.W.T @ da
        dxs[t] = dz[hidden:]
        dh = dz[:hidden]
    return grads, dxs


def encode_sentence_rnn(params: RNNParams, token_vectors: Sequence[np.ndarray]) -> np.ndarray:
    if len(token_vectors) == 0:
        return np.zeros(params.hidden_dim, dtype=DTYPE)
    h, _ = rnn_forward(params, token_vectors)
    return h


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _lm_sentence(params: LSTMParams, table: EmbeddingTable, out: Dict[str, np.ndarray], ids: np.ndarray, with_grads: bool):
    xs = table.matrix[ids[:-1]]
    targets = ids[1:]
    _, traces = lstm_forward(params, xs)
    loss = 0.0
    grad_hs = np.zeros((len(traces), params.hidden_dim), dtype=DTYPE)
    d_out = {"W": np.zeros_like(out["W"]), "b": np.zeros_like(out["b"])}
    for t, trace in enumerate(traces):
        probs = _softmax(out["W"] @ trace.h + out["b"])
        loss -= float(np.log(max(probs[targets[t]], 1e-300)))
        if with_grads:
            probs[targets[t]] -= 1.0
            d_out["W"] += np.outer(probs, trace.h)
            d_out["b"] += probs
            grad_hs[t] = out["W"].T @ probs
    if not with_grads:
        return loss, len(traces), None
    grads, dxs = lstm_backward(params, traces, np.zeros(params.hidden_dim, dtype=DTYPE), grad_hs)
    return loss, len(traces), (grads, d_out, dxs)


def lm_loss(params: LSTMParams, table: EmbeddingTable, out: Dict[str, np.ndarray], corpus_ids: Sequence[np.ndarray]) -> float:
    """Mean next-token cross-entropy per predicted token."""
    total, count = 0.0, 0
    for ids in corpus_ids:
        if len(ids) < 2:
            continue
        loss, n, _ = _lm_sentence(params, table, out, ids, with_grads=False)
        total += loss
        count += n
    return total / count if count else 0.0


def lm_pretrain(
    params: LSTMParams,
    table: EmbeddingTable,
    vocab: Vocabulary,
    corpus: Sequence[Sequence[str]],
    epochs: int,
    learning_rate: float = 0.1,
    rng: Optional[Rng] = None,
    history: Optional[List[float]] = None,
) -> LSTMParams:
    """
    Pretrain the sentence encoder as a next-token language model.

    A softmax output layer (discarded afterwards) predicts token t+1 from
    h_t. Plain SGD, one update per sentence, in corpus order. Embedding rows
    of a trainable table are updated in place.

    Args:
        params: Initial encoder weights (not modified)
        table: Word embedding table
        vocab: Vocabulary of the table
        corpus: Tokenised sentences
        epochs: Passes over the corpus; 0 returns an unchanged copy
        learning_rate: SGD step size
        rng: Generator for the output layer
        history: If given, receives the mean loss at initialisation and after every epoch

    Returns:
        LSTMParams: Pretrained weights used to initialise the sentence encoder
    """
    if not corpus:
        raise ValueError("language-model corpus must be non-empty")
    params = params.copy()
    if epochs <= 0:
        return params
    rng = rng or Rng(0)
    out = {
        "W": rng.uniform(-INIT_RANGE, INIT_RANGE, (len(vocab), params.hidden_dim)),
        "b": np.zeros(len(vocab), dtype=DTYPE),
    }
    corpus_ids = [vocab.indices(s) for s in corpus]
    if history is not None:
        history.append(lm_loss(params, table, out, corpus_ids))
    for epoch in range(1, epochs + 1):
        for ids in corpus_ids:
            if len(ids) < 2:
                continue
            loss, _, (grads, d_out, dxs) = _lm_sentence(params, table, out, ids, with_grads=True)
            ensure_finite(np.array([loss]), "language-model loss")
            sgd_update(params.blocks(), grads.blocks(), learning_rate)
            sgd_update(out, d_out, learning_rate)
            if table.trainable:
                sgd_update_rows(table.matrix, ids[:-1], dxs, learning_rate)
        epoch_loss = lm_loss(params, table, out, corpus_ids)
        if history is not None:
            history.append(epoch_loss)
        logger.info("LM pretraining epoch %d: loss %.6f, perplexity %.4f", epoch, epoch_loss, float(np.exp(epoch_loss)))
    return params
