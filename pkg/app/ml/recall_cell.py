"""
Recall Cell Module

LSTM cell extended with a Recall gate that injects the knowledge vector kb
as global memory:

    r_t = sigmoid(W_ri [h_{t-1}, x_t] + W_rc c_{t-1} + W_rk kb + b_r)
    c_t = f_t * c_{t-1} + i_t * c_input + r_t * kb
    h_t = o_t * tanh(c_t)

f, i, o and c_input are computed exactly as in the sentence encoder's LSTM
(the same function, so kb = 0 reduces bit-for-bit to the plain cell). kb is
constant across the time steps of a conversation and must have the hidden
dimension, because r_t * kb is added to the cell directly.

W_rc is a full hidden x hidden matrix (not a diagonal peephole).
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import InternalConsistencyError, ShapeError
from app.ml.encoder import (
    INIT_RANGE,
    CellState,
    LSTMParams,
    backprop_gates,
    cell_gradient,
    lstm_gates,
)
from app.ml.mathcore import DTYPE, Rng, ensure_finite, sigmoid, tanh_vec

logger = logging.getLogger(__name__)


@dataclass
class RLSTMParams:
    """
    Recall-gate LSTM weights.

    Attributes:
        base (LSTMParams): standard gates, hidden x (hidden + input)
        W_ri (np.ndarray): hidden x (hidden + input)
        W_rc (np.ndarray): hidden x hidden
        W_rk (np.ndarray): hidden x knowledge (knowledge == hidden)
        b_r (np.ndarray): hidden
    """

    base: LSTMParams
    W_ri: np.ndarray
    W_rc: np.ndarray
    W_rk: np.ndarray
    b_r: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.base.hidden_dim

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    def blocks(self) -> "OrderedDict[str, np.ndarray]":
        blocks = OrderedDict(self.base.blocks())
        blocks.update(W_ri=self.W_ri, W_rc=self.W_rc, W_rk=self.W_rk, b_r=self.b_r)
        return blocks

    def zeros_like(self) -> "RLSTMParams":
        return RLSTMParams(base=self.base.zeros_like(), W_ri=np.zeros_like(self.W_ri),
                           W_rc=np.zeros_like(self.W_rc), W_rk=np.zeros_like(self.W_rk),
                           b_r=np.zeros_like(self.b_r))

    def copy(self) -> "RLSTMParams":
        return RLSTMParams(base=self.base.copy(), W_ri=self.W_ri.copy(), W_rc=self.W_rc.copy(),
                           W_rk=self.W_rk.copy(), b_r=self.b_r.copy())

    def validate(self) -> None:
        self.base.validate()
        hidden = self.hidden_dim
        expected = {
            "W_ri": (hidden, hidden + self.input_dim),
            "W_rc": (hidden, hidden),
            "W_rk": (hidden, hidden),
            "b_r": (hidden,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: Rng, scale: float = INIT_RANGE) -> "RLSTMParams":
        return cls(
            base=LSTMParams.init(hidden, input_dim, rng, scale),
            W_ri=rng.uniform(-scale, scale, (hidden, hidden + input_dim)),
            W_rc=rng.uniform(-scale, scale, (hidden, hidden)),
            W_rk=rng.uniform(-scale, scale, (hidden, hidden)),
            b_r=np.zeros(hidden, dtype=DTYPE),
        )


@dataclass
class RecallStepTrace:
    """Forward quantities of one r-LSTM step, including the recall gate r."""

    z: np.ndarray
    c_prev: np.ndarray
    kb: np.ndarray
    r: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    c_input: np.ndarray
    c: np.ndarray
    h: np.ndarray


def _check_kb(params: RLSTMParams, kb: np.ndarray) -> None:
    if kb.shape != (params.hidden_dim,):
        raise ShapeError(f"kb has shape {kb.shape}; the recall term r*kb needs the hidden dim {params.hidden_dim}")


def _rlstm_step(params: RLSTMParams, prev: CellState, x: np.ndarray, kb: np.ndarray) -> Tuple[CellState, RecallStepTrace]:
    z = np.concatenate([prev.h, x])
    f, i, o, c_input = lstm_gates(params.base, z)
    r = sigmoid(params.W_ri @ z + params.W_rc @ prev.c + params.W_rk @ kb + params.b_r)
    c = f * prev.c + i * c_input + r * kb
    h = o * tanh_vec(c)
    trace = RecallStepTrace(z=z, c_prev=prev.c, kb=kb, r=r, f=f, i=i, o=o, c_input=c_input, c=c, h=h)
    return CellState(h=h, c=c), trace


def rlstm_step(params: RLSTMParams, prev: CellState, x: np.ndarray, kb: np.ndarray) -> Tuple[CellState, RecallStepTrace]:
    """
    One r-LSTM step.

    Args:
        params: Recall-gate LSTM weights
        prev: Previous (h, c)
        x: Input of the configured input dim
        kb: Knowledge vector of the hidden dim

    Returns:
        Tuple[CellState, RecallStepTrace]: new state and the cached step

    Raises:
        ShapeError: If kb or x has the wrong dimension
    """
    params.validate()
    x = ensure_finite(np.asarray(x, dtype=DTYPE), "x")
    kb = ensure_finite(np.asarray(kb, dtype=DTYPE), "kb")
    _check_kb(params, kb)
    if x.shape != (params.input_dim,):
        raise ShapeError(f"input x has shape {x.shape}, W_ri expects input dim {params.input_dim}")
    return _rlstm_step(params, prev, x, kb)


def rlstm_forward(
    params: RLSTMParams,
    xs: Sequence[np.ndarray],
    kb: np.ndarray,
    prev: Optional[CellState] = None,
) -> Tuple[CellState, List[RecallStepTrace]]:
    """Run the r-LSTM over a sequence with a constant knowledge vector."""
    params.validate()
    kb = np.asarray(kb, dtype=DTYPE)
    _check_kb(params, kb)
    state = prev or CellState.zeros(params.hidden_dim)
    traces = []
    for x in xs:
        x = np.asarray(x, dtype=DTYPE)
        if x.shape != (params.input_dim,):
            raise ShapeError(f"input x has shape {x.shape}, W_ri expects input dim {params.input_dim}")
        state, trace = _rlstm_step(params, state, x, kb)
        traces.append(trace)
    return state, traces


@dataclass
class RLSTMGradients:
    """Gradients of rlstm_backward: weights, every input x_t, and the shared kb."""

    params: RLSTMParams
    xs: np.ndarray
    kb: np.ndarray


def rlstm_backward(params: RLSTMParams, traces: Sequence[RecallStepTrace], grad_h_final: np.ndarray) -> RLSTMGradients:
    """
    Exact reverse-mode gradients through the recall-gate equations.

    kb is shared by every step, so its gradient sums the direct path
    (dc_t * r_t) and the gate path (W_rk^T da_r) over all steps.

    Raises:
        InternalConsistencyError: If the traces were not produced with these parameter shapes
    """
    hidden = params.hidden_dim
    grads = params.zeros_like()
    dxs = np.zeros((len(traces), params.input_dim), dtype=DTYPE)
    dkb = np.zeros(hidden, dtype=DTYPE)
    for trace in traces:
        if trace.z.shape != (hidden + params.input_dim,) or trace.kb.shape != (hidden,):
            raise InternalConsistencyError("recall traces do not match the parameter shapes")
    dh = np.array(grad_h_final, dtype=DTYPE)
    dc = np.zeros(hidden, dtype=DTYPE)
    for t in reversed(range(len(traces))):
        trace = traces[t]
        dc_total = cell_gradient(trace, dh, dc)
        dz = backprop_gates(params.base, grads.base, trace, dh, dc_total)
        da_r = dc_total * trace.kb * trace.r * (1.0 - trace.r)
        grads.W_ri += np.outer(da_r, trace.z)
        grads.W_rc += np.outer(da_r, trace.c_prev)
        grads.W_rk += np.outer(da_r, trace.kb)
        grads.b_r += da_r
        dz = dz + params.W_ri.T @ da_r
        dkb += dc_total * trace.r + params.W_rk.T @ da_r
        dxs[t] = dz[hidden:]
        dh = dz[:hidden]
        dc = dc_total * trace.f + params.W_rc.T @ da_r
    return RLSTMGradients(params=grads, xs=dxs, kb=dkb)
