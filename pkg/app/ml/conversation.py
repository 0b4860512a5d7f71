"""
Conversation Models Module

The end-to-end conversation classifier with the Recall-gate cell and the
baselines it is compared against. Every model turns a conversation (context
utterances, query, candidate response) plus its triggered knowledge into the
confidence that the candidate fits.

Models:
- rlstm: r-LSTM over utterance vectors (response last), knowledge as global memory
- lstm / lstm_kb: plain LSTM, optionally with kb as the first time step
- mlp / mlp_kb: one tanh hidden layer over the zero-padded concatenation of
  utterance vectors, optionally with kb appended
- affinity_lstm / affinity_rnn: sigma(c^T M r + b) with c the encoding of the
  concatenated context+query tokens and r the encoding of the response, using
  the LSTM or a vanilla tanh RNN as sentence encoder

One sentence encoder is shared by every utterance (and by context and
response in the affinity models). All parameters, embeddings included,
receive exact analytic gradients of the binary cross-entropy.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import ConfigurationError, ShapeError
from app.ml.embeddings import EmbeddingTable, Vocabulary, random_table
from app.ml.encoder import (
    INIT_RANGE,
    LSTMParams,
    ParamBlocks,
    RNNParams,
    lstm_backward,
    lstm_forward,
    rnn_backward,
    rnn_forward,
)
from app.ml.knowledge import KnowledgeBase, KnowledgeVector, embed_attributes, rank_attributes
from app.ml.mathcore import DTYPE, Rng, sigmoid
from app.ml.optim import SparseRows
from app.ml.recall_cell import RLSTMParams, rlstm_backward, rlstm_forward
from app.ml.training import bce_loss
from app.schemas import Dims, ModelKind

logger = logging.getLogger(__name__)

DEFAULT_MAX_TURNS = 8
KB_KINDS = (ModelKind.mlp_kb, ModelKind.lstm_kb, ModelKind.rlstm)
AFFINITY_KINDS = (ModelKind.affinity_lstm, ModelKind.affinity_rnn)


@dataclass
class ClassifierHead(ParamBlocks):
    """Affine + sigmoid on the final hidden state. b has shape (1,)."""

    w: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, hidden: int, rng: Rng, scale: float = INIT_RANGE) -> "ClassifierHead":
        return cls(w=rng.uniform(-scale, scale, hidden), b=np.zeros(1, dtype=DTYPE))


@dataclass
class AffinityParams(ParamBlocks):
    """Relevance matrix M (sentence x sentence) and bias b of shape (1,)."""

    M: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, dim: int, rng: Rng, scale: float = INIT_RANGE) -> "AffinityParams":
        return cls(M=rng.uniform(-scale, scale, (dim, dim)), b=np.zeros(1, dtype=DTYPE))


@dataclass
class MLPParams(ParamBlocks):
    """Hidden layer W (hidden x input) and bias b."""

    W: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: Rng, scale: float = INIT_RANGE) -> "MLPParams":
        return cls(W=rng.uniform(-scale, scale, (hidden, input_dim)), b=np.zeros(hidden, dtype=DTYPE))


@dataclass
class ConversationInput:
    """
    Encoded conversation.

    Attributes:
        utterance_vectors (List[np.ndarray]): contexts, then query, then candidate response
        kb_vector (np.ndarray): triggered knowledge vector
    """

    utterance_vectors: List[np.ndarray]
    kb_vector: np.ndarray

    def __post_init__(self):
        if isinstance(self.kb_vector, KnowledgeVector):
            self.kb_vector = self.kb_vector.vector
        if len(self.utterance_vectors) < 2:
            raise ShapeError("a conversation needs at least a query and a response")


def _head_logit(head: ClassifierHead, h: np.ndarray) -> float:
    if head.w.shape != h.shape:
        raise ShapeError(f"head w has shape {head.w.shape}, hidden state has shape {h.shape}")
    return float(head.w @ h + head.b[0])


def _confidence(logit: float) -> float:
    return float(sigmoid(np.array([logit]))[0])


def score_rlstm(params: RLSTMParams, head: ClassifierHead, conversation: ConversationInput) -> float:
    """r-LSTM over the utterance vectors (response last), then sigma(w.h + b)."""
    state, _ = rlstm_forward(params, conversation.utterance_vectors, conversation.kb_vector)
    return _confidence(_head_logit(head, state.h))


def score_lstm(params: LSTMParams, head: ClassifierHead, conversation: ConversationInput, prepend_kb: bool = False) -> float:
    """Plain LSTM baseline; with prepend_kb the kb vector is the first time step."""
    xs = list(conversation.utterance_vectors)
    if prepend_kb:
        if conversation.kb_vector.shape != (params.input_dim,):
            raise ShapeError(f"prepended kb has shape {conversation.kb_vector.shape}, LSTM input dim is {params.input_dim}")
        xs = [conversation.kb_vector] + xs
    state, _ = lstm_forward(params, xs)
    return _confidence(_head_logit(head, state.h))


def mlp_input(
    utterance_vectors: Sequence[np.ndarray],
    kb_vector: Optional[np.ndarray],
    max_turns: int,
) -> Tuple[np.ndarray, int]:
    """
    Concatenate utterance vectors into max_turns slots, padding with zeros on
    the oldest side so the response always fills the last slot.

    Returns:
        Tuple[np.ndarray, int]: input vector and the number of dropped (oldest) turns
    """
    dim = len(utterance_vectors[-1])
    dropped = max(0, len(utterance_vectors) - max_turns)
    kept = utterance_vectors[dropped:]
    x = np.zeros(max_turns * dim, dtype=DTYPE)
    offset = (max_turns - len(kept)) * dim
    for n, u in enumerate(kept):
        x[offset + n * dim: offset + (n + 1) * dim] = u
    if kb_vector is not None:
        x = np.concatenate([x, kb_vector])
    return x, dropped


def score_mlp(
    hidden_weights: MLPParams,
    head: ClassifierHead,
    conversation: ConversationInput,
    append_kb: bool = False,
    max_turns: int = DEFAULT_MAX_TURNS,
) -> float:
    """One tanh hidden layer over the padded utterance block (+ kb), then sigma(w.h + b)."""
    x, dropped = mlp_input(conversation.utterance_vectors, conversation.kb_vector if append_kb else None, max_turns)
    if dropped:
        logger.warning("Conversation of %d turns truncated to the last %d", len(conversation.utterance_vectors), max_turns)
    if hidden_weights.W.shape[1] != x.size:
        raise ShapeError(f"MLP W expects input dim {hidden_weights.W.shape[1]}, got {x.size}")
    h = np.tanh(hidden_weights.W @ x + hidden_weights.b)
    return _confidence(_head_logit(head, h))


def score_affinity(params: AffinityParams, context_vec: np.ndarray, response_vec: np.ndarray) -> float:
    """Exactly sigma(c^T M r + b)."""
    rows, cols = params.M.shape
    if context_vec.shape != (rows,) or response_vec.shape != (cols,):
        raise ShapeError(f"M has shape {params.M.shape}; context {context_vec.shape}, response {response_vec.shape}")
    return _confidence(float(context_vec @ params.M @ response_vec + params.b[0]))


@dataclass
class EncodedSample:
    """Token ids of one candidate pairing, ready for the model."""

    utterances: List[np.ndarray]
    context_stream: np.ndarray
    response: np.ndarray
    attributes: np.ndarray
    label: int
    group_id: str = ""
    attribute_names: List[str] = field(default_factory=list)


@dataclass
class _Encoding:
    ids: np.ndarray
    traces: list
    vector: np.ndarray


class ConversationModel:
    """
    A complete trainable model of one kind.

    Parameters are exposed as live named blocks; optimisers update them in
    place, checkpoints serialise them in `state_blocks()` order.

    Attributes:
        kind (ModelKind): model family
        dims (Dims): word_embed, sentence, knowledge, conversation sizes
        word_vocab (Vocabulary): vocabulary of word_table
        attr_vocab (Vocabulary): vocabulary of attr_table
        max_turns (int): MLP slot count
    """

    def __init__(
        self,
        kind: Union[str, ModelKind],
        dims: Dims,
        word_vocab: Vocabulary,
        attr_vocab: Vocabulary,
        rng: Rng,
        max_turns: int = DEFAULT_MAX_TURNS,
        init_scale: float = INIT_RANGE,
        word_table: Optional[EmbeddingTable] = None,
    ):
        self.kind = ModelKind(kind)
        self.dims = dims
        self.max_turns = max_turns
        self.word_vocab = word_vocab
        self.attr_vocab = attr_vocab
        check_dims(self.kind, dims)
        E, S, K, C = dims.word_embed, dims.sentence, dims.knowledge, dims.conversation

        if word_table is not None and word_table.matrix.shape != (len(word_vocab), E):
            raise ShapeError(f"word table has shape {word_table.matrix.shape}, expected {(len(word_vocab), E)}")
        self.word_table = word_table or random_table(len(word_vocab), E, rng, scale=init_scale)
        self.attr_table = random_table(len(attr_vocab), K, rng, scale=init_scale)
        if self.kind == ModelKind.affinity_rnn:
            self.encoder = RNNParams.init(S, E, rng, init_scale)
        else:
            self.encoder = LSTMParams.init(S, E, rng, init_scale)

        self.cell = None
        self.mlp = None
        self.affinity = None
        self.head = None
        if self.kind == ModelKind.rlstm:
            self.cell = RLSTMParams.init(C, S, rng, init_scale)
        elif self.kind in (ModelKind.lstm, ModelKind.lstm_kb):
            self.cell = LSTMParams.init(C, S, rng, init_scale)
        elif self.kind in (ModelKind.mlp, ModelKind.mlp_kb):
            input_dim = max_turns * S + (K if self.kind == ModelKind.mlp_kb else 0)
            self.mlp = MLPParams.init(C, input_dim, rng, init_scale)
        if self.kind in AFFINITY_KINDS:
            self.affinity = AffinityParams.init(S, rng, init_scale)
        else:
            self.head = ClassifierHead.init(C, rng, init_scale)
        self._truncation_logged = False
        self._unknown_attributes_logged = False

    @property
    def uses_kb(self) -> bool:
        return self.kind in KB_KINDS

    def named_blocks(self) -> "OrderedDict[str, np.ndarray]":
        """Every trainable array by name (live references)."""
        blocks = OrderedDict()
        if self.word_table.trainable:
            blocks["word_embeddings"] = self.word_table.matrix
        if self.uses_kb and self.attr_table.trainable:
            blocks["attr_embeddings"] = self.attr_table.matrix
        for prefix, group in (("encoder", self.encoder), ("cell", self.cell), ("mlp", self.mlp),
                              ("affinity", self.affinity), ("head", self.head)):
            if group is not None:
                for name, arr in group.blocks().items():
                    blocks[f"{prefix}.{name}"] = arr
        return blocks

    def state_blocks(self) -> "OrderedDict[str, np.ndarray]":
        """named_blocks plus both embedding tables, trainable or not (checkpoint contents)."""
        blocks = OrderedDict(word_embeddings=self.word_table.matrix, attr_embeddings=self.attr_table.matrix)
        for name, arr in self.named_blocks().items():
            blocks.setdefault(name, arr)
        return blocks

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.named_blocks().items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, arr in self.named_blocks().items():
            arr[...] = snapshot[name]

    def encode(self, sample, kb: Optional[KnowledgeBase], top_n: int) -> EncodedSample:
        """
        Token ids and triggered attributes of a ConversationSample.

        Knowledge is triggered from the context and query tokens only; attributes
        missing from the attribute vocabulary are skipped.
        """
        utterances = list(sample.context) + [sample.query, sample.response]
        ids = [self.word_vocab.indices(u) for u in utterances]
        stream = [t for u in list(sample.context) + [sample.query] for t in u]
        attributes: List[str] = []
        if self.uses_kb and kb is not None:
            unknown = [a for a in rank_attributes(kb, stream, top_n) if a not in self.attr_vocab]
            if unknown:
                level = logging.DEBUG if self._unknown_attributes_logged else logging.WARNING
                logger.log(level, "Skipping knowledge-base attribute(s) without an embedding row: %s", ", ".join(unknown))
                self._unknown_attributes_logged = True
            attributes = rank_attributes(kb, stream, top_n, known=self.attr_vocab)
        return EncodedSample(
            utterances=ids,
            context_stream=self.word_vocab.indices(stream),
            response=ids[-1],
            attributes=self.attr_vocab.indices(attributes),
            label=int(sample.label),
            group_id=str(sample.group_id),
            attribute_names=attributes,
        )

    def _encode_ids(self, ids: np.ndarray) -> _Encoding:
        xs = self.word_table.matrix[ids]
        if len(ids) == 0:
            return _Encoding(ids=ids, traces=[], vector=np.zeros(self.dims.sentence, dtype=DTYPE))
        if isinstance(self.encoder, RNNParams):
            h, traces = rnn_forward(self.encoder, xs)
            return _Encoding(ids=ids, traces=traces, vector=h)
        state, traces = lstm_forward(self.encoder, xs)
        return _Encoding(ids=ids, traces=traces, vector=state.h)

    def _forward(self, sample: EncodedSample):
        cache = {}
        if self.kind in AFFINITY_KINDS:
            context = self._encode_ids(sample.context_stream)
            response = self._encode_ids(sample.response)
            cache.update(encodings=[context, response])
            logit = float(context.vector @ self.affinity.M @ response.vector + self.affinity.b[0])
            return logit, cache

        encodings = [self._encode_ids(ids) for ids in sample.utterances]
        vectors = [e.vector for e in encodings]
        kb = embed_attributes(self.attr_table.matrix, sample.attributes) if self.uses_kb else None
        cache.update(encodings=encodings, kb=kb)

        if self.kind == ModelKind.rlstm:
            state, traces = rlstm_forward(self.cell, vectors, kb)
            h = state.h
        elif self.kind in (ModelKind.lstm, ModelKind.lstm_kb):
            xs = ([kb] if self.kind == ModelKind.lstm_kb else []) + vectors
            state, traces = lstm_forward(self.cell, xs)
            h = state.h
        else:
            x, dropped = mlp_input(vectors, kb, self.max_turns)
            if dropped:
                level = logging.DEBUG if self._truncation_logged else logging.WARNING
                logger.log(level, "MLP input: dropped %d oldest turn(s) beyond max_turns=%d", dropped, self.max_turns)
                self._truncation_logged = True
            h = np.tanh(self.mlp.W @ x + self.mlp.b)
            traces = None
            cache.update(x=x, dropped=dropped)
        cache.update(traces=traces, h=h)
        return _head_logit(self.head, h), cache

    def score(self, sample: EncodedSample) -> float:
        """Confidence in (0, 1) that the candidate response fits."""
        logit, _ = self._forward(sample)
        return _confidence(logit)

    def loss(self, sample: EncodedSample) -> float:
        return bce_loss(self.score(sample), sample.label)

    def _encoder_backward(self, encoding: _Encoding, grad: np.ndarray, grads: Dict, word_rows: List[SparseRows]) -> None:
        if not encoding.traces:
            return
        if isinstance(self.encoder, RNNParams):
            enc_grads, dxs = rnn_backward(self.encoder, encoding.traces, grad)
        else:
            enc_grads, dxs = lstm_backward(self.encoder, encoding.traces, grad)
        for name, g in enc_grads.blocks().items():
            grads[f"encoder.{name}"] += g
        word_rows.append(SparseRows(self.word_table.matrix.shape, encoding.ids, dxs))

    def loss_and_grads(self, sample: EncodedSample) -> Tuple[float, Dict[str, Union[np.ndarray, SparseRows]]]:
        """
        Binary cross-entropy of one sample and its gradient for every block.

        Embedding gradients are returned as SparseRows.
        """
        logit, cache = self._forward(sample)
        score = _confidence(logit)
        loss = bce_loss(score, sample.label)
        dlogit = score - sample.label

        grads: Dict[str, Union[np.ndarray, SparseRows]] = OrderedDict(
            (name, np.zeros_like(arr)) for name, arr in self.named_blocks().items()
            if name not in ("word_embeddings", "attr_embeddings")
        )
        word_rows: List[SparseRows] = []

        if self.kind in AFFINITY_KINDS:
            context, response = cache["encodings"]
            grads["affinity.M"] += dlogit * np.outer(context.vector, response.vector)
            grads["affinity.b"] += dlogit
            self._encoder_backward(context, dlogit * (self.affinity.M @ response.vector), grads, word_rows)
            self._encoder_backward(response, dlogit * (self.affinity.M.T @ context.vector), grads, word_rows)
        else:
            h = cache["h"]
            grads["head.w"] += dlogit * h
            grads["head.b"] += dlogit
            dh = dlogit * self.head.w
            encodings = cache["encodings"]
            dkb = None
            if self.kind == ModelKind.rlstm:
                back = rlstm_backward(self.cell, cache["traces"], dh)
                for name, g in back.params.blocks().items():
                    grads[f"cell.{name}"] += g
                dvectors, dkb = back.xs, back.kb
            elif self.kind in (ModelKind.lstm, ModelKind.lstm_kb):
                cell_grads, dxs = lstm_backward(self.cell, cache["traces"], dh)
                for name, g in cell_grads.blocks().items():
                    grads[f"cell.{name}"] += g
                if self.kind == ModelKind.lstm_kb:
                    dkb, dvectors = dxs[0], dxs[1:]
                else:
                    dvectors = dxs
            else:
                x = cache["x"]
                da = dh * (1.0 - h ** 2)
                grads["mlp.W"] += np.outer(da, x)
                grads["mlp.b"] += da
                dx = self.mlp.W.T @ da
                S = self.dims.sentence
                if self.kind == ModelKind.mlp_kb:
                    dkb = dx[self.max_turns * S:]
                kept = len(encodings) - cache["dropped"]
                offset = self.max_turns - kept
                dvectors = np.zeros((len(encodings), S), dtype=DTYPE)
                for n in range(kept):
                    slot = offset + n
                    dvectors[cache["dropped"] + n] = dx[slot * S:(slot + 1) * S]
            for encoding, dvec in zip(encodings, dvectors):
                self._encoder_backward(encoding, dvec, grads, word_rows)
            if dkb is not None and self.attr_table.trainable:
                ids = sample.attributes
                grads["attr_embeddings"] = SparseRows(
                    self.attr_table.matrix.shape, ids, np.tile(dkb, (len(ids), 1))
                )

        if self.word_table.trainable:
            rows = SparseRows(self.word_table.matrix.shape, np.zeros(0, dtype=np.int64),
                              np.zeros((0, self.dims.word_embed), dtype=DTYPE))
            for part in word_rows:
                rows = rows + part
            grads["word_embeddings"] = rows
        return loss, grads

    def conversation_input(self, sample: EncodedSample) -> ConversationInput:
        """Encoder outputs and kb vector of a sample, for the pure score functions."""
        vectors = [self._encode_ids(ids).vector for ids in sample.utterances]
        kb = embed_attributes(self.attr_table.matrix, sample.attributes)
        return ConversationInput(utterance_vectors=vectors, kb_vector=kb)


def check_dims(kind: ModelKind, dims: Dims) -> None:
    """
    Raise ConfigurationError when the dims cannot realise the model kind.

    rlstm adds r_t * kb to the cell, so knowledge must equal conversation;
    lstm_kb feeds kb as an input step, so knowledge must equal sentence.
    """
    kind = ModelKind(kind)
    if kind == ModelKind.rlstm and dims.knowledge != dims.conversation:
        raise ConfigurationError(
            f"rlstm needs knowledge dim == conversation dim, got {dims.knowledge} and {dims.conversation}")
    if kind == ModelKind.lstm_kb and dims.knowledge != dims.sentence:
        raise ConfigurationError(
            f"lstm_kb needs knowledge dim == sentence dim, got {dims.knowledge} and {dims.sentence}")
