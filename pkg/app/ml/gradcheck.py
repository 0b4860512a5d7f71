"""
Gradient Check Module

Compares the analytic gradients of a model's binary cross-entropy with
central finite differences, block by block, on a small random model.

The error of a coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8);
a block reports its largest coordinate error and a check passes when the
largest error over all blocks is below the tolerance (1e-4).

The checked objective is LOSS_SCALE times the loss. Coordinates whose
gradient lies below the central-difference resolution of an O(1) loss then
meet the 1e-8 floor instead of the rounding noise.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from app.exceptions import InputError
from app.ml.conversation import ConversationModel, EncodedSample
from app.ml.embeddings import Vocabulary
from app.ml.mathcore import DTYPE, Rng, finite_diff_grad, relative_error
from app.ml.optim import densify
from app.schemas import Dims, ModelKind

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
STEP = 1e-5
LOSS_SCALE = 1e-4
CHECK_INIT_SCALE = 0.5
SAMPLED_COORDS = 40
FULL_CHECK_LIMIT = 400
MAX_HIDDEN = 32
MAX_SEQ_LEN = 8


@dataclass
class BlockCheck:
    name: str
    relative_error: float
    coords: int
    worst_coord: int = -1


@dataclass
class GradcheckReport:
    """Outcome of one gradient check."""

    model_kind: str
    seed: int
    tolerance: float
    blocks: List[BlockCheck] = field(default_factory=list)

    @property
    def worst(self) -> Optional[BlockCheck]:
        return max(self.blocks, key=lambda b: b.relative_error, default=None)

    @property
    def max_error(self) -> float:
        return self.worst.relative_error if self.blocks else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def as_dict(self) -> Dict:
        return {
            "model_kind": self.model_kind,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "max_relative_error": self.max_error,
            "worst_block": self.worst.name if self.blocks else None,
            "worst_coord": self.worst.worst_coord if self.blocks else None,
            "passed": self.passed,
            "blocks": {b.name: b.relative_error for b in self.blocks},
        }


def block_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> Tuple[float, int]:
    """Largest elementwise relative error of a block and its position (-1 when empty)."""
    if analytic.size == 0:
        return 0.0, -1
    errors = relative_error(analytic, numeric)
    worst = int(np.argmax(errors))
    return float(errors[worst]), worst


def build_check_case(
    kind,
    seed: int,
    hidden: int = 8,
    seq_len: int = 4,
    vocab_size: int = 12,
    attribute_count: int = 6,
) -> Tuple[ConversationModel, EncodedSample]:
    """
    A random desk-scale model and one random conversation of seq_len utterances.

    All dims equal `hidden` so every kind is realisable. The MLP gets one
    spare slot so its zero padding is exercised.
    """
    if not 1 <= hidden <= MAX_HIDDEN:
        raise InputError(f"gradient check hidden size must be in 1..{MAX_HIDDEN}, got {hidden}")
    if not 2 <= seq_len <= MAX_SEQ_LEN:
        raise InputError(f"gradient check sequence length must be in 2..{MAX_SEQ_LEN}, got {seq_len}")
    rng = Rng(seed)
    dims = Dims(word_embed=hidden, sentence=hidden, knowledge=hidden, conversation=hidden)
    word_vocab = Vocabulary(f"t{n}" for n in range(vocab_size))
    attr_vocab = Vocabulary(f"a{n}" for n in range(attribute_count))
    model = ConversationModel(kind, dims, word_vocab, attr_vocab, rng.derive(1),
                              max_turns=seq_len + 1, init_scale=CHECK_INIT_SCALE)

    draw = rng.derive(4)
    utterances = [draw.integers(0, len(word_vocab), int(draw.integers(1, 4))).astype(np.int64) for _ in range(seq_len)]
    attributes = draw.permutation(len(attr_vocab))[:3].astype(np.int64)
    sample = EncodedSample(
        utterances=utterances,
        context_stream=np.concatenate(utterances[:-1]),
        response=utterances[-1],
        attributes=attributes,
        label=int(draw.integers(0, 2)),
        group_id="gradcheck",
    )
    return model, sample


def gradient_check(
    model: ConversationModel,
    sample: EncodedSample,
    seed: int = 0,
    max_coords: Optional[int] = None,
    h: float = STEP,
    tolerance: float = TOLERANCE,
    corrupt_block: Optional[str] = None,
) -> GradcheckReport:
    """
    Check every trainable block of `model` on `sample`.

    Args:
        model: Model under test (restored to its original values afterwards)
        sample: Encoded sample
        seed: Seed for coordinate sampling
        max_coords: Coordinates per block; None checks every coordinate of
            blocks up to 400 entries and 40 sampled ones of larger blocks
        h: Finite-difference step
        tolerance: Pass threshold on the largest coordinate error
        corrupt_block: Test hook, perturbs the analytic gradient of this block

    Returns:
        GradcheckReport: per-block errors, the worst block and the verdict
    """
    _, grads = model.loss_and_grads(sample)
    grads = {name: LOSS_SCALE * g for name, g in densify(grads).items()}
    blocks = model.named_blocks()
    if corrupt_block is not None:
        if corrupt_block not in blocks:
            raise InputError(f"unknown block {corrupt_block!r}; blocks are {', '.join(blocks)}")
        grads[corrupt_block] = grads[corrupt_block] + 0.1
    rng = Rng(seed).derive(99)
    report = GradcheckReport(model_kind=model.kind.value, seed=seed, tolerance=tolerance)

    for name, arr in tqdm(blocks.items(), desc="gradcheck", unit="block", disable=None, leave=False):
        limit = max_coords if max_coords is not None else (arr.size if arr.size <= FULL_CHECK_LIMIT else SAMPLED_COORDS)
        coords = np.arange(arr.size) if limit >= arr.size else np.sort(rng.permutation(arr.size)[:limit])
        original = arr.copy()

        def loss_at(theta: np.ndarray) -> float:
            arr[...] = theta.reshape(arr.shape)
            return LOSS_SCALE * model.loss(sample)

        try:
            numeric = finite_diff_grad(loss_at, original, h=h, coords=coords)
        finally:
            arr[...] = original
        analytic = np.asarray(grads.get(name, np.zeros_like(arr)), dtype=DTYPE).ravel()[coords]
        error, worst = block_relative_error(analytic, numeric)
        worst_coord = int(coords[worst]) if worst >= 0 else -1
        report.blocks.append(BlockCheck(name=name, relative_error=error, coords=len(coords), worst_coord=worst_coord))
        logger.debug("block %s: %d coords, largest relative error %.3e at %d", name, len(coords), error, worst_coord)

    logger.info("Gradient check %s (seed %d): max relative error %.3e in %s, %s",
                report.model_kind, seed, report.max_error, report.worst.name if report.blocks else "-",
                "pass" if report.passed else "FAIL")
    return report


def run_gradcheck(kind, seed: int, hidden: int = 8, seq_len: int = 4, corrupt_block: Optional[str] = None,
                  max_coords: Optional[int] = None) -> GradcheckReport:
    """Build a random model and sample for `kind` and check it."""
    model, sample = build_check_case(ModelKind(kind), seed, hidden=hidden, seq_len=seq_len)
    return gradient_check(model, sample, seed=seed, corrupt_block=corrupt_block, max_coords=max_coords)
