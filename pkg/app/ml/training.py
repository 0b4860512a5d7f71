"""
Training and Evaluation Module

Binary cross-entropy training with validation-based early stopping, and the
Accuracy / Recall@k evaluation over candidate groups.

Features:
- Mini-batch gradient descent, per-sample gradients computed in parallel and
  summed in sample order (results do not depend on the thread count)
- Early stopping: stop when the validation loss of an epoch exceeds the
  previous epoch's and restore the previous epoch's parameters
- Accuracy with score >= 0.5 predicting a positive
- Recall@k with ties broken by input order

Models are duck-typed: anything with `named_blocks()`, `snapshot()`,
`restore()`, `score(sample)`, `loss(sample)` and `loss_and_grads(sample)`.
"""

import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.exceptions import DataContractError, DivergenceError, InputError
from app.ml.mathcore import Rng
from app.ml.optim import accumulate, make_optimizer, scale
from app.schemas import RECALL_INTERPRETATION, EvalReport

logger = logging.getLogger(__name__)

SCORE_CLAMP = 1e-12
RECALL_KS = (1, 2, 3, 5)


def bce_loss(score: float, label: int) -> float:
    """-y ln s - (1 - y) ln(1 - s), with s clamped 1e-12 away from 0 and 1."""
    s = min(max(float(score), SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return -label * math.log(s) - (1 - label) * math.log(1.0 - s)


def worker_count(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)


@dataclass
class TrainingHistory:
    """
    Losses recorded by `train`.

    Attributes:
        train_losses (List[float]): mean training loss per epoch
        valid_losses (List[float]): validation loss per epoch
        best_epoch (int): epoch whose parameters were kept
        stopped_early (bool): True when a validation increase ended training
    """

    train_losses: List[float] = field(default_factory=list)
    valid_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def as_dict(self) -> Dict:
        return {
            "train_losses": self.train_losses,
            "valid_losses": self.valid_losses,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }


def mean_loss(model, samples: Sequence, threads: int = 0) -> float:
    if not samples:
        raise InputError("cannot compute a loss over an empty sample set")
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        losses = list(pool.map(model.loss, samples))
    return float(np.mean(losses))


def batch_gradients(model, batch: Sequence, pool: ThreadPoolExecutor) -> Tuple[float, Dict]:
    """Mean loss and mean gradient of a batch; sums run in sample order."""
    total_loss = 0.0
    total = None
    for loss, grads in pool.map(model.loss_and_grads, batch):
        total_loss += loss
        total = accumulate(total, grads)
    factor = 1.0 / len(batch)
    return total_loss * factor, scale(total, factor)


def train(
    config,
    model,
    samples: Sequence,
    valid_samples: Sequence,
    validation_fn: Optional[Callable[[object, int], float]] = None,
    rng: Optional[Rng] = None,
) -> Tuple[object, TrainingHistory]:
    """
    Train a model until the validation loss rises or max_epochs is reached.

    Args:
        config: TrainConfig (learning_rate, batch_size, max_epochs, optimizer, momentum, threads, seed)
        model: Model to update in place
        samples: Encoded training samples
        valid_samples: Encoded validation samples
        validation_fn: Optional (model, epoch) -> loss override of the validation loss
        rng: Generator for the per-epoch shuffles (derived from config.seed by default)

    Returns:
        Tuple[model, TrainingHistory]: the model holding the kept parameters and its loss history

    Raises:
        InputError: If either sample set is empty
        DivergenceError: If a batch loss is not finite (reports the batch index)
    """
    if not samples or not valid_samples:
        raise InputError("training needs non-empty train and validation sets")
    rng = rng or Rng(config.seed).derive(1)
    optimizer = make_optimizer(config.optimizer, config.learning_rate, config.momentum)
    validation_fn = validation_fn or (lambda m, epoch: mean_loss(m, valid_samples, config.threads))
    history = TrainingHistory()
    previous_loss = None
    previous_snapshot = None
    batch_index = 0

    with ThreadPoolExecutor(max_workers=worker_count(config.threads)) as pool:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.derive(epoch).permutation(len(samples))
            epoch_loss = 0.0
            starts = range(0, len(samples), config.batch_size)
            for start in tqdm(starts, desc=f"epoch {epoch}", unit="batch", disable=None, leave=False):
                batch = [samples[k] for k in order[start:start + config.batch_size]]
                loss, grads = batch_gradients(model, batch, pool)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at batch {batch_index} (epoch {epoch})", batch_index=batch_index)
                optimizer.step(model.named_blocks(), grads)
                logger.debug("epoch %d batch %d loss %.6f", epoch, batch_index, loss)
                epoch_loss += loss * len(batch)
                batch_index += 1

            valid_loss = float(validation_fn(model, epoch))
            history.train_losses.append(epoch_loss / len(samples))
            history.valid_losses.append(valid_loss)
            logger.info("Epoch %d: train loss %.6f, validation loss %.6f",
                        epoch, history.train_losses[-1], valid_loss)
            if previous_loss is not None and valid_loss > previous_loss:
                model.restore(previous_snapshot)
                history.best_epoch = epoch - 1
                history.stopped_early = True
                logger.info("Validation loss rose; keeping the parameters of epoch %d", epoch - 1)
                break
            previous_loss = valid_loss
            previous_snapshot = model.snapshot()
            history.best_epoch = epoch
    return model, history


def group_samples(samples: Sequence, scores: Sequence[float]) -> "OrderedDict[str, List[Tuple[float, int]]]":
    """(score, label) pairs per group, in input order."""
    groups: "OrderedDict[str, List[Tuple[float, int]]]" = OrderedDict()
    for sample, score in zip(samples, scores):
        groups.setdefault(str(sample.group_id), []).append((float(score), int(sample.label)))
    return groups


def positive_rank(members: Sequence[Tuple[float, int]]) -> int:
    """1-based rank of the positive; sorting is stable so earlier candidates win ties."""
    order = sorted(range(len(members)), key=lambda k: -members[k][0])
    for rank, k in enumerate(order, start=1):
        if members[k][1] == 1:
            return rank
    raise DataContractError("group has no positive")


def evaluate_scores(samples: Sequence, scores: Sequence[float]) -> EvalReport:
    """
    Accuracy and Recall@k of precomputed scores.

    Groups of 10 report "1 in 10 R@k" for k in 1, 2, 3, 5 and "1 in 2 R@1"
    over the positive and the first negative of the group. Groups of 2
    report "1 in 2 R@1" directly.

    Raises:
        DataContractError: If a group does not contain exactly one positive (names the group)
    """
    if len(samples) != len(scores):
        raise InputError(f"{len(samples)} samples but {len(scores)} scores")
    if not samples:
        raise InputError("cannot evaluate an empty sample set")
    correct = sum(int((s >= 0.5) == bool(sample.label)) for sample, s in zip(samples, scores))
    groups = group_samples(samples, scores)

    hits: Dict[str, List[int]] = OrderedDict()
    ranks: Dict[str, int] = OrderedDict()
    for group_id, members in groups.items():
        positives = sum(label for _, label in members)
        if positives != 1:
            raise DataContractError(f"group {group_id} has {positives} positives, expected exactly 1", group_id=group_id)
        rank = positive_rank(members)
        ranks[group_id] = rank
        size = len(members)
        if size == 10:
            for k in RECALL_KS:
                hits.setdefault(f"1 in 10 R@{k}", []).append(int(rank <= k))
        if size in (2, 10):
            pos = next(m for m in members if m[1] == 1)
            neg = next(m for m in members if m[1] == 0)
            pair = [pos, neg] if members.index(pos) < members.index(neg) else [neg, pos]
            hits.setdefault("1 in 2 R@1", []).append(int(positive_rank(pair) == 1))
        else:
            for k in RECALL_KS:
                if k <= size:
                    hits.setdefault(f"1 in {size} R@{k}", []).append(int(rank <= k))

    report = EvalReport(
        accuracy=correct / len(samples),
        recall_at={key: float(np.mean(values)) for key, values in hits.items()},
        group_ranks=dict(ranks),
        samples=len(samples),
        groups=len(groups),
    )
    logger.info("Recall headers: %s", RECALL_INTERPRETATION)
    return report


def evaluate(model, samples: Sequence, threads: int = 0) -> EvalReport:
    """Score every sample with the model (in parallel) and evaluate the scores."""
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        scores = list(tqdm(pool.map(model.score, samples), total=len(samples), desc="scoring",
                           unit="sample", disable=None, leave=False))
    return evaluate_scores(samples, scores)
