"""
Optimiser Module

Parameter updates for the training loop. Parameters and gradients are
name -> array mappings; embedding-table gradients may arrive as SparseRows
(only the rows a sample touched), which keeps per-sample gradients small for
large vocabularies.

Features:
- sgd_update: theta <- theta - lr * g for every block, in place
- Momentum and AdaGrad variants behind configuration
- Helpers to accumulate and scale gradient mappings
"""

from dataclasses import dataclass
from typing import Dict, Mapping, MutableMapping, Optional, Sequence, Union

import numpy as np

from app.exceptions import ShapeError


@dataclass
class SparseRows:
    """
    Row-sparse gradient of a matrix.

    Attributes:
        shape (tuple): shape of the dense matrix
        ids (np.ndarray): row indices (may repeat)
        values (np.ndarray): len(ids) x cols row gradients
    """

    shape: tuple
    ids: np.ndarray
    values: np.ndarray

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=np.float64)
        if len(self.ids):
            np.add.at(dense, self.ids, self.values)
        return dense

    def __add__(self, other: "SparseRows") -> "SparseRows":
        return SparseRows(self.shape, np.concatenate([self.ids, other.ids]),
                          np.concatenate([self.values, other.values]))

    def scaled(self, factor: float) -> "SparseRows":
        return SparseRows(self.shape, self.ids, self.values * factor)


Gradient = Union[np.ndarray, SparseRows]


def _grad_shape(grad: Gradient) -> tuple:
    return grad.shape if isinstance(grad, SparseRows) else np.shape(grad)


def check_shapes(params: Mapping[str, np.ndarray], grads: Mapping[str, Gradient]) -> None:
    """Raise ShapeError naming the first block whose gradient does not match."""
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown block {name}")
        if tuple(_grad_shape(grad)) != tuple(params[name].shape):
            raise ShapeError(f"block {name}: parameter shape {params[name].shape}, gradient shape {_grad_shape(grad)}")


def sgd_update(params: MutableMapping[str, np.ndarray], grads: Mapping[str, Gradient], learning_rate: float):
    """
    Plain gradient descent step, applied in place.

    Args:
        params: Live parameter arrays by block name
        grads: Gradients by block name (dense or SparseRows)
        learning_rate: Step size

    Returns:
        The same params mapping, updated

    Raises:
        ShapeError: If a gradient does not match its block (names the block)
    """
    check_shapes(params, grads)
    for name, grad in grads.items():
        if isinstance(grad, SparseRows):
            sgd_update_rows(params[name], grad.ids, grad.values, learning_rate)
        else:
            params[name] -= learning_rate * grad
    return params


def sgd_update_rows(matrix: np.ndarray, ids: Sequence[int], row_grads: np.ndarray, learning_rate: float) -> None:
    """In-place SGD on selected rows; repeated ids accumulate."""
    if len(ids):
        np.subtract.at(matrix, np.asarray(ids), learning_rate * np.asarray(row_grads))


def accumulate(total: Optional[Dict[str, Gradient]], grads: Mapping[str, Gradient]) -> Dict[str, Gradient]:
    """Sum gradient mappings key by key, in call order."""
    if total is None:
        return {name: (g if isinstance(g, SparseRows) else g.copy()) for name, g in grads.items()}
    for name, grad in grads.items():
        if name not in total:
            total[name] = grad if isinstance(grad, SparseRows) else grad.copy()
        elif isinstance(grad, SparseRows):
            total[name] = total[name] + grad
        else:
            total[name] += grad
    return total


def scale(grads: Mapping[str, Gradient], factor: float) -> Dict[str, Gradient]:
    return {name: (g.scaled(factor) if isinstance(g, SparseRows) else g * factor) for name, g in grads.items()}


def densify(grads: Mapping[str, Gradient]) -> Dict[str, np.ndarray]:
    return {name: (g.to_dense() if isinstance(g, SparseRows) else g) for name, g in grads.items()}


class Optimizer:
    """Base optimiser: plain SGD."""

    name = "sgd"

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: MutableMapping[str, np.ndarray], grads: Mapping[str, Gradient]):
        return sgd_update(params, grads, self.learning_rate)


class Momentum(Optimizer):
    """Heavy-ball momentum: v <- mu v + g; theta <- theta - lr v."""

    name = "momentum"

    def __init__(self, learning_rate: float, momentum: float = 0.9):
        super().__init__(learning_rate)
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params, grads):
        check_shapes(params, grads)
        for name, grad in densify(grads).items():
            v = self.velocity.setdefault(name, np.zeros_like(params[name]))
            v *= self.momentum
            v += grad
            params[name] -= self.learning_rate * v
        return params


class AdaGrad(Optimizer):
    """Per-coordinate step size lr / sqrt(sum of squared gradients + eps)."""

    name = "adagrad"

    def __init__(self, learning_rate: float, eps: float = 1e-8):
        super().__init__(learning_rate)
        self.eps = eps
        self.history: Dict[str, np.ndarray] = {}

    def step(self, params, grads):
        check_shapes(params, grads)
        for name, grad in densify(grads).items():
            acc = self.history.setdefault(name, np.zeros_like(params[name]))
            acc += grad ** 2
            params[name] -= self.learning_rate * grad / np.sqrt(acc + self.eps)
        return params


def make_optimizer(name: str, learning_rate: float, momentum: float = 0.9) -> Optimizer:
    if name == "sgd":
        return Optimizer(learning_rate)
    if name == "momentum":
        return Momentum(learning_rate, momentum)
    if name == "adagrad":
        return AdaGrad(learning_rate)
    raise ValueError(f"unknown optimizer: {name}")
