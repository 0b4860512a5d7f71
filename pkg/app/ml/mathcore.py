"""
Math Core Module

Dense numeric primitives shared by every learnable module. Vectors and
matrices are float64 numpy arrays (row-major); activations validate their
input so that NaN/Inf never propagates silently through a recurrence.

Features:
- Numerically stable sigmoid and tanh
- Deterministic counter-based random number generator (Philox)
- Central finite-difference gradient oracle
- Relative error as used by every gradient check
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from app.exceptions import NumericDomainError

logger = logging.getLogger(__name__)

DTYPE = np.float64
REL_ERROR_FLOOR = 1e-8


def ensure_finite(x: np.ndarray, name: str = "input") -> np.ndarray:
    """Raise NumericDomainError if any entry of x is NaN or infinite."""
    if not np.all(np.isfinite(x)):
        raise NumericDomainError(f"non-finite value in {name}")
    return x


def sigmoid(x: np.ndarray) -> np.ndarray:
    """
    Elementwise logistic function 1 / (1 + e^-x).

    Both branches avoid overflow: positive entries use the textbook form,
    negative entries use e^x / (1 + e^x).

    Args:
        x: Finite array

    Returns:
        np.ndarray: Activations in (0, 1) (saturating to 1.0 in float64 for x > ~37)

    Raises:
        NumericDomainError: If x contains NaN or Inf
    """
    x = ensure_finite(np.asarray(x, dtype=DTYPE), "sigmoid input")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh_vec(x: np.ndarray) -> np.ndarray:
    """Elementwise hyperbolic tangent; raises NumericDomainError on NaN/Inf."""
    x = ensure_finite(np.asarray(x, dtype=DTYPE), "tanh input")
    return np.tanh(x)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_ERROR_FLOOR) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    h: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Central-difference gradient estimate of a scalar function.

    Args:
        f: Scalar-valued function of a parameter vector
        theta: Point at which the gradient is estimated (never modified)
        h: Step size, must be positive
        coords: Optional subset of flat coordinates to estimate; the
            returned vector then has one entry per listed coordinate

    Returns:
        np.ndarray: (f(theta + h e_i) - f(theta - h e_i)) / (2h) per coordinate

    Raises:
        ValueError: If h is not positive
        NumericDomainError: If f returns a non-finite value
    """
    if h <= 0:
        raise ValueError("finite difference step h must be positive")
    base = np.array(theta, dtype=DTYPE).ravel()
    indices = range(base.size) if coords is None else list(coords)
    grad = np.zeros(len(indices), dtype=DTYPE)
    point = base.copy()
    for n, i in enumerate(indices):
        point[i] = base[i] + h
        plus = float(f(point))
        point[i] = base[i] - h
        minus = float(f(point))
        point[i] = base[i]
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericDomainError(f"function returned a non-finite value at coordinate {i}")
        grad[n] = (plus - minus) / (2.0 * h)
    return grad


class Rng:
    """
    Seeded, platform-independent random number generator.

    Wraps numpy's counter-based Philox bit generator, so a given seed yields
    the same draws on every platform. `derive` builds independent child
    streams from integer keys (per-conversation or per-epoch sub-seeds), which
    keeps parallel and serial builds identical.

    Attributes:
        seed (int): 64-bit unsigned seed
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, *keys: int) -> "Rng":
        """Child generator whose stream depends only on (seed, *keys)."""
        state = np.random.SeedSequence([self.seed, *[int(k) for k in keys]]).generate_state(2, np.uint32)
        return Rng((int(state[0]) << 32) | int(state[1]))

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self) -> float:
        return float(self._gen.random())
