"""Dense numeric primitives: initializers, the AdaGrad optimizer, and a
finite-difference gradient oracle used by tests."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

# Initialization scales for embedding tables and dense layers.
EMBED_INIT_STD = 1e-3
UNIFORM_INIT_SCALE = 0.036

ADAGRAD_LEARNING_RATE = 0.03
ADAGRAD_EPSILON = 1e-6


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit seed derived from a base seed and a purpose label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a base seed.

    Every consumer of randomness pulls from its own substream so that adding
    or removing one consumer never shifts the draws of another.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, key)))


def init_embedding_table(rows: int, dim: int, rng: np.random.Generator,
                         std: float = EMBED_INIT_STD) -> np.ndarray:
    """Embedding table with i.i.d. Normal(0, std) entries."""
    if rows <= 0 or dim <= 0:
        raise ValueError(f"embedding table needs positive dims, got {rows}x{dim}")
    return rng.normal(0.0, std, size=(rows, dim))


def init_dense_layer(in_dim: int, out_dim: int, rng: np.random.Generator,
                     scale: float = UNIFORM_INIT_SCALE) -> tuple[np.ndarray, np.ndarray]:
    """Dense layer init: weights uniform in +-scale*sqrt(3)/sqrt(in_dim), zero bias.

    `scale` is exposed as a knob; the default is applied verbatim.
    """
    if in_dim <= 0 or out_dim <= 0:
        raise ValueError(f"dense layer needs positive dims, got {in_dim}->{out_dim}")
    bound = scale * math.sqrt(3.0) / math.sqrt(in_dim)
    weights = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    bias = np.zeros(out_dim)
    return weights, bias


@dataclass
class AdaGradState:
    """Per-tensor accumulated squared gradients plus step hyperparameters."""

    accumulator: np.ndarray
    learning_rate: float = ADAGRAD_LEARNING_RATE
    epsilon: float = ADAGRAD_EPSILON

    @classmethod
    def like(cls, param: np.ndarray, learning_rate: float = ADAGRAD_LEARNING_RATE,
             epsilon: float = ADAGRAD_EPSILON) -> "AdaGradState":
        return cls(np.zeros_like(param), learning_rate, epsilon)


def adagrad_step(param: np.ndarray, grad: np.ndarray, state: AdaGradState) -> np.ndarray:
    """One AdaGrad update, in place: acc += g^2; p -= lr * g / (sqrt(acc) + eps).

    The accumulator is updated before the step. Rows with zero gradient are
    left untouched, which is what makes dense updates correct for sparsely
    used embedding rows.
    """
    if param.shape != grad.shape or param.shape != state.accumulator.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"accumulator {state.accumulator.shape}")
    state.accumulator += grad * grad
    param -= state.learning_rate * grad / (np.sqrt(state.accumulator) + state.epsilon)
    return param


def finite_difference_gradient(loss_fn, params: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar loss, one coordinate at a time.

    Testing oracle only; O(2n) loss evaluations.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = np.asarray(params, dtype=float)
    grad = np.zeros_like(params)
    for idx in np.ndindex(params.shape):
        bumped = params.copy()
        bumped[idx] = params[idx] + eps
        hi = loss_fn(bumped)
        bumped[idx] = params[idx] - eps
        lo = loss_fn(bumped)
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad
