"""Exact t-SNE from 8-D class-style codes to 2-D.

Exact (O(n^2)) t-SNE with the standard published settings: perplexity 30
(clamped to (n-1)/3), 1000 iterations, learning rate 200, early
exaggeration 12 for the first 250 iterations, momentum 0.5 then 0.8,
per-dimension gains with a 0.01 floor.  Entropy targets are in bits and
met by bisection per point.  Initialization is a seeded Gaussian with
standard deviation 1e-4 drawn from the package PRNG, and the whole
optimizer is single-threaded with a fixed summation order, so a fixed
seed yields a bit-identical embedding on a given kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cfseg import _kernels
from cfseg.core import ContractError
from cfseg.rng import SplitMix64

EXAGGERATION_ITERS = 250
MIN_GAIN = 0.01


class EmbeddingError(ContractError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    seed: int = 0
    entropy_tolerance: float = 1e-5
    max_bisection_steps: int = 50
    standardize: bool = False  # per-dimension z-scoring, for external codecs

    def __post_init__(self):
        if self.perplexity <= 0:
            raise EmbeddingError("perplexity must be positive")
        if self.iterations < EXAGGERATION_ITERS:
            raise EmbeddingError(f"iterations must be >= {EXAGGERATION_ITERS}")
        if self.learning_rate <= 0:
            raise EmbeddingError("learning rate must be positive")


@dataclass(frozen=True)
class TsneResult:
    coords: np.ndarray  # (n, 2) float64, ordered as the input
    kl_initial: float
    kl_final: float


def _prepare(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise EmbeddingError(f"input must be (n, d), got shape {x.shape}")
    if x.shape[0] < 4:
        raise EmbeddingError(f"t-SNE needs at least 4 points, got {x.shape[0]}")
    return x


def effective_perplexity(perplexity: float, n: int) -> float:
    return min(perplexity, (n - 1) / 3.0)


def conditional_affinities(x, perplexity: float, tol: float = 1e-5,
                           max_steps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Row-conditional affinities and their achieved entropies in bits."""
    x = _prepare(x)
    d2 = _kernels.pairwise_sq_dists(x)
    if float(d2.max()) == 0.0:
        raise EmbeddingError("degenerate affinities: all points are identical")
    target_bits = math.log2(effective_perplexity(perplexity, x.shape[0]))
    p_cond, _betas, achieved = _kernels.entropy_bisection(
        d2, target_bits, tol, max_steps
    )
    return p_cond, achieved


def pairwise_affinities(x, perplexity: float, tol: float = 1e-5,
                        max_steps: int = 50) -> np.ndarray:
    """Symmetrized joint affinities: nonnegative, zero diagonal, mass 1."""
    p_cond, _ = conditional_affinities(x, perplexity, tol, max_steps)
    n = p_cond.shape[0]
    return (p_cond + p_cond.T) / (2.0 * n)


def kl_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact analytic gradient of KL(P || Q) with respect to Y."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if p.shape[0] != p.shape[1] or p.shape[0] != y.shape[0] or y.shape[1] != 2:
        raise EmbeddingError(f"inconsistent shapes: P {p.shape}, Y {y.shape}")
    _, grad = _kernels.kl_and_grad(p, y)
    return grad


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    kl, _ = _kernels.kl_and_grad(
        np.ascontiguousarray(p, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
    )
    return kl


def tsne_fit(x, cfg: EmbeddingConfig | None = None) -> TsneResult:
    cfg = cfg or EmbeddingConfig()
    x = _prepare(x)
    if cfg.standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0.0] = 1.0
        x = (x - mu) / sd
    n = x.shape[0]
    p = pairwise_affinities(x, cfg.perplexity, cfg.entropy_tolerance,
                            cfg.max_bisection_steps)

    rng = SplitMix64(cfg.seed)
    y = np.empty((n, 2), dtype=np.float64)
    for i in range(n):
        for k in range(2):
            y[i, k] = rng.normal(0.0, 1e-4)

    kl_initial = kl_divergence(p, y)

    update = np.zeros_like(y)
    gains = np.ones_like(y)
    p_run = p * cfg.early_exaggeration
    for it in range(cfg.iterations):
        if it == EXAGGERATION_ITERS:
            p_run = p
        momentum = 0.5 if it < EXAGGERATION_ITERS else 0.8
        _, grad = _kernels.kl_and_grad(p_run, y)
        inc = (update * grad) < 0.0
        gains[inc] += 0.2
        gains[~inc] *= 0.8
        np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - cfg.learning_rate * (gains * grad)
        y = y + update

    kl_final = kl_divergence(p, y)
    return TsneResult(coords=y, kl_initial=kl_initial, kl_final=kl_final)
