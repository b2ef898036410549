"""Exact t-SNE (van der Maaten & Hinton 2008).

O(N^2) affinities and gradients, no tree approximation: inputs here are
at most a few thousand rows, where the exact method is tractable and
fully deterministic. The optimizer is the published default: early
exaggeration x12 for 250 iterations, momentum 0.5 switching to 0.8 at
iteration 250, learning rate 200 with per-parameter gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_EARLY = 0.5
MOMENTUM_LATE = 0.8
LEARNING_RATE = 200.0
MIN_GAIN = 0.01
MAX_BISECTION_ITERS = 64
ENTROPY_TOL = 1e-5
_Q_FLOOR = 1e-12


class AffinityConvergenceError(RuntimeError):
    def __init__(self, row: int, achieved: float, target: float):
        self.row = row
        super().__init__(
            f"bandwidth bisection for row {row} did not reach entropy "
            f"{target:.6f} bits after {MAX_BISECTION_ITERS} iterations "
            f"(got {achieved:.6f})"
        )


class GradientBlowupError(RuntimeError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite gradient at iteration {iteration}")


@dataclass
class Embedding:
    coords: np.ndarray
    ids: Optional[list[str]]
    params: dict
    kl: float
    kl_history: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite embedding coordinates")


def _squared_distances(X: np.ndarray) -> np.ndarray:
    s = np.sum(X * X, axis=1)
    D2 = s[:, None] + s[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D2, 0.0)
    return np.maximum(D2, 0.0)


def _row_entropy_bits(d2: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Entropy (bits) and conditional probabilities of one row at
    precision beta = 1/(2 sigma^2). d2 excludes the diagonal entry."""
    logits = -beta * d2
    logits -= logits.max()
    e = np.exp(logits)
    s = e.sum()
    p = e / s
    nz = p > 0
    h = float(-(p[nz] * np.log2(p[nz])).sum())
    return h, p


def pairwise_affinities(X: np.ndarray, perplexity: float = 30.0) -> np.ndarray:
    """Symmetrized joint affinities P = (P_cond + P_cond^T) / 2N with each
    conditional row's entropy tuned to log2(perplexity) +- 1e-5 bits."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    n = X.shape[0]
    if not 1.0 < perplexity < n:
        raise ValueError(f"perplexity must be in (1, {n}), got {perplexity}")
    target = math.log2(perplexity)
    D2 = _squared_distances(X)
    mask = ~np.eye(n, dtype=bool)

    cond = np.zeros((n, n))
    for i in range(n):
        d2 = D2[i][mask[i]]
        beta, lo, hi = 1.0, 0.0, np.inf
        h, p = _row_entropy_bits(d2, beta)
        it = 0
        while abs(h - target) > ENTROPY_TOL:
            it += 1
            if it > MAX_BISECTION_ITERS:
                raise AffinityConvergenceError(i, h, target)
            if h > target:  # too flat: tighten the kernel
                lo = beta
                beta = beta * 2.0 if not np.isfinite(hi) else (lo + hi) / 2.0
            else:
                hi = beta
                beta = (lo + hi) / 2.0
            h, p = _row_entropy_bits(d2, beta)
        cond[i][mask[i]] = p

    P = (cond + cond.T) / (2.0 * n)
    return P


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    """sum p log(p/q) in nats, with 0 log 0 = 0."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.maximum(np.asarray(Q, dtype=np.float64), _Q_FLOOR)
    nz = P > 0
    return float(np.sum(P[nz] * np.log(P[nz] / Q[nz])))


def _student_t_q(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    W = 1.0 / (1.0 + _squared_distances(Y))
    np.fill_diagonal(W, 0.0)
    return W / W.sum(), W


def tsne(
    X: np.ndarray,
    dims: int = 2,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 0,
    ids: Optional[list[str]] = None,
) -> Embedding:
    """Embed rows of X into `dims` dimensions. Deterministic per seed."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 rows, got {n}")
    if ids is not None and len(ids) != n:
        raise ValueError(f"{len(ids)} ids for {n} rows")

    P = pairwise_affinities(X, perplexity)
    nzP = P > 0
    p_log_p = float(np.sum(P[nzP] * np.log(P[nzP])))

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, dims))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history = np.empty(iters)

    for t in range(iters):
        Pt = P * EXAGGERATION if t < EXAGGERATION_ITERS else P
        Q, W = _student_t_q(Y)
        M = (Pt - Q) * W
        grad = 4.0 * (M.sum(axis=1)[:, None] * Y - M @ Y)
        if not np.all(np.isfinite(grad)):
            raise GradientBlowupError(t)

        gains = np.where(np.sign(grad) != np.sign(update), gains + 0.2, gains * 0.8)
        np.maximum(gains, MIN_GAIN, out=gains)
        momentum = MOMENTUM_EARLY if t < EXAGGERATION_ITERS else MOMENTUM_LATE
        update = momentum * update - LEARNING_RATE * gains * grad
        Y = Y + update

        # objective against the true (unexaggerated) affinities, in nats
        logq = np.log(np.maximum(Q, _Q_FLOOR))
        kl_history[t] = p_log_p - float(np.sum(P[nzP] * logq[nzP]))

    return Embedding(
        coords=Y,
        ids=list(ids) if ids is not None else None,
        params={"perplexity": perplexity, "iters": iters, "seed": seed, "dims": dims},
        kl=float(kl_history[-1]) if iters else float("nan"),
        kl_history=kl_history,
    )
