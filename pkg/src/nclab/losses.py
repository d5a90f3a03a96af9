"""Generalized contrastive loss family.

A per-sample loss scores an anchor z against a positive z+ and k negatives
z-_1..z-_k through an outer function psi applied to the alignment gaps
t_i = z^T (z-_i - z+). Every psi here is convex and argument-wise
non-decreasing:

  infonce_mean  log(alpha + (1/k) sum_i e^{t_i})
  infonce_sum   log(alpha + sum_i e^{t_i})
  triplet       sum_i max(t_i + alpha, 0)

The two InfoNCE forms differ only by the 1/k inside the logarithm; the mean
form is the default because the minibatch loss below averages the k
exponentials. The sum form is kept for callers who want the un-averaged
variant, and the two are NOT interchangeable for k > 1.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .util import ConfigurationError

LOSS_VARIANTS = ("infonce_mean", "infonce_sum", "triplet")


@dataclass(frozen=True)
class LossSpec:
    variant: str = "infonce_mean"
    alpha: float = 1.0

    def __post_init__(self):
        if self.variant not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; choose from {LOSS_VARIANTS}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LossValue:
    value: float
    per_anchor_count: int


def psi_rows(spec: LossSpec, t: np.ndarray) -> np.ndarray:
    """Vectorized outer loss over rows of an (n, k) array of alignment gaps."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    if t.shape[1] < 1:
        raise ValueError("need at least one argument per row")
    if spec.variant == "triplet":
        return np.maximum(t + spec.alpha, 0.0).sum(axis=1)
    shift = t.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(t - shift).sum(axis=1))
    if spec.variant == "infonce_mean":
        lse = lse - np.log(t.shape[1])
    return np.logaddexp(np.log(spec.alpha), lse)


def psi(spec: LossSpec, t) -> float:
    """Outer loss on one vector of k alignment gaps (overflow-safe)."""
    t = np.asarray(t, dtype=float).ravel()
    if t.size < 1:
        raise ValueError("psi needs at least one argument")
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite psi argument")
    return float(psi_rows(spec, t[None, :])[0])


def psi_gradient_rows(spec: LossSpec, t: np.ndarray) -> np.ndarray:
    """d psi / d t_i per row, matching psi_rows. Triplet uses the 0 subgradient at the kink."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    if spec.variant == "triplet":
        return (t + spec.alpha > 0).astype(float)
    shift = t.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(t - shift).sum(axis=1))
    scale = np.log(t.shape[1]) if spec.variant == "infonce_mean" else 0.0
    denom = np.logaddexp(np.log(spec.alpha) + scale, lse)
    return np.exp(t - denom[:, None])


def cl_loss_sample(z, z_pos, z_negs, spec: LossSpec) -> float:
    """Per-sample loss psi(z^T(z-_1 - z+), ..., z^T(z-_k - z+))."""
    z = np.asarray(z, dtype=float)
    z_pos = np.asarray(z_pos, dtype=float)
    negs = np.atleast_2d(np.asarray(z_negs, dtype=float))
    if z.shape != z_pos.shape or negs.shape[1] != z.shape[0]:
        raise ValueError(
            f"dimension mismatch: anchor {z.shape}, positive {z_pos.shape}, negatives {negs.shape}"
        )
    return psi(spec, negs @ z - float(z @ z_pos))


def batch_loss(
    embeddings,
    labels,
    spec: LossSpec,
    negatives_for: Callable[[int, int], Sequence[int]],
    k: int,
) -> LossValue:
    """Minibatch loss: all ordered same-label (anchor, positive) pairs, i = j included.

    ``negatives_for(i, j)`` supplies k indices into ``embeddings`` for the pair;
    each anchor's loss is the mean over its same-label pairs and the batch loss
    is the mean over anchors. Iteration is ascending in i then j, so a seeded
    drawing procedure makes the result reproducible.
    """
    z = np.atleast_2d(np.asarray(embeddings, dtype=float))
    y = np.asarray(labels, dtype=int)
    n = z.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape[0] != n:
        raise ValueError("embeddings and labels length mismatch")
    anchor_losses = np.empty(n)
    for i in range(n):
        mates = np.nonzero(y == y[i])[0]
        pair_losses = np.empty(mates.size)
        for col, j in enumerate(mates):
            try:
                negs = np.asarray(negatives_for(i, int(j)), dtype=int)
            except ConfigurationError as err:
                raise ConfigurationError(f"anchor {i}: {err}") from err
            if negs.shape != (k,):
                raise ValueError(f"negatives_for({i},{j}) returned shape {negs.shape}, wanted ({k},)")
            pair_losses[col] = cl_loss_sample(z[i], z[j], z[negs], spec)
        anchor_losses[i] = pair_losses.mean()
    return LossValue(float(anchor_losses.mean()), n)
