"""Synthetic data, positive-pair strategies, and (hard) negative sampling.

Negatives are drawn from a finite pool either uniformly or tilted: each
candidate's probability is proportional to a hardening weight of its inner
product with the anchor, self-normalized within the pool. Both hardening
families are multiplicatively separable, so k tilted negatives are drawn
independently from the singly-tilted distribution.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .util import FLOAT_FMT, ConfigurationError

HARDENING_VARIANTS = ("none", "exponential", "polynomial")
NEGATIVE_MODES = ("supervised_exclude", "unsupervised_all")


@dataclass(frozen=True)
class HardeningSpec:
    """Weight w(t) applied to a candidate with anchor inner product t.

    none         w = 1
    exponential  w = e^{beta t},            beta >= 0
    polynomial   w = max(t + 1, 0)^epsilon, epsilon > 0
    """

    variant: str = "none"
    beta: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.variant not in HARDENING_VARIANTS:
            raise ValueError(f"unknown hardening {self.variant!r}; choose from {HARDENING_VARIANTS}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class PositiveStrategy:
    """How the anchor/positive pair is formed.

    label_based     positive drawn uniformly from same-label samples
                    (anchor included); the anchor is the raw sample.
    gaussian_noise  anchor and positive are the reference sample plus two
                    independent N(0, variance I) perturbations.
    """

    kind: str = "label_based"
    variance: float = 0.01

    def __post_init__(self):
        if self.kind not in ("label_based", "gaussian_noise"):
            raise ValueError(f"unknown positive strategy {self.kind!r}")
        if self.variance < 0:
            raise ValueError(f"variance must be nonnegative, got {self.variance}")


@dataclass
class LabeledDataset:
    """Raw samples with 1-based class labels and class priors."""

    samples: np.ndarray
    labels: np.ndarray
    n_classes: int
    priors: np.ndarray = field(default=None)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int)
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError("samples and labels length mismatch")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.n_classes):
            raise ValueError(f"labels must lie in 1..{self.n_classes}")
        if self.priors is None:
            self.priors = np.full(self.n_classes, 1.0 / self.n_classes)
        self.priors = np.asarray(self.priors, dtype=float)
        if self.priors.shape != (self.n_classes,):
            raise ValueError("priors length must equal the class count")
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError(f"priors sum to {self.priors.sum()!r}, expected 1")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def same_label_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]

    def save_csv(self, path) -> None:
        """One row per sample: label first, then features, 17 significant digits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row, label in zip(self.samples, self.labels):
                writer.writerow([int(label)] + [FLOAT_FMT % v for v in row])

    @classmethod
    def load_csv(cls, path, n_classes: int | None = None) -> "LabeledDataset":
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
        labels = raw[:, 0].astype(int)
        c = int(labels.max()) if n_classes is None else int(n_classes)
        return cls(raw[:, 1:], labels, c)


def gen_synthetic(n_classes: int, n_per_class: int, dim: int, seed: int) -> LabeledDataset:
    """Gaussian blobs: per class a Uniform[-1,1]^dim mean, identity covariance."""
    if n_classes < 2 or n_per_class < 1 or dim < 1:
        raise ValueError("need n_classes >= 2, n_per_class >= 1, dim >= 1")
    rng = np.random.default_rng(seed)
    class_centers = rng.uniform(-1.0, 1.0, size=(n_classes, dim))
    samples = np.empty((n_classes * n_per_class, dim))
    labels = np.empty(n_classes * n_per_class, dtype=int)
    for j in range(n_classes):
        block = slice(j * n_per_class, (j + 1) * n_per_class)
        samples[block] = class_centers[j] + rng.standard_normal((n_per_class, dim))
        labels[block] = j + 1
    return LabeledDataset(samples, labels, n_classes)


def hardening_weight(spec: HardeningSpec, t):
    """Nonnegative, non-decreasing weight; vectorized over t."""
    t = np.asarray(t, dtype=float)
    if spec.variant == "none":
        out = np.ones_like(t)
    elif spec.variant == "exponential":
        out = np.exp(spec.beta * t)
    else:
        out = np.maximum(t + 1.0, 0.0) ** spec.epsilon
    return float(out) if out.ndim == 0 else out


def draw_positive(data: LabeledDataset, anchor_index: int, strategy: PositiveStrategy, rng):
    """Return (anchor_vector, positive_vector, latent_label) for one reference."""
    idx = int(anchor_index)
    if not 0 <= idx < len(data):
        raise ValueError(f"anchor index {idx} out of range")
    label = int(data.labels[idx])
    if strategy.kind == "label_based":
        mates = data.same_label_indices(label)
        pos = mates[rng.integers(mates.size)]
        return data.samples[idx].copy(), data.samples[pos].copy(), label
    ref = data.samples[idx]
    std = np.sqrt(strategy.variance)
    anchor = ref + std * rng.standard_normal(ref.shape)
    positive = ref + std * rng.standard_normal(ref.shape)
    return anchor, positive, label


def selection_probabilities(
    spec: HardeningSpec, anchor_emb: np.ndarray, pool_embs: np.ndarray
) -> np.ndarray:
    """Self-normalized tilted probabilities over a candidate pool.

    Exponential weights are computed with the scores shifted by their max,
    which leaves the distribution unchanged and avoids overflow at large beta.
    Falls back to uniform if every weight vanishes (polynomial hardening with
    all scores <= -1), since the tilted distribution is undefined there.
    """
    scores = np.atleast_2d(pool_embs) @ np.asarray(anchor_emb, dtype=float)
    if spec.variant == "exponential":
        weights = np.exp(spec.beta * (scores - scores.max()))
    else:
        weights = hardening_weight(spec, scores)
    total = weights.sum()
    if not np.isfinite(total):
        raise ValueError("non-finite hardening weights over the pool")
    if total <= 0.0:
        return np.full(scores.shape[0], 1.0 / scores.shape[0])
    return weights / total


def eligible_pool(pool_labels, anchor_label, mode: str) -> np.ndarray:
    """Candidate indices for negative draws under the given mode."""
    if mode not in NEGATIVE_MODES:
        raise ValueError(f"unknown negative mode {mode!r}; choose from {NEGATIVE_MODES}")
    y = np.asarray(pool_labels, dtype=int)
    if mode == "unsupervised_all":
        return np.arange(y.size)
    if anchor_label is None:
        raise ValueError("supervised_exclude needs the anchor label")
    return np.nonzero(y != int(anchor_label))[0]


def draw_negatives(
    anchor_emb,
    pool_embs,
    pool_labels,
    anchor_label,
    k: int,
    mode: str,
    hardening: HardeningSpec,
    rng,
) -> np.ndarray:
    """k pool indices, IID with replacement from the tilted pool distribution."""
    pool = np.atleast_2d(np.asarray(pool_embs, dtype=float))
    idx = eligible_pool(pool_labels, anchor_label, mode)
    if idx.size == 0:
        raise ConfigurationError(f"no eligible negatives in mode {mode!r}")
    probs = selection_probabilities(hardening, np.asarray(anchor_emb, dtype=float), pool[idx])
    return idx[rng.choice(idx.size, size=k, replace=True, p=probs)]


def gamma_estimate(anchor_emb, negative_sampler, hardening: HardeningSpec, n_draws: int, rng):
    """Monte-Carlo normalizer: mean product of hardening weights over IID k-tuples.

    ``negative_sampler(rng)`` must return one draw of k negatives as a (k, d)
    array from the reference distribution. Returns (estimate, standard_error).
    """
    if n_draws < 2:
        raise ValueError("need at least 2 draws for a standard error")
    anchor = np.asarray(anchor_emb, dtype=float)
    prods = np.empty(n_draws)
    with np.errstate(over="ignore"):
        for i in range(n_draws):
            negs = np.atleast_2d(np.asarray(negative_sampler(rng), dtype=float))
            prods[i] = np.prod(hardening_weight(hardening, negs @ anchor))
    if not np.all(np.isfinite(prods)):
        raise ValueError("non-finite hardening weights in gamma estimate")
    return float(prods.mean()), float(prods.std(ddof=1) / np.sqrt(n_draws))
