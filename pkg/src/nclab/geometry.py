"""Simplex-frame construction, representation normalization, and collapse metrics.

Class means live in a d x C matrix with one column per class. The target
geometry is the normalized simplex frame: C unit-norm, zero-sum columns whose
pairwise inner products all equal -1/(C-1). Three scalar metrics measure the
distance of a set of class means from that frame, and the normalized singular
spectrum of their covariance measures how many directions the means actually
occupy.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .util import FLOAT_FMT


class NormalizationMode(str, Enum):
    UNIT_BALL = "unit-ball"
    UNIT_SPHERE = "unit-sphere"
    NONE = "none"


@dataclass(frozen=True)
class NcMetrics:
    """Deviation of class means from the normalized simplex frame.

    zero_sum            ||sum_j mu_j||
    unit_norm           (1/C) sum_j | ||mu_j|| - 1 |
    equal_inner_product (1/(C(C-1))) sum_{j != l} | mu_j^T mu_l + 1/(C-1) |

    All three vanish exactly on a normalized simplex frame.
    """

    zero_sum: float
    unit_norm: float
    equal_inner_product: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.zero_sum, self.unit_norm, self.equal_inner_product)


@dataclass(frozen=True)
class DcSpectrum:
    """Singular values of the class-mean covariance, scaled by the largest.

    ``values`` is descending with values[0] == 1 unless ``degenerate`` is set,
    in which case all means coincided and the spectrum is reported as zeros.
    """

    values: np.ndarray
    degenerate: bool


def orthogonal_matrix(dim: int, seed: int) -> np.ndarray:
    """Deterministic random orthogonal matrix (QR of a Gaussian, signs fixed)."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _zero_sum_basis(n: int) -> np.ndarray:
    """Orthonormal rows spanning the hyperplane orthogonal to the all-ones vector."""
    basis = np.zeros((n - 1, n))
    for i in range(1, n):
        scale = 1.0 / np.sqrt(i * (i + 1))
        basis[i - 1, :i] = scale
        basis[i - 1, i] = -i * scale
    return basis


def make_etf(n_classes: int, dim: int, rotation_seed: int | None = None) -> np.ndarray:
    """Build the d x C normalized simplex frame.

    Starts from sqrt(C/(C-1)) (I - J/C), projects onto C-1 orthonormal
    directions of its column space, embeds into R^dim, and applies an
    orthogonal rotation drawn from ``rotation_seed`` whenever one is given or
    the frame does not fill the space (dim > C-1).
    """
    c = int(n_classes)
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    if dim < c - 1:
        raise ValueError(f"dimension {dim} too small for {c} classes (need >= {c - 1})")
    centered = np.sqrt(c / (c - 1.0)) * (np.eye(c) - np.ones((c, c)) / c)
    frame = _zero_sum_basis(c) @ centered
    means = np.zeros((dim, c))
    means[: c - 1] = frame
    if rotation_seed is not None or dim > c - 1:
        rotation = orthogonal_matrix(dim, 0 if rotation_seed is None else rotation_seed)
        means = rotation @ means
    return means


def normalize(z: np.ndarray, mode: NormalizationMode | str, dim: int | None = None) -> np.ndarray:
    """Map a representation into the unit ball / onto the unit sphere / scale by 1/sqrt(dim).

    unit-ball leaves vectors with norm <= 1 untouched (ties use the identity
    branch) and rescales the rest onto the sphere. The "none" mode still
    divides by sqrt(dim) so that inner products stay O(1).
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite representation")
    mode = NormalizationMode(mode)
    if mode is NormalizationMode.UNIT_BALL:
        norm = np.linalg.norm(z)
        return z if norm <= 1.0 else z / norm
    if mode is NormalizationMode.UNIT_SPHERE:
        norm = np.linalg.norm(z)
        if norm < 1e-30:
            raise ValueError("cannot project a (near-)zero vector onto the unit sphere")
        return z / norm
    d = z.size if dim is None else dim
    return z / np.sqrt(d)


def class_means(embeddings, labels, n_classes: int) -> np.ndarray:
    """Per-class arithmetic means as a d x C matrix; labels are 1-based."""
    z = np.asarray(embeddings, dtype=float)
    if z.ndim != 2:
        z = np.atleast_2d(z)
    y = np.asarray(labels, dtype=int)
    c = int(n_classes)
    if y.shape[0] != z.shape[0]:
        raise ValueError("embeddings and labels length mismatch")
    if y.min(initial=c) < 1 or y.max(initial=1) > c:
        raise ValueError(f"labels must lie in 1..{c}")
    counts = np.bincount(y, minlength=c + 1)[1:]
    empty = [int(j + 1) for j in np.nonzero(counts == 0)[0]]
    if empty:
        raise ValueError(f"empty classes: {empty}")
    sums = np.zeros((c, z.shape[1]))
    np.add.at(sums, y - 1, z)
    return (sums / counts[:, None]).T


def nc_metrics(means: np.ndarray) -> NcMetrics:
    """Distance of class-mean columns from the normalized simplex frame."""
    m = np.asarray(means, dtype=float)
    c = m.shape[1]
    if c < 2:
        raise ValueError("need at least 2 class means")
    zero_sum = float(np.linalg.norm(m.sum(axis=1)))
    norms = np.linalg.norm(m, axis=0)
    unit_norm = float(np.abs(norms - 1.0).mean())
    gram = m.T @ m
    off = ~np.eye(c, dtype=bool)
    equal_ip = float(np.abs(gram[off] + 1.0 / (c - 1)).sum() / (c * (c - 1)))
    return NcMetrics(zero_sum, unit_norm, equal_ip)


def dc_spectrum(means: np.ndarray) -> DcSpectrum:
    """Normalized singular values of the class-mean covariance (divisor C)."""
    m = np.asarray(means, dtype=float)
    c = m.shape[1]
    if c < 2:
        raise ValueError("need at least 2 class means")
    centered = (m - m.mean(axis=1, keepdims=True)) / np.sqrt(c)
    sv = np.linalg.svd(centered, compute_uv=False)
    cov_sv = sv * sv
    top = cov_sv[0]
    if top <= 1e-30:
        return DcSpectrum(np.zeros_like(cov_sv), degenerate=True)
    return DcSpectrum(cov_sv / top, degenerate=False)


def save_class_means(means: np.ndarray, path) -> None:
    """One row per dimension, one column per class, headerless CSV."""
    np.savetxt(path, np.asarray(means, dtype=float), delimiter=",", fmt=FLOAT_FMT)


def load_class_means(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
