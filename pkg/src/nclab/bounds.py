"""Closed-form lower bounds on the expected contrastive loss.

With C equiprobable classes and unit-ball representations, the supervised
loss is bounded below by psi evaluated at k copies of -C/(C-1). In the
unsupervised setting a negative can collide with the anchor's latent class
(probability 1/C per slot), zeroing that argument; averaging psi over all
label assignments gives the unsupervised bound. Because every psi variant
here is permutation-symmetric, the C^(k+1)-term average collapses to a
binomial sum over the number of collisions, which is what makes k = 256
tractable. Brute-force enumeration is retained as a cross-check for small
C^(k+1).
"""

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import exp, lgamma, log

import numpy as np

from .losses import LossSpec, psi
from .util import FLOAT_FMT, worker_count

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class BoundResult:
    value: float
    n_classes: int
    k: int
    spec: LossSpec
    method: str


def nc_argument(n_classes: int) -> float:
    """Alignment gap -C/(C-1) of a collapsed class pair at the simplex frame."""
    return -n_classes / (n_classes - 1.0)


def _check_args(n_classes: int, k: int) -> None:
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if k < 1:
        raise ValueError(f"need at least 1 negative, got {k}")


def scl_lower_bound(n_classes: int, k: int, spec: LossSpec) -> BoundResult:
    """Supervised bound: psi at k copies of -C/(C-1)."""
    _check_args(n_classes, k)
    value = psi(spec, np.full(k, nc_argument(n_classes)))
    return BoundResult(value, n_classes, k, spec, "closed_form")


def _psi_with_collisions(n_classes: int, k: int, m: int, spec: LossSpec) -> float:
    t = np.full(k, nc_argument(n_classes))
    t[:m] = 0.0
    return psi(spec, t)


def collision_weights(n_classes: int, k: int) -> np.ndarray:
    """Binomial(k, 1/C) pmf over the number of same-class negatives.

    Coefficients are accumulated in log space so k up to 2^10 stays
    overflow-free.
    """
    log_p, log_q = -log(n_classes), log(n_classes - 1) - log(n_classes)
    return np.array(
        [
            exp(lgamma(k + 1) - lgamma(m + 1) - lgamma(k - m + 1) + m * log_p + (k - m) * log_q)
            for m in range(k + 1)
        ]
    )


def ucl_lower_bound(n_classes: int, k: int, spec: LossSpec, method: str = "binomial") -> BoundResult:
    """Unsupervised bound: average of psi over all C^(k+1) latent label tuples.

    ``binomial`` groups tuples by collision count m ~ Binomial(k, 1/C) using
    the permutation symmetry of psi. ``enumeration`` is the literal sum,
    guarded to C^(k+1) <= 1e6.
    """
    _check_args(n_classes, k)
    c = n_classes
    if method == "binomial":
        weights = collision_weights(c, k)
        value = 0.0
        for m in range(k + 1):
            value += weights[m] * _psi_with_collisions(c, k, m, spec)
    elif method == "enumeration":
        if c ** (k + 1) > ENUMERATION_LIMIT:
            raise ValueError(f"enumeration size {c}^{k + 1} exceeds {ENUMERATION_LIMIT}")
        gap = nc_argument(c)
        total = 0.0
        for labels in itertools.product(range(c), repeat=k + 1):
            anchor = labels[0]
            t = np.array([gap if neg != anchor else 0.0 for neg in labels[1:]])
            total += psi(spec, t)
        value = total / c ** (k + 1)
    else:
        raise ValueError(f"unknown method {method!r}; choose binomial or enumeration")
    return BoundResult(value, c, k, spec, method)


def ucl_lb_closed_form_k1(n_classes: int, spec: LossSpec) -> BoundResult:
    """Single-negative unsupervised bound: (1/C)((C-1) psi(-C/(C-1)) + psi(0))."""
    _check_args(n_classes, 1)
    c = n_classes
    value = ((c - 1) * psi(spec, [nc_argument(c)]) + psi(spec, [0.0])) / c
    return BoundResult(value, c, 1, spec, "closed_form")


@dataclass(frozen=True)
class SweepRow:
    n_classes: int
    k: int
    variant: str
    alpha: float
    scl_bound: float
    ucl_bound: float


def lb_sweep(c_range, k_range, spec: LossSpec) -> list[SweepRow]:
    """Cartesian table of both bounds; rows ordered by (C, k)."""
    pairs = [(int(c), int(k)) for c in c_range for k in k_range]
    if not pairs:
        raise ValueError("empty sweep ranges")

    def row(pair):
        c, k = pair
        return SweepRow(
            c,
            k,
            spec.variant,
            spec.alpha,
            scl_lower_bound(c, k, spec).value,
            ucl_lower_bound(c, k, spec, "binomial").value,
        )

    workers = worker_count(len(pairs))
    if workers <= 1:
        return [row(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(row, pairs))


def monotonicity_violations(rows: list[SweepRow]) -> list[str]:
    """Empirical monotonicity audit of a sweep table.

    The unsupervised bound is proven non-increasing in C only for k = 1; for
    larger k (and for the increase in k) this reports violations instead of
    assuming they cannot happen. Returns human-readable violation strings,
    empty when the table is clean.
    """
    table = {(r.n_classes, r.k): r for r in rows}
    cs = sorted({r.n_classes for r in rows})
    ks = sorted({r.k for r in rows})
    problems = []
    for k in ks:
        for lo, hi in zip(cs, cs[1:]):
            if (lo, k) in table and (hi, k) in table:
                if table[(lo, k)].ucl_bound < table[(hi, k)].ucl_bound:
                    problems.append(f"ucl_bound increased from C={lo} to C={hi} at k={k}")
                if table[(lo, k)].scl_bound > table[(hi, k)].scl_bound + 1e-15:
                    problems.append(f"scl_bound decreased from C={lo} to C={hi} at k={k}")
    for c in cs:
        for lo, hi in zip(ks, ks[1:]):
            if (c, lo) in table and (c, hi) in table:
                if table[(c, hi)].ucl_bound < table[(c, lo)].ucl_bound - 1e-15:
                    problems.append(f"ucl_bound decreased from k={lo} to k={hi} at C={c}")
    return problems


def sweep_to_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["C", "k", "variant", "alpha", "scl_bound", "ucl_bound"])
        for r in rows:
            writer.writerow(
                [r.n_classes, r.k, r.variant, FLOAT_FMT % r.alpha, FLOAT_FMT % r.scl_bound, FLOAT_FMT % r.ucl_bound]
            )
