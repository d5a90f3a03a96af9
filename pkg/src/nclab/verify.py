"""Numerical verification of the inequality and optimality claims.

Wherever a finite support makes it possible, expectations are enumerated
exactly so an inequality check is a deterministic comparison; otherwise
Monte-Carlo estimates with standard errors are used and an inequality is
accepted when it holds within three combined standard errors. Comparisons of
exact quantities carry a 1e-12 float-dust allowance.
"""

from dataclasses import dataclass

import numpy as np

from .bounds import ENUMERATION_LIMIT, collision_weights, scl_lower_bound, ucl_lower_bound
from .geometry import make_etf
from .losses import LossSpec, batch_loss, psi, psi_rows
from .sampling import (
    HardeningSpec,
    draw_negatives,
    eligible_pool,
    hardening_weight,
    selection_probabilities,
)
from .util import ConfigurationError

THEOREM1_SETTINGS = {"SCL_vs_HSCL": "supervised_exclude", "UCL_vs_HUCL": "unsupervised_all"}
EXACT_TIE_TOL = 1e-12


@dataclass(frozen=True)
class InequalityReport:
    """Estimated lhs >= rhs comparison with Monte-Carlo (or zero) uncertainty."""

    lhs_estimate: float
    rhs_estimate: float
    lhs_stderr: float
    rhs_stderr: float
    n_draws: int
    holds_within_3se: bool

    @property
    def passed(self) -> bool:
        return self.holds_within_3se

    def summary(self) -> dict:
        return {
            "lhs_estimate": self.lhs_estimate,
            "rhs_estimate": self.rhs_estimate,
            "lhs_stderr": self.lhs_stderr,
            "rhs_stderr": self.rhs_stderr,
            "n_draws": self.n_draws,
            "holds_within_3se": self.holds_within_3se,
        }


def _report(lhs, lhs_se, rhs, rhs_se, n_draws) -> InequalityReport:
    margin = 3.0 * np.hypot(lhs_se, rhs_se) + EXACT_TIE_TOL
    return InequalityReport(
        float(lhs), float(rhs), float(lhs_se), float(rhs_se), int(n_draws),
        bool(lhs - rhs >= -margin),
    )


def _hardening_or_none(hardening: HardeningSpec | None) -> HardeningSpec:
    return hardening if hardening is not None else HardeningSpec()


def _mc_expected_loss(z, labels, mode, hardening, spec, k, n_mc, seed):
    """Monte-Carlo expected loss over the empirical table distribution.

    Anchor uniform; positive uniform among same-label rows (anchor included);
    negatives IID from the (tilted) eligible pool of the anchor.
    """
    rng = np.random.default_rng(seed)
    n = z.shape[0]
    gram = z @ z.T
    anchors = rng.integers(n, size=n_mc)
    positives = np.empty(n_mc, dtype=np.int64)
    for label in np.unique(labels):
        rows = np.nonzero(labels[anchors] == label)[0]
        mates = np.nonzero(labels == label)[0]
        positives[rows] = mates[rng.integers(mates.size, size=rows.size)]
    negatives = np.empty((n_mc, k), dtype=np.int64)
    for i in range(n):
        rows = np.nonzero(anchors == i)[0]
        if rows.size == 0:
            continue
        pool = eligible_pool(labels, labels[i], mode)
        if pool.size == 0:
            raise ConfigurationError(f"anchor {i} has no eligible negatives")
        probs = selection_probabilities(hardening, z[i], z[pool])
        negatives[rows] = pool[rng.choice(pool.size, size=(rows.size, k), replace=True, p=probs)]
    t = gram[anchors[:, None], negatives] - gram[anchors, positives][:, None]
    values = psi_rows(spec, t)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_mc))


def exact_expected_loss(z, labels, mode, spec, k, hardening: HardeningSpec | None = None) -> float:
    """Exact expected loss by enumerating every (anchor, positive, k-tuple).

    Feasible when pool_size**k <= 1e6 per anchor. A separable hardening tilts
    each of the k slots independently, so the tuple distribution is the
    product of singly-tilted pool distributions.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    labels = np.asarray(labels, dtype=int)
    hardening = _hardening_or_none(hardening)
    n = z.shape[0]
    gram = z @ z.T
    total = 0.0
    for i in range(n):
        pool = eligible_pool(labels, labels[i], mode)
        if pool.size == 0:
            raise ConfigurationError(f"anchor {i} has no eligible negatives")
        if pool.size**k > ENUMERATION_LIMIT:
            raise ValueError(f"enumeration size {pool.size}^{k} exceeds {ENUMERATION_LIMIT}")
        probs = selection_probabilities(hardening, z[i], z[pool])
        grid = np.stack(
            np.meshgrid(*([np.arange(pool.size)] * k), indexing="ij"), axis=-1
        ).reshape(-1, k)
        tuple_probs = probs[grid].prod(axis=1)
        scores = gram[i, pool[grid]]
        mates = np.nonzero(labels == labels[i])[0]
        anchor_total = 0.0
        for mate in mates:
            anchor_total += tuple_probs @ psi_rows(spec, scores - gram[i, mate])
        total += anchor_total / mates.size
    return total / n


def check_theorem1(
    embeddings,
    labels,
    setting: str,
    hardening: HardeningSpec,
    spec: LossSpec,
    k: int,
    n_mc: int = 4000,
    seed: int = 0,
    method: str = "mc",
) -> InequalityReport:
    """Hardened expected loss >= plain expected loss over an embedding table.

    ``method="mc"`` estimates both sides from the same seed (so zero tilt
    reproduces the plain sampler draw-for-draw); ``method="exact"`` enumerates
    both sides when the pools are small enough and reports zero stderr.
    """
    if setting not in THEOREM1_SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; choose from {sorted(THEOREM1_SETTINGS)}")
    if hardening is None or hardening.variant == "none":
        raise ValueError("hardening must be a non-trivial spec (zero tilt is exponential beta=0)")
    mode = THEOREM1_SETTINGS[setting]
    z = np.atleast_2d(np.asarray(embeddings, dtype=float))
    y = np.asarray(labels, dtype=int)
    if method == "mc":
        if n_mc < 1000:
            raise ValueError(f"need at least 1000 draws, got {n_mc}")
        lhs, lhs_se = _mc_expected_loss(z, y, mode, hardening, spec, k, n_mc, seed)
        rhs, rhs_se = _mc_expected_loss(z, y, mode, HardeningSpec(), spec, k, n_mc, seed)
        return _report(lhs, lhs_se, rhs, rhs_se, n_mc)
    if method == "exact":
        lhs = exact_expected_loss(z, y, mode, spec, k, hardening)
        rhs = exact_expected_loss(z, y, mode, spec, k, None)
        return _report(lhs, 0.0, rhs, 0.0, 0)
    raise ValueError(f"unknown method {method!r}; choose mc or exact")


def check_harris(weight_fn, payoff_fn, base_values, base_probs, k: int) -> InequalityReport:
    """Tilted expectation of a monotone payoff >= plain expectation, exactly.

    ``weight_fn`` and ``payoff_fn`` map an (n, k) array of support points to n
    values; the base distribution has finite support ``base_values`` with
    probabilities ``base_probs``. All expectations are enumerated over
    support**k tuples.
    """
    values = np.asarray(base_values, dtype=float)
    probs = np.asarray(base_probs, dtype=float)
    if values.shape != probs.shape or values.ndim != 1:
        raise ValueError("support values and probabilities must be matching vectors")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("base probabilities must be nonnegative and sum to 1")
    m = values.size
    if m**k > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration size {m}^{k} exceeds {ENUMERATION_LIMIT}")
    grid = np.stack(np.meshgrid(*([np.arange(m)] * k), indexing="ij"), axis=-1).reshape(-1, k)
    tuple_probs = probs[grid].prod(axis=1)
    u = values[grid]
    eta = np.asarray(weight_fn(u), dtype=float)
    g = np.asarray(payoff_fn(u), dtype=float)
    if np.any(eta < 0):
        raise ValueError("weight function must be nonnegative")
    gamma = tuple_probs @ eta
    if not (np.isfinite(gamma) and gamma > 0):
        raise ValueError(f"weight normalizer must be positive and finite, got {gamma}")
    lhs = (tuple_probs * eta) @ g / gamma
    rhs = tuple_probs @ g
    return _report(lhs, 0.0, rhs, 0.0, m**k)


@dataclass(frozen=True)
class NcOptimalityReport:
    achieved_loss: float
    bound: float
    gap: float
    n_classes: int
    k: int
    setting: str
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return abs(self.gap) <= self.tolerance

    def summary(self) -> dict:
        return {
            "achieved_loss": self.achieved_loss,
            "bound": self.bound,
            "gap": self.gap,
            "tolerance": self.tolerance,
        }


def check_nc_optimality(n_classes: int, k: int, spec: LossSpec, setting: str = "SCL") -> NcOptimalityReport:
    """Loss of the collapsed encoder (class j -> frame column j) vs the bound.

    The achieved loss is computed from the inner products of the actually
    constructed frame, collapsed over label tuples by collision count; the
    bound uses the exact -C/(C-1) constants, so the gap measures both the
    frame construction and the bound formula at once.
    """
    if setting not in ("SCL", "UCL"):
        raise ValueError(f"unknown setting {setting!r}; choose SCL or UCL")
    means = make_etf(n_classes, n_classes - 1)
    gram = means.T @ means
    c = n_classes
    per_class = np.empty(c)
    weights = collision_weights(c, k) if setting == "UCL" else None
    for y in range(c):
        cross = (gram[y].sum() - gram[y, y]) / (c - 1) - gram[y, y]
        if setting == "SCL":
            per_class[y] = psi(spec, np.full(k, cross))
        else:
            acc = 0.0
            for m in range(k + 1):
                t = np.full(k, cross)
                t[:m] = 0.0
                acc += weights[m] * psi(spec, t)
            per_class[y] = acc
    achieved = float(per_class.mean())
    if setting == "SCL":
        bound = scl_lower_bound(c, k, spec).value
    else:
        bound = ucl_lower_bound(c, k, spec, "binomial").value
    return NcOptimalityReport(achieved, bound, achieved - bound, c, k, setting)


@dataclass(frozen=True)
class BatchedEqualityReport:
    batched_loss: float
    bound: float
    gap: float
    batch_losses: tuple
    batch_sizes: tuple
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return abs(self.gap) <= self.tolerance

    def summary(self) -> dict:
        return {
            "batched_loss": self.batched_loss,
            "bound": self.bound,
            "gap": self.gap,
            "batch_losses": list(self.batch_losses),
            "batch_sizes": list(self.batch_sizes),
            "tolerance": self.tolerance,
        }


def check_batched_equality(
    n_classes: int, per_class: int, batch_sizes, k: int, spec: LossSpec, seed: int = 0
) -> BatchedEqualityReport:
    """Batched empirical supervised loss of the collapsed encoder vs the bound.

    A class-balanced dataset (labels interleaved round-robin) is split into
    the given disjoint batches of possibly unequal size; the overall loss is
    the sample-weighted mean of per-batch losses, which at collapse must equal
    psi at k copies of -C/(C-1) no matter how uneven the partition is.
    """
    sizes = [int(b) for b in batch_sizes]
    n = n_classes * per_class
    if any(b < 1 for b in sizes) or sum(sizes) != n:
        raise ConfigurationError(f"batch sizes {sizes} do not partition {n} samples")
    labels = (np.arange(n) % n_classes) + 1
    means = make_etf(n_classes, n_classes - 1)
    z = means[:, labels - 1].T
    rng = np.random.default_rng(seed)
    batch_values = []
    offset = 0
    for size in sizes:
        zb = z[offset : offset + size]
        yb = labels[offset : offset + size]
        offset += size

        def negatives_for(i, _j, zb=zb, yb=yb):
            return draw_negatives(zb[i], zb, yb, yb[i], k, "supervised_exclude", HardeningSpec(), rng)

        batch_values.append(batch_loss(zb, yb, spec, negatives_for, k).value)
    overall = float(np.dot(sizes, batch_values) / n)
    bound = scl_lower_bound(n_classes, k, spec).value
    return BatchedEqualityReport(
        overall, bound, overall - bound, tuple(batch_values), tuple(sizes)
    )


def importance_weighted_loss(z, labels, mode, hardening, spec, k, n_mc, seed):
    """Hardened expected loss via plain IID draws reweighted by the tilt.

    The weight of a drawn tuple is its hardening product divided by the exact
    per-anchor pool normalizer (the finite-pool reference makes that
    normalizer computable in closed form for a separable tilt), which gives an
    unbiased route to the tilted-sampler estimate.
    """
    rng = np.random.default_rng(seed)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    labels = np.asarray(labels, dtype=int)
    n = z.shape[0]
    gram = z @ z.T
    anchors = rng.integers(n, size=n_mc)
    positives = np.empty(n_mc, dtype=np.int64)
    for label in np.unique(labels):
        rows = np.nonzero(labels[anchors] == label)[0]
        mates = np.nonzero(labels == label)[0]
        positives[rows] = mates[rng.integers(mates.size, size=rows.size)]
    negatives = np.empty((n_mc, k), dtype=np.int64)
    log_weight = np.zeros(n_mc)
    with np.errstate(divide="ignore"):
        for i in range(n):
            rows = np.nonzero(anchors == i)[0]
            if rows.size == 0:
                continue
            pool = eligible_pool(labels, labels[i], mode)
            if pool.size == 0:
                raise ConfigurationError(f"anchor {i} has no eligible negatives")
            gamma_1 = float(np.mean(hardening_weight(hardening, gram[i, pool])))
            if not (np.isfinite(gamma_1) and gamma_1 > 0):
                raise ValueError(f"anchor {i}: degenerate tilt normalizer {gamma_1}")
            uniform = np.full(pool.size, 1.0 / pool.size)
            draws = pool[rng.choice(pool.size, size=(rows.size, k), replace=True, p=uniform)]
            negatives[rows] = draws
            log_weight[rows] = (
                np.log(hardening_weight(hardening, gram[i, draws])).sum(axis=1)
                - k * np.log(gamma_1)
            )
    t = gram[anchors[:, None], negatives] - gram[anchors, positives][:, None]
    weighted = np.exp(log_weight) * psi_rows(spec, t)
    return float(weighted.mean()), float(weighted.std(ddof=1) / np.sqrt(n_mc))
