"""Minibatch training loop with per-epoch collapse metrics.

Each epoch shuffles the dataset into disjoint minibatches. Within a batch,
every ordered same-label (anchor, positive) pair contributes a loss term
(anchor = positive included), with k negatives drawn fresh per pair from the
batch pool, uniformly or tilted by the hardening weight of the anchor-negative
inner product. Drawn negative indices are treated as constants by the
gradient. After each epoch the full dataset is embedded and the collapse
metrics of the class means are logged next to the closed-form bound for the
configured setting.
"""

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds
from .encoder import (
    AdamState,
    EncoderParams,
    adam_step,
    backward_raw,
    forward_raw,
    normalize_rows,
    normalize_rows_backward,
)
from .geometry import NormalizationMode, class_means, dc_spectrum, nc_metrics
from .losses import LossSpec
from .sampling import (
    NEGATIVE_MODES,
    HardeningSpec,
    LabeledDataset,
    PositiveStrategy,
    eligible_pool,
    selection_probabilities,
)
from .util import FLOAT_FMT, ConfigurationError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 512
    k: int = 256
    loss: LossSpec = field(default_factory=LossSpec)
    hardening: HardeningSpec = field(default_factory=HardeningSpec)
    normalization: NormalizationMode = NormalizationMode.UNIT_BALL
    positives: PositiveStrategy = field(default_factory=PositiveStrategy)
    negative_mode: str = "supervised_exclude"
    seed: int = 0
    hidden_widths: tuple = (256, 128)
    d_z: int | None = None
    lr: float = 1e-3
    init_from: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "normalization", NormalizationMode(self.normalization))
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch size must be at least 2, got {self.batch_size}")
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.negative_mode not in NEGATIVE_MODES:
            raise ValueError(f"unknown negative mode {self.negative_mode!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    def rep_dim(self, n_classes: int) -> int:
        return (n_classes - 1) if self.d_z is None else int(self.d_z)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normalization"] = self.normalization.value
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    loss: float
    zero_sum: float
    unit_norm: float
    equal_inner_product: float
    dc: np.ndarray
    bound: float


METRICS_FIXED_COLUMNS = ["epoch", "loss", "zero_sum", "unit_norm", "equal_inner_product", "bound"]


def metrics_header(dc_len: int) -> list[str]:
    return METRICS_FIXED_COLUMNS + [f"dc_{i}" for i in range(dc_len)]


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    if not rows:
        raise ValueError("no metrics rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metrics_header(len(rows[0].dc)))
        for r in rows:
            writer.writerow(
                [r.epoch]
                + [FLOAT_FMT % v for v in (r.loss, r.zero_sum, r.unit_norm, r.equal_inner_product, r.bound)]
                + [FLOAT_FMT % v for v in r.dc]
            )


def theoretical_bound(config: TrainConfig, n_classes: int) -> float:
    """Closed-form floor for the configured setting (supervised or not)."""
    if config.negative_mode == "supervised_exclude":
        return bounds.scl_lower_bound(n_classes, config.k, config.loss).value
    return bounds.ucl_lower_bound(n_classes, config.k, config.loss, "binomial").value


@dataclass
class BatchPlan:
    """Everything a gradient step needs, with the randomness already drawn.

    ``inputs`` are the raw vectors to embed (augmented views for the
    gaussian-noise strategy). ``pair_anchor``/``pair_positive`` index embedded
    rows, ``negatives`` holds k embedded-row indices per pair, and
    ``pair_coef`` carries the per-pair averaging weight (sums to 1).
    """

    inputs: np.ndarray
    pool_labels: np.ndarray
    pair_anchor: np.ndarray
    pair_positive: np.ndarray
    negatives: np.ndarray
    pair_coef: np.ndarray


def _embed(params: EncoderParams, x: np.ndarray, mode: NormalizationMode) -> np.ndarray:
    raw, _ = forward_raw(params, x)
    z, _ = normalize_rows(raw, mode)
    return z


def _draw_pair_negatives(z, pool_labels, pair_anchor, offsets, k, config, rng):
    """(P, k) pool indices; pairs must be grouped by anchor (offsets delimit groups).

    Tilted draws use an explicit inverse-CDF lookup instead of rng.choice,
    which is what keeps large-k epochs cheap; with no hardening the draw is a
    plain uniform integer sample over the eligible pool.
    """
    negatives = np.empty((pair_anchor.size, k), dtype=np.int64)
    tilted = config.hardening.variant != "none"
    for group in range(offsets.size - 1):
        lo, hi = offsets[group], offsets[group + 1]
        if lo == hi:
            continue
        anchor = int(pair_anchor[lo])
        pool = eligible_pool(pool_labels, pool_labels[anchor], config.negative_mode)
        if pool.size == 0:
            raise ConfigurationError(f"anchor {anchor} has no eligible negatives")
        if tilted:
            probs = selection_probabilities(config.hardening, z[anchor], z[pool])
            cdf = np.cumsum(probs)
            cdf[-1] = 1.0
            cols = np.searchsorted(cdf, rng.random((hi - lo, k)), side="right")
            negatives[lo:hi] = pool[np.minimum(cols, pool.size - 1)]
        else:
            negatives[lo:hi] = pool[rng.integers(pool.size, size=(hi - lo, k))]
    return negatives


def prepare_batch(params: EncoderParams, x, labels, config: TrainConfig, rng) -> BatchPlan:
    """Draw this batch's pairs, augmented views, and negative indices."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(labels, dtype=int)
    n = x.shape[0]
    if config.positives.kind == "label_based":
        inputs = x
        pool_labels = y
        mates = {c: np.nonzero(y == c)[0] for c in np.unique(y)}
        counts = np.array([mates[c].size for c in y])
        pair_anchor = np.repeat(np.arange(n), counts)
        pair_positive = np.concatenate([mates[c] for c in y])
        pair_coef = np.repeat(1.0 / (n * counts), counts)
        offsets = np.concatenate([[0], np.cumsum(counts)])
    else:
        std = np.sqrt(config.positives.variance)
        anchors = x + std * rng.standard_normal(x.shape)
        positives = x + std * rng.standard_normal(x.shape)
        inputs = np.vstack([anchors, positives])
        pool_labels = np.concatenate([y, y])
        pair_anchor = np.arange(n)
        pair_positive = np.arange(n, 2 * n)
        pair_coef = np.full(n, 1.0 / n)
        offsets = np.arange(n + 1)
    z = _embed(params, inputs, config.normalization)
    negatives = _draw_pair_negatives(z, pool_labels, pair_anchor, offsets, config.k, config, rng)
    return BatchPlan(inputs, pool_labels, pair_anchor, pair_positive, negatives, pair_coef)


def _psi_value_grad(spec: LossSpec, t: np.ndarray):
    """Row-wise psi values and d psi / d t with one shared exp pass."""
    if spec.variant == "triplet":
        shifted = t + spec.alpha
        return np.maximum(shifted, 0.0).sum(axis=1), (shifted > 0).astype(float)
    shift = t.max(axis=1, keepdims=True)
    expt = np.exp(t - shift)
    lse = shift[:, 0] + np.log(expt.sum(axis=1))
    scale = np.log(t.shape[1]) if spec.variant == "infonce_mean" else 0.0
    values = np.logaddexp(np.log(spec.alpha), lse - scale)
    log_denom = np.logaddexp(np.log(spec.alpha) + scale, lse)
    grad = expt * np.exp(shift[:, 0] - log_denom)[:, None]
    return values, grad


def batch_loss_value(params: EncoderParams, plan: BatchPlan, config: TrainConfig) -> float:
    """Loss of a prepared batch; differentiable path only (negatives fixed)."""
    z = _embed(params, plan.inputs, config.normalization)
    gram = z @ z.T
    t = gram[plan.pair_anchor[:, None], plan.negatives] - gram[plan.pair_anchor, plan.pair_positive][:, None]
    values, _ = _psi_value_grad(config.loss, t)
    return float(plan.pair_coef @ values)


def batch_loss_grad(params: EncoderParams, plan: BatchPlan, config: TrainConfig):
    """Loss and reverse-mode gradients w.r.t. all encoder parameters.

    The accumulation avoids per-pair scatter: pair weights are folded into
    anchor-by-negative and anchor-by-positive coupling matrices, so the
    gradient w.r.t. the embeddings is a handful of small matrix products.
    """
    raw, activations = forward_raw(params, plan.inputs)
    z, norms = normalize_rows(raw, config.normalization)
    n_pool = z.shape[0]
    a, j = plan.pair_anchor, plan.pair_positive
    gram = z @ z.T
    t = gram[a[:, None], plan.negatives] - gram[a, j][:, None]
    values, psi_grad = _psi_value_grad(config.loss, t)
    loss = float(plan.pair_coef @ values)
    s = psi_grad * plan.pair_coef[:, None]
    row_sum = s.sum(axis=1)
    neg_coupling = np.bincount(
        (a[:, None] * n_pool + plan.negatives).ravel(), weights=s.ravel(), minlength=n_pool * n_pool
    ).reshape(n_pool, n_pool)
    pos_coupling = np.bincount(
        a * n_pool + j, weights=row_sum, minlength=n_pool * n_pool
    ).reshape(n_pool, n_pool)
    d_z = (neg_coupling + neg_coupling.T - pos_coupling - pos_coupling.T) @ z
    d_raw = normalize_rows_backward(raw, norms, config.normalization, d_z)
    grads_w, grads_b = backward_raw(params, activations, d_raw)
    for layer, (gw, gb) in enumerate(zip(grads_w, grads_b)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ValueError(f"non-finite gradient in layer {layer}")
    return loss, grads_w, grads_b


def batch_gradient(params: EncoderParams, x, labels, config: TrainConfig, rng):
    """Draw a batch plan and differentiate through it (sampling held constant)."""
    plan = prepare_batch(params, x, labels, config, rng)
    return batch_loss_grad(params, plan, config)


@dataclass
class TrainResult:
    params: EncoderParams
    adam_state: AdamState
    metrics: list
    bound: float
    checkpoint_path: str | None = None


def save_checkpoint(path, params: EncoderParams, state: AdamState, config: TrainConfig) -> None:
    arrays = {
        "version": CHECKPOINT_VERSION,
        "widths": np.array(params.widths),
        "step": state.step,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "config_hash": config.digest(),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"weight_{i}"] = w
        arrays[f"bias_{i}"] = b
        arrays[f"adam_mw_{i}"] = state.m_w[i]
        arrays[f"adam_vw_{i}"] = state.v_w[i]
        arrays[f"adam_mb_{i}"] = state.m_b[i]
        arrays[f"adam_vb_{i}"] = state.v_b[i]
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (params, adam_state, meta) from a checkpoint file."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        widths = data["widths"]
        n_layers = widths.size - 1
        params = EncoderParams(
            [data[f"weight_{i}"] for i in range(n_layers)],
            [data[f"bias_{i}"] for i in range(n_layers)],
        )
        state = AdamState(
            step=int(data["step"]),
            m_w=[data[f"adam_mw_{i}"] for i in range(n_layers)],
            v_w=[data[f"adam_vw_{i}"] for i in range(n_layers)],
            m_b=[data[f"adam_mb_{i}"] for i in range(n_layers)],
            v_b=[data[f"adam_vb_{i}"] for i in range(n_layers)],
            lr=float(data["lr"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            eps=float(data["eps"]),
        )
        meta = {"config_hash": str(data["config_hash"]), "version": version}
    return params, state, meta


def _metrics_for(params, data: LabeledDataset, config, epoch, loss, bound) -> MetricsRow:
    z = _embed(params, data.samples, config.normalization)
    means = class_means(z, data.labels, data.n_classes)
    nc = nc_metrics(means)
    dc = dc_spectrum(means)
    return MetricsRow(epoch, loss, nc.zero_sum, nc.unit_norm, nc.equal_inner_product, dc.values, bound)


def train(
    config: TrainConfig,
    data: LabeledDataset,
    checkpoint_path=None,
    metrics_path=None,
) -> TrainResult:
    """Run the full loop: shuffled disjoint minibatches, one Adam step per batch.

    Deterministic for a fixed (config, data): all randomness flows from
    ``config.seed``. With ``init_from`` set, encoder parameters start from the
    checkpoint (the optimizer restarts, since the objective usually changes
    between phases) so a near-collapse model can be trained further under a
    different loss or hardness.
    """
    d_z = config.rep_dim(data.n_classes)
    widths = (data.dim, *config.hidden_widths, d_z)
    if config.init_from:
        params, _, _ = load_checkpoint(config.init_from)
        if params.widths != widths:
            raise ValueError(f"checkpoint widths {params.widths} != configured widths {widths}")
    else:
        params = EncoderParams.init_random(widths, config.seed)
    state = AdamState.init(params, lr=config.lr)
    bound = theoretical_bound(config, data.n_classes)
    rng = np.random.default_rng(config.seed)
    n = len(data)
    rows = []
    if config.epochs == 0:
        plan = prepare_batch(params, data.samples, data.labels, config, rng)
        rows.append(_metrics_for(params, data, config, 0, batch_loss_value(params, plan, config), bound))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads_w, grads_b = batch_gradient(
                params, data.samples[batch], data.labels[batch], config, rng
            )
            params, state = adam_step(state, params, grads_w, grads_b)
            batch_losses.append(loss)
        rows.append(_metrics_for(params, data, config, epoch, float(np.mean(batch_losses)), bound))
    if metrics_path:
        write_metrics_csv(rows, metrics_path)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, state, config)
    return TrainResult(params, state, rows, bound, str(checkpoint_path) if checkpoint_path else None)
