"""Feed-forward encoder with hand-written reverse-mode gradients and Adam.

Hidden layers are rectifier units, the output layer is affine, and the
representation is passed through one of the normalization modes before the
loss. No autograd framework is involved: the backward pass mirrors the
forward pass exactly, including the piecewise branches of unit-ball
normalization (rows with norm <= 1 use the identity branch).
"""

from dataclasses import dataclass

import numpy as np

from .geometry import NormalizationMode, normalize


@dataclass
class EncoderParams:
    weights: list  # layer l maps widths[l] -> widths[l+1]; W has shape (out, in)
    biases: list

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def init_random(cls, widths, seed: int) -> "EncoderParams":
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)


def forward_raw(params: EncoderParams, x: np.ndarray):
    """Batch forward pass up to (not including) normalization.

    Returns the raw outputs and the per-layer activations needed by
    ``backward_raw``.
    """
    act = np.atleast_2d(np.asarray(x, dtype=float))
    if act.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"input width {act.shape[1]} != encoder input {params.weights[0].shape[1]}")
    activations = [act]
    n_layers = len(params.weights)
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = act @ w.T + b
        act = np.maximum(pre, 0.0) if layer < n_layers - 1 else pre
        activations.append(act)
    return act, activations


def backward_raw(params: EncoderParams, activations: list, d_out: np.ndarray):
    """Gradients of sum(d_out * raw_output) w.r.t. every weight and bias."""
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = d_out
    for layer in range(len(params.weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ activations[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (activations[layer] > 0)
    return grads_w, grads_b


def normalize_rows(raw: np.ndarray, mode: NormalizationMode):
    """Row-wise normalization; returns (Z, row_norms) for the backward pass."""
    mode = NormalizationMode(mode)
    norms = np.linalg.norm(raw, axis=1)
    if mode is NormalizationMode.UNIT_BALL:
        scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
        return raw * scale[:, None], norms
    if mode is NormalizationMode.UNIT_SPHERE:
        if norms.min(initial=np.inf) < 1e-30:
            raise ValueError("cannot sphere-normalize a (near-)zero representation")
        return raw / norms[:, None], norms
    return raw / np.sqrt(raw.shape[1]), norms


def normalize_rows_backward(
    raw: np.ndarray, norms: np.ndarray, mode: NormalizationMode, d_z: np.ndarray
) -> np.ndarray:
    """Pull a gradient w.r.t. normalized rows back to the raw outputs."""
    mode = NormalizationMode(mode)
    if mode is NormalizationMode.NONE:
        return d_z / np.sqrt(raw.shape[1])
    if mode is NormalizationMode.UNIT_BALL:
        scaled = norms > 1.0
    else:
        scaled = np.ones(norms.shape, dtype=bool)
    d_raw = d_z.copy()
    if np.any(scaled):
        r = norms[scaled][:, None]
        f = raw[scaled]
        g = d_z[scaled]
        d_raw[scaled] = g / r - f * ((f * g).sum(axis=1, keepdims=True) / r**3)
    return d_raw


def forward(params: EncoderParams, x, mode: NormalizationMode) -> np.ndarray:
    """Single-input encoder: affine/rectifier stack followed by normalization."""
    raw, _ = forward_raw(params, np.asarray(x, dtype=float)[None, :])
    return normalize(raw[0], mode)


@dataclass
class AdamState:
    step: int
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: EncoderParams, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            step=0,
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(state: AdamState, params: EncoderParams, grads_w: list, grads_b: list):
    """One bias-corrected Adam update; returns fresh (params, state), no weight decay."""
    step = state.step + 1
    corr1 = 1.0 - state.beta1**step
    corr2 = 1.0 - state.beta2**step

    def updated(p, g, m, v):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        m_new = state.beta1 * m + (1.0 - state.beta1) * g
        v_new = state.beta2 * v + (1.0 - state.beta2) * g * g
        p_new = p - state.lr * (m_new / corr1) / (np.sqrt(v_new / corr2) + state.eps)
        return p_new, m_new, v_new

    w_out = [updated(*args) for args in zip(params.weights, grads_w, state.m_w, state.v_w)]
    b_out = [updated(*args) for args in zip(params.biases, grads_b, state.m_b, state.v_b)]
    new_params = EncoderParams([t[0] for t in w_out], [t[0] for t in b_out])
    new_state = AdamState(
        step,
        [t[1] for t in w_out], [t[2] for t in w_out],
        [t[1] for t in b_out], [t[2] for t in b_out],
        state.lr, state.beta1, state.beta2, state.eps,
    )
    return new_params, new_state
