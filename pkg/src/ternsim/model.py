"""Toy single-layer ternary transformer workload and its float oracle.

The layer is the standard pre-norm shape: RMSNorm, multi-head attention with
ternary projections and INT8 attention math, a ternary output projection,
then RMSNorm and a SiLU-gated FFN, with residual adds kept in the real
domain. Attention for token t reads only rows cached before t (the current
token's key/value rows are appended after its attention), so the first token
of a sequence attends to nothing; the float oracle applies the same strictly
causal convention so the two paths differ only by quantization error.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import arith
from .arith import TernaryTensor
from .quant import round_half_away_from_zero


@dataclass(frozen=True)
class LayerConfig:
    """Dimensions and gating parameters for the desk-scale layer."""

    d_model: int = 256
    num_heads: int = 4
    d_head: int = 64
    d_ffn: int = 688
    seq_capacity: int = 256
    top_k: int = 32
    num_buckets: int = 64
    seed: int = 0
    eps: float = 1e-6

    def __post_init__(self):
        if min(self.d_model, self.num_heads, self.d_head, self.d_ffn) < 1:
            raise ValueError("all layer dimensions must be >= 1")
        if self.d_model != self.num_heads * self.d_head:
            raise ValueError(
                f"d_model ({self.d_model}) must equal num_heads * d_head "
                f"({self.num_heads} * {self.d_head})"
            )
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.num_buckets < 2:
            raise ValueError("num_buckets must be >= 2")
        if self.seq_capacity < 1:
            raise ValueError("seq_capacity must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class LayerWeights:
    """Ternary projection tensors plus the two RMSNorm gain vectors."""

    wq: TernaryTensor
    wk: TernaryTensor
    wv: TernaryTensor
    wo: TernaryTensor
    w_up: TernaryTensor
    w_gate: TernaryTensor
    w_down: TernaryTensor
    attn_norm_gain: np.ndarray = field(default_factory=lambda: np.ones(1))
    ffn_norm_gain: np.ndarray = field(default_factory=lambda: np.ones(1))


def validate_weights(weights: LayerWeights, config: LayerConfig) -> None:
    d, f = config.d_model, config.d_ffn
    expect = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w_up": (d, f), "w_gate": (d, f), "w_down": (f, d),
    }
    for name, shape in expect.items():
        t = getattr(weights, name)
        if t.shape != shape:
            raise ValueError(f"{name} has shape {t.shape}, expected {shape}")
    for name in ("attn_norm_gain", "ffn_norm_gain"):
        g = np.asarray(getattr(weights, name))
        if g.shape != (d,):
            raise ValueError(f"{name} has shape {g.shape}, expected ({d},)")


def generate_weights(config: LayerConfig, seed: int | None = None,
                     zero_fraction: float = 1.0 / 3.0) -> LayerWeights:
    """Sample deterministic synthetic ternary weights.

    ``zero_fraction`` of the entries are 0; the rest split evenly between -1
    and +1. Tensor scales are 1. The norm gains default to 1/sqrt(d_model):
    unit-scale ternary projections amplify a unit-RMS input by about
    sqrt(d_model), and without this compensation the synthetic attention
    scores are so large that softmax degenerates to an argmax. Trained
    checkpoints bring their own gains through the import path.
    """
    if not 0.0 <= zero_fraction <= 1.0:
        raise ValueError("zero_fraction must lie in [0, 1]")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    p_nz = (1.0 - zero_fraction) / 2.0

    def sample(rows: int, cols: int) -> TernaryTensor:
        w = rng.choice([-1, 0, 1], size=(rows, cols), p=[p_nz, zero_fraction, p_nz])
        return arith.pack_ternary(w.astype(np.int8), scale=1.0)

    d, f = config.d_model, config.d_ffn
    gain = np.full(d, 1.0 / np.sqrt(d))
    return LayerWeights(
        wq=sample(d, d), wk=sample(d, d), wv=sample(d, d), wo=sample(d, d),
        w_up=sample(d, f), w_gate=sample(d, f), w_down=sample(f, d),
        attn_norm_gain=gain, ffn_norm_gain=gain.copy(),
    )


def ternary_quantize_weights(float_weights) -> TernaryTensor:
    """Quantize a real matrix to ternary with the absmean rule.

    scale = mean|w| and code = clamp(round(w / scale), -1, +1); matrices
    already on the {-scale, 0, +scale} grid roundtrip exactly. An all-zero
    matrix maps to zero codes with scale 1.
    """
    w = np.asarray(float_weights, np.float64)
    if w.ndim != 2:
        raise ValueError("expected a 2-D weight matrix")
    beta = float(np.mean(np.abs(w))) if w.size else 0.0
    if beta == 0.0:
        return arith.pack_ternary(np.zeros(w.shape, np.int8), scale=1.0)
    codes = np.clip(round_half_away_from_zero(w / beta), -1, 1).astype(np.int8)
    return arith.pack_ternary(codes, scale=beta)


def silu(x) -> np.ndarray:
    """Numerically stable x * sigmoid(x)."""
    x = np.asarray(x, np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = x[pos] / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = x[~pos] * ex / (1.0 + ex)
    return out


def _rms_norm_ref(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    return gain * x / np.sqrt(np.mean(x * x) + eps)


def _softmax_ref(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def float_oracle_layer(xs, weights: LayerWeights, config: LayerConfig,
                       kept_sets=None) -> np.ndarray:
    """Full-precision reference for the layer over a token sequence.

    Processes tokens in order with strictly causal attention (token t sees
    rows 0..t-1). ``kept_sets``, when given, restricts each (token, head)
    attention to the listed cached indices, exactly as the gated integer
    pipeline does; None means attend to everything cached.

    Args:
        xs: [T, d_model] real input rows.
        kept_sets: optional list of per-token lists of per-head index arrays.

    Returns:
        [T, d_model] real outputs, no quantization anywhere.
    """
    xs = np.atleast_2d(np.asarray(xs, np.float64))
    validate_weights(weights, config)
    if xs.shape[1] != config.d_model:
        raise ValueError(f"inputs have width {xs.shape[1]}, expected {config.d_model}")
    d, h_count, dh = config.d_model, config.num_heads, config.d_head
    scale_q = 1.0 / np.sqrt(dh)

    wq = weights.wq.to_array() * weights.wq.scale
    wk = weights.wk.to_array() * weights.wk.scale
    wv = weights.wv.to_array() * weights.wv.scale
    wo = weights.wo.to_array() * weights.wo.scale
    w_up = weights.w_up.to_array() * weights.w_up.scale
    w_gate = weights.w_gate.to_array() * weights.w_gate.scale
    w_down = weights.w_down.to_array() * weights.w_down.scale

    k_rows = [[] for _ in range(h_count)]
    v_rows = [[] for _ in range(h_count)]
    outputs = []
    for t in range(xs.shape[0]):
        x = xs[t]
        hn = _rms_norm_ref(x, weights.attn_norm_gain, config.eps)
        concat = np.zeros(d)
        for head in range(h_count):
            cols = slice(head * dh, (head + 1) * dh)
            q = hn @ wq[:, cols]
            k = hn @ wk[:, cols]
            v = hn @ wv[:, cols]
            if kept_sets is not None:
                idx = np.asarray(kept_sets[t][head], np.int64)
            else:
                idx = np.arange(t)
            if idx.size:
                keys = np.array([k_rows[head][i] for i in idx])
                vals = np.array([v_rows[head][i] for i in idx])
                probs = _softmax_ref((keys @ q) * scale_q)
                concat[cols] = probs @ vals
            k_rows[head].append(k)
            v_rows[head].append(v)
        x1 = x + concat @ wo
        h2 = _rms_norm_ref(x1, weights.ffn_norm_gain, config.eps)
        y = silu(h2 @ w_gate) * (h2 @ w_up)
        outputs.append(x1 + y @ w_down)
    return np.array(outputs)


_TENSOR_FILES = {
    "wq": "wq.tt", "wk": "wk.tt", "wv": "wv.tt", "wo": "wo.tt",
    "w_up": "w_up.tt", "w_gate": "w_gate.tt", "w_down": "w_down.tt",
}
_VECTOR_FILES = {"attn_norm_gain": "attn_norm_gain.f32", "ffn_norm_gain": "ffn_norm_gain.f32"}


def save_layer_weights(weights: LayerWeights, directory) -> None:
    """Write all tensors (packed ternary) and gains (raw LE float32) plus a
    JSON sidecar describing the shapes."""
    os.makedirs(directory, exist_ok=True)
    manifest: dict = {"tensors": {}, "vectors": {}}
    for name, fname in _TENSOR_FILES.items():
        t = getattr(weights, name)
        arith.save_ternary(t, os.path.join(directory, fname))
        manifest["tensors"][name] = {"file": fname, "shape": list(t.shape)}
    for name, fname in _VECTOR_FILES.items():
        vec = np.asarray(getattr(weights, name), "<f4")
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(vec.tobytes())
        manifest["vectors"][name] = {"file": fname, "shape": [int(vec.shape[0])]}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_layer_weights(directory) -> LayerWeights:
    """Load weights written by :func:`save_layer_weights`."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    tensors = {}
    for name in _TENSOR_FILES:
        entry = manifest["tensors"][name]
        t = arith.load_ternary(os.path.join(directory, entry["file"]))
        if list(t.shape) != entry["shape"]:
            raise ValueError(f"{name}: file shape {t.shape} disagrees with sidecar {entry['shape']}")
        tensors[name] = t
    vectors = {}
    for name in _VECTOR_FILES:
        entry = manifest["vectors"][name]
        with open(os.path.join(directory, entry["file"]), "rb") as fh:
            vec = np.frombuffer(fh.read(), "<f4").astype(np.float64)
        if vec.shape[0] != entry["shape"][0]:
            raise ValueError(f"{name}: raw length {vec.shape[0]} disagrees with sidecar")
        vectors[name] = vec
    return LayerWeights(**tensors, **vectors)
