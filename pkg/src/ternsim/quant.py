"""Absmax quantization and streaming reductions.

Every vector that crosses between compute units travels as a
``(integer vector, single scale)`` pair. The scale is the per-vector absmax
divided by 127, and because the absmax is itself a vector-wide reduction it
doubles as the synchronization barrier: quantization fires only once the
whole vector has been consumed. The nonlinear reductions (softmax max/sum-exp,
RMSNorm sum-of-squares) are computed in the same streaming pass so they
overlap with tile production.

Reductions run in double precision; the fixed-point formats of a hardware
nonlinear unit are intentionally not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INT8_CODE_MAX = 127  # symmetric range: -128 is never emitted


@dataclass(frozen=True)
class QuantVector:
    """An int8 payload plus one positive scale (value[i] = data[i] * scale)."""

    data: np.ndarray
    scale: float

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 1:
            raise ValueError("QuantVector payload must be 1-D")
        if arr.size and (arr.min() < -INT8_CODE_MAX or arr.max() > INT8_CODE_MAX):
            raise ValueError("QuantVector codes must lie in [-127, 127]")
        if not self.scale > 0:
            raise ValueError("QuantVector scale must be positive")
        object.__setattr__(self, "data", arr.astype(np.int8))
        object.__setattr__(self, "scale", float(self.scale))

    def __len__(self) -> int:
        return len(self.data)

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale


def round_half_away_from_zero(x):
    """Round to nearest integer with halves going away from zero."""
    x = np.asarray(x, np.float64)
    return np.trunc(x + np.copysign(0.5, x))


def absmax_quantize(x) -> QuantVector:
    """Quantize a real vector symmetrically against its absolute maximum.

    scale = max|x| / 127 and data[i] = clamp(round(x[i] / scale), -127, 127)
    with round-half-away-from-zero. An all-zero vector quantizes to zero
    codes with scale 1 so downstream consumers never divide by zero.

    Args:
        x: non-empty 1-D array of reals.

    Returns:
        The quantized (codes, scale) pair.
    """
    arr = np.asarray(x, np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("absmax_quantize expects a non-empty 1-D vector")
    absmax = float(np.max(np.abs(arr)))
    if absmax == 0.0:
        return QuantVector(np.zeros(arr.size, np.int8), 1.0)
    codes = round_half_away_from_zero(arr * float(INT8_CODE_MAX) / absmax)
    codes = np.clip(codes, -INT8_CODE_MAX, INT8_CODE_MAX).astype(np.int8)
    return QuantVector(codes, absmax / INT8_CODE_MAX)


def requantize_accumulators(acc, in_scale: float) -> QuantVector:
    """Requantize integer GEMM accumulators into a fresh (codes, scale) pair.

    ``in_scale`` is the product of the producer scales, so the real value of
    accumulator i is acc[i] * in_scale. The result is identical to
    ``absmax_quantize`` of those real values; the absmax reduction is the
    barrier that must complete before any code is emitted.
    """
    arr = np.asarray(acc)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("requantize_accumulators expects a non-empty 1-D vector")
    if not in_scale > 0:
        raise ValueError("producer scale must be positive")
    return absmax_quantize(arr.astype(np.float64) * float(in_scale))


@dataclass
class ReductionState:
    """Streaming reductions carried alongside vector production.

    Maintains the online-softmax pair (running max, rescaled sum of
    exponentials), the RMSNorm sum of squares and the absmax in one pass.
    The identity sum_exp == sum(exp(x_i - running_max)) holds after every
    update.
    """

    running_max: float = field(default=-math.inf)
    running_sum_exp: float = 0.0
    sum_squares: float = 0.0
    abs_max: float = 0.0
    count: int = 0

    def update(self, value: float) -> None:
        v = float(value)
        if v > self.running_max:
            if self.count:
                self.running_sum_exp *= math.exp(self.running_max - v)
            self.running_max = v
            self.running_sum_exp += 1.0
        else:
            self.running_sum_exp += math.exp(v - self.running_max)
        self.sum_squares += v * v
        self.abs_max = max(self.abs_max, abs(v))
        self.count += 1


def streaming_softmax(scores) -> np.ndarray:
    """Numerically safe softmax in one streaming pass plus normalization.

    The max and the rescaled sum of exponentials are accumulated while the
    scores stream in; the final pass only normalizes. Safe for scores far
    beyond the overflow point of exp().
    """
    buf = [float(s) for s in scores]
    if not buf:
        raise ValueError("streaming_softmax expects at least one score")
    state = ReductionState()
    for v in buf:
        state.update(v)
    m = state.running_max
    out = np.array([math.exp(v - m) for v in buf], np.float64)
    return out / state.running_sum_exp


def streaming_rms_norm(x, gain, eps: float = 1e-6) -> np.ndarray:
    """RMS-normalize a vector, accumulating the sum of squares while streaming.

    out[i] = gain[i] * x[i] / sqrt(mean(x^2) + eps)
    """
    xs = [float(v) for v in x]
    if not xs:
        raise ValueError("streaming_rms_norm expects at least one element")
    g = np.asarray(gain, np.float64)
    if g.ndim != 1 or len(g) != len(xs):
        raise ValueError("gain length must match the input length")
    if not eps > 0:
        raise ValueError("eps must be positive")
    state = ReductionState()
    for v in xs:
        state.update(v)
    rms = math.sqrt(state.sum_squares / len(xs) + eps)
    return g * np.asarray(xs, np.float64) / rms
