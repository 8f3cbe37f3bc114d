"""Ternary-INT core: an 8x8 multiplier-free select-accumulate array with
output-stationary mapping. The functional path is expressed entirely through
``arith.sel`` plus addition; the cycle model charges one cycle per inner-dim
step per 8x8 output tile, with ragged edge tiles paying full tile cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arith


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def ternary_matmul(acts, weights, array_rows: int = 8, array_cols: int = 8,
                   tile_setup_cycles: int = 0):
    """Exact integer matmul of INT activations against ternary weights.

    Args:
        acts: [n, d] integer activations in [-128, 127].
        weights: [d, m] TernaryTensor (its per-tensor scale is the caller's
            business) or a raw {-1, 0, +1} matrix.

    Returns:
        (acc, cycles): the int32 [n, m] accumulator matrix and the cycle cost
        ceil(n/rows) * ceil(m/cols) * (d + tile_setup_cycles).
    """
    a = np.asarray(acts, np.int64)
    if a.ndim != 2:
        raise ValueError("activations must be 2-D")
    if a.size and (a.min() < -128 or a.max() > 127):
        raise ValueError("activations out of INT8 range")
    if isinstance(weights, arith.TernaryTensor):
        w = weights.to_array().astype(np.int64)
    else:
        w = np.asarray(weights, np.int64)
        if w.size and ((w < -1) | (w > 1)).any():
            raise ValueError("weight matrix is not ternary")
    if w.ndim != 2 or a.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: activations {a.shape} vs weights {w.shape}")
    n, d = a.shape
    m = w.shape[1]
    if n < 1 or d < 1 or m < 1:
        raise ValueError("all dimensions must be >= 1")

    acc = np.zeros((n, m), np.int64)
    for k in range(d):
        acc += arith.sel(w[k], a[:, k : k + 1])
    assert np.abs(acc).max(initial=0) < np.iinfo(np.int32).max
    cycles = _ceil_div(n, array_rows) * _ceil_div(m, array_cols) * (d + tile_setup_cycles)
    return acc.astype(np.int32), cycles


@dataclass
class TintCoreModel:
    """One ternary-INT core instance with its utilization counters.

    Partial sums stay inside the array between tile start and the 8-element
    output emission; the model only exposes the finished accumulators.
    """

    array_rows: int = 8
    array_cols: int = 8
    output_tile_size: int = 8
    tile_setup_cycles: int = 0
    name: str = "TINT"
    busy_cycles: int = 0
    idle_cycles: int = 0

    @property
    def macs_per_cycle(self) -> int:
        return self.array_rows * self.array_cols

    def gemm(self, acts, weights):
        """Run one GEMM tile stream; returns (acc, cycles) and accrues busy time."""
        acc, cycles = ternary_matmul(
            acts, weights, self.array_rows, self.array_cols, self.tile_setup_cycles
        )
        self.busy_cycles += cycles
        return acc, cycles

    def cycles_for(self, n: int, m: int, d: int) -> int:
        return _ceil_div(n, self.array_rows) * _ceil_div(m, self.array_cols) * (
            d + self.tile_setup_cycles
        )
