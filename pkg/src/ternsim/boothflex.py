"""Dual-mode Booth core: one radix-4 datapath executing either INT8xINT8
(5 iterations per inner step) or ternary-INT (1 iteration). Every scalar
product goes through ``arith.booth_multiply``; the tile cycle cost is the
closed form of the per-iteration schedule, since per-iteration events add
nothing observable at tile granularity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arith
from .arith import MODE_INT8, MODE_TERNARY


class SchedulingError(RuntimeError):
    """Raised when a mode switch is requested while a tile is in flight."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def booth_matmul(lhs, rhs, mode: str, array_rows: int = 8, array_cols: int = 8):
    """Exact integer matmul on the shared Booth datapath.

    Args:
        lhs: [n, d] INT8 matrix.
        rhs: [d, m] INT8 matrix (int8 mode) or TernaryTensor / {-1, 0, +1}
            matrix (ternary mode).
        mode: "int8" or "ternary".

    Returns:
        (acc, cycles) with cycles = ceil(n/rows) * ceil(m/cols) * d * N where
        N is 5 for int8 and 1 for ternary.
    """
    if mode not in (MODE_INT8, MODE_TERNARY):
        raise ValueError(f"unknown mode {mode!r}")
    a = np.asarray(lhs, np.int64)
    if a.ndim != 2:
        raise ValueError("lhs must be 2-D")
    if isinstance(rhs, arith.TernaryTensor):
        if mode != MODE_TERNARY:
            raise ValueError("mode/operand mismatch: packed ternary weights need ternary mode")
        w = rhs.to_array().astype(np.int64)
    else:
        w = np.asarray(rhs, np.int64)
        if mode == MODE_TERNARY and w.size and ((w < -1) | (w > 1)).any():
            raise ValueError("mode/operand mismatch: rhs is not ternary-valued")
    if w.ndim != 2 or a.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: lhs {a.shape} vs rhs {w.shape}")
    n, d = a.shape
    m = w.shape[1]
    if n < 1 or d < 1 or m < 1:
        raise ValueError("all dimensions must be >= 1")

    acc = np.zeros((n, m), np.int64)
    for k in range(d):
        prod, _ = arith.booth_multiply(a[:, k : k + 1], w[k], mode)
        acc += prod
    assert np.abs(acc).max(initial=0) < np.iinfo(np.int32).max
    iters = 5 if mode == MODE_INT8 else 1
    cycles = _ceil_div(n, array_rows) * _ceil_div(m, array_cols) * d * iters
    return acc.astype(np.int32), cycles


@dataclass
class BoothFlexCoreModel:
    """The shared Booth array plus its mode latch and counters.

    Mode changes are legal only at tile boundaries; the scheduler passes the
    current cycle and the end of the core's last scheduled tile so a mid-tile
    switch is rejected.
    """

    array_rows: int = 8
    array_cols: int = 8
    output_tile_size: int = 8
    name: str = "BoothFlex"
    mode: str = MODE_INT8
    busy_cycles: int = 0
    idle_cycles: int = 0
    mode_switches: int = 0

    def set_mode(self, mode: str, now: int = 0, busy_until: int = 0) -> None:
        """Switch between int8 and ternary; a repeated mode is a no-op."""
        if mode not in (MODE_INT8, MODE_TERNARY):
            raise ValueError(f"unknown mode {mode!r}")
        if now < busy_until:
            raise SchedulingError(
                f"mode switch at cycle {now} while a tile runs until {busy_until}"
            )
        if mode != self.mode:
            self.mode = mode
            self.mode_switches += 1

    def gemm(self, lhs, rhs, mode: str | None = None):
        """Run one GEMM tile stream in the given (or latched) mode."""
        m = self.mode if mode is None else mode
        acc, cycles = booth_matmul(lhs, rhs, m, self.array_rows, self.array_cols)
        self.busy_cycles += cycles
        return acc, cycles

    def cycles_for(self, n: int, m: int, d: int, mode: str | None = None) -> int:
        iters = 5 if (self.mode if mode is None else mode) == MODE_INT8 else 1
        return _ceil_div(n, self.array_rows) * _ceil_div(m, self.array_cols) * d * iters
