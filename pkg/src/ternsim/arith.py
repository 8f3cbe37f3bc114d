"""Bit-exact primitive arithmetic.

Packed 2-bit ternary codec, the ternary select operator, radix-4 Booth
recoding and the serial Booth multiply shared by the two compute cores.
All functions are pure and value-exact; wider native integers stand in for
hardware registers, with the 20-bit partial-sum bound asserted instead of
modelled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MODE_INT8 = "int8"
MODE_TERNARY = "ternary"

# 2-bit ternary codes, LSB-first within each byte. 0b10 is reserved.
_CODE_ZERO = 0b00
_CODE_POS = 0b01
_CODE_NEG = 0b11
_CODE_ILLEGAL = 0b10

# Serial partial sums must fit a 20-bit signed register.
_PS_BOUND = 1 << 19

_MAGIC = b"TT01"
_HEADER = struct.Struct("<4sIId")  # magic, rows, cols (u32 LE), scale (f64 LE)


class TernaryCodeError(ValueError):
    """Raised when packed data contains the reserved ternary code 0b10."""


def _row_bytes(cols: int) -> int:
    return (cols + 3) // 4


@dataclass(frozen=True)
class TernaryTensor:
    """Row-major {-1, 0, +1} matrix packed four 2-bit codes per byte.

    Codes are packed LSB-first within each byte and every row is zero-padded
    to a whole byte, so ``codes`` holds exactly ``rows * ceil(cols / 4)``
    bytes. ``scale`` is the per-tensor dequantization factor: the value of
    element (i, j) is ``code(i, j) * scale``.
    """

    codes: bytes
    rows: int
    cols: int
    scale: float = 1.0

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ValueError("tensor dimensions must be non-negative")
        if not self.scale > 0:
            raise ValueError("tensor scale must be positive")
        if len(self.codes) != self.rows * _row_bytes(self.cols):
            raise ValueError(
                f"packed payload holds {len(self.codes)} bytes, expected "
                f"{self.rows * _row_bytes(self.cols)} for {self.rows}x{self.cols}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def packed_bytes(self) -> int:
        return len(self.codes)

    def to_array(self) -> np.ndarray:
        return unpack_ternary(self)


def pack_ternary(weights, scale: float = 1.0) -> TernaryTensor:
    """Pack a {-1, 0, +1} matrix into 2-bit codes (lossless roundtrip)."""
    w = np.asarray(weights)
    if w.ndim != 2:
        raise ValueError("expected a 2-D weight matrix")
    if w.size and not np.isin(w, (-1, 0, 1)).all():
        raise ValueError("ternary weights must be -1, 0 or +1")
    rows, cols = w.shape
    rb = _row_bytes(cols)
    codes = np.where(w < 0, _CODE_NEG, w).astype(np.uint8) if w.size else np.zeros((rows, cols), np.uint8)
    padded = np.zeros((rows, rb * 4), np.uint8)
    padded[:, :cols] = codes
    grouped = padded.reshape(rows, rb, 4) if rb else padded.reshape(rows, 0, 4)
    packed = (
        grouped[:, :, 0]
        | (grouped[:, :, 1] << 2)
        | (grouped[:, :, 2] << 4)
        | (grouped[:, :, 3] << 6)
    ).astype(np.uint8)
    return TernaryTensor(packed.tobytes(), rows, cols, float(scale))


def unpack_ternary(tensor: TernaryTensor) -> np.ndarray:
    """Unpack a TernaryTensor back to an int8 {-1, 0, +1} matrix."""
    rb = _row_bytes(tensor.cols)
    buf = np.frombuffer(tensor.codes, np.uint8).reshape(tensor.rows, rb)
    if tensor.rows == 0 or tensor.cols == 0:
        return np.zeros((tensor.rows, tensor.cols), np.int8)
    codes = np.stack([(buf >> s) & 3 for s in (0, 2, 4, 6)], axis=2)
    codes = codes.reshape(tensor.rows, rb * 4)[:, : tensor.cols]
    if np.any(codes == _CODE_ILLEGAL):
        raise TernaryCodeError("reserved ternary code 0b10 in packed data")
    vals = np.zeros(codes.shape, np.int8)
    vals[codes == _CODE_POS] = 1
    vals[codes == _CODE_NEG] = -1
    return vals


def save_ternary(tensor: TernaryTensor, path) -> None:
    """Write a TernaryTensor to disk (20-byte header + packed codes)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, tensor.rows, tensor.cols, tensor.scale))
        fh.write(tensor.codes)


def load_ternary(path) -> TernaryTensor:
    """Read a TernaryTensor written by :func:`save_ternary`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, rows, cols, scale = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    payload = raw[_HEADER.size :]
    expected = rows * _row_bytes(cols)
    if len(payload) != expected:
        raise ValueError(f"{path}: payload holds {len(payload)} bytes, expected {expected}")
    return TernaryTensor(payload, rows, cols, scale)


def sel(w, a):
    """Ternary select: 0, +a or -a according to w in {-1, 0, +1}.

    Accepts scalars or broadcastable arrays. This is the only arithmetic the
    ternary-INT datapath needs besides addition.
    """
    w_arr = np.asarray(w)
    a_arr = np.asarray(a)
    if w_arr.size and ((w_arr < -1) | (w_arr > 1)).any():
        raise ValueError("ternary weight outside {-1, 0, +1}")
    out = np.where(w_arr == 0, 0, np.where(w_arr > 0, a_arr, -a_arr))
    if out.ndim == 0:
        return int(out)
    return out


@dataclass(frozen=True)
class BoothRecoding:
    """Radix-4 recoded multiplier: digits[i] in {-2..+2}, LSB digit first."""

    digits: tuple[int, ...]
    iterations: int

    def value(self) -> int:
        return sum(d * (4**i) for i, d in enumerate(self.digits))


def booth_recode(y: int, bits: int) -> BoothRecoding:
    """Recode a ``bits``-wide two's-complement integer into radix-4 digits.

    Scans overlapping 3-bit windows (y[2i+1], y[2i], y[2i-1]) with y[-1] = 0;
    windows above the MSB see the sign bit. The digit count is
    ceil((bits + 1) / 2), so an 8-bit multiplier takes 5 iterations.
    """
    if bits < 1:
        raise ValueError("bit width must be >= 1")
    y = int(y)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if not lo <= y <= hi:
        raise ValueError(f"{y} not representable in {bits}-bit two's complement")
    n = (bits + 2) // 2
    digits = []
    for i in range(n):
        b_hi = (y >> (2 * i + 1)) & 1
        b_mid = (y >> (2 * i)) & 1
        b_lo = (y >> (2 * i - 1)) & 1 if i > 0 else 0
        digits.append(b_mid + b_lo - (b_hi << 1))
    return BoothRecoding(tuple(digits), n)


def booth_recode_ternary(w: int) -> BoothRecoding:
    """Recode a ternary weight by zero-padding its 2-bit code to one window.

    The code (c1, c0) becomes the single window (c1, c0, 0), collapsing the
    multiply to one iteration: -1 maps to 110, 0 to 000, +1 to 010.
    """
    w = int(w)
    if w not in (-1, 0, 1):
        raise ValueError("ternary operand must be -1, 0 or +1")
    code = _CODE_NEG if w < 0 else (_CODE_POS if w > 0 else _CODE_ZERO)
    window = code << 1
    digit = ((window >> 1) & 1) + (window & 1) - (((window >> 2) & 1) << 1)
    return BoothRecoding((digit,), 1)


def booth_multiply(a, y, mode: str = MODE_INT8):
    """Serial radix-4 Booth multiply: returns (product, cycles).

    The partial sum follows the per-iteration recurrence
    ``ps = (ps << 2) + pp`` over the recoded digits, high digit first, and
    each partial product is formed by shift/negate selection only. int8 mode
    runs 5 iterations; ternary mode uses the single zero-padded window and
    runs 1. Inputs may be scalars or broadcastable arrays.
    """
    a_arr = np.asarray(a, np.int64)
    y_arr = np.asarray(y, np.int64)
    scalar = np.ndim(a) == 0 and np.ndim(y) == 0

    if mode == MODE_INT8:
        for name, arr in (("multiplicand", a_arr), ("multiplier", y_arr)):
            if arr.size and (arr.min() < -128 or arr.max() > 127):
                raise ValueError(f"int8 {name} out of range [-128, 127]")
        digits = []
        for i in range(5):
            b_hi = (y_arr >> (2 * i + 1)) & 1
            b_mid = (y_arr >> (2 * i)) & 1
            b_lo = ((y_arr >> (2 * i - 1)) & 1) if i else np.zeros_like(y_arr)
            digits.append(b_mid + b_lo - (b_hi << 1))
        cycles = 5
    elif mode == MODE_TERNARY:
        if a_arr.size and (a_arr.min() < -128 or a_arr.max() > 127):
            raise ValueError("int8 multiplicand out of range [-128, 127]")
        if y_arr.size and ((y_arr < -1) | (y_arr > 1)).any():
            raise ValueError("ternary multiplier outside {-1, 0, +1}")
        digits = [y_arr]
        cycles = 1
    else:
        raise ValueError(f"unknown multiply mode {mode!r}")

    shape = np.broadcast_shapes(a_arr.shape, y_arr.shape)
    ps = np.zeros(shape, np.int64)
    for r in reversed(digits):
        pp = np.where(
            r == 0,
            0,
            np.where(r == 1, a_arr, np.where(r == -1, -a_arr, np.where(r == 2, a_arr << 1, -(a_arr << 1)))),
        )
        ps = (ps << 2) + pp
        assert ps.size == 0 or int(np.abs(ps).max()) < _PS_BOUND, "partial sum exceeds 20-bit register"
    if scalar:
        return int(ps), cycles
    return ps, cycles
