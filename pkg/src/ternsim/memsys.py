"""KV cache, per-stream traffic accounting, and the shared-buffer ports.

The cache stores one int8 row plus one scale per token per head for both keys
and values, together with the 5-bit-per-element key features the fetch gate
scans. Traffic is a flat bytes-per-cycle model per port: the point is fetch
volume, not DRAM microarchitecture. Every byte charged here is attributed to
a trace event by the scheduler, so the counters stay reconcilable against the
trace.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import lop
from .quant import QuantVector


class CreditAccountingError(RuntimeError):
    """Raised when a credit is released that was never acquired."""


_STREAM_FIELDS = {
    "kv_keys": "bytes_kv_keys",
    "kv_values": "bytes_kv_values",
    "lop_features": "bytes_lop_features",
    "weights": "bytes_weights",
    "activations": "bytes_activations",
    "kv_writes": "bytes_kv_writes",
}


@dataclass
class TrafficStats:
    """Non-decreasing byte counters, one per memory stream.

    ``bytes_kv_writes`` tracks decode-time row appends separately so the
    fetch-side counters obey the min(K, M)/M law exactly.
    """

    bytes_kv_keys: int = 0
    bytes_kv_values: int = 0
    bytes_lop_features: int = 0
    bytes_weights: int = 0
    bytes_activations: int = 0
    bytes_kv_writes: int = 0
    fetch_transactions: int = 0

    def charge(self, stream: str, nbytes: int) -> None:
        if stream not in _STREAM_FIELDS:
            raise ValueError(f"unknown traffic stream {stream!r}")
        if nbytes < 0:
            raise ValueError("cannot charge negative bytes")
        attr = _STREAM_FIELDS[stream]
        setattr(self, attr, getattr(self, attr) + int(nbytes))

    @property
    def bytes_kv(self) -> int:
        return self.bytes_kv_keys + self.bytes_kv_values

    def total_bytes(self) -> int:
        return sum(getattr(self, f) for f in _STREAM_FIELDS.values())

    def snapshot(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def delta_since(self, base: dict) -> "TrafficStats":
        return TrafficStats(**{k: getattr(self, k) - base[k] for k in base})


class CreditPool:
    """Outstanding-tile credits for one buffer port.

    A dispatched tile holds one credit from its grant until its completion
    time is released back. ``grant_time`` answers when a new hold could start
    given the committed completion times; callers acquire, schedule, then
    release the computed end.
    """

    def __init__(self, depth: int):
        if depth < 1:
            raise ValueError("credit depth must be >= 1")
        self.depth = depth
        self._ends: list[int] = []
        self._open = 0

    def grant_time(self, ready: int) -> int:
        active = sorted(e for e in self._ends if e > ready)
        if len(active) < self.depth:
            return int(ready)
        return int(active[len(active) - self.depth])

    def acquire(self, ready: int) -> int:
        grant = self.grant_time(ready)
        self._open += 1
        return grant

    def release(self, end: int) -> None:
        if self._open == 0:
            raise CreditAccountingError("credit released without a matching acquire")
        self._open -= 1
        self._ends.append(int(end))

    def prune(self, before: int) -> None:
        self._ends = [e for e in self._ends if e > before]


@dataclass
class PortModel:
    name: str
    bandwidth: int
    credits: CreditPool


class BufferPorts:
    """Fixed port assignment: ternary cores on A, the Booth core on B."""

    def __init__(self, bandwidth_a: int = 64, bandwidth_b: int = 64, credit_depth: int = 2):
        if bandwidth_a < 1 or bandwidth_b < 1:
            raise ValueError("port bandwidth must be >= 1 byte/cycle")
        self.port_a = PortModel("A", bandwidth_a, CreditPool(credit_depth))
        self.port_b = PortModel("B", bandwidth_b, CreditPool(credit_depth))


@dataclass(frozen=True)
class FetchResult:
    keys: np.ndarray
    key_scales: np.ndarray
    values: np.ndarray
    value_scales: np.ndarray
    stall_cycles: int
    bytes: int


class KvCache:
    """Append-only per-layer, per-head key/value rows with derived features.

    Rows are immutable once appended and the token count only grows within a
    generation session. Key features are derived at append time so feature
    row i always corresponds to key row i.
    """

    def __init__(self, num_layers: int, num_heads: int, head_dim: int, capacity: int,
                 scale_bytes: int = 4, stats: TrafficStats | None = None,
                 fetch_bandwidth: int = 64):
        if min(num_layers, num_heads, head_dim) < 1 or capacity < 0:
            raise ValueError("bad cache geometry")
        if fetch_bandwidth < 1:
            raise ValueError("fetch bandwidth must be >= 1")
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.capacity = capacity
        self.scale_bytes = scale_bytes
        self.stats = stats
        self.fetch_bandwidth = fetch_bandwidth
        shape = (num_layers, num_heads, capacity, head_dim)
        self._keys = np.zeros(shape, np.int8)
        self._values = np.zeros(shape, np.int8)
        self._key_scales = np.zeros(shape[:3], np.float64)
        self._value_scales = np.zeros(shape[:3], np.float64)
        self._feat_sign = np.zeros(shape, np.int8)
        self._feat_lo = np.zeros(shape, np.int8)
        self._feat_zero = np.zeros(shape, bool)
        self._count = np.zeros((num_layers, num_heads), np.int64)

    def _check_slot(self, layer: int, head: int) -> None:
        if not (0 <= layer < self.num_layers and 0 <= head < self.num_heads):
            raise IndexError(f"no such cache slot layer={layer} head={head}")

    def token_count(self, layer: int, head: int) -> int:
        self._check_slot(layer, head)
        return int(self._count[layer, head])

    def row_bytes(self) -> int:
        return self.head_dim + self.scale_bytes

    def feature_scan_bytes(self, tokens: int) -> int:
        return lop.packed_feature_bytes(self.head_dim, tokens)

    def append_token(self, layer: int, head: int, k: QuantVector, v: QuantVector) -> None:
        """Append one token's key/value rows; features derive from the key."""
        self._check_slot(layer, head)
        m = int(self._count[layer, head])
        if m >= self.capacity:
            raise ValueError(f"KV cache capacity {self.capacity} exceeded")
        if len(k) != self.head_dim or len(v) != self.head_dim:
            raise ValueError("row length does not match head dimension")
        feats = lop.extract_features(k.data)
        self._keys[layer, head, m] = k.data
        self._key_scales[layer, head, m] = k.scale
        self._values[layer, head, m] = v.data
        self._value_scales[layer, head, m] = v.scale
        self._feat_sign[layer, head, m] = feats.sign
        self._feat_lo[layer, head, m] = feats.lo
        self._feat_zero[layer, head, m] = feats.is_zero
        self._count[layer, head] = m + 1

    def features(self, layer: int, head: int) -> lop.LopFeatures:
        self._check_slot(layer, head)
        m = int(self._count[layer, head])
        return lop.LopFeatures(
            sign=self._feat_sign[layer, head, :m],
            lo=self._feat_lo[layer, head, :m],
            is_zero=self._feat_zero[layer, head, :m],
        )

    def fetch_selected(self, layer: int, head: int, kept) -> FetchResult:
        """Fetch the kept rows, charging key/value bytes and a port stall.

        The stall is ceil(total bytes / bandwidth) cycles on the requesting
        port; an empty kept set moves nothing and stalls nothing.
        """
        self._check_slot(layer, head)
        idx = np.asarray(kept, np.int64)
        m = int(self._count[layer, head])
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise IndexError("kept index outside the cached token range")
        side = int(idx.size) * self.row_bytes()
        total = 2 * side
        if self.stats is not None:
            self.stats.charge("kv_keys", side)
            self.stats.charge("kv_values", side)
            self.stats.fetch_transactions += 1
        stall = -(-total // self.fetch_bandwidth) if total else 0
        return FetchResult(
            keys=self._keys[layer, head][idx].copy(),
            key_scales=self._key_scales[layer, head][idx].copy(),
            values=self._values[layer, head][idx].copy(),
            value_scales=self._value_scales[layer, head][idx].copy(),
            stall_cycles=stall,
            bytes=total,
        )
