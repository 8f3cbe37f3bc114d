"""Predictive sparse attention: leading-one features, the shift-add surrogate
score, and the comparison-free bucketized top-K selector.

The surrogate for the dot product q . k adds one signed, barrel-shifted 1 per
non-zero element pair: sgn(q_i) * sgn(k_i) * 2^(LO(q_i) + LO(k_i)), where
LO(x) = floor(log2 |x|). The scoring path is deliberately free of multiplies;
everything is shifts, adds and selects, mirroring what a multiplier-free
screening unit can afford. Selection histograms the scores into uniform
buckets over a fixed range, prefix-scans from the top bucket down to the cut
bin, and emits indices bucket-by-bucket (ascending token order inside each
bucket) until K are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

FEATURE_BITS = 5  # 1 sign + 3 leading-one + 1 zero flag per element


class LopFeature(NamedTuple):
    sign: int
    lo: int
    is_zero: bool


# floor(log2 m) for int8 magnitudes; index 0 unused (masked by is_zero)
_LO_TABLE = np.array([0] + [m.bit_length() - 1 for m in range(1, 128)], np.int8)


@dataclass(frozen=True)
class LopFeatures:
    """Per-element (sign, leading-one, zero) features, array-backed.

    Shape is (d,) for a single vector or (tokens, d) for a feature store.
    When ``is_zero`` is set, consumers ignore sign and lo.
    """

    sign: np.ndarray
    lo: np.ndarray
    is_zero: np.ndarray

    def __post_init__(self):
        if not (self.sign.shape == self.lo.shape == self.is_zero.shape):
            raise ValueError("feature arrays must agree in shape")

    def __len__(self) -> int:
        return self.sign.shape[0]

    def __getitem__(self, i):
        s, l, z = self.sign[i], self.lo[i], self.is_zero[i]
        if np.ndim(s) == 0:
            return LopFeature(int(s), int(l), bool(z))
        return LopFeatures(s, l, z)


def extract_features(values) -> LopFeatures:
    """Extract (sign, floor-log2 magnitude, zero flag) from an INT8 payload."""
    v = np.asarray(values, np.int64)
    if v.size and np.abs(v).max() > 127:
        raise ValueError("expected an INT8 payload in [-127, 127]")
    mag = np.abs(v)
    return LopFeatures(
        sign=np.where(v < 0, -1, 1).astype(np.int8),
        lo=_LO_TABLE[mag],
        is_zero=(v == 0),
    )


def surrogate_scores(query: LopFeatures, keys: LopFeatures) -> np.ndarray:
    """Surrogate dot-product scores of one query against stacked key features.

    Each term is a barrel-shifted 1: the sign product selects the direction
    and the summed leading-one positions select the shift. Element pairs with
    a zero on either side contribute nothing. No multiply is used anywhere on
    this path.
    """
    if query.sign.ndim != 1:
        raise ValueError("query features must be 1-D")
    if keys.sign.ndim not in (1, 2):
        raise ValueError("key features must be 1-D or 2-D")
    if keys.sign.shape[-1] != query.sign.shape[0]:
        raise ValueError("feature dimension mismatch")
    shift = keys.lo.astype(np.int64) + query.lo.astype(np.int64)
    mag = np.left_shift(np.int64(1), shift)
    disagree = keys.sign != query.sign
    term = np.where(disagree, -mag, mag)
    term = np.where(keys.is_zero | query.is_zero, 0, term)
    return term.sum(axis=-1)


def surrogate_score(query: LopFeatures, key: LopFeatures) -> int:
    """Surrogate score for a single (query, key) feature pair."""
    return int(surrogate_scores(query, key))


def packed_feature_bytes(dim: int, tokens: int = 1) -> int:
    """Bytes occupied by a packed 5-bit-per-element feature block."""
    return (FEATURE_BITS * dim * tokens + 7) // 8


@dataclass(frozen=True)
class TopKSelection:
    """Outcome of the comparison-free selector.

    ``kept`` lists the selected token indices in emission order: buckets from
    high to low, ascending token index within a bucket. ``cut_bin`` is the
    bucket where the high-to-low cumulative count first reached K (None when
    nothing was streamed).
    """

    kept: np.ndarray
    cut_bin: Optional[int]
    bucket_histogram: np.ndarray


def select_top_k(scores, k: int, num_buckets: int = 64, score_bound: Optional[int] = None) -> TopKSelection:
    """Keep the K highest scores without pairwise comparisons.

    Scores are histogrammed into ``num_buckets`` uniform buckets over the
    fixed range [-score_bound, +score_bound]; a high-to-low prefix scan finds
    the cut bin and indices stream out bucket by bucket. Ties inside the cut
    bin resolve toward the lowest token index. When fewer than K scores are
    streamed, all of them are kept.

    Args:
        scores: integer surrogate scores, one per token.
        k: number of winners to keep (>= 1).
        num_buckets: histogram resolution (>= 2).
        score_bound: half-width of the analytic score range; defaults to the
            data absmax, which callers with a known dimension should override
            to keep the histogram data-independent.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if num_buckets < 2:
        raise ValueError("need at least two buckets")
    arr = np.asarray(scores, np.int64)
    if arr.ndim != 1:
        raise ValueError("scores must be 1-D")
    m = arr.size
    if m == 0:
        return TopKSelection(np.zeros(0, np.int64), None, np.zeros(num_buckets, np.int64))
    if score_bound is None:
        score_bound = max(1, int(np.abs(arr).max()))
    bound = int(score_bound)
    if bound < 1:
        raise ValueError("score_bound must be >= 1")

    idx = (np.clip(arr, -bound, bound) + bound) * num_buckets // (2 * bound)
    idx = np.minimum(idx, num_buckets - 1)
    hist = np.bincount(idx, minlength=num_buckets).astype(np.int64)

    target = min(k, m)
    cum = 0
    cut = 0
    for b in range(num_buckets - 1, -1, -1):
        cum += int(hist[b])
        if cum >= target:
            cut = b
            break

    kept: list[int] = []
    for b in range(num_buckets - 1, cut, -1):
        if hist[b]:
            kept.extend(np.flatnonzero(idx == b).tolist())
    remaining = target - len(kept)
    if remaining > 0:
        kept.extend(np.flatnonzero(idx == cut)[:remaining].tolist())
    return TopKSelection(np.array(kept, np.int64), cut, hist)


def select_threshold(scores, threshold: int) -> np.ndarray:
    """Streaming threshold selector: token indices whose score meets the
    threshold, in token order. Unlike fixed-K selection the fetch budget is
    data-dependent; it exists as an alternative gate policy only."""
    arr = np.asarray(scores, np.int64)
    if arr.ndim != 1:
        raise ValueError("scores must be 1-D")
    return np.flatnonzero(arr >= int(threshold)).astype(np.int64)


def lop_gate(query, cached: LopFeatures, k: int, num_buckets: int = 64,
             score_bound: Optional[int] = None) -> TopKSelection:
    """Gate a KV fetch: score the query against all cached key features and
    select the top-K token indices.

    ``query`` may be a QuantVector or a raw INT8 payload. An empty cache
    yields an empty selection. The default score range is the analytic bound
    d * 2^12 (every term is at most 2^(6+6)).
    """
    payload = getattr(query, "data", query)
    qf = extract_features(payload)
    if cached is None or len(cached) == 0:
        buckets = np.zeros(num_buckets, np.int64)
        return TopKSelection(np.zeros(0, np.int64), None, buckets)
    if score_bound is None:
        score_bound = int(qf.sign.shape[0]) << 12
    scores = surrogate_scores(qf, cached)
    return select_top_k(scores, k, num_buckets, score_bound)
