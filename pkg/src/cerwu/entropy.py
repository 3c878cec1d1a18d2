"""Autoregressive probability models over grid indices.

Three interchangeable model kinds feed both the quantizer's rate
estimates and the range coder. A model is a deterministic function of the
symbol sequence it has seen, so replaying the same symbols on a fresh
instance reproduces the exact per-symbol distributions; quantization-time
rate estimates therefore equal encoding-time costs.

Kinds:
    static    fixed histogram, quantized once at construction, never updated;
              its frequency table is serialized in the layer header.
    adaptive  Laplace-smoothed adaptive histogram (all counts start at 1).
    context   adaptive histogram with two contexts keyed on whether the
              previous symbol was the zero level; captures run-of-zeros
              statistics.

All distributions are integer frequency tables summing to exactly 2**15,
with every frequency >= 1 (worst-case symbol cost 15 bits).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

TOTAL_BITS = 15
TOTAL = 1 << TOTAL_BITS  # 32768
COUNT_CAP = 1 << 16

STATIC = "static"
ADAPTIVE = "adaptive"
CONTEXT = "context"
MODEL_KINDS = (STATIC, ADAPTIVE, CONTEXT)

_LOG2_TOTAL = float(TOTAL_BITS)

# Cost in bits of frequency f is TOTAL_BITS - log2(f); tabulated once.
_RATE_TABLE = _LOG2_TOTAL - np.log2(np.arange(1, TOTAL + 1, dtype=np.float64))
_RATE_TABLE = np.concatenate(([np.inf], _RATE_TABLE))


def rates_for_freqs(freqs) -> np.ndarray:
    """Per-symbol bit costs for a frequency table (tabulated, so all rate
    paths agree bitwise)."""
    return _RATE_TABLE[np.asarray(freqs, dtype=np.int64)]


@dataclass(frozen=True)
class SymbolDistribution:
    """Integer frequency table over k symbols, total exactly 2**15."""

    freqs: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=np.int64)
        object.__setattr__(self, "freqs", f)
        if f.ndim != 1 or f.size < 2:
            raise ShapeError("distribution needs a 1-D table with k >= 2")
        if f.min() < 1:
            raise ShapeError("every frequency must be >= 1")
        if int(f.sum()) != TOTAL:
            raise ShapeError(f"frequencies must sum to {TOTAL}, got {int(f.sum())}")

    @property
    def total(self) -> int:
        return TOTAL


def quantize_counts(counts: np.ndarray) -> np.ndarray:
    """Map positive-weight counts to frequencies summing to exactly 2**15.

    Rule: ``freq_i = max(1, floor(count_i * TOTAL / sum(counts)))``, then a
    largest-remainder pass distributes any shortfall (+1 to the entries
    with the largest floor remainders, lowest index first on ties). A
    surplus (possible only via the min-1 clamp) is removed from the
    currently largest frequencies, lowest index first.
    """
    c = np.asarray(counts, dtype=np.int64)
    k = c.size
    total = int(c.sum())
    if total <= 0:
        raise ShapeError("counts must contain at least one positive entry")
    if c.min() < 0:
        raise ShapeError("counts must be nonnegative")
    if k > TOTAL:
        raise ShapeError(f"cannot give {k} symbols a nonzero share of {TOTAL}")
    num = c * TOTAL
    base = num // total
    rem = num - base * total
    freqs = np.maximum(base, 1)
    diff = TOTAL - int(freqs.sum())
    if diff > 0:
        order = np.lexsort((np.arange(k), -rem))
        freqs[order[:diff]] += 1
    elif diff < 0:
        for _ in range(-diff):
            i = int(np.argmax(freqs))
            freqs[i] -= 1
    return freqs


def _quantize_counts_fast(counts: list, total: int) -> list:
    """Pure-integer twin of :func:`quantize_counts` for the per-symbol
    hot path; must produce identical tables (cross-checked in tests)."""
    k = len(counts)
    freqs = [1] * k
    rem = [0] * k
    ssum = 0
    for i in range(k):
        b, r = divmod(counts[i] << TOTAL_BITS, total)
        rem[i] = r
        if b < 1:
            b = 1
        freqs[i] = b
        ssum += b
    diff = TOTAL - ssum
    if diff > 0:
        # remainder descending, index ascending: sort (rem, -index) descending
        order = sorted(zip(rem, range(0, -k, -1)), reverse=True)
        for pos in range(diff):
            freqs[-order[pos][1]] += 1
    elif diff < 0:
        for _ in range(-diff):
            i = max(range(k), key=freqs.__getitem__)
            freqs[i] -= 1
    return freqs


class EntropyModel:
    """Common interface; concrete kinds override the hooks below."""

    kind: str

    def __init__(self, k: int):
        if k < 2:
            raise ShapeError(f"model needs k >= 2, got {k}")
        self.k = k

    # -- hooks ------------------------------------------------------------
    def _table(self) -> "_CachedTable":
        raise NotImplementedError

    def update(self, symbol: int) -> None:
        raise NotImplementedError

    def fresh(self) -> "EntropyModel":
        """New instance of the same kind and parameters, initial state."""
        raise NotImplementedError

    # -- derived ----------------------------------------------------------
    def distribution(self) -> SymbolDistribution:
        return SymbolDistribution(np.array(self._table().freqs(), dtype=np.int64))

    def cum(self) -> list:
        """Cumulative frequency list [0, f0, f0+f1, ..., TOTAL] as ints."""
        return self._table().cum()

    def rate_vector(self) -> np.ndarray:
        """Per-symbol cost in bits: -log2(freq / TOTAL)."""
        return self._table().rates()

    def rate_bits(self, symbol: int) -> float:
        if not 0 <= symbol < self.k:
            raise ShapeError(f"symbol {symbol} out of range [0, {self.k})")
        return float(self.rate_vector()[symbol])


class _CachedTable:
    """Frequency table derived lazily from integer counts.

    Counts live in a plain Python list; the quantized table, its
    cumulative form and the bit-cost vector are cached until the next
    count change.
    """

    __slots__ = ("counts", "total", "_freqs", "_cum", "_rates")

    def __init__(self, counts):
        self.counts = [int(c) for c in counts]
        self.total = sum(self.counts)
        self._freqs = None
        self._cum = None
        self._rates = None

    def observe(self, symbol: int) -> None:
        self.counts[symbol] += 1
        self.total += 1
        if self.total > COUNT_CAP:
            self.counts = [(c + 1) >> 1 for c in self.counts]
            self.total = sum(self.counts)
        self._freqs = None
        self._cum = None
        self._rates = None

    def freqs(self) -> list:
        if self._freqs is None:
            self._freqs = _quantize_counts_fast(self.counts, self.total)
        return self._freqs

    def cum(self) -> list:
        if self._cum is None:
            cum = [0]
            acc = 0
            for f in self.freqs():
                acc += f
                cum.append(acc)
            self._cum = cum
        return self._cum

    def rates(self) -> np.ndarray:
        if self._rates is None:
            self._rates = _RATE_TABLE[np.array(self.freqs(), dtype=np.int64)]
        return self._rates


class StaticModel(EntropyModel):
    """Histogram fixed at construction; ``update`` is a no-op."""

    kind = STATIC

    def __init__(self, k: int, counts: Sequence[int]):
        super().__init__(k)
        c = np.asarray(counts, dtype=np.int64)
        if c.shape != (k,):
            raise ShapeError(f"static counts must have length {k}, got {c.shape}")
        if c.min() < 0:
            raise ShapeError("static counts must be nonnegative")
        self.counts = c.copy()
        self._tab = _CachedTable(c.tolist())
        if self._tab.total <= 0:
            raise ShapeError("static counts must contain at least one positive entry")
        self._tab.freqs()  # quantize once, fail fast on bad counts

    def _table(self):
        return self._tab

    def update(self, symbol: int) -> None:
        pass

    def fresh(self) -> "StaticModel":
        return StaticModel(self.k, self.counts)


class AdaptiveModel(EntropyModel):
    """Laplace-smoothed adaptive histogram.

    Counts start at 1 and increment per observed symbol; when the total
    exceeds 2**16 all counts are halved (rounding up), keeping integer
    state bounded.
    """

    kind = ADAPTIVE

    def __init__(self, k: int):
        super().__init__(k)
        self._tab = _CachedTable([1] * k)

    def _table(self):
        return self._tab

    def update(self, symbol: int) -> None:
        self._tab.observe(symbol)

    def fresh(self) -> "AdaptiveModel":
        return AdaptiveModel(self.k)


class ContextModel(EntropyModel):
    """Two adaptive histograms keyed on the previous symbol.

    Context 0 is active when the previous symbol was the zero level,
    context 1 otherwise. Starts in context 0.
    """

    kind = CONTEXT

    def __init__(self, k: int, zero_index: Optional[int] = None):
        super().__init__(k)
        self.zero_index = k // 2 if zero_index is None else zero_index
        if not 0 <= self.zero_index < k:
            raise ShapeError("zero_index out of range")
        self._tabs = (_CachedTable([1] * k), _CachedTable([1] * k))
        self.current_context = 0

    def _table(self):
        return self._tabs[self.current_context]

    def update(self, symbol: int) -> None:
        self._tabs[self.current_context].observe(symbol)
        self.current_context = 0 if symbol == self.zero_index else 1

    def fresh(self) -> "ContextModel":
        return ContextModel(self.k, self.zero_index)


def make_model(
    kind: str,
    k: int,
    static_counts: Optional[Sequence[int]] = None,
    zero_index: Optional[int] = None,
) -> EntropyModel:
    """Construct a fresh entropy model.

    ``static_counts`` is required for (and only for) the static kind.
    ``zero_index`` selects the context model's zero level; defaults to
    ``k // 2``, the zero level of the grids built here.
    """
    if kind == STATIC:
        if static_counts is None:
            raise ShapeError("static model requires static_counts")
        return StaticModel(k, static_counts)
    if static_counts is not None:
        raise ShapeError(f"static_counts only valid for the static kind, not {kind!r}")
    if kind == ADAPTIVE:
        return AdaptiveModel(k)
    if kind == CONTEXT:
        return ContextModel(k, zero_index)
    raise ShapeError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def rate_bits(model: EntropyModel, symbol: int) -> float:
    """Cost in bits of coding ``symbol`` in the model's current state."""
    return model.rate_bits(symbol)


def sequence_rate_bits(symbols, model: EntropyModel) -> float:
    """Total predicted bits for a symbol sequence; mutates the model.

    Accumulates in sequence order with the same tabulated per-frequency
    costs as :meth:`EntropyModel.rate_vector`, so totals match the other
    replay paths exactly.
    """
    total = 0.0
    table = model._table
    update = model.update
    rate_of = _RATE_TABLE
    for s in np.asarray(symbols, dtype=np.int64).tolist():
        total += float(rate_of[table().freqs()[s]])
        update(s)
    return total


def entropy_bits(probabilities) -> float:
    """Shannon entropy in bits of a probability vector (test helper)."""
    p = np.asarray(probabilities, dtype=np.float64)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))
