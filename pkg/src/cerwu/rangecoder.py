"""Byte-wise range coder over 15-bit integer frequency tables.

Encoder state is a 64-bit low accumulator (held as a Python int; at most
33 bits are ever live) and a 32-bit range, renormalized one byte at a
time. Carries propagate into the already-emitted byte buffer; the
interval invariant value(out||low) + range <= 2**(8*len(out)+32)
guarantees a carry never ripples past the front byte.

Interval boundaries are computed as (range * cum) >> 15, so the coder
spends within a fraction of a bit of the model's information content.
The flush appends 8 bytes: the 4 live bytes of ``low`` plus 4 bytes of
padding, which double as the decoder's priming slack. The decoder reads
4 + (#renormalizations) bytes, which is always at least 4 bytes short of
the payload end on an intact stream.

Encoding visits symbols front to back and the decoder replays the same
model transitions in the same order, as an autoregressive model requires.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .entropy import TOTAL_BITS, EntropyModel
from .errors import DecodeError, ShapeError

_MASK32 = 0xFFFFFFFF
_TOP = 1 << 24
FLUSH_BYTES = 8


@dataclass(frozen=True)
class Payload:
    """Entropy-coded byte stream plus the symbol count (kept in headers)."""

    data: bytes
    symbol_count: int


def encode(symbols, model: EntropyModel) -> Payload:
    """Encode grid indices with a fresh entropy model.

    The model is mutated (one ``update`` per symbol); pass a fresh
    instance. Decoding with an identically initialized model restores the
    exact sequence.
    """
    syms = np.asarray(symbols, dtype=np.int64)
    if syms.ndim != 1:
        syms = syms.ravel()
    k = model.k
    if syms.size and (syms.min() < 0 or syms.max() >= k):
        raise ShapeError(f"symbol out of range for k={k}")

    out = bytearray()
    low = 0
    rng = _MASK32
    for s in syms.tolist():
        cum = model.cum()
        lo_inc = (rng * cum[s]) >> TOTAL_BITS
        hi_inc = (rng * cum[s + 1]) >> TOTAL_BITS
        low += lo_inc
        if low > _MASK32:
            i = len(out) - 1
            while out[i] == 0xFF:
                out[i] = 0
                i -= 1
            out[i] += 1
            low &= _MASK32
        rng = hi_inc - lo_inc
        while rng < _TOP:
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK32
            rng <<= 8
        model.update(s)

    out += low.to_bytes(4, "big")
    out += b"\x00\x00\x00\x00"
    return Payload(bytes(out), int(syms.size))


def decode(payload: Payload, model: EntropyModel, k: int) -> np.ndarray:
    """Decode a payload produced by :func:`encode` with an identical model.

    Raises:
        DecodeError: truncated or corrupt payload.
    """
    if model.k != k:
        raise ShapeError(f"model k={model.k} does not match k={k}")
    n = payload.symbol_count
    data = payload.data
    if n == 0:
        if len(data) < FLUSH_BYTES:
            raise DecodeError("payload truncated: missing flush bytes")
        return np.zeros(0, dtype=np.int32)
    if len(data) < 4:
        raise DecodeError("payload truncated: shorter than the priming window")

    d = int.from_bytes(data[:4], "big")
    pos = 4
    rng = _MASK32
    size = len(data)
    out = np.empty(n, dtype=np.int32)
    for t in range(n):
        cum = model.cum()
        # s is the largest symbol whose lower boundary is <= d; the
        # threshold transform is exact for integer boundaries.
        thr = (((d + 1) << TOTAL_BITS) - 1) // rng
        s = bisect_right(cum, thr) - 1
        if s >= k:
            raise DecodeError(f"corrupt payload at symbol {t}: no matching interval")
        lo_inc = (rng * cum[s]) >> TOTAL_BITS
        hi_inc = (rng * cum[s + 1]) >> TOTAL_BITS
        # Interval search guarantees lo_inc <= d < hi_inc, so the offset
        # stays inside the (renormalized) range without further checks.
        d -= lo_inc
        rng = hi_inc - lo_inc
        while rng < _TOP:
            if pos >= size:
                raise DecodeError(f"payload truncated at symbol {t}")
            d = (d << 8) | data[pos]
            pos += 1
            rng <<= 8
        out[t] = s
        model.update(s)
    return out
