"""Bit-exact entropy coding backend.

Discretized Gaussian PMFs are quantized to integer CDF tables with a fixed
total of 2**PRECISION and coded by a 32-bit range coder. The coder keeps a
[low, high] interval of 32-bit state; when the top bits of low and high agree
they are emitted, and near-misses (low=01..., high=10...) are handled by
counting pending carry bits, so precision never collapses. Output is
byte-aligned on flush. Decoding with the same table sequence is exactly
lossless; the decoder treats reads past the end of the buffer as zero bits,
which is what makes the 1-bit finish sufficient.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

PRECISION = 16
CDF_TOTAL = 1 << PRECISION
SYMBOL_MIN = -64
SYMBOL_MAX = 63
ESCAPE_MAG_BITS = 16

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1

# uniform binary table used for raw (escape payload) bits
_RAW_BIT_CDF = np.array([0, CDF_TOTAL // 2, CDF_TOTAL], dtype=np.uint32)


def discretized_gaussian_pmf(mean, scale, lo=SYMBOL_MIN, hi=SYMBOL_MAX):
    """Per-row PMF over [escape_lo, lo..hi, escape_hi] for Gaussian (mean, scale).

    p(n) integrates the density over (n-1/2, n+1/2]; the residual tail mass on
    each side lands in the escape buckets, so every row sums to 1 exactly (up
    to float eps). mean/scale: 1-d arrays of equal length.
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1)
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    z = (edges[None, :] - mean[:, None]) / scale[:, None]
    cdf = ndtr(z)
    interior = np.diff(cdf, axis=1)
    p_lo = cdf[:, :1]
    p_hi = 1.0 - cdf[:, -1:]
    return np.concatenate([p_lo, interior, p_hi], axis=1)


def quantize_pmf(pmf, precision=PRECISION):
    """Real PMF rows -> integer CDF tables (rows of length S+1, totals 2**precision).

    Every symbol keeps frequency >= 1; the rounding surplus or deficit is
    absorbed by each row's largest-probability symbol. Deterministic.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    n_sym = pmf.shape[1]
    if n_sym < 2:
        raise ValueError("need at least two symbols")
    total = 1 << precision
    if n_sym > total:
        raise ValueError(f"support of {n_sym} exceeds 2**{precision}")
    freq = np.maximum(1, np.rint(pmf * total)).astype(np.int64)
    rows = np.arange(len(freq))
    big = pmf.argmax(axis=1)
    freq[rows, big] += total - freq.sum(axis=1)
    if (freq[rows, big] < 1).any():
        raise ValueError("degenerate PMF cannot be quantized at this precision")
    cdf = np.zeros((len(freq), n_sym + 1), dtype=np.uint32)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def table_bits(cdf_rows, indices) -> float:
    """Ideal codelength sum -log2(q_hat) of `indices` under their quantized tables."""
    rows = np.arange(len(indices))
    f = cdf_rows[rows, np.asarray(indices) + 1].astype(np.float64) - \
        cdf_rows[rows, np.asarray(indices)].astype(np.float64)
    return float(-np.log2(f / CDF_TOTAL).sum()) if len(indices) else 0.0


class CorruptStreamError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self._acc = 0
        self._n = 0

    def write(self, bit):
        self._acc = (self._acc << 1) | bit
        self._n += 1
        if self._n == 8:
            self.buf.append(self._acc)
            self._acc = 0
            self._n = 0

    def flush(self):
        # pad with zeros to the next byte boundary
        while self._n:
            self.write(0)
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0     # bit cursor

    def read(self):
        byte = self.pos >> 3
        if byte >= len(self.data):
            return 0     # past-the-end reads are zero by contract
        bit = (self.data[byte] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit


class RangeEncoder:
    """Streaming encoder; feed (symbol, cdf) pairs, then finish() for the bytes."""

    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self._out = _BitWriter()
        self._finished = False

    def encode(self, symbol: int, cdf) -> None:
        total = int(cdf[-1])
        sym_lo = int(cdf[symbol])
        sym_hi = int(cdf[symbol + 1])
        if sym_lo == sym_hi:
            raise ValueError("symbol has zero frequency")
        span = self.high - self.low + 1
        self.high = self.low + sym_hi * span // total - 1
        self.low = self.low + sym_lo * span // total
        while True:
            if self.high < _HALF:
                self._emit(0)
            elif self.low >= _HALF:
                self._emit(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < 3 * _QUARTER:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1

    def encode_raw(self, value: int, nbits: int) -> None:
        for i in range(nbits - 1, -1, -1):
            self.encode((value >> i) & 1, _RAW_BIT_CDF)

    def _emit(self, bit):
        self._out.write(bit)
        for _ in range(self.pending):
            self._out.write(bit ^ 1)
        self.pending = 0

    def finish(self) -> bytes:
        if self._finished:
            raise RuntimeError("encoder already finished")
        self._finished = True
        # one disambiguating bit; the decoder's implicit trailing zeros do the rest
        self.pending += 1
        self._emit(0 if self.low < _QUARTER else 1)
        return self._out.flush()


class RangeDecoder:
    """Mirror of RangeEncoder; must see the identical cdf sequence."""

    def __init__(self, data: bytes):
        self._in = _BitReader(data)
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self._in.read()

    def decode(self, cdf) -> int:
        total = int(cdf[-1])
        span = self.high - self.low + 1
        value = ((self.code - self.low + 1) * total - 1) // span
        symbol = int(np.searchsorted(cdf, value, side="right")) - 1
        sym_lo = int(cdf[symbol])
        sym_hi = int(cdf[symbol + 1])
        self.high = self.low + sym_hi * span // total - 1
        self.low = self.low + sym_lo * span // total
        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.code -= _HALF
            elif self.low >= _QUARTER and self.high < 3 * _QUARTER:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.code -= _QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.code = (self.code << 1) | self._in.read()
        return symbol

    def decode_raw(self, nbits: int) -> int:
        value = 0
        for _ in range(nbits):
            value = (value << 1) | self.decode(_RAW_BIT_CDF)
        return value


def encode_value(enc: RangeEncoder, value: int, cdf, lo=SYMBOL_MIN, hi=SYMBOL_MAX) -> None:
    """Code an integer under a [escape_lo, lo..hi, escape_hi] table.

    Out-of-support values go through the matching escape bucket followed by a
    raw sign + 16-bit magnitude payload.
    """
    if lo <= value <= hi:
        enc.encode(value - lo + 1, cdf)
        return
    bucket = 0 if value < lo else len(cdf) - 2
    enc.encode(bucket, cdf)
    enc.encode_raw(1 if value < 0 else 0, 1)
    enc.encode_raw(abs(value), ESCAPE_MAG_BITS)


def decode_value(dec: RangeDecoder, cdf, lo=SYMBOL_MIN, hi=SYMBOL_MAX) -> int:
    symbol = dec.decode(cdf)
    if 1 <= symbol <= hi - lo + 1:
        return symbol + lo - 1
    sign = dec.decode_raw(1)
    mag = dec.decode_raw(ESCAPE_MAG_BITS)
    return -mag if sign else mag
