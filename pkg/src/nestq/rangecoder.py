"""Byte-oriented range coder over 16-bit cumulative frequencies.

The coder keeps a 64-bit ``low`` (33 bits live) and a 32-bit ``range`` that
is renormalized to at least ``2**24``.  Carries are propagated through a
one-byte cache, as in LZMA; the cache's always-zero first byte is dropped so
the decoder primes itself with four bytes.  Subintervals are formed
multiply-first, ``(range * cum) >> 16``, which keeps the coding loss per
symbol around ``2**-24`` instead of the ``2**-8`` of divide-first coders.

Decoding past the end of the input reads zero bytes and raises the
``padded`` flag instead of failing.  The encoder exploits this: ``finish``
picks the final code value with the most trailing zero bits and strips all
trailing zero bytes.

Two implementations share the arithmetic: :class:`RangeEncoder` and
:class:`RangeDecoder` code one symbol per call, while :func:`encode_slots` and
:func:`decode_tables` run whole stages in compiled loops.  Both produce
identical bytes.
"""

from bisect import bisect_right
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ContractViolation, ParseError
from .gaussian import PROB_BITS, PROB_ONE

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
PRIME_BYTES = 4
# Upper bound on how far the decoder state can depend on bytes ahead of the
# position it reports as consumed.
LOOKAHEAD = 8
HALF = PROB_ONE // 2
MAX_ESCAPE_ZEROS = 62


@dataclass(frozen=True)
class SymbolSlot:
    cum_lo: int
    cum_hi: int

    def __post_init__(self):
        if not 0 <= self.cum_lo < self.cum_hi <= PROB_ONE:
            raise ContractViolation(f"invalid slot [{self.cum_lo}, {self.cum_hi})")


def slots_from_counts(counts):
    """Cumulative slots for a list of positive counts summing to ``2**16``."""
    cum = np.concatenate([[0], np.cumsum(counts)])
    return [SymbolSlot(int(a), int(b)) for a, b in zip(cum[:-1], cum[1:])]


def partition_cum(partition):
    """Cumulative boundaries of a list of slots that must tile ``[0, 2**16]``."""
    if not partition:
        raise ContractViolation("empty partition")
    cum = [partition[0].cum_lo]
    for slot in partition:
        if slot.cum_lo != cum[-1]:
            raise ContractViolation("partition has a gap or overlap")
        cum.append(slot.cum_hi)
    if cum[0] != 0 or cum[-1] != PROB_ONE:
        raise ContractViolation("partition does not cover [0, 2**16]")
    return cum


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.shifts = 0
        self._cache = 0
        self._pending = 1
        self._skip_first = True
        self._out = bytearray()

    def encode(self, slot):
        self.encode_range(slot.cum_lo, slot.cum_hi)

    def encode_range(self, cum_lo, cum_hi):
        if not 0 <= cum_lo < cum_hi <= PROB_ONE:
            raise ContractViolation(f"invalid slot [{cum_lo}, {cum_hi})")
        a = (self.range * cum_lo) >> PROB_BITS
        b = (self.range * cum_hi) >> PROB_BITS
        self.low += a
        self.range = b - a
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bit(self, bit):
        if bit:
            self.encode_range(HALF, PROB_ONE)
        else:
            self.encode_range(0, HALF)

    @property
    def bytes_consumed(self):
        """Bytes a decoder will have read once it has decoded the last symbol."""
        return PRIME_BYTES + self.shifts

    def finish(self):
        top = self.low + self.range
        for bits in range(40, -1, -1):
            mask = (1 << bits) - 1
            v = (self.low + mask) & ~mask
            if v < top:
                break
        self.low = v
        for _ in range(5):
            self._shift_low()
        return bytes(self._out).rstrip(b"\x00")

    def _shift_low(self):
        self.shifts += 1
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            temp = self._cache
            while True:
                self._emit((temp + carry) & 0xFF)
                temp = 0xFF
                self._pending -= 1
                if self._pending == 0:
                    break
            self._cache = (self.low >> 24) & 0xFF
        self._pending += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def _emit(self, byte):
        if self._skip_first:
            self._skip_first = False
        else:
            self._out.append(byte)


class RangeDecoder:
    """Decoder over ``data[:available]``, zero-padded beyond it."""

    def __init__(self, data, available=None):
        self.data = bytes(data)
        self.available = len(self.data) if available is None else min(available, len(self.data))
        self.pos = 0
        self.padded = False
        self.range = MASK32
        self.code = 0
        for _ in range(PRIME_BYTES):
            self.code = (self.code << 8) | self._next_byte()

    @property
    def bytes_consumed(self):
        return self.pos

    def decode(self, partition):
        return self.decode_cum(partition_cum(partition))

    def decode_cum(self, cum):
        t = (((self.code + 1) << PROB_BITS) - 1) // self.range
        s = bisect_right(cum, t) - 1
        a = (self.range * cum[s]) >> PROB_BITS
        b = (self.range * cum[s + 1]) >> PROB_BITS
        self.code -= a
        self.range = b - a
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & MASK32
            self.range <<= 8
        return s

    def decode_bit(self):
        return self.decode_cum((0, HALF, PROB_ONE))

    def _next_byte(self):
        if self.pos < self.available:
            b = self.data[self.pos]
        else:
            b = 0
            self.padded = True
        self.pos += 1
        return b


def escape_bits(excess):
    """Elias-gamma bits for a non-negative integer."""
    x = int(excess) + 1
    n = x.bit_length() - 1
    return [0] * n + [1] + [(x >> i) & 1 for i in range(n - 1, -1, -1)]


def encode_escape(encoder, excess):
    for bit in escape_bits(excess):
        encoder.encode_bit(bit)


def decode_escape(decoder):
    zeros = 0
    while decoder.decode_bit() == 0:
        zeros += 1
        if zeros > MAX_ESCAPE_ZEROS:
            raise ParseError("runaway escape code", decoder.bytes_consumed)
    x = 1
    for _ in range(zeros):
        x = (x << 1) | decoder.decode_bit()
    return x - 1


# Compiled stage kernels


@numba.njit(cache=True)
def _encode_kernel(cum_lo, cum_hi):
    n = cum_lo.shape[0]
    out = np.zeros(3 * n + 16, dtype=np.uint8)
    shifts = np.zeros(n, dtype=np.int64)
    low = np.int64(0)
    rng = np.int64(MASK32)
    cache = np.int64(0)
    pending = np.int64(1)
    skip = True
    nout = 0
    nshift = 0
    for j in range(n + 1):
        if j < n:
            a = (rng * cum_lo[j]) >> PROB_BITS
            b = (rng * cum_hi[j]) >> PROB_BITS
            low += a
            rng = b - a
            todo = 0
            while rng < TOP:
                rng <<= 8
                todo += 1
        else:
            top = low + rng
            v = low
            for bits in range(40, -1, -1):
                mask = (np.int64(1) << bits) - 1
                v = (low + mask) & ~mask
                if v < top:
                    break
            low = v
            todo = 5
        for _ in range(todo):
            nshift += 1
            if low < 0xFF000000 or low > MASK32:
                carry = low >> 32
                temp = cache
                while True:
                    if skip:
                        skip = False
                    else:
                        out[nout] = (temp + carry) & 0xFF
                        nout += 1
                    temp = 0xFF
                    pending -= 1
                    if pending == 0:
                        break
                cache = (low >> 24) & 0xFF
            pending += 1
            low = (low & 0x00FFFFFF) << 8
        if j < n:
            shifts[j] = nshift
    while nout > 0 and out[nout - 1] == 0:
        nout -= 1
    return out[:nout], shifts


def encode_slots(cum_lo, cum_hi):
    """Encode a sequence of slots; returns ``(bytes, consumed)``.

    ``consumed[j]`` is the number of bytes a decoder has read after decoding
    symbol ``j``.
    """
    cum_lo = np.ascontiguousarray(cum_lo, dtype=np.int64)
    cum_hi = np.ascontiguousarray(cum_hi, dtype=np.int64)
    if cum_lo.shape != cum_hi.shape:
        raise ContractViolation("slot arrays differ in length")
    if cum_lo.size and not (np.all(cum_lo >= 0) and np.all(cum_lo < cum_hi) and np.all(cum_hi <= PROB_ONE)):
        raise ContractViolation("invalid slot in sequence")
    out, shifts = _encode_kernel(cum_lo, cum_hi)
    return out.tobytes(), shifts + PRIME_BYTES


@numba.njit(cache=True)
def _decode_kernel(data, available, limit, cum, start, length, escapes, tail_bits):
    n = start.shape[0]
    syms = np.zeros(n, dtype=np.int64)
    excess = np.zeros(n, dtype=np.int64)
    consumed = np.zeros(n, dtype=np.int64)
    pos = 0
    padded = False
    code = np.int64(0)
    rng = np.int64(MASK32)
    for _ in range(PRIME_BYTES):
        b = 0
        if pos < available:
            b = data[pos]
        else:
            padded = True
        pos += 1
        code = (code << 8) | b
    err = 0
    count = 0
    for i in range(n):
        lo_idx = start[i]
        m = length[i]
        s = -1
        zeros = 0
        bits_left = -1
        value = 1
        while True:
            t = (((code + 1) << PROB_BITS) - 1) // rng
            if s < 0:
                # binary search for the last boundary <= t
                left = 0
                right = m
                while right - left > 1:
                    mid = (left + right) >> 1
                    if cum[lo_idx + mid] <= t:
                        left = mid
                    else:
                        right = mid
                sym = left
                c0 = cum[lo_idx + sym]
                c1 = cum[lo_idx + sym + 1]
            else:
                sym = 1 if t >= HALF else 0
                c0 = HALF if sym == 1 else 0
                c1 = PROB_ONE if sym == 1 else HALF
            a = (rng * c0) >> PROB_BITS
            bb = (rng * c1) >> PROB_BITS
            code -= a
            rng = bb - a
            while rng < TOP:
                byte = 0
                if pos < available:
                    byte = data[pos]
                else:
                    padded = True
                pos += 1
                code = ((code << 8) | byte) & MASK32
                rng <<= 8
            if s < 0:
                s = sym
                if not (escapes and (sym == 0 or sym == m - 1)):
                    break
            elif bits_left < 0:
                if sym == 0:
                    zeros += 1
                    if zeros > MAX_ESCAPE_ZEROS:
                        err = 1
                        break
                else:
                    bits_left = zeros + tail_bits
                    if bits_left == 0:
                        break
            else:
                value = (value << 1) | sym
                bits_left -= 1
                if bits_left == 0:
                    break
        if err:
            # a runaway escape in bytes the caller will discard is not an error
            if pos > limit:
                err = 0
            break
        syms[i] = s
        if escapes and (s == 0 or s == m - 1):
            # gamma value then tail bits, read as one number
            excess[i] = value - (np.int64(1) << tail_bits)
        consumed[i] = pos
        if pos > limit:
            break
        count = i + 1
    return syms, excess, consumed, count, padded, err


def decode_tables(data, cum, start, length, escapes, available=None, limit=None, tail_bits=0):
    """Decode one symbol per element from per-element cumulative tables.

    Element ``i`` uses ``cum[start[i] : start[i] + length[i] + 1]``.  With
    ``escapes`` the first and last symbol of every table are followed by an
    Elias-gamma excess and ``tail_bits`` equiprobable bits, returned packed as
    ``(excess << tail_bits) | bits``.  Decoding stops after the first element
    whose consumed byte count exceeds ``limit``; only the first ``count``
    results are meaningful.

    Returns ``(symbols, excess, consumed, count, padded)``.
    """
    data = np.frombuffer(bytes(data), dtype=np.uint8)
    available = data.size if available is None else min(available, data.size)
    limit = np.iinfo(np.int64).max if limit is None else limit
    syms, excess, consumed, count, padded, err = _decode_kernel(
        data, np.int64(available), np.int64(limit),
        np.ascontiguousarray(cum, dtype=np.int64),
        np.ascontiguousarray(start, dtype=np.int64),
        np.ascontiguousarray(length, dtype=np.int64),
        bool(escapes),
        np.int64(tail_bits),
    )
    if err:
        raise ParseError("runaway escape code in payload")
    return syms, excess, consumed, int(count), bool(padded)
