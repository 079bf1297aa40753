import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestq.errors import ContractViolation, ParseError
from nestq.gaussian import PROB_ONE
from nestq.rangecoder import (
    PRIME_BYTES,
    RangeDecoder,
    RangeEncoder,
    SymbolSlot,
    decode_escape,
    decode_tables,
    encode_escape,
    encode_slots,
    escape_bits,
    partition_cum,
    slots_from_counts,
)


def random_tables(rng, n, alphabet):
    counts = rng.integers(1, 4000, size=(n, alphabet)).astype(np.float64)
    counts = np.floor(counts / counts.sum(axis=1, keepdims=True) * (PROB_ONE - alphabet)).astype(np.int64) + 1
    counts[:, 0] += PROB_ONE - counts.sum(axis=1)
    return counts


def flat_tables(counts):
    n, m = counts.shape
    cum = np.concatenate([np.zeros((n, 1), dtype=np.int64), np.cumsum(counts, axis=1)], axis=1)
    pad = np.concatenate([cum, np.zeros((n, 1), dtype=np.int64)], axis=1)
    return pad.ravel(), np.arange(n) * (m + 2), np.full(n, m)


def test_slot_validation():
    with pytest.raises(ContractViolation):
        SymbolSlot(5, 5)
    with pytest.raises(ContractViolation):
        partition_cum([SymbolSlot(0, 10), SymbolSlot(11, PROB_ONE)])
    with pytest.raises(ContractViolation):
        RangeEncoder().encode_range(0, PROB_ONE + 1)


def test_scalar_roundtrip_and_kernel_bytes_agree():
    rng = np.random.default_rng(1)
    counts = random_tables(rng, 3000, 5)
    syms = rng.integers(0, 5, 3000)
    enc = RangeEncoder()
    slots = [slots_from_counts(c) for c in counts]
    for s, sl in zip(syms, slots):
        enc.encode(sl[s])
    blob = enc.finish()
    cum = np.concatenate([np.zeros((3000, 1), dtype=np.int64), np.cumsum(counts, axis=1)], axis=1)
    lo = cum[np.arange(3000), syms]
    hi = cum[np.arange(3000), syms + 1]
    fast, consumed = encode_slots(lo, hi)
    assert fast == blob
    dec = RangeDecoder(blob)
    for j, (s, sl) in enumerate(zip(syms, slots)):
        assert dec.decode(sl) == s
        assert dec.bytes_consumed == consumed[j]


def test_empty_stream():
    blob, consumed = encode_slots(np.zeros(0), np.zeros(0))
    assert blob == b"" and consumed.size == 0


def test_kernel_decoder():
    rng = np.random.default_rng(2)
    counts = random_tables(rng, 5000, 3)
    syms = rng.integers(0, 3, 5000)
    cum, start, length = flat_tables(counts)
    c2 = np.cumsum(np.concatenate([np.zeros((5000, 1), dtype=np.int64), counts], axis=1), axis=1)
    blob, consumed = encode_slots(c2[np.arange(5000), syms], c2[np.arange(5000), syms + 1])
    got, _, used, count, padded = decode_tables(blob, cum, start, length, escapes=False)
    assert count == 5000 and np.array_equal(got, syms)
    assert np.array_equal(used, consumed)
    assert padded == (consumed[-1] > len(blob))


def test_prefix_decodes_its_symbols():
    rng = np.random.default_rng(3)
    counts = random_tables(rng, 2000, 4)
    syms = rng.integers(0, 4, 2000)
    cum, start, length = flat_tables(counts)
    c2 = np.cumsum(np.concatenate([np.zeros((2000, 1), dtype=np.int64), counts], axis=1), axis=1)
    blob, consumed = encode_slots(c2[np.arange(2000), syms], c2[np.arange(2000), syms + 1])
    for cut in (0, 5, len(blob) // 3, len(blob) - 1):
        got, _, used, count, _ = decode_tables(blob, cum, start, length, False, available=cut)
        safe = consumed <= cut
        assert np.array_equal(got[safe], syms[safe])


@pytest.mark.parametrize("x", [0, 1, 2, 3, 7, 8, 1000, 2**40])
def test_gamma_roundtrip(x):
    bits = escape_bits(x)
    assert len(bits) == 2 * ((x + 1).bit_length() - 1) + 1
    enc = RangeEncoder()
    encode_escape(enc, x)
    enc.encode_bit(1)
    dec = RangeDecoder(enc.finish())
    assert decode_escape(dec) == x
    assert dec.decode_bit() == 1


def test_runaway_escape_raises():
    dec = RangeDecoder(b"\x00" * 64)
    with pytest.raises(ParseError):
        decode_escape(dec)


def test_near_entropy_rate():
    rng = np.random.default_rng(4)
    p = np.array([0.7, 0.2, 0.1])
    counts = np.round(p * PROB_ONE).astype(np.int64)
    counts[0] += PROB_ONE - counts.sum()
    cum = np.concatenate([[0], np.cumsum(counts)])
    syms = rng.choice(3, 100000, p=p)
    blob, _ = encode_slots(cum[syms], cum[syms + 1])
    info = -np.log2(counts[syms] / PROB_ONE).sum() / 8
    assert len(blob) <= info * 1.001 + 8


def test_prime_bytes_consumed():
    blob, consumed = encode_slots(np.array([0]), np.array([PROB_ONE // 2]))
    assert consumed[0] == PRIME_BYTES


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=400), st.integers(0, 2**31))
def test_random_roundtrip(symbols, seed):
    rng = np.random.default_rng(seed)
    n = len(symbols)
    counts = random_tables(rng, n, 3)
    syms = np.array(symbols)
    c2 = np.cumsum(np.concatenate([np.zeros((n, 1), dtype=np.int64), counts], axis=1), axis=1)
    blob, _ = encode_slots(c2[np.arange(n), syms], c2[np.arange(n), syms + 1])
    cum, start, length = flat_tables(counts)
    got, _, _, count, _ = decode_tables(blob, cum, start, length, False)
    assert count == n and np.array_equal(got, syms)


def test_certain_symbols_cost_nothing():
    n = 1000
    blob, consumed = encode_slots(np.zeros(n, dtype=np.int64), np.full(n, PROB_ONE))
    assert blob == b""
    assert np.all(consumed == PRIME_BYTES)
    enc = RangeEncoder()
    for _ in range(n):
        enc.encode(SymbolSlot(0, PROB_ONE))
    assert enc.finish() == b""
