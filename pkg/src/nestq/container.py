"""Embedded bitstream: header, prior segment, staged payload, checkpoint index.

Layout (little-endian)::

    "PLNQ"  version:u8  backend:u8  width:u32  height:u32  channels:u8
    levels:u8 (bit 7 = open top level)  step:f32
    criterion:u8 (low nibble criterion, high nibble coding unit)
    prior segment      u32 length + bytes
    ordering segment   u32 length + bytes   (only for side-info criteria)
    stage table        levels x u32 stage lengths, coarsest stage first
    payload            stage segments, coarsest first
    checkpoint index   bytes + u32 length   (optional, trailing)

Everything before the payload is the header and must be received whole.
Each stage is a separately flushed range-coder segment.  Inside a stage a
prefix of ``a`` bytes keeps exactly the coding units whose last symbol was
decoded after reading at most ``a - LOOKAHEAD`` bytes; the rest keep their
coarser reconstruction.
"""

from dataclasses import dataclass, field
import struct

import numpy as np

from . import model
from .backend import PriorTensor, estimate_priors, forward, latent_shape
from .errors import InvalidArgument, ParseError, TruncatedHeader, UnsupportedOperation
from .ordering import (
    CRITERIA,
    SIDE_INFO,
    UNITS,
    LatentMSE,
    greedy_ddr_order,
    order_by_delta_r,
    order_by_sigma,
    parse_orderings,
    random_order,
    serialize_orderings,
)
from .quantizer import QuantSchedule, ancestor_index, child_index, child_symbol, quantize_offsets, reconstruct_offsets
from .rangecoder import HALF, LOOKAHEAD, decode_tables, encode_slots, escape_bits

MAGIC = b"PLNQ"
VERSION = 1
BACKENDS = ("dct", "import")
CHECKPOINT_UNITS = 1024
OPEN_TOP_FLAG = 0x80
SINGLE_STAGE_FLAG = 0x40

_FIXED = struct.Struct("<4sBBIIBBfB")
_PRIOR_PER_CHANNEL = 0
_PRIOR_PER_ELEMENT = 1


@dataclass
class Header:
    backend: str
    width: int
    height: int
    channels: int
    schedule: QuantSchedule
    criterion: str
    unit: str
    priors: PriorTensor
    orderings: dict = field(default_factory=dict)
    stage_lengths: tuple = ()
    length: int = 0
    progressive: bool = True
    ordering_bytes: int = 0

    @property
    def shape(self):
        return self.priors.shape

    @property
    def pixels(self):
        return self.width * self.height

    @property
    def payload_end(self):
        return self.length + sum(self.stage_lengths)

    @property
    def coded_stages(self):
        return coded_stages(self.schedule, self.progressive)

    def stage_span(self, k):
        """``(offset, length)`` of the stage coding level ``k``."""
        K = self.schedule.levels
        lengths = self.stage_lengths
        offset = self.length + sum(lengths[: K - k])
        return offset, lengths[K - k]

    def ordering(self, k):
        if self.criterion == "sigma":
            return order_by_sigma(self.priors, self.unit)
        try:
            return self.orderings[k]
        except KeyError:
            raise ParseError(f"no transmitted ordering for stage {k}") from None


@dataclass
class DecodeResult:
    latents: np.ndarray
    level: np.ndarray
    indices: np.ndarray
    units_done: dict
    bytes_consumed: int
    padded: bool
    header: Header

    def unit_exact(self, k):
        """Boolean per coding unit (unit index order): exact at level ``k``."""
        order = self.header.ordering(k).permutation
        exact = np.zeros(order.size, dtype=bool)
        exact[order[: self.units_done.get(k, 0)]] = True
        return exact

    def bins(self, k):
        return self.indices[k - 1]


def _pack_priors(priors, force_element):
    c, h, w = priors.shape
    codes = priors.sigma_code
    per_channel = (
        not force_element
        and np.all(priors.mu == 0)
        and np.all(codes == codes[:, :1, :1])
    )
    if per_channel:
        return struct.pack("<BIII", _PRIOR_PER_CHANNEL, c, h, w) + codes[:, 0, 0].tobytes()
    return b"".join([
        struct.pack("<BIII", _PRIOR_PER_ELEMENT, c, h, w),
        priors.mu.astype("<f4").tobytes(),
        codes.tobytes(),
    ])


def _parse_priors(blob, base):
    if len(blob) < 13:
        raise ParseError("prior segment too short", base)
    layout, c, h, w = struct.unpack_from("<BIII", blob, 0)
    n = c * h * w
    if n == 0:
        raise ParseError("empty latent shape", base + 1)
    if layout == _PRIOR_PER_CHANNEL:
        if len(blob) != 13 + c:
            raise ParseError("per-channel prior segment has the wrong length", base)
        codes = np.frombuffer(blob, dtype=np.uint8, count=c, offset=13)
        return PriorTensor(np.zeros((c, h, w)), np.broadcast_to(codes[:, None, None], (c, h, w)).copy(), True)
    if layout == _PRIOR_PER_ELEMENT:
        if len(blob) != 13 + 5 * n:
            raise ParseError("per-element prior segment has the wrong length", base)
        mu = np.frombuffer(blob, dtype="<f4", count=n, offset=13)
        bad = np.flatnonzero(~np.isfinite(mu))
        if bad.size:
            raise ParseError("non-finite prior mean", base + 13 + 4 * int(bad[0]))
        codes = np.frombuffer(blob, dtype=np.uint8, count=n, offset=13 + 4 * n)
        return PriorTensor(mu.astype(np.float64).reshape(c, h, w), codes.reshape(c, h, w).copy())
    raise ParseError(f"unknown prior layout {layout}", base)


def read_header(blob, budget=None):
    """Parse the header; raises :class:`TruncatedHeader` if it lies beyond ``budget``."""
    blob = memoryview(bytes(blob))
    avail = len(blob) if budget is None else min(budget, len(blob))

    def need(end):
        if end > avail:
            raise TruncatedHeader(f"header needs {end} bytes, only {avail} available", avail)

    need(_FIXED.size)
    magic, version, backend, width, height, channels, levels, step, tag = _FIXED.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {bytes(magic)!r}", 0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    if backend >= len(BACKENDS):
        raise ParseError(f"unknown backend id {backend}", 5)
    crit, unit = tag & 0x0F, tag >> 4
    if crit >= len(CRITERIA) or unit >= len(UNITS):
        raise ParseError(f"bad criterion/unit tag {tag:#x}", _FIXED.size - 1)
    try:
        sched = QuantSchedule(levels & 0x3F, step, bool(levels & OPEN_TOP_FLAG))
    except InvalidArgument as e:
        raise ParseError(f"invalid schedule: {e}", 14) from None
    off = _FIXED.size

    need(off + 4)
    (plen,) = struct.unpack_from("<I", blob, off)
    need(off + 4 + plen)
    priors = _parse_priors(bytes(blob[off + 4: off + 4 + plen]), off + 4)
    off += 4 + plen
    criterion, unit_kind = CRITERIA[crit], UNITS[unit]
    if BACKENDS[backend] == "dct" and priors.shape != latent_shape(width, height, channels):
        raise ParseError("prior shape does not match the image geometry", _FIXED.size)

    orderings = {}
    ordering_start = off
    if SIDE_INFO[criterion]:
        need(off + 4)
        (olen,) = struct.unpack_from("<I", blob, off)
        need(off + 4 + olen)
        orderings = parse_orderings(bytes(blob[off + 4: off + 4 + olen]), criterion, unit_kind, off + 4)
        off += 4 + olen

    need(off + 4 * sched.levels)
    lengths = struct.unpack_from(f"<{sched.levels}I", blob, off)
    off += 4 * sched.levels
    return Header(BACKENDS[backend], width, height, channels, sched, criterion, unit_kind,
                  priors, orderings, tuple(lengths), off, not levels & SINGLE_STAGE_FLAG,
                  off - 4 * sched.levels - ordering_start)


def coded_stages(sched, progressive=True):
    """Levels that get a payload stage, in coding order.

    The single-stage (non-progressive) layout codes the finest level directly
    in the last stage slot.
    """
    if not progressive:
        return [1]
    return [k for k in range(sched.levels, 0, -1) if not model.is_empty_stage(sched, k)]


def _stage_orderings(latents, priors, sched, criterion, unit, seed, distortion_oracle, progressive):
    """Coding order for every coded stage, keyed by the level it codes."""
    out = {}
    rng = np.random.default_rng(seed)
    for k in coded_stages(sched, progressive):
        if criterion == "sigma":
            out[k] = order_by_sigma(priors, unit)
        elif criterion == "dr":
            out[k] = order_by_delta_r(latents, priors, sched, k + 1, unit)
        elif criterion == "ddr":
            out[k] = greedy_ddr_order(latents, priors, sched, k + 1, unit, distortion_oracle)
        else:
            out[k] = random_order(priors.shape, unit, int(rng.integers(1 << 62)))
    return out


def _stage_tables(sched, k, sigma, parent, flat=False):
    """Per-element tables for stage ``k`` in the given element order."""
    if flat or model.is_coarse_stage(sched, k):
        tabs = model.CoarseTables(sigma, sched, k)
        return tabs.cum, tabs.start, tabs.length, tabs.extent, tabs.tail_bits
    counts, nchild = model.conditional_counts(parent, sigma, sched, k)
    cum = np.zeros((counts.shape[0], 4), dtype=np.int64)
    cum[:, 1:] = np.cumsum(counts, axis=1)
    start = 4 * np.arange(counts.shape[0], dtype=np.int64)
    return cum.ravel(), start, nchild.astype(np.int64), None, None


def _encode_stage(sched, k, sigma, child, parent, flat=False):
    """Stage bytes and the consumed byte count after each element."""
    cum, start, length, extent, tb = _stage_tables(sched, k, sigma, parent, flat)
    if tb is not None:
        sym, excess = model.coarse_symbol(child, extent)
        esc = (sym == 0) | (sym == length - 1)
    else:
        sym = child_symbol(parent, child)
        esc = np.zeros(child.shape, dtype=bool)
    lo = cum[start + sym]
    hi = cum[start + sym + 1]
    if not np.any(esc):
        return encode_slots(lo, hi)
    bits = {}
    for i in np.flatnonzero(esc):
        e = int(excess[i])
        bits[int(i)] = escape_bits(e >> tb) + [(e >> j) & 1 for j in range(tb - 1, -1, -1)]
    nsym = np.ones(child.size, dtype=np.int64)
    for i, b in bits.items():
        nsym[i] += len(b)
    last = np.cumsum(nsym) - 1
    first = last - nsym + 1
    slo = np.empty(int(nsym.sum()), dtype=np.int64)
    shi = np.empty_like(slo)
    slo[first] = lo
    shi[first] = hi
    for i, b in bits.items():
        pos = first[i] + 1 + np.arange(len(b))
        barr = np.asarray(b, dtype=np.int64)
        slo[pos] = barr * HALF
        shi[pos] = HALF + barr * HALF
    data, consumed = encode_slots(slo, shi)
    return data, consumed[last]


def encode(latents, priors, sched=None, criterion="sigma", unit="element", *, backend="import",
           width=None, height=None, channels=None, seed=0, distortion_oracle=None, checkpoints=True,
           progressive=True):
    """Encode latents into one embedded stream.

    ``backend``/``width``/``height``/``channels`` describe where the latents
    came from; for the DCT backend they must match the latent shape.  For
    imported latents the dimensions only set the pixel count used for bpp and
    default to 16x the latent grid.

    With ``progressive=False`` the finest-level bins are coded in one stage,
    without the coarser levels; this is the non-progressive reference codec
    for the same schedule.
    """
    sched = QuantSchedule() if sched is None else sched
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3 or latents.shape != priors.shape:
        raise InvalidArgument(f"latent shape {latents.shape} does not match priors {priors.shape}")
    if not np.all(np.isfinite(latents)):
        raise InvalidArgument("non-finite latent values")
    if criterion not in CRITERIA:
        raise InvalidArgument(f"unknown criterion {criterion!r}")
    if unit not in UNITS:
        raise InvalidArgument(f"unknown coding unit {unit!r}")
    if backend not in BACKENDS:
        raise InvalidArgument(f"unknown backend {backend!r}")
    c, h, w = latents.shape
    if backend == "dct":
        if None in (width, height, channels):
            raise InvalidArgument("the DCT backend needs the image dimensions")
        if latent_shape(width, height, channels) != latents.shape:
            raise InvalidArgument("latent shape does not match the image dimensions")
    else:
        width = 16 * w if width is None else width
        height = 16 * h if height is None else height
        channels = 3 if channels is None else channels
    if criterion == "ddr" and distortion_oracle is None and backend == "dct":
        distortion_oracle = LatentMSE(latents, width * height * channels)

    # the decoder only sees float32 means
    mu = priors.mu.astype(np.float32).astype(np.float64)
    priors = PriorTensor(mu, priors.sigma_code, priors.per_channel)
    d = (latents - mu).ravel()
    sigma = priors.sigma.ravel()
    K = sched.levels
    idx = {k: quantize_offsets(d, sched, k) for k in range(1, K + 2)}
    orderings = _stage_orderings(latents, priors, sched, criterion, unit, seed, distortion_oracle, progressive)

    segments, unit_ends = [], {}
    for k in range(K, 0, -1):
        if k not in orderings:
            segments.append(b"")
            continue
        order, rank = orderings[k].element_order(latents.shape)
        data, consumed = _encode_stage(sched, k, sigma[order], idx[k][order], idx[k + 1][order],
                                       flat=not progressive)
        segments.append(data)
        n_units = orderings[k].permutation.size
        ends = np.searchsorted(rank, np.arange(n_units), side="right") - 1
        unit_ends[k] = consumed[ends]

    head = [
        _FIXED.pack(MAGIC, VERSION, BACKENDS.index(backend), width, height, channels,
                    K | (OPEN_TOP_FLAG if sched.open_top else 0) | (0 if progressive else SINGLE_STAGE_FLAG),
                    sched.step,
                    CRITERIA.index(criterion) | (UNITS.index(unit) << 4)),
    ]
    prior_blob = _pack_priors(priors, backend == "import")
    head.append(struct.pack("<I", len(prior_blob)) + prior_blob)
    if SIDE_INFO[criterion]:
        oblob = serialize_orderings(sorted(orderings.items(), reverse=True))
        head.append(struct.pack("<I", len(oblob)) + oblob)
    head.append(struct.pack(f"<{K}I", *(len(s) for s in segments)))
    header = b"".join(head)
    blob = header + b"".join(segments)
    if checkpoints:
        index = _build_index(len(header), segments, unit_ends, K)
        blob += index + struct.pack("<I", len(index))
    return blob


def encode_image(img, sched=None, criterion="sigma", unit="element", **kwargs):
    latents = forward(img)
    return encode(latents, estimate_priors(latents), sched, criterion, unit, backend="dct",
                  width=img.width, height=img.height, channels=img.channels, **kwargs)


def naive_scaling_encode(latents, priors, s, **kwargs):
    """Single-level stream on the uniform grid of step ``s`` (no deadzone)."""
    if not s >= 1:
        raise InvalidArgument(f"scale must be >= 1, got {s}")
    return encode(latents, priors, QuantSchedule(1, s), "sigma", "element", **kwargs)


def _build_index(header_len, segments, unit_ends, K):
    entries = [(K + 1, 0, header_len)]
    offset = header_len
    for pos, k in enumerate(range(K, 0, -1)):
        length = len(segments[pos])
        if k in unit_ends:
            ends = unit_ends[k]
            for j in range(CHECKPOINT_UNITS, ends.size, CHECKPOINT_UNITS):
                need = min(length, int(ends[j - 1]) + LOOKAHEAD)
                entries.append((k, j, offset + need))
            entries.append((k, ends.size, offset + length))
        offset += length
    body = struct.pack("<II", CHECKPOINT_UNITS, len(entries))
    body += b"".join(struct.pack("<BII", *e) for e in entries)
    return body


def read_index(blob, header=None):
    """Checkpoint entries ``(level, units_done, byte_offset)``, or ``None``."""
    header = read_header(blob) if header is None else header
    end = header.payload_end
    if len(blob) < end + 4 + 8:
        return None
    (n,) = struct.unpack_from("<I", blob, len(blob) - 4)
    start = len(blob) - 4 - n
    if start != end:
        raise ParseError("checkpoint index length disagrees with the payload size", len(blob) - 4)
    _, count = struct.unpack_from("<II", blob, start)
    if 8 + 9 * count != n:
        raise ParseError("malformed checkpoint index", start)
    return [struct.unpack_from("<BII", blob, start + 8 + 9 * i) for i in range(count)]


def decode(blob, byte_budget=None):
    blob = bytes(blob)
    budget = len(blob) if byte_budget is None else max(0, min(int(byte_budget), len(blob)))
    header = read_header(blob, budget)
    sched = header.schedule
    K = sched.levels
    shape = header.shape
    n = int(np.prod(shape))
    mu = header.priors.mu.ravel()
    sigma = header.priors.sigma.ravel()

    indices = np.zeros((K + 2, n), dtype=np.int64)
    level = np.full(n, K + 1, dtype=np.int64)
    units_done = {}
    consumed_total = header.length
    padded = False
    flat = not header.progressive
    for k in range(K, 0, -1):
        offset, length = header.stage_span(k)
        if k not in header.coded_stages:
            if not flat:
                # an unbounded level is known without reading anything
                level[:] = k
            units_done[k] = 0
            continue
        avail = max(0, min(length, budget - offset))
        if avail == 0 and length > 0:
            break
        ordering = header.ordering(k)
        order, rank = ordering.element_order(shape)
        cum, start, tlen, extent, tb = _stage_tables(sched, k, sigma[order], indices[k + 1][order], flat)
        complete = avail == length
        limit = None if complete else avail - LOOKAHEAD
        syms, excess, consumed, count, pad = decode_tables(
            blob[offset: offset + length], cum, start, tlen, tb is not None,
            available=avail, limit=limit, tail_bits=tb or 0)
        padded |= pad and not complete
        n_units = ordering.permutation.size
        if complete:
            done_units = n_units
        else:
            # rank is non-decreasing; a unit survives only if all its elements do
            done_units = int(rank[count]) if count < rank.size else n_units
        keep = int(np.searchsorted(rank, done_units, side="left"))
        sel = order[:keep]
        if tb is not None:
            new = model.coarse_index(syms[:keep], excess[:keep], extent[:keep])
        else:
            new = child_index(indices[k + 1][sel], syms[:keep])
        indices[k][sel] = new
        level[sel] = k
        units_done[k] = done_units
        if complete:
            consumed_total = offset + length
        else:
            consumed_total = offset + (int(consumed[keep - 1]) if keep else 0)
            break

    if flat:
        # coarser bins follow from the finest ones
        for k in range(2, K + 1):
            indices[k] = ancestor_index(indices[1], k - 1) if not sched.is_unbounded(k) else 0
    recon = mu.copy()
    for k in range(1, K + 1):
        at = level == k
        if np.any(at):
            recon[at] = mu[at] + reconstruct_offsets(indices[k][at], sched, k)
    return DecodeResult(
        latents=recon.reshape(shape),
        level=level.reshape(shape),
        indices=indices[1:K + 1].reshape((K,) + shape),
        units_done=units_done,
        bytes_consumed=consumed_total,
        padded=padded,
        header=header,
    )


def truncate(blob, target_bytes=None, target_bpp=None):
    """Prefix of the stream no longer than the target, snapped to a checkpoint if indexed."""
    if (target_bytes is None) == (target_bpp is None):
        raise InvalidArgument("give exactly one of target_bytes and target_bpp")
    blob = bytes(blob)
    header = read_header(blob)
    if target_bpp is not None:
        target_bytes = int(np.floor(target_bpp * header.pixels / 8))
    target = min(int(target_bytes), header.payload_end)
    if target < header.length:
        raise TruncatedHeader(f"target {target} bytes is inside the {header.length}-byte header", target)
    index = read_index(blob, header)
    if index:
        target = max(off for _, _, off in index if off <= target)
    return blob[:target]


def stage_boundaries(blob):
    """Byte offsets at which each stage ends, coarsest first, plus the header end."""
    header = read_header(blob)
    out = [header.length]
    for k in range(header.schedule.levels, 0, -1):
        offset, length = header.stage_span(k)
        out.append(offset + length)
    return out


def level_only_payload(blob):
    header = read_header(blob)
    return sum(header.stage_lengths)


def reconstruct_image(result):
    """Inverse-transform a DCT-backend decode."""
    from .backend import inverse

    h = result.header
    if h.backend != "dct":
        raise UnsupportedOperation("imported latents have no synthesis transform here")
    return inverse(result.latents, h.width, h.height, h.channels)
