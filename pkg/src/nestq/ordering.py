"""Refinement order of coding units between adjacent quantization levels.

A coding unit is one element ``(c, h, w)``, one channel ``c`` (all ``H*W``
elements) or one pixel ``(h, w)`` (all ``C`` elements).  Within a unit the
elements are coded in raster order.  Ties in every criterion are broken by
ascending unit index, i.e. raster order.

Only the sigma criterion can be recomputed by the decoder; the others depend
on the latents and must travel with the stream.

Levels are numbered as in :mod:`nestq.quantizer`; ``k`` in this module always
names the coarser (parent) level of the refinement ``k -> k-1``.  ``k`` may be
``levels + 1``, the implicit level at which every element sits at its mean.
"""

from dataclasses import dataclass
import struct

import numpy as np

from .errors import ContractViolation, InvalidArgument, ParseError, UnsupportedOperation
from .gaussian import GaussianParam, interval_mass
from .model import MIN_REAL_PROB, stage_bits
from .quantizer import quantize_offsets, reconstruct_offsets

UNITS = ("element", "channel", "pixel")
CRITERIA = ("sigma", "dr", "ddr", "random")
SIDE_INFO = {"sigma": False, "dr": True, "ddr": True, "random": True}


@dataclass(frozen=True)
class CodingUnit:
    kind: str
    coords: tuple

    def elements(self, shape):
        c, h, w = shape
        if self.kind == "element":
            return [self.coords]
        if self.kind == "channel":
            (ch,) = self.coords
            return [(ch, i, j) for i in range(h) for j in range(w)]
        if self.kind == "pixel":
            i, j = self.coords
            return [(ch, i, j) for ch in range(c)]
        raise InvalidArgument(f"unknown unit kind {self.kind!r}")


def unit_count(kind, shape):
    c, h, w = shape
    return {"element": c * h * w, "channel": c, "pixel": h * w}[_check_unit(kind)]


def coding_unit(kind, shape, u):
    c, h, w = shape
    if not 0 <= u < unit_count(kind, shape):
        raise InvalidArgument(f"unit {u} out of range")
    if kind == "element":
        return CodingUnit(kind, (u // (h * w), (u // w) % h, u % w))
    if kind == "channel":
        return CodingUnit(kind, (u,))
    return CodingUnit(kind, (u // w, u % w))


def unit_members(kind, shape):
    """Flat element indices of each unit, shape ``(units, per_unit)``."""
    c, h, w = shape
    flat = np.arange(c * h * w)
    _check_unit(kind)
    if kind == "element":
        return flat[:, None]
    if kind == "channel":
        return flat.reshape(c, h * w)
    return flat.reshape(c, h * w).T


def unit_reduce(values, kind, how="sum"):
    values = np.asarray(values, dtype=np.float64)
    per = values.ravel()[unit_members(kind, values.shape)]
    return per.mean(axis=1) if how == "mean" else per.sum(axis=1)


@dataclass(frozen=True)
class Ordering:
    permutation: np.ndarray
    criterion: str
    unit: str = "element"

    def __post_init__(self):
        p = np.asarray(self.permutation, dtype=np.int64)
        if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(p.size)):
            raise ContractViolation("ordering is not a permutation")
        if self.criterion not in CRITERIA:
            raise InvalidArgument(f"unknown criterion {self.criterion!r}")
        _check_unit(self.unit)
        object.__setattr__(self, "permutation", p)

    @property
    def side_info(self):
        return SIDE_INFO[self.criterion]

    def element_order(self, shape):
        """Flat element indices in coding order, and the unit rank of each."""
        members = unit_members(self.unit, shape)
        if members.shape[0] != self.permutation.size:
            raise ContractViolation("ordering does not match the tensor shape")
        order = members[self.permutation].ravel()
        rank = np.repeat(np.arange(self.permutation.size), members.shape[1])
        return order, rank


def _sorted_desc(score):
    return np.argsort(-np.asarray(score, dtype=np.float64), kind="stable")


def order_by_sigma(priors, unit="element"):
    return Ordering(_sorted_desc(unit_reduce(priors.sigma, unit, "mean")), "sigma", unit)


def refinement_bits(g, child, parent):
    """``-log2 P(child) / P(parent)`` on real-valued probabilities."""
    if not parent.contains(child):
        raise ContractViolation(f"{child} is not contained in {parent}")
    pc = interval_mass(g, child)
    pp = interval_mass(g, parent)
    if pp <= 0:
        return 0.0 if child == parent else -np.log2(MIN_REAL_PROB)
    return float(-np.log2(max(pc / pp, MIN_REAL_PROB)))


def delta_r(prior, y, sched, k):
    """Bits spent refining scalar latent ``y`` from level ``k`` to ``k - 1``."""
    _check_refinement(sched, k)
    if not isinstance(prior, GaussianParam):
        raise InvalidArgument("prior must be a GaussianParam")
    return float(stage_bits(y - prior.mu, prior.sigma, sched, k - 1))


def delta_r_map(latents, priors, sched, k):
    _check_refinement(sched, k)
    return stage_bits(np.asarray(latents) - priors.mu, priors.sigma, sched, k - 1)


def order_by_delta_r(latents, priors, sched, k, unit="element"):
    return Ordering(_sorted_desc(unit_reduce(delta_r_map(latents, priors, sched, k), unit)), "dr", unit)


def random_order(shape, unit="element", seed=0):
    rng = np.random.default_rng(seed)
    return Ordering(rng.permutation(unit_count(unit, shape)), "random", unit)


def refinement_pair(latents, priors, sched, k):
    """Reconstructions at levels ``k`` and ``k - 1``."""
    _check_refinement(sched, k)
    d = np.asarray(latents, dtype=np.float64) - priors.mu
    coarse = priors.mu + reconstruct_offsets(quantize_offsets(d, sched, k), sched, k)
    fine = priors.mu + reconstruct_offsets(quantize_offsets(d, sched, k - 1), sched, k - 1)
    return coarse, fine


class LatentMSE:
    """Distortion measured directly on latents.

    For an orthonormal synthesis transform this equals the sample-domain
    squared error, and it separates over elements.
    """

    def __init__(self, latents, samples=None):
        self.latents = np.asarray(latents, dtype=np.float64)
        self.samples = self.latents.size if samples is None else samples

    def distortion(self, latents):
        return float(np.sum((self.latents - latents) ** 2) / self.samples)

    def refinement_gains(self, coarse, fine, members, initial):
        gain = ((self.latents - coarse) ** 2 - (self.latents - fine) ** 2).ravel()
        return gain[members].sum(axis=1) / self.samples


class DecoderMSE:
    """Distortion of a synthesis function's output against a target signal.

    Gains are measured greedily: units are refined one after another in the
    initial order and each unit is credited with the drop in distortion its
    own refinement causes.
    """

    def __init__(self, synthesize, target):
        self.synthesize = synthesize
        self.target = np.asarray(target, dtype=np.float64)

    def distortion(self, latents):
        return float(np.mean((self.target - self.synthesize(latents)) ** 2))

    def refinement_gains(self, coarse, fine, members, initial):
        state = np.array(coarse, dtype=np.float64)
        flat = state.reshape(-1)
        fine_flat = np.asarray(fine, dtype=np.float64).reshape(-1)
        gains = np.zeros(members.shape[0])
        prev = self.distortion(state)
        for u in initial:
            idx = members[u]
            flat[idx] = fine_flat[idx]
            cur = self.distortion(state)
            gains[u] = prev - cur
            prev = cur
        return gains


def greedy_ddr_order(latents, priors, sched, k, unit="element", distortion_oracle=None, initial=None):
    """Order units by distortion drop per bit, measured greedily under ``initial``."""
    if distortion_oracle is None:
        raise UnsupportedOperation("distortion-per-bit ordering needs a distortion oracle")
    members = unit_members(unit, priors.shape)
    if initial is None:
        initial = np.arange(members.shape[0])
    dr = unit_reduce(delta_r_map(latents, priors, sched, k), unit)
    coarse, fine = refinement_pair(latents, priors, sched, k)
    dd = np.asarray(distortion_oracle.refinement_gains(coarse, fine, members, initial), dtype=np.float64)
    ratio = np.divide(dd, dr, out=np.where(dd > 0, np.inf, 0.0), where=dr > 0)
    return Ordering(_sorted_desc(ratio), "ddr", unit)


def serialize_orderings(orderings):
    """``u8 count`` then per stage ``u8 level, u8 width, u32 n, n indices``."""
    parts = [struct.pack("<B", len(orderings))]
    for level, o in orderings:
        width = 2 if o.permutation.size <= 1 << 16 else 4
        parts.append(struct.pack("<BBI", level, width, o.permutation.size))
        parts.append(o.permutation.astype("<u2" if width == 2 else "<u4").tobytes())
    return b"".join(parts)


def parse_orderings(blob, criterion, unit, base=0):
    out = {}
    try:
        (count,) = struct.unpack_from("<B", blob, 0)
        off = 1
        for _ in range(count):
            level, width, n = struct.unpack_from("<BBI", blob, off)
            off += 6
            if width not in (2, 4):
                raise ParseError(f"bad ordering index width {width}", base + off - 5)
            dtype = "<u2" if width == 2 else "<u4"
            if off + width * n > len(blob):
                raise ParseError("ordering segment overruns its length", base + off)
            perm = np.frombuffer(blob, dtype=dtype, count=n, offset=off).astype(np.int64)
            off += width * n
            try:
                out[level] = Ordering(perm, criterion, unit)
            except ContractViolation as e:
                raise ParseError(str(e), base + off) from None
    except struct.error:
        raise ParseError("ordering segment too short", base + len(blob)) from None
    return out


def _check_unit(kind):
    if kind not in UNITS:
        raise InvalidArgument(f"unknown coding unit {kind!r}; expected one of {UNITS}")
    return kind


def _check_refinement(sched, k):
    if not 2 <= k <= sched.levels + 1:
        raise InvalidArgument(f"refinement parent level {k} outside [2, {sched.levels + 1}]")
