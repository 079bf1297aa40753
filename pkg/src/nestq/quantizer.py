"""Fully nested deadzone quantization levels.

Level ``k`` (1 = finest) has side bins of width ``2**(k-1) * step`` and a
center bin of half-width ``2**(k-1) * step - step / 2``.  Every bin boundary
is an odd multiple of ``step / 2``; the positive boundaries of level ``k`` are
``(2**k * j - 1) * step / 2`` for ``j >= 1``.  Coarser boundaries are
therefore a subset of finer ones and each bin splits into exactly two
children (three for the center bin).

All geometry is expressed as offsets from the prior mean ``mu``.  Boundaries
are computed as ``odd_integer * half_step`` so a boundary shared between
levels is the same float at both levels.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ContractViolation, InvalidArgument
from .gaussian import Interval

DEFAULT_LEVELS = 4
MAX_LEVELS = 16


@dataclass(frozen=True)
class QuantSchedule:
    """``levels`` nested quantizers with finest step ``step``.

    With ``open_top`` the coarsest level degenerates to a single bin covering
    the whole line, reconstructing every value at ``mu`` (an infinitely wide
    deadzone).
    """

    levels: int = DEFAULT_LEVELS
    step: float = 1.0
    open_top: bool = False

    def __post_init__(self):
        if not 1 <= self.levels <= MAX_LEVELS:
            raise InvalidArgument(f"level count must be in [1, {MAX_LEVELS}], got {self.levels}")
        if not (math.isfinite(self.step) and self.step > 0):
            raise InvalidArgument(f"step must be positive and finite, got {self.step}")
        if self.open_top and self.levels < 2:
            raise InvalidArgument("an open top level needs at least one bounded level below it")
        # the container stores the step as float32
        object.__setattr__(self, "step", float(np.float32(self.step)))
        if self.step <= 0:
            raise InvalidArgument("step underflows float32")

    @property
    def half(self):
        return self.step / 2

    def step_at(self, k):
        self._check_level(k)
        if self.is_unbounded(k):
            return math.inf
        return float(2 ** (k - 1)) * self.step

    def deadzone_halfwidth(self, k):
        self._check_level(k)
        if self.is_unbounded(k):
            return math.inf
        return (2**k - 1) * self.half

    def is_unbounded(self, k):
        """True for the implicit level ``levels + 1`` and for an open top level."""
        return k > self.levels or (self.open_top and k == self.levels)

    @property
    def coarsest_bounded(self):
        return self.levels - 1 if self.open_top else self.levels

    def _check_level(self, k):
        if not 1 <= k <= self.levels + 1:
            raise InvalidArgument(f"level {k} outside [1, {self.levels}]")


@dataclass(frozen=True, order=True)
class BinId:
    level: int
    index: int


def side_lo(sched, k, i):
    """Offset of the inner boundary of positive side bin ``i >= 1`` at level ``k``."""
    return (2**k * np.asarray(i, dtype=np.float64) - 1) * sched.half


def bin_offsets(sched, k, index):
    """``(lo, hi)`` offsets from ``mu`` for bins at level ``k`` (vectorized)."""
    index = np.asarray(index, dtype=np.int64)
    if sched.is_unbounded(k):
        return np.full(index.shape, -np.inf), np.full(index.shape, np.inf)
    a = np.abs(index)
    c = (2**k - 1) * sched.half
    inner = np.where(a == 0, -c, side_lo(sched, k, a))
    outer = np.where(a == 0, c, side_lo(sched, k, a + 1))
    lo = np.where(index < 0, -outer, inner)
    hi = np.where(index < 0, -inner, outer)
    return lo, hi


def quantize_offsets(d, sched, k):
    """Level-``k`` bin indices of offsets ``d = y - mu`` (vectorized).

    Points on a boundary go to the bin farther from zero.
    """
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise InvalidArgument("cannot quantize non-finite values")
    if sched.is_unbounded(k):
        return np.zeros(d.shape, dtype=np.int64)
    a = np.abs(d)
    c = (2**k - 1) * sched.half
    approx = np.floor((a / sched.half + 1) / 2**k)
    i = np.where(a < c, 0, np.maximum(approx, 1)).astype(np.int64)
    # the division above can be off by one near boundaries; settle against the
    # exact boundary floats
    lo = np.where(i == 0, -np.inf, side_lo(sched, k, i))
    i = np.where((i > 0) & (a < lo), i - 1, i)
    hi = np.where(i == 0, c, side_lo(sched, k, i + 1))
    i = np.where(a >= hi, i + 1, i)
    return np.where(d < 0, -i, i)


def reconstruct_offsets(index, sched, k):
    """Reconstruction offsets: 0 for the center bin, the midpoint otherwise."""
    index = np.asarray(index, dtype=np.int64)
    if sched.is_unbounded(k):
        return np.zeros(index.shape)
    a = np.abs(index)
    mid = (side_lo(sched, k, a) + side_lo(sched, k, a + 1)) / 2
    return np.where(a == 0, 0.0, np.where(index < 0, -mid, mid))


def children_offsets(parent, sched, k):
    """Child edges and count for level-``k`` parents, ``k >= 2`` (vectorized).

    Returns ``(edges, count)`` where ``edges`` has shape ``(n, 4)``: three
    children for a center parent, two otherwise (last column then repeats
    the outer edge and must be ignored).
    """
    parent = np.asarray(parent, dtype=np.int64)
    lo, hi = bin_offsets(sched, k, parent)
    a = np.abs(parent)
    ck = (2**(k - 1) - 1) * sched.half
    mid = side_lo(sched, k - 1, 2 * a + 1)
    edges = np.empty(parent.shape + (4,))
    edges[..., 0] = lo
    edges[..., 1] = np.where(a == 0, -ck, np.where(parent < 0, -mid, mid))
    edges[..., 2] = np.where(a == 0, ck, hi)
    edges[..., 3] = hi
    count = np.where(a == 0, 3, 2)
    return edges, count


def child_index(parent, symbol):
    """Level-``k-1`` index of child ``symbol`` (ascending position) of ``parent``."""
    parent = np.asarray(parent, dtype=np.int64)
    symbol = np.asarray(symbol, dtype=np.int64)
    return np.where(parent == 0, symbol - 1,
                    np.where(parent > 0, 2 * parent + symbol, 2 * parent - 1 + symbol))


def child_symbol(parent, child):
    """Inverse of :func:`child_index`."""
    parent = np.asarray(parent, dtype=np.int64)
    child = np.asarray(child, dtype=np.int64)
    return np.where(parent == 0, child + 1,
                    np.where(parent > 0, child - 2 * parent, child - 2 * parent + 1))


def ancestor_index(index, steps):
    """Index of the bin ``steps`` levels coarser that contains bins ``index``."""
    index = np.asarray(index, dtype=np.int64)
    return np.sign(index) * (np.abs(index) >> steps)


# Scalar API


def naive_scale_quantize(y, mu, s):
    """Uniform latent scaling: ``round((y - mu) / s) * s + mu``, half away from zero."""
    if not (math.isfinite(s) and s >= 1):
        raise InvalidArgument(f"scale must be >= 1, got {s}")
    if not (math.isfinite(y) and math.isfinite(mu)):
        raise InvalidArgument("non-finite input")
    t = (y - mu) / s
    r = math.copysign(math.floor(abs(t) + 0.5), t)
    return r * s + mu


def quantize(y, mu, sched, k):
    _check_level(sched, k)
    return BinId(k, int(quantize_offsets(float(y) - float(mu), sched, k)))


def bin_interval(b, mu, sched):
    _check_level(sched, b.level)
    lo, hi = bin_offsets(sched, b.level, b.index)
    return Interval(float(lo) + mu, float(hi) + mu)


def reconstruct(b, mu, sched):
    _check_level(sched, b.level)
    return float(reconstruct_offsets(b.index, sched, b.level)) + mu


def children(b, sched):
    """Level-``k-1`` bins that exactly tile ``b``, in ascending order."""
    _check_level(sched, b.level)
    if b.level == 1:
        raise ContractViolation("finest-level bins have no children")
    if sched.is_unbounded(b.level):
        raise ContractViolation("the open top bin has unboundedly many children")
    n = 3 if b.index == 0 else 2
    return [BinId(b.level - 1, int(child_index(b.index, s))) for s in range(n)]


def _check_level(sched, k):
    if not 1 <= k <= sched.levels:
        raise InvalidArgument(f"level {k} outside [1, {sched.levels}]")
