"""Per-stage symbol alphabets and their fixed-point tables.

Stage ``k`` codes every element's level-``k`` bin given its level-``k+1`` bin.
When level ``k+1`` is unbounded (the implicit level above the schedule, or an
open top level) the stage is *coarse*: its alphabet is the level-``k`` bins of
the element's coverage region plus one escape symbol on each side.  Otherwise
the alphabet is the two or three children of the parent bin.

Tables use the Gaussian measure plus ``FLOOR_MASS`` for every finest-level bin
a symbol covers.  The floor keeps tail probabilities representable and,
being additive, makes nested conditionals multiply out to exactly the
single-stage probability of the finest bin.  The coverage region is a union
of bins of the coarsest bounded level ``Kb``, so it is the same for every
stage and for the single-stage code of the finest level.

An escaped symbol is followed by the Elias-gamma code of how many level-``Kb``
bins lie between the coverage edge and the element's bin, then ``Kb - k``
equiprobable bits locating the level-``k`` bin inside that level-``Kb`` bin.

All tables depend on sigma and the geometry only, never on mu, because the
geometry is centered on the prior mean.
"""

import numpy as np

from .gaussian import PROB_ONE, TAIL_SIGMAS, edge_masses, fixed_partition, standard_mass
from .quantizer import bin_offsets, child_symbol, children_offsets, quantize_offsets, side_lo

# coverage is capped at this many finest bins on each side
COVERAGE_CAP = 4096
FLOOR_MASS = 1.0 / PROB_ONE
# smallest real-valued probability used when reporting rates in bits
MIN_REAL_PROB = 2.0**-64


def is_coarse_stage(sched, k):
    return sched.is_unbounded(k + 1) and not sched.is_unbounded(k)


def is_empty_stage(sched, k):
    return sched.is_unbounded(k)


def fine_count(sched, k, index):
    """Number of finest-level bins inside level-``k`` bins ``index``."""
    index = np.asarray(index, dtype=np.int64)
    return np.where(index == 0, 2**k - 1, 2 ** (k - 1))


def coverage(sigma, sched):
    """Side bins per side of the coverage region, at level ``Kb``."""
    reach = np.minimum(TAIL_SIGMAS * np.asarray(sigma, dtype=np.float64), COVERAGE_CAP * sched.step)
    return quantize_offsets(reach, sched, sched.coarsest_bounded)


def tail_bits(sched, k):
    return sched.coarsest_bounded - k


def coarse_extent(sigma, sched, k):
    """Side bins per side of the level-``k`` coarse alphabet."""
    m = coverage(sigma, sched)
    return ((m + 1) << tail_bits(sched, k)) - 1


def coarse_edges(n, sched, k):
    """Ascending bin edges (offsets) of the ``2n + 3`` symbol coarse alphabet."""
    pos = side_lo(sched, k, np.arange(1, n + 2))
    return np.concatenate([[-np.inf], -pos[::-1], pos, [np.inf]])


def coarse_masses(sigma, sched, k):
    n = int(coarse_extent(sigma, sched, k))
    t = coarse_edges(n, sched, k) / sigma
    m = edge_masses(t)[0]
    m[1:-1] += fine_count(sched, k, np.arange(-n, n + 1)) * FLOOR_MASS
    m[[0, -1]] += FLOOR_MASS
    return m


def coarse_counts(sigma, sched, k):
    """Fixed-point counts of the coarse alphabet for one sigma value."""
    return fixed_partition(coarse_masses(sigma, sched, k)[None, :])[0]


def coarse_symbol(index, n):
    """Map level-``k`` indices to ``(symbol, excess)`` for alphabets of extent ``n``.

    ``excess`` packs the gamma-coded level-``Kb`` distance above the
    ``tail_bits`` low bits of the position inside that bin.
    """
    index = np.asarray(index, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    a = np.abs(index)
    esc = a > n
    excess = np.where(esc, a - (n + 1), 0)
    sym = np.where(index < -n, 0, np.where(index > n, 2 * n + 2, index + n + 1))
    return sym, excess


def coarse_index(sym, excess, n):
    sym = np.asarray(sym, dtype=np.int64)
    excess = np.asarray(excess, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    return np.where(sym == 0, -n - 1 - excess, np.where(sym == 2 * n + 2, n + 1 + excess, sym - n - 1))


class CoarseTables:
    """Flat cumulative tables for the distinct sigma values of a stage."""

    def __init__(self, sigma, sched, k):
        sigma = np.asarray(sigma, dtype=np.float64).ravel()
        values, inverse = np.unique(sigma, return_inverse=True)
        cums, starts, lengths, extents = [], [], [], []
        offset = 0
        for s in values:
            counts = coarse_counts(s, sched, k)
            cums.append(np.concatenate([[0], np.cumsum(counts)]))
            starts.append(offset)
            lengths.append(counts.size)
            extents.append((counts.size - 3) // 2)
            offset += counts.size + 1
        self.tail_bits = tail_bits(sched, k)
        self.cum = np.concatenate(cums) if cums else np.zeros(1, dtype=np.int64)
        self.start = np.asarray(starts, dtype=np.int64)[inverse]
        self.length = np.asarray(lengths, dtype=np.int64)[inverse]
        self.extent = np.asarray(extents, dtype=np.int64)[inverse]


def conditional_masses(parent, sigma, sched, k):
    """Floored child masses for level-``k+1`` parents, shape ``(n, 3)``."""
    parent = np.asarray(parent, dtype=np.int64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    edges, nchild = children_offsets(parent, sched, k + 1)
    t = edges / sigma[:, None]
    m = np.zeros((parent.size, 3))
    three = nchild == 3
    side = 2 ** (k - 1) * FLOOR_MASS
    if np.any(three):
        m[three] = edge_masses(t[three]) + np.array([side, (2**k - 1) * FLOOR_MASS, side])
    if np.any(~three):
        m[~three, :2] = edge_masses(t[~three, :3]) + side
    return m, nchild


def conditional_counts(parent, sigma, sched, k):
    """Fixed-point child counts for level-``k+1`` parents.

    Returns ``(counts, nchild)``; ``counts`` has shape ``(n, 3)`` and is zero
    beyond ``nchild`` in each row.
    """
    parent = np.asarray(parent, dtype=np.int64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    if parent.size == 0:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    # tables depend on (sigma, parent) only; build each distinct pair once
    values, s_idx = np.unique(sigma, return_inverse=True)
    p0 = parent.min()
    key = s_idx.astype(np.int64) * (parent.max() - p0 + 1) + (parent - p0)
    _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    m, nchild = conditional_masses(parent[first], sigma[first], sched, k)
    counts = np.zeros(m.shape, dtype=np.int64)
    three = nchild == 3
    if np.any(three):
        counts[three] = fixed_partition(m[three])
    if np.any(~three):
        counts[~three, :2] = fixed_partition(m[~three, :2])
    return counts[inverse], nchild[inverse]


def stage_bits(offsets, sigma, sched, k):
    """Real-valued bits to code each element's level-``k`` bin given level ``k+1``.

    ``offsets`` are ``y - mu``.  Pure Gaussian measure, no floor; zero for an
    empty stage.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), offsets.shape)
    if is_empty_stage(sched, k):
        return np.zeros(offsets.shape)
    child = quantize_offsets(offsets, sched, k)
    lo, hi = bin_offsets(sched, k, child)
    if is_coarse_stage(sched, k):
        p = standard_mass(lo / sigma, hi / sigma)
    else:
        parent = quantize_offsets(offsets, sched, k + 1).ravel()
        edges, nchild = children_offsets(parent, sched, k + 1)
        t = edges / sigma.ravel()[:, None]
        m = np.zeros((parent.size, 3))
        three = nchild == 3
        m[three] = edge_masses(t[three])
        m[~three, :2] = edge_masses(t[~three, :3])
        sym = child_symbol(parent, child.ravel())
        p = (m[np.arange(parent.size), sym] / m.sum(axis=1)).reshape(offsets.shape)
    return -np.log2(np.maximum(p, MIN_REAL_PROB))
