"""Deterministic Gaussian interval probabilities on a 16-bit fixed-point grid.

Everything on the bit-exact path (the values the range coder sees) is built
from IEEE-754 ``+ - * /``, ``floor`` and ``ldexp`` only, so encoder and
decoder agree on every platform.  The normal CDF uses Hart's double-precision
rational approximation; the exponential inside it is a Cody-Waite reduction
followed by a fixed Taylor polynomial instead of the libm ``exp``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ContractViolation, InvalidArgument

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS

# Standardized points beyond this are clamped; the mass outside is below the
# fixed-point resolution by dozens of orders of magnitude.
TAIL_SIGMAS = 16.0

_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e00
_EXP_TAYLOR = [1.0 / math.factorial(n) for n in range(14)][::-1]

# Hart (1968) coefficients as tabulated by West (2005).
_HART_NUM = (
    3.52624965998911e-02,
    0.700383064443688,
    6.37396220353165,
    33.912866078383,
    112.079291497871,
    221.213596169931,
    220.206867912376,
)
_HART_DEN = (
    8.83883476483184e-02,
    1.75566716318264,
    16.064177579207,
    86.7807322029461,
    296.564248779674,
    637.333633378831,
    793.826512519948,
    440.413735824752,
)
_HART_SWITCH = 7.07106781186547
_SQRT_2PI = 2.506628274631


@dataclass(frozen=True)
class GaussianParam:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise InvalidArgument(f"non-finite Gaussian parameters ({self.mu}, {self.sigma})")
        if self.sigma <= 0:
            raise InvalidArgument(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Interval:
    """Interval ``[lo, hi]``; either end may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise InvalidArgument("interval bounds must not be NaN")
        if not self.lo < self.hi:
            raise InvalidArgument(f"empty or degenerate interval [{self.lo}, {self.hi}]")

    def contains(self, other):
        return self.lo <= other.lo and other.hi <= self.hi


@dataclass(frozen=True)
class FixedProb:
    """A probability ``numerator / 2**16`` with ``1 <= numerator <= 2**16``."""

    numerator: int

    def __post_init__(self):
        if not 1 <= self.numerator <= PROB_ONE:
            raise InvalidArgument(f"fixed-point numerator {self.numerator} out of range")

    @property
    def value(self):
        return self.numerator / PROB_ONE

    def __float__(self):
        return self.value


def exp_nonpositive(x):
    """``exp(x)`` for ``x <= 0`` using only basic IEEE operations."""
    x = np.maximum(np.asarray(x, dtype=np.float64), -746.0)
    n = np.floor(x * _INV_LN2 + 0.5)
    r = (x - n * _LN2_HI) - n * _LN2_LO
    p = np.full_like(r, _EXP_TAYLOR[0])
    for c in _EXP_TAYLOR[1:]:
        p = p * r + c
    out = np.ldexp(p, n.astype(np.int64))
    return np.where(x < -745.0, 0.0, out)


def lower_tail(t):
    """``Phi(-|t|)``, the normal mass beyond ``|t|`` on one side.

    Returns exactly 0 once ``|t| >= TAIL_SIGMAS``.
    """
    a = np.minimum(np.abs(np.asarray(t, dtype=np.float64)), 2 * TAIL_SIGMAS)
    e = exp_nonpositive(-0.5 * a * a)
    num = np.full_like(a, _HART_NUM[0])
    for c in _HART_NUM[1:]:
        num = num * a + c
    den = np.full_like(a, _HART_DEN[0])
    for c in _HART_DEN[1:]:
        den = den * a + c
    near = e * num / den
    # continued fraction for the far tail
    b = a + 0.65
    b = a + 4.0 / b
    b = a + 3.0 / b
    b = a + 2.0 / b
    b = a + 1.0 / b
    far = e / b / _SQRT_2PI
    out = np.where(a < _HART_SWITCH, near, far)
    return np.where(a >= TAIL_SIGMAS, 0.0, out)


def normal_cdf(t):
    t = np.asarray(t, dtype=np.float64)
    tail = lower_tail(t)
    return np.where(t <= 0, tail, 1.0 - tail)


def standard_mass(a, b):
    """Standard normal mass of ``[a, b]`` (vectorized, ``a <= b``).

    Evaluated so that ``standard_mass(a, b) == standard_mass(-b, -a)``
    bit-for-bit: both tails are taken from the same side.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    la = lower_tail(a)
    lb = lower_tail(b)
    left = lb - la
    right = la - lb
    middle = 1.0 - (la + lb)
    return np.where(b <= 0, left, np.where(a >= 0, right, middle))


def interval_mass(g, i):
    """Real-valued Gaussian measure of ``i`` under ``N(mu, sigma^2)``."""
    _check_interval(i)
    a = (i.lo - g.mu) / g.sigma
    b = (i.hi - g.mu) / g.sigma
    return float(standard_mass(a, b))


def to_fixed(p):
    """Round real probabilities onto the grid, flooring at one count."""
    n = np.floor(np.asarray(p, dtype=np.float64) * PROB_ONE + 0.5)
    return np.clip(n, 1, PROB_ONE).astype(np.int64)


def interval_prob(g, i):
    return FixedProb(int(to_fixed(interval_mass(g, i))))


def fixed_partition(masses):
    """Map rows of non-negative masses to integer counts summing to ``2**16``.

    Each count is at least 1.  Rows are normalized by their own total, then
    split with the largest-remainder rule: floors first, leftover counts to the
    largest fractional parts (lower index wins ties).  Counts forced up by the
    floor are paid for by the largest entry of the row.
    """
    m = np.atleast_2d(np.asarray(masses, dtype=np.float64))
    rows, n = m.shape
    if n > PROB_ONE:
        raise InvalidArgument(f"cannot partition 2**16 counts over {n} symbols")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise InvalidArgument("masses must be finite and non-negative")
    total = m.sum(axis=1, keepdims=True)
    empty = (total[:, 0] <= 0)
    if np.any(empty):
        m = m.copy()
        m[empty] = 1.0
        total = m.sum(axis=1, keepdims=True)
    q = m / total * PROB_ONE
    base = np.maximum(np.floor(q), 1.0)
    frac = q - base
    base = base.astype(np.int64)
    deficit = PROB_ONE - base.sum(axis=1)

    order = np.argsort(-frac, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n)[None, :].repeat(rows, axis=0), axis=1)
    base += (rank < np.maximum(deficit, 0)[:, None]).astype(np.int64)
    deficit = np.minimum(deficit, 0)

    while np.any(deficit < 0):
        j = np.argmax(base, axis=1)
        top = base[np.arange(rows), j]
        take = np.minimum(-deficit, top - 1)
        if np.any((deficit < 0) & (take <= 0)):
            raise InvalidArgument("too many symbols for the probability floor")
        base[np.arange(rows), j] = top - take
        deficit = deficit + take
    return base


def conditional_partition(g, children, parent):
    """Fixed-point conditionals ``P(child) / P(parent)`` for a partition of ``parent``.

    ``children`` must tile ``parent`` in ascending order.  The returned
    numerators sum to exactly ``2**16``.
    """
    _check_interval(parent)
    if not children:
        raise ContractViolation("empty partition")
    edges = [children[0].lo] + [c.hi for c in children]
    if edges[0] != parent.lo or edges[-1] != parent.hi:
        raise ContractViolation("children do not span the parent interval")
    for left, right in zip(children, children[1:]):
        if left.hi != right.lo:
            raise ContractViolation("children leave a gap or overlap")
    t = (np.asarray(edges) - g.mu) / g.sigma
    return [FixedProb(int(v)) for v in fixed_partition(edge_masses(t))[0]]


def conditional_prob(g, child, parent, siblings=None):
    """Fixed-point ``P(child) / P(parent)``.

    Without ``siblings`` the parent is split into ``child`` and its
    complement inside ``parent``, treated as one symbol; the result is then
    within one count of the exact ratio.  With ``siblings`` (an ascending
    tiling of ``parent`` containing ``child``) the full partition is used.
    """
    _check_interval(child)
    _check_interval(parent)
    if not parent.contains(child):
        raise ContractViolation(f"{child} is not contained in {parent}")
    if siblings is not None:
        siblings = list(siblings)
        if child not in siblings:
            raise ContractViolation("child is not a member of the sibling partition")
        return conditional_partition(g, siblings, parent)[siblings.index(child)]
    if child == parent:
        return FixedProb(PROB_ONE)
    t = (np.array([parent.lo, child.lo, child.hi, parent.hi]) - g.mu) / g.sigma
    m = edge_masses(t)[0]
    counts = fixed_partition([[m[1], m[0] + m[2]]])[0]
    return FixedProb(int(counts[0]))


def edge_masses(t):
    """Masses between consecutive standardized edges, row-wise.

    A row whose total mass is zero (the whole span sits in the clamped tail)
    falls back to masses proportional to width, or uniform if a width is
    infinite.
    """
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    m = standard_mass(t[:, :-1], t[:, 1:])
    dead = m.sum(axis=1) <= 0
    if np.any(dead):
        w = np.diff(t[dead], axis=1)
        bad = ~np.all(np.isfinite(w), axis=1) | (w.sum(axis=1) <= 0)
        w[bad] = 1.0
        m[dead] = w
    return m


def _check_interval(i):
    if not isinstance(i, Interval):
        raise InvalidArgument(f"expected an Interval, got {type(i).__name__}")
