"""Rate-distortion measurements: PSNR, RD curves from one stream, BD-rate.

Rates count every byte of the prefix, header included.
"""

from dataclasses import dataclass
import io
import math

import numpy as np

from .errors import InvalidArgument

PSNR_CAP = 99.0
PEAK = 255.0


def mse(a, b):
    a = _samples(a)
    b = _samples(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=PEAK):
    """PSNR in dB, capped at ``PSNR_CAP`` (which identical inputs reach)."""
    e = mse(a, b)
    if e == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(peak * peak / e))


def _samples(x):
    s = getattr(x, "samples", x)
    return np.asarray(s, dtype=np.float64)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float
    nbytes: int = 0

    def __post_init__(self):
        if not self.bpp > 0:
            raise InvalidArgument(f"bpp must be positive, got {self.bpp}")
        if not math.isfinite(self.psnr):
            raise InvalidArgument("psnr must be finite")


@dataclass(frozen=True)
class RDCurve:
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if any(b.bpp <= a.bpp for a, b in zip(pts, pts[1:])):
            raise InvalidArgument("RD points must have strictly increasing bpp")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_arrays(cls, bpp, db):
        pairs = sorted(zip(bpp, db))
        return cls(tuple(RDPoint(float(r), float(d)) for r, d in pairs))

    @property
    def bpp(self):
        return np.array([p.bpp for p in self.points])

    @property
    def psnr(self):
        return np.array([p.psnr for p in self.points])

    def __len__(self):
        return len(self.points)


def checkpoint_offsets(blob, count=None):
    """Default truncation points: stage ends plus ``count`` evenly spaced cuts."""
    from .container import read_header, stage_boundaries

    header = read_header(blob)
    cuts = set(stage_boundaries(blob)[1:])
    if count:
        cuts.update(np.linspace(header.length, header.payload_end, count + 1)[1:].astype(int).tolist())
    return sorted(c for c in cuts if c > header.length)


def rd_points(blob, original, checkpoints=None, reconstruct=None):
    """Decode each checkpoint prefix and measure it; returns a list of RDPoint."""
    from .container import decode, read_header, reconstruct_image

    reconstruct = reconstruct_image if reconstruct is None else reconstruct
    header = read_header(blob)
    if checkpoints is None:
        checkpoints = checkpoint_offsets(blob)
    elif isinstance(checkpoints, int):
        checkpoints = checkpoint_offsets(blob, checkpoints)
    pts = []
    for b in checkpoints:
        b = int(b)
        res = decode(blob, b)
        pts.append(RDPoint(8.0 * b / header.pixels, psnr(original, reconstruct(res)), b))
    return pts


def rd_curve(blob, original, checkpoints=None, reconstruct=None):
    """RD curve of one embedded stream; duplicate rates keep the better PSNR."""
    best = {}
    for p in rd_points(blob, original, checkpoints, reconstruct):
        if p.bpp not in best or p.psnr > best[p.bpp].psnr:
            best[p.bpp] = p
    return RDCurve(tuple(best[k] for k in sorted(best)))


def to_csv(points):
    out = io.StringIO()
    out.write("checkpoint_bytes,bpp,psnr_db\n")
    for p in getattr(points, "points", points):
        out.write(f"{p.nbytes},{p.bpp:.6f},{p.psnr:.4f}\n")
    return out.getvalue()


def monotonicity_violations(points):
    """Index pairs ``(i, i + 1)`` where more bits gave a lower PSNR."""
    pts = sorted(getattr(points, "points", points), key=lambda p: p.bpp)
    return [(i, i + 1) for i in range(len(pts) - 1)
            if pts[i + 1].bpp > pts[i].bpp and pts[i + 1].psnr < pts[i].psnr]


def _fit(curve, method):
    """Log-rate as a function of PSNR, as ``(integral(lo, hi), kind)``."""
    x, y = curve.psnr, np.log(curve.bpp)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if np.any(np.diff(x) <= 0):
        raise InvalidArgument("PSNR values must be distinct and increase with rate")
    if method in ("cubic", "auto"):
        poly = np.polyfit(x, y, 3)
        monotone = np.all(np.polyval(np.polyder(poly), np.linspace(x[0], x[-1], 257)) >= 0)
        if method == "cubic" or monotone:
            anti = np.polyint(poly)
            return (lambda lo, hi: np.polyval(anti, hi) - np.polyval(anti, lo)), "cubic"
    if method not in ("cubic", "auto", "pchip"):
        raise InvalidArgument(f"unknown fit method {method!r}")
    from scipy.interpolate import PchipInterpolator

    f = PchipInterpolator(x, y)
    return (lambda lo, hi: float(f.integrate(lo, hi))), "pchip"


def bd_rate(reference, test, method="auto", return_kind=False):
    """Bjontegaard delta rate of ``test`` against ``reference``, in percent.

    Log-rate is fitted as a cubic in PSNR over each curve; the average
    horizontal gap over the shared PSNR range is converted back to a rate
    ratio.  ``method="auto"`` falls back to a monotone piecewise-cubic fit when
    a cubic is not monotone over its data.
    """
    for c in (reference, test):
        if len(c) < 4:
            raise InvalidArgument("BD-rate needs at least 4 points per curve")
    lo = max(reference.psnr.min(), test.psnr.min())
    hi = min(reference.psnr.max(), test.psnr.max())
    if not hi > lo:
        raise InvalidArgument("RD curves do not overlap in PSNR")
    int_ref, k1 = _fit(reference, method)
    int_test, k2 = _fit(test, method)
    avg = (int_test(lo, hi) - int_ref(lo, hi)) / (hi - lo)
    value = float((np.exp(avg) - 1) * 100)
    if return_kind:
        return value, "pchip" if "pchip" in (k1, k2) else "cubic"
    return value


def average_curve(curves, bpp=None, points=12):
    """Mean PSNR across curves at shared rates (linear interpolation in log-rate)."""
    if not curves:
        raise InvalidArgument("no curves to average")
    lo = max(c.bpp.min() for c in curves)
    hi = min(c.bpp.max() for c in curves)
    if bpp is None:
        if not hi > lo:
            raise InvalidArgument("curves share no rate range")
        bpp = np.exp(np.linspace(np.log(lo), np.log(hi), points))
    bpp = np.asarray(bpp, dtype=np.float64)
    db = np.mean([np.interp(np.log(bpp), np.log(c.bpp), c.psnr) for c in curves], axis=0)
    return RDCurve.from_arrays(bpp, db)


def monotone_envelope(curve):
    """Sub-curve with strictly increasing PSNR, for fitting.

    Scans from the highest rate down and keeps a point only if it is strictly
    worse than everything kept so far, so a plateau is represented by its
    highest-rate point.
    """
    kept = []
    for p in reversed(curve.points):
        if not kept or p.psnr < kept[-1].psnr:
            kept.append(p)
    return RDCurve(tuple(reversed(kept)))


def pointwise_average(curves):
    """Mean bpp and PSNR of curves sampled at matching positions."""
    if not curves or len({len(c) for c in curves}) != 1:
        raise InvalidArgument("pointwise averaging needs curves of equal length")
    bpp = np.mean([c.bpp for c in curves], axis=0)
    db = np.mean([c.psnr for c in curves], axis=0)
    return RDCurve.from_arrays(bpp, db)


def format_report(values):
    """``key=value`` lines, one per entry, floats with 4 decimals."""
    lines = []
    for k, v in values.items():
        lines.append(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"
