"""Comparing refinement orderings on the span between two adjacent levels.

Each configuration encodes the image once; the stream is cut at evenly spaced
points inside the stage that refines level 2 to level 1, so every curve runs
between the same two reconstructions and only the order in between differs.
Rates leave out the transmitted ordering segment, which is reported
separately.  BD-rates are fitted on each curve's monotone envelope, since
coarse coding units produce plateaus.
"""

from dataclasses import dataclass

import numpy as np

from .container import decode, encode_image, read_header, reconstruct_image
from .errors import InvalidArgument
from .metrics import RDCurve, RDPoint, bd_rate, monotone_envelope, pointwise_average, psnr

DEFAULT_CONFIGS = (("sigma", "element"), ("random", "element"), ("dr", "channel"))


@dataclass
class SpanCurve:
    criterion: str
    unit: str
    curve: RDCurve
    ordering_bytes: int
    stream_bytes: int


def span_curve(img, criterion, unit, sched=None, points=12, seed=0, level=1):
    """RD curve of the stage coding ``level`` for one ordering."""
    blob = encode_image(img, sched, criterion, unit, seed=seed, checkpoints=False)
    header = read_header(blob)
    if level not in header.coded_stages:
        raise InvalidArgument(f"level {level} has no refinement stage in this schedule")
    offset, length = header.stage_span(level)
    cuts = np.unique(offset + np.linspace(0, length, points).astype(int))
    side = header.ordering_bytes
    pts = []
    for b in cuts:
        res = decode(blob, int(b))
        pts.append(RDPoint(8.0 * (int(b) - side) / header.pixels, psnr(img, reconstruct_image(res)), int(b)))
    return SpanCurve(criterion, unit, RDCurve(tuple(pts)), side, len(blob))


def compare_orderings(images, configs=DEFAULT_CONFIGS, reference=("random", "element"),
                      sched=None, points=12, seed=0):
    """BD-rate of every configuration against ``reference``, per image and averaged.

    Returns ``(table, curves)``: ``table[(criterion, unit)]`` holds the list
    of per-image BD-rates, their mean and the BD-rate of the averaged curves.
    """
    configs = list(configs)
    if reference not in configs:
        configs.append(reference)
    curves = {c: [span_curve(img, *c, sched=sched, points=points, seed=seed) for img in images] for c in configs}
    table = {}
    for c in configs:
        per = [bd_rate(monotone_envelope(r.curve), monotone_envelope(t.curve))
               for r, t in zip(curves[reference], curves[c])]
        # cuts sit at the same relative positions of every image's span
        avg_ref = pointwise_average([r.curve for r in curves[reference]])
        avg = pointwise_average([t.curve for t in curves[c]])
        table[c] = {
            "per_image": per,
            "mean": float(np.mean(per)),
            "averaged_curve": bd_rate(monotone_envelope(avg_ref), monotone_envelope(avg)),
        }
    return table, curves


def format_table(table, reference=("random", "element")):
    lines = [f"# BD-rate (%) against {reference[0]}/{reference[1]}, negative is better"]
    lines.append("criterion,unit,mean,averaged_curve,per_image")
    for (crit, unit), row in table.items():
        per = " ".join(f"{v:.3f}" for v in row["per_image"])
        lines.append(f"{crit},{unit},{row['mean']:.3f},{row['averaged_curve']:.3f},{per}")
    return "\n".join(lines) + "\n"
