"""Command-line front end.

Set ``NESTQ_LOG=debug`` (or info, warning) for progress logging on stderr.
"""

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import container, metrics, study
from .backend import IMPORT_MAGIC, estimate_priors, export_latents, import_latents, read_image
from .errors import InvalidArgument, ParseError, UnsupportedOperation
from .ordering import CRITERIA, UNITS
from .quantizer import DEFAULT_LEVELS, QuantSchedule

log = logging.getLogger("nestq")


class CliError(Exception):
    pass


def atomic_write(path, data):
    """Write ``data`` next to ``path`` and rename it into place."""
    path = Path(path)
    mode = "w" if isinstance(data, str) else "wb"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_image_atomic(path, img):
    from .backend import write_image

    path = Path(path)
    fmt = {".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM", ".png": "PNG"}.get(path.suffix.lower())
    if fmt is None:
        raise CliError(f"unsupported image extension {path.suffix!r}; use .pgm, .ppm or .png")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_image(tmp, img, format=fmt)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _input(path):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"no such file: {path}")
    return p


def _output(path):
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise CliError(f"output directory does not exist: {parent}")
    return p


def _schedule(args):
    try:
        return QuantSchedule(args.levels, args.step, args.open_top)
    except InvalidArgument as e:
        raise CliError(str(e)) from None


def _budget(args, blob):
    if args.budget_bytes is not None:
        return args.budget_bytes
    if args.budget_bpp is not None:
        header = container.read_header(blob)
        return int(np.floor(args.budget_bpp * header.pixels / 8))
    return None


def _size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _stage_report(blob):
    h = container.read_header(blob)
    lines = [f"header_bytes={h.length} ordering_bytes={h.ordering_bytes}"]
    end = h.length
    for k in range(h.schedule.levels, 0, -1):
        _, length = h.stage_span(k)
        end += length
        lines.append(f"stage={k} bytes={length} end={end} bpp_at_end={8 * end / h.pixels:.4f}")
    lines.append(f"total_bytes={len(blob)} payload_end={h.payload_end}")
    return "\n".join(lines)


def cmd_encode(args):
    src = _input(args.input)
    out = _output(args.output)
    sched = _schedule(args)
    raw = src.read_bytes()
    opts = dict(seed=args.seed, checkpoints=not args.no_index, progressive=not args.single_stage)
    if raw[:4] == IMPORT_MAGIC:
        latents, priors = import_latents(raw)
        if args.estimate_priors:
            priors = estimate_priors(latents)
        w, h = args.image_size if args.image_size else (None, None)
        blob = container.encode(latents, priors, sched, args.criterion, args.unit, backend="import",
                                width=w, height=h, **opts)
    else:
        img = read_image(src)
        blob = container.encode_image(img, sched, args.criterion, args.unit, **opts)
    atomic_write(out, blob)
    print(_stage_report(blob))
    return 0


def cmd_decode(args):
    src = _input(args.input)
    out = _output(args.output)
    blob = src.read_bytes()
    res = container.decode(blob, _budget(args, blob))
    if res.header.backend == "dct":
        _write_image_atomic(out, container.reconstruct_image(res))
    else:
        atomic_write(out, export_latents(res.latents, res.header.priors))
    levels, counts = np.unique(res.level, return_counts=True)
    hist = " ".join(f"{int(lv)}:{int(c)}" for lv, c in zip(levels, counts))
    print(f"bytes_consumed={res.bytes_consumed} padded={int(res.padded)} levels={hist}")
    return 0


def cmd_truncate(args):
    src = _input(args.input)
    out = _output(args.output)
    blob = src.read_bytes()
    if args.budget_bytes is None and args.budget_bpp is None:
        raise CliError("truncate needs --budget-bytes or --budget-bpp")
    prefix = container.truncate(blob, target_bytes=args.budget_bytes, target_bpp=args.budget_bpp)
    atomic_write(out, prefix)
    print(f"bytes={len(prefix)}")
    return 0


def _checkpoints(text, blob):
    if text is None:
        return None
    vals = [int(v) for v in text.split(",") if v]
    if len(vals) == 1 and "," not in text:
        return vals[0]
    return vals


def cmd_rd(args):
    src = _input(args.input)
    orig = read_image(_input(args.original))
    out = _output(args.output) if args.output else None
    blob = src.read_bytes()
    try:
        cps = _checkpoints(args.checkpoints, blob)
    except ValueError:
        raise CliError(f"bad --checkpoints value {args.checkpoints!r}") from None
    pts = metrics.rd_points(blob, orig, cps)
    csv = metrics.to_csv(pts)
    bad = metrics.monotonicity_violations(pts)
    if out:
        atomic_write(out, csv)
    else:
        sys.stdout.write(csv)
    print(f"checkpoints={len(pts)} monotonicity_violations={len(bad)}")
    for i, j in bad:
        print(f"violation={pts[i].nbytes}->{pts[j].nbytes}")
    return 0


def _configs(text):
    out = []
    for item in text.split(","):
        crit, _, unit = item.partition(":")
        unit = unit or "element"
        if crit not in CRITERIA or unit not in UNITS:
            raise CliError(f"bad criterion:unit pair {item!r}")
        out.append((crit, unit))
    return out


def cmd_study(args):
    imgs = [read_image(_input(p)) for p in args.images]
    out = _output(args.output) if args.output else None
    configs = _configs(args.criteria)
    reference = _configs(args.reference)[0]
    table, curves = study.compare_orderings(imgs, configs, reference, _schedule(args), args.points, args.seed)
    text = study.format_table(table, reference)
    for cfg, per_image in curves.items():
        for name, sc in zip(args.images, per_image):
            text += f"# {cfg[0]}/{cfg[1]} {Path(name).name} ordering_bytes={sc.ordering_bytes}\n"
    if out:
        atomic_write(out, text)
    sys.stdout.write(text)
    return 0


def cmd_naive(args):
    img = read_image(_input(args.input))
    outdir = Path(args.output_dir)
    if not outdir.is_dir():
        raise CliError(f"output directory does not exist: {outdir}")
    from .backend import forward

    latents = forward(img)
    priors = estimate_priors(latents)
    rows = ["s,bytes,bpp,psnr_db"]
    for s in args.scales:
        try:
            blob = container.naive_scaling_encode(latents, priors, s, backend="dct", width=img.width,
                                                  height=img.height, channels=img.channels)
        except InvalidArgument as e:
            raise CliError(str(e)) from None
        atomic_write(outdir / f"naive_s{s:g}.plnq", blob)
        rec = container.reconstruct_image(container.decode(blob))
        rows.append(f"{s:g},{len(blob)},{8 * len(blob) / (img.width * img.height):.6f},{metrics.psnr(img, rec):.4f}")
    text = "\n".join(rows) + "\n"
    atomic_write(outdir / "naive_rd.csv", text)
    sys.stdout.write(text)
    return 0


def _add_schedule(p):
    p.add_argument("--levels", type=int, default=DEFAULT_LEVELS, help="number of nested levels K")
    p.add_argument("--step", type=float, default=1.0, help="finest quantization step")
    p.add_argument("--open-top", action="store_true", help="coarsest level reconstructs everything at the mean")


def _add_budget(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--budget-bytes", type=int)
    g.add_argument("--budget-bpp", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="nestq", description="Embedded image coding with nested quantization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode an image or an imported latent blob")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_schedule(p)
    p.add_argument("--criterion", choices=CRITERIA, default="sigma")
    p.add_argument("--unit", choices=UNITS, default="element")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--single-stage", action="store_true", help="non-progressive: code the finest level only")
    p.add_argument("--no-index", action="store_true", help="omit the trailing checkpoint index")
    p.add_argument("--image-size", type=_size, help="pixel size WxH for imported latents (bpp accounting)")
    p.add_argument("--estimate-priors", action="store_true", help="ignore imported priors, estimate per channel")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a (possibly truncated) stream")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_budget(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("truncate", help="cut a stream to a byte or bpp target")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_budget(p)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("rd", help="RD curve of one stream")
    p.add_argument("input")
    p.add_argument("--original", required=True)
    p.add_argument("--checkpoints", help="a count of evenly spaced cuts, or comma-separated byte offsets")
    p.add_argument("-o", "--output", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_rd)

    p = sub.add_parser("study", help="compare refinement orderings by BD-rate")
    p.add_argument("images", nargs="+")
    _add_schedule(p)
    p.add_argument("--criteria", default="sigma:element,random:element,dr:channel")
    p.add_argument("--reference", default="random:element")
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("naive", help="constant-scale single-level baseline")
    p.add_argument("input")
    p.add_argument("--scales", type=_float_list, default=[1, 2, 3, 4, 5, 6, 7, 8])
    p.add_argument("-o", "--output-dir", required=True)
    p.set_defaults(func=cmd_naive)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("NESTQ_LOG", "warning").upper(), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, InvalidArgument, ParseError, UnsupportedOperation, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
