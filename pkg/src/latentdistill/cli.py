"""Command-line interface.

Exit codes: 0 success, 2 infeasible budget, 3 integrity error, 4 bad input.
"""

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import archive_io
from .archive_io import MB
from .errors import DistillError
from .pipeline import DistillConfig, decode, distill, evaluate, sweep
from .quantize import QuantPolicy, archive_quantize
from .synth import SynthSpec, generate_synthetic

EXIT_OK = 0
EXIT_BAD_INPUT = 4


def _shape(text):
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected e.g. 4x8x16x16") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def _ratios(text):
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None


def _mb(value):
    return int(round(value * MB))


def _add_distill_options(p, budget_required=True):
    p.add_argument("--budget-mb", type=float, required=budget_required, default=None,
                   help="total storage budget in MB (1 MB = 2**20 bytes)")
    p.add_argument("--model-mb", type=float, default=0.0, help="declared decoder size in MB")
    p.add_argument("--ratio", type=float, default=0.75, help="rank compression ratio in (0, 1]")
    p.add_argument("--method", choices=["kdpp", "greedy"], default="kdpp")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--per-class", type=int, default=None, help="instances per class (default: auto)")
    p.add_argument("--sigma", type=float, default=None, help="RBF bandwidth (default: median heuristic)")
    p.add_argument("--precision", choices=["fp32", "fp16"], default="fp32")
    p.add_argument("--standardize", action="store_true", help="standardize features before selection")
    p.add_argument("--keep-instance-mode", action="store_true", help="do not truncate the instance mode")
    p.add_argument("--workers", type=int, default=1)


def _config(args, **overrides):
    fields = dict(
        budget_bytes=_mb(args.budget_mb),
        model_bytes=_mb(args.model_mb),
        ratio=args.ratio,
        selection_method=args.method,
        sigma=args.sigma,
        master_seed=args.seed,
        instances_per_class=args.per_class,
        precision=args.precision,
        standardize=args.standardize,
        truncate_instance_mode=not args.keep_instance_mode,
        workers=args.workers,
    )
    fields.update(overrides)
    return DistillConfig(**fields)


def build_parser():
    parser = argparse.ArgumentParser(prog="latentdistill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic latent dataset")
    p.add_argument("--classes", type=int, default=SynthSpec.num_classes)
    p.add_argument("--per-class", type=int, default=SynthSpec.items_per_class)
    p.add_argument("--shape", type=_shape, default=SynthSpec.latent_shape, help="CxTxHxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-scale", type=float, default=SynthSpec.mean_scale)
    p.add_argument("--within-scale", type=float, default=SynthSpec.within_scale)
    p.add_argument("--smoothness", type=float, default=SynthSpec.smoothness)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("distill", help="select, compress and pack a latent dataset")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    _add_distill_options(p)

    p = sub.add_parser("decode", help="reconstruct latents from a distilled archive")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("metrics", help="reconstruction metrics and byte accounting")
    p.add_argument("--original", required=True)
    p.add_argument("--decoded", required=True)
    p.add_argument("--archive", default=None)
    p.add_argument("--json", default=None, help="write the report here instead of stdout")

    p = sub.add_parser("quantize", help="quantize a tensor archive")
    p.add_argument("-i", "--input", required=True, help="tensor archive (.npz also accepted)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--policy", default="fc-int8-rest-fp16", choices=["fc-int8-rest-fp16"])
    p.add_argument("--fc-pattern", default=None, help="regex selecting INT8 tensors by name")
    p.add_argument("--report", action="store_true", help="print a JSON compression report")

    p = sub.add_parser("sweep", help="bytes and error over a grid of rank ratios")
    p.add_argument("-i", "--input", default=None, help="latent dataset (default: synthetic)")
    p.add_argument("--ratios", type=_ratios, default=[0.1, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("-o", "--output", default=None, help="CSV path (default: stdout)")
    _add_distill_options(p, budget_required=False)
    p.set_defaults(per_class=8)
    return parser


def _cmd_gen_synth(args):
    spec = SynthSpec(
        num_classes=args.classes,
        items_per_class=args.per_class,
        latent_shape=tuple(args.shape),
        mean_scale=args.mean_scale,
        within_scale=args.within_scale,
        smoothness=args.smoothness,
        seed=args.seed,
    )
    archive_io.write_latent_dataset(generate_synthetic(spec), args.output)


def _cmd_distill(args):
    ds = archive_io.read_latent_dataset(args.input)
    archive = distill(ds, _config(args))
    size = archive_io.write_distilled(archive, args.output)
    m = max(len(s.item_ids) for s in archive.sections)
    print(
        f"m={m} total_bytes={size} ({size / MB:.3f} MB) "
        f"model={archive.model_bytes / MB:.3f} MB budget={archive.budget_bytes / MB:.3f} MB "
        f"within_budget={archive.within_budget}"
    )


def _cmd_decode(args):
    archive = archive_io.read_distilled(args.input)
    archive_io.write_latent_dataset(decode(archive), args.output)


def _cmd_metrics(args):
    original = archive_io.read_latent_dataset(args.original)
    decoded = archive_io.read_latent_dataset(args.decoded)
    archive = archive_io.read_distilled(args.archive) if args.archive else None
    text = json.dumps(evaluate(original, decoded, archive).as_dict(), indent=2)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_quantize(args):
    if args.input.endswith(".npz"):
        with np.load(args.input) as npz:
            source = archive_io.TensorArchive({k: npz[k].astype(np.float32) for k in npz.files})
    else:
        source = archive_io.read_tensor_archive(args.input)
    quantized, report = archive_quantize(source, QuantPolicy.parse(args.policy, args.fc_pattern))
    archive_io.write_tensor_archive(quantized, args.output)
    if args.report:
        print(json.dumps(report.as_dict(), indent=2))


def _cmd_sweep(args):
    ds = archive_io.read_latent_dataset(args.input) if args.input else generate_synthetic(SynthSpec())
    if args.budget_mb is None:
        args.budget_mb = args.model_mb + (1 << 40) / MB
    rows = sweep(ds, args.ratios, _config(args))
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["ratio", "bytes", "mse", "rel_error", "m"])
        for r in rows:
            writer.writerow([r.ratio, r.bytes, repr(r.mse), repr(r.rel_error), r.m])
    finally:
        if out is not sys.stdout:
            out.close()


COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "distill": _cmd_distill,
    "decode": _cmd_decode,
    "metrics": _cmd_metrics,
    "quantize": _cmd_quantize,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except DistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
