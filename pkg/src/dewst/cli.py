"""Command-line entry point: ``dewst <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import metrics
from .edit_kernel import DEFAULT_GAINS, EditConfig, edit
from .harness import ConfigError, ProtocolConfig, emit_report, run_dewst
from .schedule import default_schedule, schedule_from_config
from .spectral import spectral_retention, write_band_report
from .tensors_io import ImageFormatError, derive_stream, load_image, save_image
from .theory_bounds import bounds_table
from .tune import tune_gains, write_trace
from .watermark import (
    DEFAULT_L,
    DEFAULT_PROFILE,
    DEFAULT_REPETITION,
    WatermarkKey,
    decode_bits,
    decode_soft,
    detect_score,
    ecc_decode,
    ecc_encode,
    embed,
    gamma_for_psnr,
    hex_to_payload,
    make_carriers,
    payload_to_hex,
)


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.split(","))
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated values, got {text!r}")
    return vals


def _triple(text):
    return _floats(text, 3)


def _schedule(args):
    if getattr(args, "schedule", None):
        with open(args.schedule) as fh:
            return schedule_from_config(json.load(fh))
    return default_schedule()


def _bank_for(args, shape):
    c, h, w = shape
    key = WatermarkKey(args.key_seed, args.profile)
    return make_carriers(key, args.bits * args.r, h, w, c)


def cmd_run(args) -> int:
    cfg = ProtocolConfig.from_json(args.config)
    report = run_dewst(cfg, workers=args.workers)
    fmts = ["csv", "json"] if args.format == "both" else [args.format]
    for fmt in fmts:
        for path in emit_report(report, fmt, args.out):
            print(path)
    return 0


def cmd_embed(args) -> int:
    x = load_image(args.image)
    if args.payload:
        info = hex_to_payload(args.payload, args.bits)
    else:
        info = derive_stream(args.seed, (1,)).bits(args.bits)
    bank = _bank_for(args, x.shape)
    gamma = args.gamma if args.gamma is not None else gamma_for_psnr(args.psnr)
    xw = embed(x, ecc_encode(info, args.r), bank, gamma)
    save_image(xw, args.out, bit_depth=args.bit_depth)
    print(f"payload={payload_to_hex(info)} gamma={gamma!r} psnr={metrics.psnr(x, xw):.4f}")
    return 0


def cmd_edit(args) -> int:
    x = load_image(args.image)
    cond = load_image(args.condition) if args.condition else None
    cfg = EditConfig(t_star=args.t_star, n_steps=args.steps, band_gains=args.gains, mode=args.mode)
    out = edit(x, cfg, _schedule(args), derive_stream(args.seed), condition=cond)
    save_image(out.edited, args.out, bit_depth=args.bit_depth)
    print(f"start_step={out.start_step} alpha_bar={out.realized_alpha_bar!r} psnr={metrics.psnr(x, out.edited):.4f}")
    return 0


def cmd_decode(args) -> int:
    y = load_image(args.image)
    ref = load_image(args.reference) if args.reference else None
    bank = _bank_for(args, y.shape)
    scores = decode_soft(y, bank, ref)
    coded = decode_bits(scores)
    info, margin = ecc_decode(coded, args.r)
    print(f"payload={payload_to_hex(info)}")
    print(f"detect_score={detect_score(y, bank, ref)!r}")
    print(f"weak_blocks={int(np.sum(margin < args.r))}")
    if args.payload:
        truth = hex_to_payload(args.payload, args.bits)
        ba, ber = metrics.bit_accuracy(info, truth)
        print(f"ba={ba!r} ber={ber!r} msg_ok={int(ba == 1.0)}")
    return 0


def cmd_spectral(args) -> int:
    imgs = [load_image(p) for p in (args.edited_wm, args.edited_base, args.input_wm, args.input_clean)]
    result = spectral_retention([tuple(imgs)])
    if args.out:
        write_band_report(result, args.out)
    for band, rho in result.rho.items():
        print(f"{band},{rho!r}")
    return 0


def cmd_bounds(args) -> int:
    gamma = args.gamma if args.gamma is not None else gamma_for_psnr(args.psnr)
    rows = bounds_table(_schedule(args), gamma, args.d, args.bits, args.strengths)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    cols = list(rows[0])
    writer.writerow(cols)
    for r in rows:
        writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return 0


def cmd_tune(args) -> int:
    if args.suite == "high-killer":
        suite = [EditConfig(band_gains=(1.0, 1.0, 0.1))]
    else:
        suite = [EditConfig()]
    res = tune_gains(
        suite,
        args.strengths,
        psnr_floor=args.psnr_floor,
        budget=args.budget,
        rng=derive_stream(args.seed),
        n_images=args.images,
        image_size=args.size,
    )
    write_trace(res.trace, args.out)
    lo, mid, hi = res.best.fractions
    print(f"best_profile={lo!r},{mid!r},{hi!r} gamma={res.best.gamma!r} ber={res.best_ber!r}")
    print(f"default_ber={res.default_ber!r} evaluations={res.evaluations} informative={int(res.informative)}")
    for note in res.notes:
        print(f"note: {note}")
    return 0


def _add_key_args(p):
    p.add_argument("--key-seed", type=int, default=1)
    p.add_argument("--profile", type=_triple, default=DEFAULT_PROFILE, help="band fractions low,mid,high")
    p.add_argument("--bits", type=int, default=DEFAULT_L, help="payload length L")
    p.add_argument("--r", type=int, default=DEFAULT_REPETITION, help="repetition factor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dewst", description="Watermark robustness under synthetic diffusion edits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the stress protocol from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--format", choices=["csv", "json", "both"], default="both")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("embed", help="embed a payload into an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--payload", help="hex payload (default: random from --seed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--psnr", type=float, default=40.0)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--bit-depth", type=int, choices=[8, 16], default=16)
    _add_key_args(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("edit", help="apply one synthetic diffusion edit")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--condition", help="image the anchor is built from (default: the input)")
    p.add_argument("--t-star", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--gains", type=_triple, default=DEFAULT_GAINS)
    p.add_argument("--mode", choices=["linear_shrink", "resynth"], default="linear_shrink")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", help="JSON schedule config")
    p.add_argument("--bit-depth", type=int, choices=[8, 16], default=16)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("decode", help="decode a payload (informed with --reference, blind otherwise)")
    p.add_argument("--image", required=True)
    p.add_argument("--reference")
    p.add_argument("--payload", help="true hex payload, to report accuracy")
    _add_key_args(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("spectral", help="per-band retention ratios for one edit")
    p.add_argument("--edited-wm", required=True)
    p.add_argument("--edited-base", required=True)
    p.add_argument("--input-wm", required=True)
    p.add_argument("--input-clean", required=True)
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("bounds", help="SNR / MI / Fano table over edit strengths")
    p.add_argument("--d", type=int, default=3 * 64 * 64)
    p.add_argument("--bits", type=int, default=DEFAULT_L)
    p.add_argument("--psnr", type=float, default=40.0)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--strengths", type=_floats, default=(0.2, 0.4, 0.6, 0.8))
    p.add_argument("--schedule", help="JSON schedule config")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("tune", help="search carrier band profiles")
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--suite", choices=["default", "high-killer"], default="default")
    p.add_argument("--strengths", type=_floats, default=(0.2, 0.4))
    p.add_argument("--psnr-floor", type=float, default=40.0)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--images", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ImageFormatError, ValueError, OSError) as exc:
        print(f"dewst {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
