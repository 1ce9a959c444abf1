"""Command-line interface: segment / eval / synth / overlay.

Exit codes: 0 success, 2 input error, 3 a degenerate-input fallback was
taken (output was still produced).
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import io, synth
from .config import ConfigError, PipelineConfig, load_config, save_config
from .overlay import overlay_render
from .pipeline import EvalPairError, evaluate_dirs, run_pipeline

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FALLBACK = 3

STAGE_FLAGS = {
    "pqr": "use_pqr",
    "adaptive": "use_adaptive",
    "morph": "use_morph",
    "lair": "use_lair",
    "nuseghop": "use_nuseghop",
    "lmd": "use_lmd",
    "watershed": "use_watershed",
    "instance-filter": "use_instance_filter",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lgnh",
        description="Self-supervised nuclei instance segmentation for H&E tiles")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment one tile")
    seg.add_argument("input", help="input tile PNG")
    seg.add_argument("-o", "--output-dir", default=".")
    seg.add_argument("--config", help="pipeline config file")
    seg.add_argument("--seed", type=int, default=None)
    seg.add_argument("--threads", type=int, default=None)
    seg.add_argument("--dump-pseudolabel", action="store_true")
    seg.add_argument("--dump-heatmap", action="store_true")
    seg.add_argument("--dump-seeds", action="store_true")
    seg.add_argument("--dump-config", action="store_true",
                     help="write the effective config next to the outputs")
    for stage in STAGE_FLAGS:
        seg.add_argument(f"--no-{stage}", action="store_true",
                         help=f"disable the {stage} stage")

    ev = sub.add_parser("eval", help="evaluate predictions against ground truth")
    ev.add_argument("pred_dir")
    ev.add_argument("gt_dir")
    ev.add_argument("--json", dest="json_out", help="also write a JSON report")

    sy = sub.add_parser("synth", help="generate synthetic tiles")
    sy.add_argument("spec", help="scene spec file")
    sy.add_argument("-n", "--count", type=int, required=True)
    sy.add_argument("-o", "--output-dir", required=True)

    ov = sub.add_parser("overlay", help="render a segmentation overlay")
    ov.add_argument("tile")
    ov.add_argument("pred")
    ov.add_argument("gt", nargs="?")
    ov.add_argument("-o", "--output", required=True)
    return parser


def _cmd_segment(args):
    if not os.path.exists(args.input):
        print(f"error: no such tile: {args.input}", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    for stage, attr in STAGE_FLAGS.items():
        if getattr(args, f"no_{stage.replace('-', '_')}"):
            cfg = replace(cfg, **{attr: False})
    tile = io.load_tile(args.input)
    result = run_pipeline(tile, cfg)
    os.makedirs(args.output_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    out = lambda suffix: os.path.join(args.output_dir, stem + suffix)
    io.save_mask(out("_mask.png"), result.mask)
    if args.dump_pseudolabel:
        io.save_mask(out("_pseudolabel.png"), result.pseudolabel)
    if args.dump_heatmap:
        io.save_heatmap(out("_heatmap.lgnh"), result.heatmap)
        io.save_heatmap_preview(out("_heatmap.png"), result.heatmap)
    if args.dump_seeds:
        with open(out("_seeds.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "sigma", "response"])
            for r, c, s, resp in zip(result.seeds.rows, result.seeds.cols,
                                     result.seeds.sigmas, result.seeds.responses):
                writer.writerow([int(r), int(c), f"{s:.6g}", f"{resp:.6g}"])
    if args.dump_config:
        save_config(out("_config.txt"), cfg)
    n_instances = int(np.unique(result.mask[result.mask > 0]).size)
    print(f"instances: {n_instances}")
    if result.parameter_count:
        print(f"projection parameters: {result.parameter_count}")
    for name, seconds in result.timings.items():
        print(f"time[{name}]: {seconds:.3f}s")
    for note in result.fallbacks:
        print(f"fallback: {note}", file=sys.stderr)
    return EXIT_FALLBACK if result.fallbacks else EXIT_OK


def _cmd_eval(args):
    for d in (args.pred_dir, args.gt_dir):
        if not os.path.isdir(d):
            print(f"error: no such directory: {d}", file=sys.stderr)
            return EXIT_INPUT
    try:
        per_tile, agg = evaluate_dirs(args.pred_dir, args.gt_dir)
    except EvalPairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for name, report in per_tile.items():
        for key, value in report.as_dict().items():
            print(f"{name}.{key} = {value:.6f}" if isinstance(value, float)
                  else f"{name}.{key} = {value}")
    for key, (mean, std) in agg.items():
        print(f"mean.{key} = {mean:.6f}")
        print(f"std.{key} = {std:.6f}")
    if args.json_out:
        payload = {
            "per_tile": {n: r.as_dict() for n, r in per_tile.items()},
            "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in agg.items()},
        }
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    return EXIT_OK


def _cmd_synth(args):
    try:
        spec = synth.load_spec(args.spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    os.makedirs(args.output_dir, exist_ok=True)
    short = False
    for i in range(args.count):
        sample = replace(spec, seed=spec.seed + i)
        tile, mask, all_placed = synth.generate_tile(sample)
        short = short or not all_placed
        base = os.path.join(args.output_dir, f"tile_{i:04d}")
        io.save_tile(base + ".png", tile)
        io.save_mask(base + "_mask.png", mask)
        synth.save_spec(base + "_spec.txt", sample)
    if short:
        print("warning: some tiles hold fewer nuclei than requested",
              file=sys.stderr)
    print(f"wrote {args.count} tiles to {args.output_dir}")
    return EXIT_OK


def _cmd_overlay(args):
    try:
        tile = io.load_tile(args.tile)
        pred = io.load_mask(args.pred)
        gt = io.load_mask(args.gt) if args.gt else None
        image = overlay_render(tile, pred, gt)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    io.save_tile(args.output, image)
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handler = {
        "segment": _cmd_segment,
        "eval": _cmd_eval,
        "synth": _cmd_synth,
        "overlay": _cmd_overlay,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
