"""Command-line entry point: ``uwrestore {simulate,track,restore,evaluate,bench}``.

Exit codes: 0 success, 1 usage error, 2 bad or missing input data,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, tracking, wave_sim
from .errors import DataError, NumericalError
from .imaging import (center_crop_resize, load_sequence, read_image, save_field, save_sequence,
                      write_image)
from .pipeline import (MODES, PipelineConfig, aggregate, configure_threads, load_manifest,
                       run_benchmark, run_restore)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args):
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "aggregation", None):
        cfg = replace(cfg, aggregation=args.aggregation)
    solver = {}
    if getattr(args, "lam", None) is not None:
        solver["lam"] = args.lam
    if getattr(args, "downsample", None) is not None:
        solver["downsample"] = args.downsample
    if getattr(args, "max_iters", None) is not None:
        solver["max_iters"] = args.max_iters
    if solver:
        cfg = replace(cfg, solver=replace(cfg.solver, **solver))
    return cfg


def cmd_simulate(args):
    if args.clean:
        clean = read_image(args.clean)
        if args.size:
            clean = center_crop_resize(clean, args.size)
    else:
        clean = wave_sim.make_scene(args.scene, args.size or 256, args.seed)
    h, w = clean.shape
    if args.model:
        model = wave_sim.SurfaceModel.load(args.model)
    else:
        model = wave_sim.random_model(args.seed, args.waves, args.sigma, w, h, args.frames,
                                      commensurate=args.commensurate)
    bundle = wave_sim.synthesize(clean, model, args.frames, seed=args.seed, noise_sigma=args.noise,
                                 fps=args.fps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_sequence(bundle.distorted, out / "distorted")
    write_image(out / "clean.png", clean, bit_depth=16)
    save_field(bundle.true_field, out / "true_field.umvf")
    model.save(out / "model.json")
    print(f"wrote {args.frames} frames of {w}x{h} to {out} "
          f"(sigma_motion {wave_sim.field_sigma(bundle.true_field):.2f} px)")
    return EXIT_OK


def cmd_track(args):
    cfg = _load_config(args)
    video = load_sequence(args.video)
    seeds = tracking.detect_features(video.frames[0], cfg.tracker)
    if len(seeds) == 0:
        raise DataError("no salient points found in the first frame")
    trajs = tracking.track(video, seeds, cfg.tracker)
    tracking.save_trajectories(trajs, args.out)
    n_valid = sum(t.valid for t in trajs)
    print(f"N={len(trajs)} valid={n_valid} rejected={len(trajs) - n_valid}")
    if n_valid:
        print(f"sigma_motion={metrics.sigma_motion(trajs):.4f}")
    return EXIT_OK


def cmd_restore(args):
    cfg = _load_config(args)
    video = load_sequence(args.video)
    _, _, report = run_restore(video, cfg, run_dir=args.out)
    for key in sorted(report):
        print(f"{key}={report[key]}")
    return EXIT_OK


def _load_restored_image(path, how):
    path = Path(path)
    if path.is_dir():
        return aggregate(load_sequence(path), how)
    return read_image(path)


def cmd_evaluate(args):
    restored = _load_restored_image(args.restored, args.aggregation or "mean")
    clean = read_image(args.clean)
    report = metrics.evaluate(restored, clean, bins=args.bins)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args):
    cfg = _load_config(args)
    scenes = load_manifest(args.manifest)
    modes = tuple(args.modes.split(",")) if args.modes else MODES
    bad = set(modes) - set(MODES)
    if bad:
        raise ValueError(f"unknown modes: {sorted(bad)}")
    rows = run_benchmark(scenes, modes, cfg, out_csv=args.out, run_dir=args.run_dir)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"wrote {len(rows)} rows to {args.out} ({failed} failed)")
    return EXIT_OK


def _add_config_flags(p, restore=True):
    p.add_argument("--config", help="JSON configuration file; flags override it")
    p.add_argument("--seed", type=int)
    if restore:
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--aggregation", choices=("mean", "median"))
        p.add_argument("--lambda", dest="lam", type=float, help="fixed LASSO weight (skips cross-validation)")
        p.add_argument("--downsample", type=int, choices=(1, 2, 4, 8, 16))
        p.add_argument("--max-iters", type=int)


def build_parser():
    parser = _Parser(prog="uwrestore", description="Restore videos seen through a wavy water surface.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic distorted video with ground truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clean", help="clean image (default: a generated scene)")
    p.add_argument("--scene", default="mixed", choices=("noise", "blobs", "tiles", "text", "mixed"))
    p.add_argument("--size", type=int, help="square output size (generated scenes default to 256)")
    p.add_argument("--frames", type=int, default=101)
    p.add_argument("--waves", type=int, default=3)
    p.add_argument("--sigma", type=float, default=6.0, help="target sigma_motion in pixels")
    p.add_argument("--model", help="surface model JSON instead of a random one")
    p.add_argument("--commensurate", action="store_true", help="whole wave periods over grid and time")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma on [0,1] intensities")
    p.add_argument("--fps", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="detect and track salient points")
    p.add_argument("--video", required=True, help="frame-sequence directory")
    p.add_argument("--out", required=True, help="trajectory CSV")
    _add_config_flags(p, restore=False)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("restore", help="restore a distorted video")
    p.add_argument("--video", required=True, help="frame-sequence directory")
    p.add_argument("--out", required=True, help="run directory for outputs and stage artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="score a restored image or sequence against the clean frame")
    p.add_argument("--restored", required=True, help="image file or frame-sequence directory")
    p.add_argument("--clean", required=True)
    p.add_argument("--aggregation", choices=("mean", "median"))
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--out", help="also write the key=value report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="run every mode over a manifest of scenes")
    p.add_argument("--manifest", required=True, help="JSON list of {name, clean, distorted}")
    p.add_argument("--out", required=True, help="CSV table")
    p.add_argument("--modes", help=f"comma-separated subset of {','.join(MODES)}")
    p.add_argument("--run-dir", help="keep per-scene stage artifacts here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        configure_threads()
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
