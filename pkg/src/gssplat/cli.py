"""Command-line interface: ``gssplat <subcommand> ...``.

Errors are printed to stderr as one JSON object ``{"error", "message", "exit_code"}``.
Exit codes: 0 success, 2 usage/configuration, 3 data format, 4 numerical failure.
Worker threads follow ``--threads`` or the GSSPLAT_THREADS environment variable (0 = auto).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._threads import ENV_VAR
from .errors import ConfigurationError, FormatError, GSSplatError
from .field import GaussianField, load_field, save_field
from .geometry import load_cameras
from .neural import HybridNetConfig
from .objective import LossWeights

DEFAULT_WIDTH, DEFAULT_HEIGHT = 320, 240


class UsageError(GSSplatError):
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(exc, code):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _non_negative(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


# --- subcommands ---------------------------------------------------------------------------

def cmd_synth(args):
    from .pipeline.dataset import write_manifest, write_scene
    from .pipeline.scenes import SceneSpec, generate_scene, random_scene_spec
    out = Path(args.out)
    size = {"width": args.width, "height": args.height}
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.spec}: invalid JSON ({exc})") from exc
        if isinstance(doc, dict) and "scenes" in doc:
            specs = [SceneSpec.from_dict(d) for d in doc["scenes"]]
            test = doc.get("test")
        else:
            spec = SceneSpec.from_dict(doc)
            data = generate_scene(spec)
            write_scene(out, data.source, data.novel)
            print(json.dumps({"scene": str(out), "views": len(data.source) +
                              (len(data.novel) if data.novel is not None else 0)}))
            return 0
    else:
        specs = [random_scene_spec(args.seed + i, n_classes=args.classes, **size)
                 for i in range(args.scenes)]
        test = None
    ids = [s.scene_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("scene ids must be unique")
    for spec in specs:
        data = generate_scene(spec)
        write_scene(out / spec.scene_id, data.source, data.novel)
    test = test if test is not None else ids[-1:] if len(ids) > 1 else ids
    train_ids = [i for i in ids if i not in test] or ids
    write_manifest(out, ids, train_ids, test)
    print(json.dumps({"dataset": str(out), "train": train_ids, "test": list(test)}))
    return 0


def _model_from_args(args, n_classes):
    from .pipeline.model import GSsplatModel, ReconstructionConfig
    net = HybridNetConfig(args.shared_blocks, args.attention_layers, args.encoder_channels,
                          args.decoder_channels, n_classes, seed=args.seed)
    recon = ReconstructionConfig(unit_interval=args.unit_interval,
                                 interval_divisor=args.interval_divisor,
                                 interaction=not args.no_interaction,
                                 subsample_stride=args.subsample)
    return GSsplatModel(net, recon)


def _raster(args):
    from .rasterizer import RasterConfig
    return RasterConfig(tile_size=args.tile_size, n_threads=args.threads)


def cmd_train(args):
    from .pipeline.dataset import load_split
    from .pipeline.model import save_model
    from .pipeline.train import TrainConfig, train
    scenes = load_split(args.data, "train")
    n_classes = scenes[0][0].n_classes or 6
    model = _model_from_args(args, n_classes)
    config = TrainConfig(steps=args.steps, lr=args.lr, n_source=args.n_source,
                         weights=LossWeights(args.lambda_mse, args.lambda_offset),
                         raster=_raster(args), seed=args.seed, log_every=args.log_every)
    result = train(scenes, model, config)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, result.model, {"train": config.to_dict()})
    _write_json(str(args.out) + ".history.json", result.history)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"checkpoint": str(args.out), "steps": args.steps,
                      "skipped": result.skipped, "final": last}))
    return 0


def cmd_reconstruct(args):
    from .pipeline.dataset import read_scene
    from .pipeline.model import load_model, reconstruct
    source, _ = read_scene(args.data)
    model = load_model(args.ckpt)
    res = reconstruct(model, source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_field(out / "color.gspl", res.color)
    save_field(out / "semantic.gspl", res.semantic)
    doc = {"n_gaussians": res.n_gaussians, "unit_interval": res.unit_interval,
           "offset_fraction_color": res.offset_fraction_color,
           "offset_fraction_semantic": res.offset_fraction_semantic, "timing": res.timings}
    _write_json(out / "reconstruction.json", doc)
    print(json.dumps(doc))
    return 0


def cmd_render(args):
    from .rasterizer import export_render, rasterize
    field = load_field(args.field)
    cams, entries = load_cameras(args.camera)
    views = range(len(cams)) if args.view is None else [args.view]
    written = []
    for i in views:
        if not 0 <= i < len(cams):
            raise ConfigurationError(f"view {i} outside the {len(cams)} cameras in the file")
        out = rasterize(field, cams[i], _raster(args))
        stem = entries[i].get("name", f"{i:04d}")
        written += export_render(out, args.out, stem, semantic=field.kind == "semantic")
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def _load_fields(directory):
    d = Path(directory)
    color = load_field(d / "color.gspl")
    sem_path = d / "semantic.gspl"
    semantic = load_field(sem_path) if sem_path.exists() else None
    return color, semantic


def cmd_eval(args):
    from .pipeline.dataset import is_scene_dir, load_split
    from .pipeline.evaluate import evaluate, write_report
    from .pipeline.model import load_model
    if (args.ckpt is None) == (args.fields is None):
        raise UsageError("eval needs exactly one of --ckpt or --fields")
    scenes = load_split(args.data, args.split)
    raster = _raster(args)
    if args.ckpt is not None:
        report = evaluate(scenes, model=load_model(args.ckpt), raster=raster)
    else:
        if len(scenes) != 1 and not is_scene_dir(args.fields):
            fields = [_load_fields(Path(args.fields) / s.scene_id) for s, _ in scenes]
        elif len(scenes) == 1:
            fields = [_load_fields(args.fields)]
        else:
            raise UsageError("--fields must hold one sub-directory per evaluated scene")
        report = evaluate(scenes, fields=fields, raster=raster)
    write_report(args.report, report)
    summary = {k: report[k] for k in ("psnr", "ssim", "miou", "acc", "class_acc")}
    print(json.dumps(summary))
    return 0


def cmd_fit(args):
    from .pipeline.dataset import read_scene
    from .pipeline.fit import FitConfig, fit_scene
    source, _ = read_scene(args.data)
    config = FitConfig(steps=args.steps, semantic_steps=args.semantic_steps,
                       stride=args.stride, mse_weight=args.lambda_mse,
                       raster=_raster(args), seed=args.seed)
    result = fit_scene(source, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_field(out / "color.gspl", result.color)
    save_field(out / "semantic.gspl", result.semantic)
    last = {k: v[-1] for k, v in result.history.items() if v}
    doc = {"n_gaussians": len(result.color), "steps": args.steps, "seconds": result.seconds,
           "final": last}
    _write_json(out / "fit.json", doc)
    print(json.dumps(doc))
    return 0


def cmd_gradcheck(args):
    from . import gradcheck
    report = gradcheck.run(args.module, seed=args.seed)
    print(json.dumps({name: {"max_relative_error": r["max"], "tolerance": r["tolerance"],
                             "passed": r["passed"]} for name, r in report.items()}, indent=1))
    return 0 if all(r["passed"] for r in report.values()) else 4


# --- parser ----------------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness (default: 0)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads, 0 = auto (default: ${ENV_VAR} or auto)")
    p.add_argument("--tile-size", type=_positive_int, default=16,
                   help="rasterizer tile size in pixels (default: 16)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _network_flags(p):
    p.add_argument("--shared-blocks", type=int, default=4, choices=(2, 4, 6),
                   help="residual blocks shared by both branches (default: 4)")
    p.add_argument("--attention-layers", type=int, default=3, choices=(1, 2, 3, 4),
                   help="self-attention layers in the semantic branch (default: 3)")
    p.add_argument("--encoder-channels", type=_positive_int, default=32,
                   help="encoder width C_e (default: 32)")
    p.add_argument("--decoder-channels", type=_positive_int, default=32,
                   help="decoder width C_d (default: 32)")
    p.add_argument("--unit-interval", type=_positive, default=None,
                   help="spatial unit edge length in metres (default: bounding-box "
                        "diagonal / --interval-divisor)")
    p.add_argument("--interval-divisor", type=_positive, default=64.0,
                   help="divisor for the default unit interval (default: 64)")
    p.add_argument("--no-interaction", action="store_true",
                   help="disable point interaction inside spatial units")
    p.add_argument("--subsample", type=_positive_int, default=1,
                   help="keep every n-th pixel row/column as a Gaussian (default: 1)")


def build_parser():
    parser = _Parser(prog="gssplat", description="Semantic Gaussian splatting engine.",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"gssplat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--spec", help="scene spec JSON (one scene, or {'scenes': [...]})")
    p.add_argument("--out", required=True, help="output scene or dataset directory")
    p.add_argument("--scenes", type=_positive_int, default=4,
                   help="random scenes to generate without --spec (default: 4)")
    p.add_argument("--classes", type=_positive_int, default=6,
                   help="semantic classes for random scenes (default: 6)")
    p.add_argument("--width", type=_positive_int, default=DEFAULT_WIDTH,
                   help=f"image width for random scenes (default: {DEFAULT_WIDTH})")
    p.add_argument("--height", type=_positive_int, default=DEFAULT_HEIGHT,
                   help=f"image height for random scenes (default: {DEFAULT_HEIGHT})")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the feed-forward model")
    p.add_argument("--data", required=True, help="dataset root with manifest.json")
    p.add_argument("--out", required=True, help="checkpoint path (GSNN)")
    p.add_argument("--steps", type=int, default=500, help="optimizer steps (default: 500)")
    p.add_argument("--lr", type=_non_negative, default=5e-4,
                   help="Adam learning rate (default: 5e-4)")
    p.add_argument("--lambda-mse", type=_non_negative, default=10.0,
                   help="MSE weight λ1 (default: 10.0)")
    p.add_argument("--lambda-offset", type=_non_negative, default=0.2,
                   help="offset-geometry weight λ_f (default: 0.2)")
    p.add_argument("--n-source", type=_positive_int, default=2,
                   help="source views K per step (default: 2)")
    p.add_argument("--log-every", type=int, default=50, help="log interval (default: 50)")
    _network_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="predict fields for one scene")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--out", required=True, help="output directory for .gspl fields")
    _common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", help="render a field from cameras")
    p.add_argument("--field", required=True, help="field file (.gspl)")
    p.add_argument("--camera", required=True, help="camera JSON file")
    p.add_argument("--out", required=True, help="output image directory")
    p.add_argument("--view", type=int, default=None, help="render one view index only")
    _common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluate on novel views and write a JSON report")
    p.add_argument("--data", required=True, help="dataset root or scene directory")
    p.add_argument("--ckpt", default=None, help="checkpoint to reconstruct with")
    p.add_argument("--fields", default=None, help="directory of fitted/reconstructed fields")
    p.add_argument("--split", default="test", help="manifest split (default: test)")
    p.add_argument("--report", required=True, help="output report JSON")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit", help="optimise fields for one scene directly")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--out", required=True, help="output directory for .gspl fields")
    p.add_argument("--steps", type=int, default=2000, help="optimizer steps (default: 2000)")
    p.add_argument("--semantic-steps", type=_non_negative_int, default=600,
                   help="cross-entropy steps for the semantic field (default: 600)")
    p.add_argument("--stride", type=_positive_int, default=3,
                   help="initialise from every n-th pixel (default: 3)")
    p.add_argument("--lambda-mse", type=_non_negative, default=10.0,
                   help="MSE weight λ1 (default: 10.0)")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gradcheck", help="finite-difference gradient self-test")
    p.add_argument("--module", action="append",
                   choices=("ops", "rasterizer", "interaction", "end_to_end"),
                   help="restrict to a module (repeatable; default: all)")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        os.environ[ENV_VAR] = str(args.threads)
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except GSSplatError as exc:
        return _fail(exc, exc.exit_code)
    except FileNotFoundError as exc:
        return _fail(exc, FormatError.exit_code)
    except (ArithmeticError, FloatingPointError) as exc:
        return _fail(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
