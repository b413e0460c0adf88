"""Command line entry point: ``cosparse {synth,train,localize,evaluate,render}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset_io import (
    DEFAULT_MAX_PROPOSALS,
    DatasetError,
    SynthConfig,
    generate_synthetic,
    load_manifest,
    save_image,
)
from .detector import DimensionError, TrainConfig, TrainingDiverged, load_detector, save_detector, train
from .heatmap import heatmap_to_gray
from .pipeline import (
    MODES,
    draw_box,
    evaluation_report,
    load_predictions,
    localize_image,
    predict,
    write_json,
    write_predictions,
)
from .segmentation import SegParams


class UsageError(Exception):
    pass


def _add_manifest(p, required=True):
    p.add_argument("--manifest", required=required, help="manifest.json or the dataset directory")
    p.add_argument("--max-proposals", type=int, default=DEFAULT_MAX_PROPOSALS,
                   help="keep only the first N proposals of each image (default %(default)s)")


def _add_seg(p):
    d = SegParams()
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--clamp-delta", type=float, default=d.clamp_delta)
    p.add_argument("--fh-sigma", type=float, default=d.fh_sigma)
    p.add_argument("--fh-k", type=float, default=d.fh_k)
    p.add_argument("--fh-min-size", type=int, default=d.fh_min_size)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosparse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = SynthConfig()
    p = sub.add_parser("synth", help="write a synthetic planted-signal dataset")
    p.add_argument("--n", type=int, default=s.n_images, help="number of images")
    p.add_argument("--m", type=int, default=s.n_proposals, help="proposals per image (>= 2)")
    p.add_argument("--k", type=int, default=s.dim, help="feature dimension")
    p.add_argument("--signal", type=float, default=s.signal)
    p.add_argument("--noise", type=float, default=s.noise)
    p.add_argument("--width", type=int, default=s.width)
    p.add_argument("--height", type=int, default=s.height)
    p.add_argument("--no-rasters", action="store_true")
    p.add_argument("--seed", type=int, default=s.seed)
    p.add_argument("--out", required=True, help="output directory")

    t = TrainConfig()
    p = sub.add_parser("train", help="learn the common-object detector")
    _add_manifest(p)
    p.add_argument("--lambda", dest="lam", type=float, default=t.lam)
    p.add_argument("--epsilon", type=float, default=t.epsilon)
    p.add_argument("--lr", type=float, default=t.lr_initial)
    p.add_argument("--lr-decay", type=float, default=t.lr_decay_factor)
    p.add_argument("--lr-decay-every", type=int, default=t.lr_decay_every)
    p.add_argument("--epochs", type=int, default=t.total_epochs)
    p.add_argument("--batch", type=int, default=t.batch_size)
    p.add_argument("--init-sigma", type=float, default=t.init_sigma)
    p.add_argument("--no-objectness", action="store_true", help="score without objectness weights")
    p.add_argument("--seed", type=int, default=t.seed)
    p.add_argument("--out", required=True, help="directory for detector.json and train_log.json")

    p = sub.add_parser("localize", help="predict one box per image")
    _add_manifest(p)
    p.add_argument("--detector", help="detector.json (required for our-* modes)")
    p.add_argument("--mode", choices=MODES, default="our-sel")
    _add_seg(p)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; localization is deterministic")
    p.add_argument("--out", required=True, help="directory for predictions.txt")

    p = sub.add_parser("evaluate", help="CorLoc, CorLoc curve and error modes")
    _add_manifest(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--curve-points", type=int, default=101)
    p.add_argument("--out", required=True, help="directory for report.json")

    p = sub.add_parser("render", help="heat maps, masks and box overlays per image")
    _add_manifest(p)
    p.add_argument("--detector")
    p.add_argument("--mode", choices=[m for m in MODES if m.endswith("-seg")], default="our-seg")
    _add_seg(p)
    p.add_argument("--out", required=True)
    return parser


def _seg_params(args) -> SegParams:
    try:
        return SegParams(
            beta=args.beta,
            clamp_delta=args.clamp_delta,
            fh_sigma=args.fh_sigma,
            fh_k=args.fh_k,
            fh_min_size=args.fh_min_size,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _detector_for(args, mode):
    if not mode.startswith("our-"):
        return None, True
    if not args.detector:
        raise UsageError(f"--detector is required for mode {mode}")
    d, cfg = load_detector(args.detector)
    return d, (cfg.use_objectness if cfg is not None else True)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_images=args.n,
        n_proposals=args.m,
        dim=args.k,
        signal=args.signal,
        noise=args.noise,
        seed=args.seed,
        width=args.width,
        height=args.height,
        rasters=not args.no_rasters,
    )
    try:
        cfg.validate()
    except DatasetError as exc:
        raise UsageError(str(exc)) from exc
    data = generate_synthetic(cfg, args.out)
    print(f"synth: N={data.n} M={cfg.n_proposals} K={cfg.dim} seed={cfg.seed} -> {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    try:
        cfg = TrainConfig(
            lam=args.lam,
            epsilon=args.epsilon,
            lr_initial=args.lr,
            lr_decay_factor=args.lr_decay,
            lr_decay_every=args.lr_decay_every,
            total_epochs=args.epochs,
            batch_size=args.batch,
            init_sigma=args.init_sigma,
            seed=args.seed,
            use_objectness=not args.no_objectness,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = load_manifest(args.manifest, args.max_proposals)

    def progress(epoch, lr, obj):
        print(f"epoch {epoch + 1:3d}  lr {lr:.4g}  objective {obj:.6f}", file=sys.stderr)

    d, log = train(data, cfg, log=progress)
    out = Path(args.out)
    save_detector(out / "detector.json", d, cfg)
    write_json(out / "train_log.json", {"objectives": log.objectives, "learning_rates": log.learning_rates})
    print(f"train: objective {log.objectives[0]:.6f} -> {log.objectives[-1]:.6f}; wrote {out / 'detector.json'}")
    return 0


def cmd_localize(args) -> int:
    params = _seg_params(args)
    d, use_obj = _detector_for(args, args.mode)
    data = load_manifest(args.manifest, args.max_proposals)
    preds = predict(data, args.mode, d, params, use_obj)
    path = Path(args.out) / "predictions.txt"
    write_predictions(path, preds, args.mode)
    print(f"localize: {len(preds)} boxes ({args.mode}) -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    data = load_manifest(args.manifest, args.max_proposals)
    preds, _ = load_predictions(args.predictions)
    report = evaluation_report(preds, data, args.threshold, args.curve_points)
    path = Path(args.out) / "report.json"
    write_json(path, report)
    print(f"CorLoc@{args.threshold:g}: {report['corloc']:.4f} ({report['num_images']} images)")
    return 0


def cmd_render(args) -> int:
    params = _seg_params(args)
    d, use_obj = _detector_for(args, args.mode)
    data = load_manifest(args.manifest, args.max_proposals)
    out = Path(args.out)
    for img in data.images:
        box, seg = localize_image(img, args.mode, d, params, use_obj)
        save_image(out / f"{img.id}_heat.png", heatmap_to_gray(seg.heat))
        save_image(out / f"{img.id}_mask.png", seg.mask().astype("uint8") * 255)
        save_image(out / f"{img.id}_overlay.png", draw_box(img.raster, box))
    print(f"render: {3 * data.n} images -> {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, DimensionError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
