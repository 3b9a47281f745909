"""``segsr`` command-line entry point.

Subcommands: synth, train-sr, train-seg, eval, infer. Failures print one line
starting with ``segsr: error:`` to stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import viz
from .config import ConfigError, RunConfig, dump_run_config, load_run_config
from .data import (
    TaskKind,
    degrade,
    load_stereo_dataset,
    make_synthetic_dataset,
    read_image,
    save_stereo_dataset,
    split_folds,
    write_image,
    write_mask,
)
from .reconstruction import SEGSRNet, super_resolve
from .segmentation import SPPLinkNet, segment
from .training import (
    bicubic_predictor,
    evaluate_seg,
    evaluate_sr,
    init_weights,
    model_from_checkpoint,
    save_report,
    seg_inputs,
    seg_predictor,
    sr_predictor,
    train_seg,
    train_sr,
    write_loss_csv,
    write_timing_csv,
)

PROG = "segsr"


class CLIError(Exception):
    pass


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _existing_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise CLIError(f"{what} not found: {p}")
    return p


def _existing_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} not found: {p}")
    return p


# -- synth ------------------------------------------------------------------

def cmd_synth(args):
    h, w = args.size
    out = Path(args.out)
    samples = make_synthetic_dataset(args.n, h, w, seed=args.seed)
    (out / "left").mkdir(parents=True, exist_ok=True)
    (out / "right").mkdir(parents=True, exist_ok=True)
    for task in TaskKind:
        (out / "labels" / task.value).mkdir(parents=True, exist_ok=True)
    save_stereo_dataset(samples, out)
    manifest = {
        "n": args.n,
        "height": h,
        "width": w,
        "seed": args.seed,
        "samples": [s.sample_id for s in samples],
        "tasks": [t.value for t in TaskKind],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {args.n} stereo pairs ({h}x{w}) with binary/parts/type masks to {out}")


# -- configuration ------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.dataset:
        cfg.dataset = args.dataset
    if args.out:
        cfg.out_dir = args.out
    if args.scale:
        cfg.scale = args.scale
        cfg.reconstruction = dataclasses.replace(cfg.reconstruction, scale=args.scale)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train_sr = dataclasses.replace(cfg.train_sr, seed=args.seed)
        cfg.train_seg = dataclasses.replace(cfg.train_seg, seed=args.seed)
    if args.steps is not None:
        cfg.train_sr = dataclasses.replace(cfg.train_sr, steps=args.steps)
        cfg.train_seg = dataclasses.replace(cfg.train_seg, steps=args.steps)
    if getattr(args, "task", None):
        cfg.seg = dataclasses.replace(cfg.seg, task=TaskKind(args.task))
    if getattr(args, "sr_checkpoint", None):
        cfg.sr_checkpoint = args.sr_checkpoint
    if getattr(args, "seg_input", None):
        cfg.seg_input = args.seg_input
    return cfg


def _load_dataset(path, scale):
    _existing_dir(path, "dataset directory")
    return load_stereo_dataset(path, scale)


def _finish_training(result, out, cfg):
    (out / "config.json").write_text(dump_run_config(cfg))
    ckpt_io.save(result.checkpoint, out / "checkpoint.zip")
    write_loss_csv(result.log, out / "loss.csv")
    write_timing_csv(result.log, out / "timing.csv")
    print(f"trained {len(result.log)} steps; final loss {result.log[-1].loss:.6f}; outputs in {out}"
          if result.log else f"no training steps requested; outputs in {out}")


def _checkpoint_writer(out):
    d = out / "checkpoints"

    def write(c):
        d.mkdir(exist_ok=True)
        ckpt_io.save(c, d / f"step_{c.step:06d}.zip")
    return write


def cmd_train_sr(args):
    cfg = _run_config(args)
    dataset = _load_dataset(cfg.dataset, cfg.scale)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = init_weights(SEGSRNet(cfg.extractor, cfg.pam, cfg.reconstruction), cfg.seed)
    result = train_sr(cfg.train_sr, dataset, model, on_checkpoint=_checkpoint_writer(out))
    _finish_training(result, out, cfg)


def cmd_train_seg(args):
    cfg = _run_config(args)
    dataset = _load_dataset(cfg.dataset, cfg.scale)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sr_model = None
    if cfg.seg_input == "sr":
        if not cfg.sr_checkpoint:
            raise CLIError("seg_input is 'sr' but no sr_checkpoint given (use --sr-checkpoint or --seg-input hr)")
        sr_model = model_from_checkpoint(ckpt_io.load(_existing_file(cfg.sr_checkpoint, "SR checkpoint")))
    model = init_weights(SPPLinkNet(cfg.seg), cfg.seed)
    result = train_seg(cfg.train_seg, dataset, model, cfg.seg.task, images=seg_inputs(dataset, sr_model),
                       on_checkpoint=_checkpoint_writer(out))
    _finish_training(result, out, cfg)


# -- eval ---------------------------------------------------------------------

def cmd_eval(args):
    out = Path(args.out)
    if args.checkpoint:
        ckpt = ckpt_io.load(_existing_file(args.checkpoint, "checkpoint"))
        model = model_from_checkpoint(ckpt)
        kind = ckpt.kind
        scale = model.scale if kind == "sr" else args.scale or 2
    elif args.baseline == "bicubic":
        kind, scale, model = "sr", args.scale or 2, None
    else:
        raise CLIError("eval needs --checkpoint or --baseline bicubic")
    sr_model = None
    if args.sr_checkpoint:
        sr_model = model_from_checkpoint(ckpt_io.load(_existing_file(args.sr_checkpoint, "SR checkpoint")))
        scale = sr_model.scale
    dataset = _load_dataset(args.dataset, scale)
    folds = split_folds([s.sample_id for s in dataset], args.folds, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "folds.json").write_text(folds.to_json() + "\n")
    if kind == "sr":
        predict = sr_predictor(model) if model is not None else bicubic_predictor(scale)
        method = "SEGSRNet" if model is not None else "bicubic"
        report = evaluate_sr(dataset, folds, predict, scale, method)
    else:
        task = TaskKind(args.task) if args.task else model.cfg.task
        report = evaluate_seg(dataset, folds, seg_predictor(model, sr_model), task)
        report.meta["input"] = "sr" if sr_model is not None else "hr"
    paths = save_report(report, out)
    if args.plot:
        viz.fold_bar_plot(report, out / "folds.png")
        paths.append(out / "folds.png")
    agg = report.aggregates
    summary = ", ".join(f"{m} {mu:.4f} ± {sd:.4f}" for m, (mu, sd) in agg.items())
    print(f"{report.method} {report.setting}: {summary}")


# -- infer --------------------------------------------------------------------

def _input_pairs(root):
    root = _existing_dir(root, "input directory")
    lefts = sorted((root / "left").glob("*.png"))
    if not lefts:
        raise CLIError(f"no images found under {root / 'left'}")
    pairs = []
    for p in lefts:
        q = root / "right" / p.name
        pairs.append((p.stem, read_image(p), read_image(q) if q.exists() else None))
    return pairs


def cmd_infer(args):
    out = Path(args.out)
    stage = args.stage
    sr_model = seg_model = None
    if stage in ("sr", "both"):
        sr_model = model_from_checkpoint(ckpt_io.load(_existing_file(args.checkpoint, "checkpoint")))
        if not isinstance(sr_model, SEGSRNet):
            raise CLIError(f"{args.checkpoint} is not an SR checkpoint")
    if stage == "seg":
        seg_model = model_from_checkpoint(ckpt_io.load(_existing_file(args.checkpoint, "checkpoint")))
    elif stage == "both":
        if not args.seg_checkpoint:
            raise CLIError("--stage both needs --seg-checkpoint")
        seg_model = model_from_checkpoint(ckpt_io.load(_existing_file(args.seg_checkpoint, "segmentation checkpoint")))
    if seg_model is not None and not isinstance(seg_model, SPPLinkNet):
        raise CLIError("segmentation checkpoint expected")

    pairs = _input_pairs(args.input)
    written = 0
    for name, left, right in pairs:
        image = left
        if sr_model is not None:
            if right is None:
                raise CLIError(f"no right view for {name}; SR needs stereo pairs")
            hr_l = hr_r = None
            if args.from_hr:
                hr_l, hr_r = left, right
                left, right = degrade(left, sr_model.scale), degrade(right, sr_model.scale)
            sr_l, sr_r = (t.numpy() for t in super_resolve(left, right, sr_model))
            for view, img, lr, hr in (("left", sr_l, left, hr_l), ("right", sr_r, right, hr_r)):
                (out / "sr" / view).mkdir(parents=True, exist_ok=True)
                (out / "strips").mkdir(parents=True, exist_ok=True)
                write_image(out / "sr" / view / f"{name}.png", img)
                viz.save_strip(out / "strips" / f"{name}_{view}.png", lr, img, hr, sr_model.scale)
                written += 2
            image = sr_l
        if seg_model is not None:
            mask = segment(np.asarray(image, dtype=np.float32), seg_model).numpy()
            (out / "masks").mkdir(parents=True, exist_ok=True)
            (out / "masks_color").mkdir(parents=True, exist_ok=True)
            write_mask(out / "masks" / f"{name}.png", mask)
            viz.save_color_mask(out / "masks_color" / f"{name}.png", mask)
            written += 2
    if seg_model is not None:
        viz.save_legend(out / "legend.json", seg_model.cfg.task)
    print(f"wrote {written} images for {len(pairs)} inputs to {out}")


# -- parser ---------------------------------------------------------------------

def _add_train_args(p):
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--dataset", help="dataset root (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--steps", type=int, help="total optimisation steps (overrides epochs)")


def build_parser():
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic stereo dataset")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=_size, default=(64, 96), help="HR size as HxW")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-sr", help="train the stereo SR network")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_sr)

    p = sub.add_parser("train-seg", help="train the segmentation network")
    _add_train_args(p)
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--sr-checkpoint", help="SR checkpoint whose outputs feed segmentation")
    p.add_argument("--seg-input", choices=("sr", "hr"))
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("eval", help="k-fold evaluation report")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("bicubic",))
    p.add_argument("--dataset", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--sr-checkpoint", help="segment SR reconstructions from this checkpoint")
    p.add_argument("--plot", action="store_true", help="also write a per-fold bar chart")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run SR and/or segmentation on a directory of pairs")
    p.add_argument("--checkpoint", required=True, help="SR checkpoint (seg checkpoint for --stage seg)")
    p.add_argument("--seg-checkpoint")
    p.add_argument("--input", required=True, help="directory with left/ and right/ PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=("sr", "seg", "both"), default="sr")
    p.add_argument("--from-hr", action="store_true",
                   help="inputs are HR frames: degrade them first and include HR in strips")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CLIError, ConfigError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split())
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
