"""Command-line interface: synth / train / eval / predict / dataset-sim / gradcheck."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--aspp-rates", dest="aspp_rates")
    p.add_argument("--aspp-out-channels", dest="aspp_out_channels", type=int)
    p.add_argument("--use-attention", dest="use_attention",
                   choices=("true", "false"))
    p.add_argument("--use-dgsa-gates", dest="use_dgsa_gates",
                   choices=("true", "false"))
    p.add_argument("--use-slf", dest="use_slf", choices=("true", "false"))
    p.add_argument("--slf-levels", dest="slf_levels", choices=("both", "high"))
    p.add_argument("--attention-passes", dest="attention_passes", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirrorfusion",
        description="Video mirror segmentation with short/long-term attention fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic mirror-video dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--score-all-frames", action="store_true",
                   help="score the adjacent and distant heads too, not just frame t")

    p = sub.add_parser("predict", help="write predicted masks for one video")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--video", required=True, help="video id (directory name)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("dataset-sim", help="first-frame similarity score of a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=("pairwise_mean", "per_video_max"),
                   default="pairwise_mean")

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    return parser


def _cmd_train(args) -> int:
    from .config import build_train_config
    from .trainer import train

    file_text = args.config.read_text() if args.config else None
    keys = ("lr", "batch_size", "epochs", "weight_decay", "image_size", "seed",
            "max_steps", "base_channels", "aspp_rates", "aspp_out_channels",
            "use_attention", "use_dgsa_gates", "use_slf", "slf_levels",
            "attention_passes")
    overrides = {k: getattr(args, k) for k in keys}
    cfg = build_train_config(file_text=file_text, overrides=overrides)
    path = train(cfg, args.data, args.out)
    print(f"checkpoint written to {path}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import format_metrics
    from .trainer import evaluate

    report = evaluate(args.ckpt, args.data, args.out,
                      score_all_frames=args.score_all_frames)
    print("IoU / F_beta / Accuracy / MAE")
    print(format_metrics(report))
    return 0


def _cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import scan_dataset
    from .errors import DatasetError
    from .trainer import _write_mask_png, predict_video, restore_model

    net, cfg = restore_model(load_checkpoint(args.ckpt))
    videos = {v.id: v for v in scan_dataset(args.data)}
    if args.video not in videos:
        raise DatasetError(f"video '{args.video}' not found under {args.data}")
    frame_maps, _ = predict_video(net, cfg, videos[args.video])
    vdir = Path(args.out) / args.video
    vdir.mkdir(parents=True, exist_ok=True)
    for idx, prob in sorted(frame_maps.items()):
        _write_mask_png(vdir / f"{idx:06d}.png", prob)
    print(f"wrote {len(frame_maps)} masks to {vdir}")
    return 0


def _cmd_dataset_sim(args) -> int:
    from .data import load_image, scan_dataset
    from .errors import DatasetError
    from .metrics import dataset_similarity

    videos = scan_dataset(args.data)
    if len(videos) < 2:
        raise DatasetError("dataset similarity needs at least two videos")
    frames = [load_image(v.frame_paths[0]) * 255.0 for v in videos]
    print(f"{dataset_similarity(frames, mode=args.mode):.2f}")
    return 0


def _cmd_synth(args) -> int:
    from .data import synth_generate

    synth_generate(args.seed, args.videos, args.frames, args.size, args.out)
    print(f"wrote {args.videos} videos to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_full_suite

    return 0 if run_full_suite(report=print, seeds=args.seeds) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "predict": _cmd_predict,
        "dataset-sim": _cmd_dataset_sim,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except Exception as e:  # runtime failures exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
