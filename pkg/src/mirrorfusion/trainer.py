"""Training and evaluation loops over frame triples.

An epoch sweeps every valid t of every video once (seeded shuffle); the
distant frame n is redrawn per epoch.  Batches of triples are processed
sequentially with gradient accumulation, so the engine never needs a batch
dimension; the logged step loss is the batch mean.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, build_train_config, config_to_text
from .data import FrameTriple, VideoRecord, sample_triple, scan_dataset
from .errors import CheckpointError, DatasetError
from .losses import total_loss
from .metrics import MetricsReport, compute_metrics, format_metrics, metrics_kv
from .network import MirrorDetectionNet
from .optim import AdamW

log = logging.getLogger(__name__)


def _triple_seed(base_seed: int, video_id: str, t: int, epoch: int) -> int:
    digest = hashlib.sha256(f"{base_seed}:{video_id}:{t}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _epoch_plan(videos: list[VideoRecord], seed: int, epoch: int):
    plan = [(v, t) for v in videos for t in range(1, v.length)]
    rng = np.random.default_rng((seed, epoch))
    rng.shuffle(plan)
    return plan


def build_model(cfg: TrainConfig) -> MirrorDetectionNet:
    return MirrorDetectionNet(cfg, np.random.default_rng(cfg.seed))


def _model_checkpoint(net: MirrorDetectionNet, opt: AdamW, cfg: TrainConfig) -> Checkpoint:
    params = {k: np.asarray(p.data, dtype=np.float32)
              for k, p in net.named_parameters()}
    return Checkpoint(params=params,
                      moments_m={k: v.astype(np.float32) for k, v in opt.m.items()},
                      moments_v={k: v.astype(np.float32) for k, v in opt.v.items()},
                      step=opt.step_count,
                      config_text=config_to_text(cfg))


def restore_model(ckpt: Checkpoint) -> tuple[MirrorDetectionNet, TrainConfig]:
    cfg = build_train_config(file_text=ckpt.config_text)
    net = build_model(cfg)
    named = dict(net.named_parameters())
    if named.keys() != ckpt.params.keys():
        missing = sorted(named.keys() ^ ckpt.params.keys())
        raise CheckpointError(f"checkpoint/model parameter mismatch: {missing[:5]}")
    for k, p in named.items():
        arr = ckpt.params[k]
        if tuple(arr.shape) != tuple(p.shape):
            raise CheckpointError(f"shape mismatch for '{k}': "
                                  f"{arr.shape} vs {tuple(p.shape)}")
        p.data = arr.astype(p.data.dtype)
    return net, cfg


def train(cfg: TrainConfig, dataset_root, out_dir) -> Path:
    """Run the optimization loop; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    videos = scan_dataset(dataset_root)
    if not videos:
        raise DatasetError(f"no usable videos under {dataset_root}")
    net = build_model(cfg)
    opt = AdamW(dict(net.named_parameters()), lr=cfg.lr,
                weight_decay=cfg.weight_decay)
    loss_log = open(out_dir / "loss.log", "w")
    final_path = out_dir / "checkpoint.mfck"
    stop = False
    try:
        for epoch in range(cfg.epochs):
            plan = _epoch_plan(videos, cfg.seed, epoch)
            for start in range(0, len(plan), cfg.batch_size):
                batch = plan[start:start + cfg.batch_size]
                opt.zero_grad()
                batch_loss = 0.0
                for video, t in batch:
                    triple = sample_triple(
                        video, t, _triple_seed(cfg.seed, video.id, t, epoch),
                        image_size=cfg.image_size)
                    preds = net.forward(triple.i_prev, triple.i_t, triple.i_n)
                    loss = total_loss(preds, triple.masks) * (1.0 / len(batch))
                    loss.backward()
                    batch_loss += loss.item()
                if not np.isfinite(batch_loss):
                    raise FloatingPointError(f"non-finite loss at step {opt.step_count + 1}")
                opt.step()
                loss_log.write(f"{opt.step_count} {batch_loss:.17g}\n")
                if cfg.max_steps and opt.step_count >= cfg.max_steps:
                    stop = True
                    break
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch:03d}.mfck",
                            _model_checkpoint(net, opt, cfg))
            log.info("epoch %d done (%d steps)", epoch, opt.step_count)
            if stop:
                break
    finally:
        loss_log.close()
    save_checkpoint(final_path, _model_checkpoint(net, opt, cfg))
    return final_path


def predict_video(net: MirrorDetectionNet, cfg: TrainConfig, video: VideoRecord,
                  collect_all: bool = False):
    """Probability maps for a video: frame t from the fused head for each t,
    frame 0 from the adjacent-frame head at t=1.

    Returns (per-frame map dict, scored (pred, gt index) list for metrics).
    """
    frame_maps: dict[int, np.ndarray] = {}
    scored: list[tuple[np.ndarray, int]] = []
    with T.no_grad():
        for t in range(1, video.length):
            triple = sample_triple(video, t, _triple_seed(cfg.seed, video.id, t, 0),
                                   image_size=cfg.image_size)
            preds = net.forward(triple.i_prev, triple.i_t, triple.i_n)
            frame_maps[t] = np.asarray(preds.p_t.data, dtype=np.float32)
            scored.append((frame_maps[t], t))
            if t == 1:
                frame_maps[0] = np.asarray(preds.p_prev.data, dtype=np.float32)
            if collect_all:
                scored.append((np.asarray(preds.p_prev.data, dtype=np.float32), t - 1))
                scored.append((np.asarray(preds.p_n.data, dtype=np.float32), triple.n))
    return frame_maps, scored


def _write_mask_png(path: Path, prob: np.ndarray) -> None:
    img = np.clip(np.rint(prob[0] * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def evaluate(checkpoint_path, dataset_root, out_dir,
             score_all_frames: bool = False) -> MetricsReport:
    """Score a checkpoint on a dataset; writes predicted masks and metric files."""
    ckpt = load_checkpoint(checkpoint_path)
    net, cfg = restore_model(ckpt)
    videos = scan_dataset(dataset_root)
    if not videos:
        raise DatasetError(f"no usable videos under {dataset_root}")
    out_dir = Path(out_dir)
    preds: list[np.ndarray] = []
    gts: list[np.ndarray] = []
    from .data import load_mask, resize_image
    for video in videos:
        frame_maps, scored = predict_video(net, cfg, video,
                                           collect_all=score_all_frames)
        vdir = out_dir / video.id
        vdir.mkdir(parents=True, exist_ok=True)
        for idx, prob in sorted(frame_maps.items()):
            _write_mask_png(vdir / f"{idx:06d}.png", prob)
        for prob, idx in scored:
            preds.append(prob)
            gts.append(resize_image(load_mask(video.mask_paths[idx]),
                                    cfg.image_size, is_mask=True))
    report = compute_metrics(preds, gts)
    (out_dir / "metrics.txt").write_text(
        "IoU / F_beta / Accuracy / MAE\n" + format_metrics(report) + "\n")
    (out_dir / "metrics.kv").write_text(metrics_kv(report))
    return report
