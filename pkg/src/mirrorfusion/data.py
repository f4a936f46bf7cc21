"""Dataset layout, frame-triple sampling, resizing, and the synthetic
mirror-video generator.

Layout: ``root/<video_id>/frames/NNNNNN.png`` with matching
``root/<video_id>/masks/NNNNNN.png`` (8-bit grayscale, 0 background /
255 mirror, binarized at 128 on load).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError
from .metrics import GroundTruthMask
from .tensor import Tensor, bilinear_matrix

log = logging.getLogger(__name__)


@dataclass
class VideoRecord:
    id: str
    frame_paths: list[Path]
    mask_paths: list[Path]

    @property
    def length(self) -> int:
        return len(self.frame_paths)


@dataclass
class FrameTriple:
    i_prev: Tensor          # [3,H,W] in [0,1]
    i_t: Tensor
    i_n: Tensor
    g_prev: GroundTruthMask
    g_t: GroundTruthMask
    g_n: GroundTruthMask
    t: int
    n: int

    @property
    def masks(self):
        return (self.g_prev, self.g_t, self.g_n)


def scan_dataset(root) -> list[VideoRecord]:
    """One record per video directory; videos shorter than 3 frames are skipped."""
    root = Path(root)
    records = []
    if not root.is_dir():
        return records
    for vdir in sorted(p for p in root.iterdir() if p.is_dir()):
        frames_dir, masks_dir = vdir / "frames", vdir / "masks"
        if not frames_dir.is_dir():
            continue
        frame_paths = sorted(frames_dir.glob("*.png"))
        mask_paths = []
        for fp in frame_paths:
            mp = masks_dir / fp.name
            if not mp.is_file():
                raise DatasetError(f"missing mask for frame: {mp}")
            mask_paths.append(mp)
        if len(frame_paths) < 3:
            log.warning("skipping video %s: only %d frame(s), need >= 3",
                        vdir.name, len(frame_paths))
            continue
        records.append(VideoRecord(id=vdir.name, frame_paths=frame_paths,
                                   mask_paths=mask_paths))
    return records


def load_image(path) -> np.ndarray:
    """PNG -> float32 [3,H,W] scaled to [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr.transpose(2, 0, 1) / 255.0


def load_mask(path) -> np.ndarray:
    """PNG -> float32 [1,H,W] in {0,1} (threshold 128)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return (arr >= 128.0).astype(np.float32)[None]


def _resize_bilinear(chw: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    wr = bilinear_matrix(chw.shape[1], out_h)
    wc = bilinear_matrix(chw.shape[2], out_w)
    return np.matmul(wr, np.matmul(chw.astype(np.float64), wc.T)).astype(np.float32)


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    return np.clip(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64),
                   0, n_in - 1)


def resize_image(img: np.ndarray, target: int = 512, is_mask: bool = False) -> np.ndarray:
    """Resize a CHW array: bilinear for images, nearest (re-binarized) for masks."""
    if target < 32 or target % 32:
        raise ConfigError(f"resize target must be a positive multiple of 32, got {target}")
    if img.shape[1] == target and img.shape[2] == target:
        return img.astype(np.float32)
    if is_mask:
        ri = _nearest_index(img.shape[1], target)
        ci = _nearest_index(img.shape[2], target)
        out = img[:, ri][:, :, ci]
        return (out >= 0.5).astype(np.float32)
    return _resize_bilinear(img, target, target)


def choose_distant_index(length: int, t: int, rng_seed: int) -> int:
    """Uniform draw from {0..length-1} minus the adjacent pair {t-1, t}."""
    if length < 3:
        raise ValueError(f"need at least 3 frames, got {length}")
    if not 1 <= t < length:
        raise ValueError(f"t must satisfy 1 <= t < length, got t={t}")
    choices = [i for i in range(length) if i not in (t - 1, t)]
    rng = np.random.default_rng(rng_seed)
    return choices[int(rng.integers(len(choices)))]


def sample_triple(video: VideoRecord, t: int, rng_seed: int,
                  image_size: int = 512) -> FrameTriple:
    """Load frames t-1, t and a seeded random distant frame, resized to config."""
    n = choose_distant_index(video.length, t, rng_seed)
    idxs = (t - 1, t, n)
    images = [resize_image(load_image(video.frame_paths[i]), image_size)
              for i in idxs]
    masks = [resize_image(load_mask(video.mask_paths[i]), image_size, is_mask=True)
             for i in idxs]
    return FrameTriple(
        i_prev=Tensor(images[0]), i_t=Tensor(images[1]), i_n=Tensor(images[2]),
        g_prev=GroundTruthMask(masks[0]), g_t=GroundTruthMask(masks[1]),
        g_n=GroundTruthMask(masks[2]), t=t, n=n)


# -- synthetic videos ---------------------------------------------------------

def _texture(rng: np.random.Generator, h: int, w: int, coarse: int = 4) -> np.ndarray:
    """Smooth random RGB texture in [0,255], HWC uint8."""
    lo = rng.uniform(30, 225, size=(3, max(h // coarse, 1), max(w // coarse, 1)))
    up = _resize_bilinear(lo, h, w)
    return np.clip(up, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def _save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path)


def synth_generate(seed: int, n_videos: int, frames_per_video: int, size: int,
                   out) -> None:
    """Write a training set of mirror videos.

    Each video has a static mirror rectangle whose interior always shows the
    horizontally flipped copy of a scene window where a textured sprite moves,
    plus a static picture rectangle as a distractor.  Masks mark the mirror.
    """
    if size < 32 or size % 32:
        raise ConfigError(f"size must be a positive multiple of 32, got {size}")
    if frames_per_video < 3:
        raise ConfigError("frames_per_video must be >= 3")
    out = Path(out)
    rng = np.random.default_rng(seed)
    for v in range(n_videos):
        vdir = out / f"video_{v:03d}"
        frames_dir, masks_dir = vdir / "frames", vdir / "masks"
        frames_dir.mkdir(parents=True, exist_ok=True)
        masks_dir.mkdir(parents=True, exist_ok=True)

        background = _texture(rng, size, size, coarse=4)
        rect_w = int(rng.integers(size // 4, size // 3 + 1))
        rect_h = int(rng.integers(size // 4, size // 3 + 1))
        margin = 2
        # scene window on the left, mirror on the right at the same height
        win_x = int(rng.integers(margin, size // 2 - rect_w - margin + 1))
        win_y = int(rng.integers(margin, size - rect_h - margin + 1))
        mir_x = int(rng.integers(size // 2 + margin, size - rect_w - margin + 1))
        mir_y = win_y

        pic_w, pic_h = rect_w // 2 + 2, rect_h // 2 + 2
        pic_x = int(rng.integers(size // 2 + margin, size - pic_w - margin + 1))
        for _ in range(40):  # keep the picture off the mirror
            pic_y = int(rng.integers(margin, size - pic_h - margin + 1))
            if pic_y + pic_h <= mir_y or pic_y >= mir_y + rect_h \
                    or pic_x + pic_w <= mir_x or pic_x >= mir_x + rect_w:
                break
        picture = _texture(rng, pic_h, pic_w, coarse=2)

        sprite_s = max(rect_h // 2, 3)
        sprite = _texture(rng, sprite_s, sprite_s, coarse=2)
        path_x = rng.integers(0, max(rect_w - sprite_s, 1), size=frames_per_video)
        path_y = rng.integers(0, max(rect_h - sprite_s, 1), size=frames_per_video)

        mask = np.zeros((size, size), dtype=np.uint8)
        mask[mir_y:mir_y + rect_h, mir_x:mir_x + rect_w] = 255

        for k in range(frames_per_video):
            img = background.copy()
            img[pic_y:pic_y + pic_h, pic_x:pic_x + pic_w] = picture
            img[pic_y, pic_x:pic_x + pic_w] = 20           # picture frame
            img[pic_y + pic_h - 1, pic_x:pic_x + pic_w] = 20
            img[pic_y:pic_y + pic_h, pic_x] = 20
            img[pic_y:pic_y + pic_h, pic_x + pic_w - 1] = 20
            sy = win_y + int(path_y[k])
            sx = win_x + int(path_x[k])
            img[sy:sy + sprite_s, sx:sx + sprite_s] = sprite
            window = img[win_y:win_y + rect_h, win_x:win_x + rect_w]
            img[mir_y:mir_y + rect_h, mir_x:mir_x + rect_w] = window[:, ::-1]
            _save_png(frames_dir / f"{k:06d}.png", img)
            _save_png(masks_dir / f"{k:06d}.png", mask)
