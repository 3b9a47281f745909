"""Stereo datasets: on-disk loading, bicubic degradation, synthetic scenes, folds."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .resize import resize

SCALES = (2, 4)


class TaskKind(str, enum.Enum):
    BINARY = "binary"
    PARTS = "parts"
    TYPE = "type"

    @property
    def class_count(self) -> int:
        return {"binary": 2, "parts": 4, "type": 8}[self.value]


@dataclass
class StereoSample:
    sample_id: str
    left_hr: np.ndarray
    right_hr: np.ndarray
    left_lr: np.ndarray | None = None
    right_lr: np.ndarray | None = None
    masks: dict[TaskKind, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.left_hr.shape != self.right_hr.shape:
            raise ValueError(
                f"{self.sample_id}: left/right HR shapes differ "
                f"{self.left_hr.shape} vs {self.right_hr.shape}"
            )
        if (self.left_lr is None) != (self.right_lr is None):
            raise ValueError(f"{self.sample_id}: only one LR view given")
        if self.left_lr is not None:
            if self.left_lr.shape != self.right_lr.shape:
                raise ValueError(f"{self.sample_id}: left/right LR shapes differ")
            h, w = self.left_hr.shape[-2:]
            lh, lw = self.left_lr.shape[-2:]
            if h % lh or w % lw or h // lh != w // lw:
                raise ValueError(
                    f"{self.sample_id}: LR {lh}x{lw} is not an integer downscale of HR {h}x{w}"
                )
        for task, mask in self.masks.items():
            task = TaskKind(task)
            if mask.shape != self.left_hr.shape[-2:]:
                raise ValueError(f"{self.sample_id}: {task.value} mask shape {mask.shape}")
            if mask.size and (mask.min() < 0 or mask.max() >= task.class_count):
                raise ValueError(f"{self.sample_id}: {task.value} mask has out-of-range class ids")

    @property
    def scale(self) -> int | None:
        if self.left_lr is None:
            return None
        return self.left_hr.shape[-1] // self.left_lr.shape[-1]


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: tuple[tuple[str, int], ...]

    def fold_of(self, sample_id: str) -> int:
        return dict(self.assignments)[sample_id]

    def members(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignments if f == fold]

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "folds": dict(self.assignments)}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FoldSplit":
        doc = json.loads(text)
        return cls(int(doc["k"]), tuple(sorted((str(s), int(f)) for s, f in doc["folds"].items())))


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Anti-aliased bicubic downscale of a (..., H, W) image by ``scale``."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale}")
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise ValueError(
            f"image size {h}x{w} is not divisible by scale {scale}; crop to a multiple of {scale} first"
        )
    lr = resize(hr, (h // scale, w // scale))
    return np.clip(lr, 0.0, 1.0)


def split_folds(sample_ids, k: int, seed: int) -> FoldSplit:
    ids = list(sample_ids)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if len(ids) < k:
        raise ValueError(f"cannot split {len(ids)} samples into {k} folds")
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    assignments = {ids[j]: pos % k for pos, j in enumerate(order)}
    return FoldSplit(k, tuple(sorted(assignments.items())))


# -- image io ---------------------------------------------------------------

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path, optimize=False)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            raise ValueError(f"{path}: label masks must be single-channel, got mode {im.mode}")
        return np.asarray(im, dtype=np.int64)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="L").save(path, optimize=False)


def load_stereo_dataset(root_dir, scale: int) -> list[StereoSample]:
    """Load ``root/left/*.png`` + ``root/right/*.png`` pairs (matched by filename).

    Optional ``root/labels/{binary,parts,type}/<name>.png`` hold label masks for
    the left view; optional ``root/lr_x{scale}/{left,right}/`` hold precomputed
    LR views, otherwise LR views are made with :func:`degrade`.
    """
    root = Path(root_dir)
    left_dir, right_dir = root / "left", root / "right"
    for d in (left_dir, right_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"missing image directory: {d}")
    lefts = {p.name: p for p in left_dir.glob("*.png")}
    rights = {p.name: p for p in right_dir.glob("*.png")}
    for name in sorted(set(lefts) ^ set(rights)):
        orphan = lefts.get(name) or rights.get(name)
        raise FileNotFoundError(f"no stereo counterpart for {orphan}")

    lr_root = root / f"lr_x{scale}"
    samples = []
    for name in sorted(lefts):
        sid = Path(name).stem
        left, right = read_image(lefts[name]), read_image(rights[name])
        if left.shape != right.shape:
            raise ValueError(
                f"dimension mismatch in pair {name}: left {left.shape[1:]} vs right {right.shape[1:]}"
            )
        if (lr_root / "left" / name).exists():
            left_lr = read_image(lr_root / "left" / name)
            right_lr = read_image(lr_root / "right" / name)
        else:
            left_lr, right_lr = degrade(left, scale), degrade(right, scale)
        masks = {}
        for task in TaskKind:
            p = root / "labels" / task.value / name
            if p.exists():
                masks[task] = read_mask(p)
        samples.append(StereoSample(sid, left, right, left_lr, right_lr, masks))
    return samples


def save_stereo_dataset(samples, root_dir) -> None:
    root = Path(root_dir)
    (root / "left").mkdir(parents=True, exist_ok=True)
    (root / "right").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(root / "left" / f"{s.sample_id}.png", s.left_hr)
        write_image(root / "right" / f"{s.sample_id}.png", s.right_hr)
        for task, mask in s.masks.items():
            d = root / "labels" / TaskKind(task).value
            d.mkdir(parents=True, exist_ok=True)
            write_mask(d / f"{s.sample_id}.png", mask)


# -- synthetic scenes -------------------------------------------------------

def _tissue_background(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.array([0.72, 0.38, 0.36])[:, None, None]
    field_ = np.zeros((h, w))
    for _ in range(4):
        fy, fx = rng.uniform(0.02, 0.2, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field_ += rng.uniform(0.03, 0.08) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    noise = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=1.5, mode="wrap")
    field_ += 0.12 * noise / (noise.std() + 1e-12)
    # sparse vessels: thin dark curves
    vessels = np.zeros((h, w))
    for _ in range(3):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(0.2, 0.6) * max(h, w)
        vessels += np.exp(-((np.hypot(xx - cx, yy - cy) - r) ** 2) / 2.0)
    img = base * (1.0 + field_)[None] - 0.15 * np.array([0.2, 1.0, 1.0])[:, None, None] * vessels[None]
    return img


def _instrument(rng, h, w):
    """Label map of a grasper: 1 shaft, 2 wrist, 3 claspers (0 background)."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # shaft enters from a random image border point and ends at the wrist
    tip = np.array([rng.uniform(0.35, 0.65) * w, rng.uniform(0.35, 0.65) * h])
    angle = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.cos(angle), np.sin(angle)])
    length = 2.0 * max(h, w)
    half_width = rng.uniform(0.06, 0.1) * min(h, w)
    rel_x, rel_y = xx - tip[0], yy - tip[1]
    along = rel_x * direction[0] + rel_y * direction[1]
    across = -rel_x * direction[1] + rel_y * direction[0]
    labels = np.zeros((h, w), dtype=np.int64)
    wrist_r = 1.3 * half_width
    labels[(along > wrist_r * 0.5) & (along < length) & (np.abs(across) < half_width)] = 1
    labels[np.hypot(rel_x, rel_y) < wrist_r] = 2
    # claspers: two prongs beyond the wrist, opening by a random angle
    opening = rng.uniform(0.15, 0.45)
    prong_len = rng.uniform(1.6, 2.4) * wrist_r
    prong_w = 0.35 * half_width
    for sign in (-1.0, 1.0):
        a = angle + np.pi + sign * opening
        d = np.array([np.cos(a), np.sin(a)])
        pa = rel_x * d[0] + rel_y * d[1]
        pc = -rel_x * d[1] + rel_y * d[0]
        prong = (pa > 0.6 * wrist_r) & (pa < wrist_r + prong_len) & (np.abs(pc) < prong_w)
        labels[prong & (labels == 0)] = 3
    return labels, along, across, half_width


def make_synthetic_stereo(height: int, width: int, disparity: int, seed: int) -> StereoSample:
    """Textured tissue scene with one grasper, rendered as a rectified stereo pair.

    The right view is the left view translated by ``disparity`` pixels:
    ``right[..., c] == left[..., c - disparity]`` for ``c >= disparity``.
    Masks describe the left view.
    """
    if height < 1 or width < 1:
        raise ValueError("height and width must be positive")
    if not 0 <= disparity < width / 4:
        raise ValueError(f"disparity must lie in [0, width/4) = [0, {width / 4}), got {disparity}")
    rng = np.random.default_rng(seed)
    canvas_w = width + disparity
    scene = _tissue_background(rng, height, canvas_w)
    labels, along, across, half_width = _instrument(rng, height, canvas_w)
    # brushed-metal shading across the shaft, darker claspers
    shade = 0.55 + 0.35 * np.cos(np.clip(across / half_width, -1, 1) * np.pi / 2)
    shade += 0.03 * np.sin(along / 2.0)
    metal = np.array([0.78, 0.8, 0.84])[:, None, None] * shade[None]
    colors = {1: metal, 2: 0.7 * metal, 3: 0.45 * metal}
    for part, col in colors.items():
        scene = np.where((labels == part)[None], col, scene)
    scene = np.clip(scene, 0.0, 1.0).astype(np.float32)

    left = np.ascontiguousarray(scene[:, :, disparity:])
    right = np.ascontiguousarray(scene[:, :, :width])
    parts = np.ascontiguousarray(labels[:, disparity:])
    tool_type = int(rng.integers(1, TaskKind.TYPE.class_count))
    masks = {
        TaskKind.BINARY: (parts > 0).astype(np.int64),
        TaskKind.PARTS: parts,
        TaskKind.TYPE: np.where(parts > 0, tool_type, 0).astype(np.int64),
    }
    return StereoSample(f"synth_{seed:05d}", left, right, masks=masks)


def with_lr(sample: StereoSample, scale: int) -> StereoSample:
    return StereoSample(
        sample.sample_id,
        sample.left_hr,
        sample.right_hr,
        degrade(sample.left_hr, scale),
        degrade(sample.right_hr, scale),
        dict(sample.masks),
    )


def make_synthetic_dataset(n: int, height: int, width: int, seed: int = 0, scale: int | None = None):
    rng = np.random.default_rng(seed)
    max_disp = max(int(np.ceil(width / 4)) - 1, 0)
    samples = []
    for i in range(n):
        d = int(rng.integers(0, max_disp + 1)) if max_disp else 0
        s = make_synthetic_stereo(height, width, d, seed * 10_000 + i)
        s.sample_id = f"synth_{i:04d}"
        samples.append(with_lr(s, scale) if scale else s)
    return samples
