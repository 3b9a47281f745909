"""PNG dumps for qualitative inspection: comparison strips, colour masks, bar plots."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .data import TaskKind
from .resize import upscale

PALETTE = np.array(
    [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
    ],
    dtype=np.uint8,
)

CLASS_NAMES = {
    TaskKind.BINARY: ["background", "instrument"],
    TaskKind.PARTS: ["background", "shaft", "wrist", "claspers"],
    TaskKind.TYPE: ["background"] + [f"instrument_type_{i}" for i in range(1, 8)],
}


def _to_uint8(img):
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def comparison_strip(lr, sr, hr=None, scale=2, gap=4) -> np.ndarray:
    """Side-by-side uint8 strip: bicubic(LR) | SR | HR (HR panel only when given)."""
    panels = [_to_uint8(upscale(np.asarray(lr, dtype=np.float64), scale)), _to_uint8(sr)]
    if hr is not None:
        panels.append(_to_uint8(hr))
    spacer = np.full((panels[0].shape[0], gap, 3), 255, dtype=np.uint8)
    out = [panels[0]]
    for p in panels[1:]:
        out += [spacer, p]
    return np.concatenate(out, axis=1)


def save_strip(path, lr, sr, hr=None, scale=2) -> None:
    Image.fromarray(comparison_strip(lr, sr, hr, scale)).save(path, optimize=False)


def colorize(mask) -> np.ndarray:
    return PALETTE[np.asarray(mask) % len(PALETTE)]


def save_color_mask(path, mask) -> None:
    Image.fromarray(colorize(mask)).save(path, optimize=False)


def legend(task) -> dict:
    task = TaskKind(task)
    return {
        "task": task.value,
        "classes": [
            {"id": i, "name": name, "rgb": PALETTE[i].tolist()}
            for i, name in enumerate(CLASS_NAMES[task])
        ],
    }


def save_legend(path, task) -> None:
    Path(path).write_text(json.dumps(legend(task), indent=2) + "\n")


def fold_bar_plot(report, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    folds = report.fold_aggregates()
    names = report.metric_names
    fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 3))
    for ax, name in zip(np.atleast_1d(axes), names):
        ids = sorted(folds)
        means = [folds[f][name][0] for f in ids]
        stds = [folds[f][name][1] for f in ids]
        ax.bar([str(f) for f in ids], means, yerr=stds, color="tab:blue", capsize=3)
        ax.set_xlabel("fold")
        ax.set_title(f"{name} ({report.setting})")
    fig.tight_layout()
    # fixed metadata keeps re-runs byte-identical
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)
