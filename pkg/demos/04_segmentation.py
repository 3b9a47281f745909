"""
Instrument segmentation
=======================

Trains SPP-LinkNet on one synthetic frame for the binary and parts tasks and
prints per-class IoU. Takes a minute or two on one CPU core.
"""
from pathlib import Path

import numpy as np
import torch

from segsr.config import TrainConfig
from segsr.data import TaskKind, make_synthetic_dataset
from segsr.metrics import iou
from segsr.segmentation import SegConfig, SPPLinkNet, segment
from segsr.training import init_weights, train_seg
from segsr.viz import CLASS_NAMES, save_color_mask

torch.set_num_threads(1)
out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

(sample,) = make_synthetic_dataset(1, 64, 96, seed=0)
cfg = TrainConfig(steps=150, batch_size=1, patch_size=None, seed=0, loss="seg_ce_jaccard")

for task in (TaskKind.BINARY, TaskKind.PARTS):
    model = init_weights(SPPLinkNet(SegConfig(task)), 0)
    train_seg(cfg, [sample], model)
    pred = segment(sample.left_hr, model).numpy()
    scores = iou(pred, sample.masks[task], task.class_count)
    print(f"{task.value}: mean IoU {scores.mean:.3f}")
    for name, v in zip(CLASS_NAMES[task], scores.per_class):
        if not np.isnan(v):
            print(f"  {name:<12} {v:.3f}")
    save_color_mask(out / f"04_{task.value}_pred.png", pred)
