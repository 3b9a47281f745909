"""
Metrics and fold reports
========================

Small worked values for PSNR, SSIM, IoU and Dice, then a ten-fold bicubic
report written as JSON and CSV.
"""
from pathlib import Path

import numpy as np

from segsr.data import make_synthetic_dataset, split_folds
from segsr.metrics import aggregate_folds, dice, iou, psnr, ssim
from segsr.training import bicubic_predictor, evaluate_sr, save_report
from segsr.viz import fold_bar_plot

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
rng = np.random.default_rng(0)

a = rng.random((3, 32, 32)) * 0.9
print("PSNR at one grey level off:", round(psnr(a, a + 1 / 255), 4), "dB")
print("SSIM of an image with itself:", ssim(a, a))
print("SSIM under mild noise:", round(ssim(a, np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)), 4))

# two masks of 2n pixels overlapping in n: IoU 1/3, Dice 1/2
pred = np.array([1, 1, 1, 1, 0, 0, 0, 0])
gt = np.array([0, 0, 1, 1, 1, 1, 0, 0])
print("IoU:", iou(pred, gt, 2).per_class[1], "Dice:", dice(pred, gt, 2).per_class[1])
print("aggregate [1, 2, 3]:", aggregate_folds([1, 2, 3]))

data = make_synthetic_dataset(20, 32, 48, seed=1, scale=2)
folds = split_folds([s.sample_id for s in data], 10, seed=0)
report = evaluate_sr(data, folds, bicubic_predictor(2), 2, method="bicubic")
save_report(report, out, "05_bicubic")
fold_bar_plot(report, out / "05_bicubic_folds.png")
print(report.to_csv())
