"""Deterministic training loops, weight init, gradient checking and evaluation."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import metrics
from .attention import PamConfig
from .checkpoint import Checkpoint
from .config import TrainConfig, from_dict, to_dict
from .data import FoldSplit, StereoSample, TaskKind
from .features import ExtractorConfig
from .reconstruction import BicubicBaseline, ReconstructionConfig, SEGSRNet, super_resolve
from .segmentation import SegConfig, SPPLinkNet, segment

_WEIGHTED = (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)


def init_weights(model: nn.Module, seed: int, gain: float = 1.0) -> nn.Module:
    """Xavier-uniform weights from a seeded generator; zero biases; unit BN scale."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, _WEIGHTED):
                nn.init.xavier_uniform_(m.weight, gain=gain, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.reset_running_stats()
    return model


# -- model construction from serialised configs ------------------------------

def sr_model_config(model: SEGSRNet) -> dict:
    return {
        "extractor": to_dict(model.extractor_cfg),
        "pam": to_dict(model.pam_cfg),
        "reconstruction": to_dict(model.recon_cfg),
    }


def seg_model_config(model: SPPLinkNet) -> dict:
    return {"seg": to_dict(model.cfg)}


def build_model(kind: str, model_config: dict) -> nn.Module:
    if kind == "sr":
        return SEGSRNet(
            from_dict(ExtractorConfig, model_config["extractor"], "extractor"),
            from_dict(PamConfig, model_config["pam"], "pam"),
            from_dict(ReconstructionConfig, model_config["reconstruction"], "reconstruction"),
        )
    if kind == "seg":
        return SPPLinkNet(from_dict(SegConfig, model_config["seg"], "seg"))
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def model_from_checkpoint(ckpt: Checkpoint) -> nn.Module:
    model = build_model(ckpt.kind, ckpt.model_config)
    model.load_state_dict(ckpt.params)
    return model.eval()


# -- losses -----------------------------------------------------------------

def _gaussian_kernel(window, sigma, channels, dtype):
    g = torch.as_tensor(metrics.gaussian_window(window, sigma), dtype=dtype)
    k = torch.outer(g, g)
    return k.expand(channels, 1, window, window).contiguous()


def ssim_torch(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Differentiable mean SSIM over valid windows; matches :func:`metrics.ssim`."""
    c = a.shape[1]
    k = _gaussian_kernel(window, sigma, c, a.dtype)

    def mean(x):
        return F.conv2d(x, k, groups=c)

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a * mu_a
    var_b = mean(b * b) - mu_b * mu_b
    cov = mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def sr_loss(kind, sr_l, sr_r, hr_l, hr_r):
    loss = 0.5 * (F.l1_loss(sr_l, hr_l) + F.l1_loss(sr_r, hr_r))
    if kind == "sr_l1_ssim":
        s = 0.5 * (ssim_torch(sr_l, hr_l) + ssim_torch(sr_r, hr_r))
        loss = loss + 0.1 * (1.0 - s)
    return loss


def soft_jaccard(logits, target, n_classes, eps=1e-6):
    probs = torch.softmax(logits, dim=1)
    onehot = F.one_hot(target, n_classes).permute(0, 3, 1, 2).to(probs.dtype)
    inter = (probs * onehot).sum(dim=(0, 2, 3))
    union = probs.sum(dim=(0, 2, 3)) + onehot.sum(dim=(0, 2, 3)) - inter
    return ((inter + eps) / (union + eps)).mean()


def seg_loss(logits, target, n_classes):
    return F.cross_entropy(logits, target) + (1.0 - soft_jaccard(logits, target, n_classes))


# -- training loop -----------------------------------------------------------

@dataclass
class LogEntry:
    step: int
    epoch: int
    loss: float
    wall_time: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[LogEntry]
    model: nn.Module

    def epoch_means(self):
        out = {}
        for e in self.log:
            out.setdefault(e.epoch, []).append(e.loss)
        return {k: float(np.mean(v)) for k, v in out.items()}


def write_loss_csv(log, path) -> None:
    """Per-step loss log (step, epoch, loss); deterministic under a fixed seed."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "loss"])
        for e in log:
            w.writerow([e.step, e.epoch, repr(e.loss)])


def write_timing_csv(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "wall_time"])
        for e in log:
            w.writerow([e.step, f"{e.wall_time:.6f}"])


def _epoch_order(seed, epoch, n):
    g = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    return torch.randperm(n, generator=g).tolist()


def _crop_origin(gen, full, patch):
    if patch is None or patch >= full:
        return 0, full
    return int(torch.randint(0, full - patch + 1, (1,), generator=gen)), patch


def _run(model, cfg: TrainConfig, n_samples, batch_size, make_batch, compute_loss, kind,
         model_config, resume=None, on_checkpoint=None) -> TrainResult:
    if n_samples == 0:
        raise ValueError("training dataset is empty")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    optim = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    steps_per_epoch = math.ceil(n_samples / batch_size)
    total = cfg.steps if cfg.steps is not None else cfg.epochs * steps_per_epoch
    step = 0
    if resume is not None:
        model.load_state_dict(resume.params)
        if resume.optimizer is not None:
            optim.load_state_dict(resume.optimizer)
        if resume.rng_state is not None:
            gen.set_state(resume.rng_state)
        step = resume.step

    def snapshot(epoch):
        return Checkpoint(
            kind=kind,
            model_config=model_config,
            params={k: v.detach().clone() for k, v in model.state_dict().items()},
            optimizer=optim.state_dict(),
            epoch=epoch,
            step=step,
            train_config=to_dict(cfg),
            rng_state=gen.get_state(),
        )

    log = []
    model.train()
    t0 = time.perf_counter()
    order, order_epoch = None, None
    while step < total:
        epoch, pos = divmod(step, steps_per_epoch)
        if order_epoch != epoch:
            order, order_epoch = _epoch_order(cfg.seed, epoch, n_samples), epoch
        if cfg.lr_schedule == "cosine":
            for group in optim.param_groups:
                group["lr"] = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))
        idx = order[pos * batch_size : (pos + 1) * batch_size]
        batch = make_batch(idx, gen)
        optim.zero_grad(set_to_none=True)
        loss = compute_loss(batch)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value} at step {step} (epoch {epoch}); aborting")
        loss.backward()
        optim.step()
        step += 1
        log.append(LogEntry(step, epoch, value, time.perf_counter() - t0))
        if on_checkpoint and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < total:
            on_checkpoint(snapshot(epoch))
    final_epoch = (step - 1) // steps_per_epoch + 1 if step else 0
    return TrainResult(snapshot(final_epoch), log, model)


def _stack(arrays, dtype):
    return torch.stack([torch.as_tensor(np.asarray(a)) for a in arrays]).to(dtype)


def train_sr(cfg: TrainConfig, dataset: list[StereoSample], model: SEGSRNet, resume=None,
             on_checkpoint=None) -> TrainResult:
    """Fit the SR model with L1 (optionally + 0.1 * (1 - SSIM)) and Adam."""
    if cfg.loss not in ("sr_l1", "sr_l1_ssim"):
        raise ValueError(f"train_sr needs an SR loss, got {cfg.loss!r}")
    scale = model.scale
    for s in dataset:
        if s.left_lr is None or s.scale != scale:
            raise ValueError(f"sample {s.sample_id} has no LR views at scale x{scale}")
    dtype = next(model.parameters()).dtype

    def make_batch(idx, gen):
        views = {"ll": [], "rl": [], "lh": [], "rh": []}
        for i in idx:
            s = dataset[i]
            h, w = s.left_lr.shape[-2:]
            top, ph = _crop_origin(gen, h, cfg.patch_size)
            left, pw = _crop_origin(gen, w, cfg.patch_size)
            lr_sl = np.s_[:, top : top + ph, left : left + pw]
            hr_sl = np.s_[:, top * scale : (top + ph) * scale, left * scale : (left + pw) * scale]
            views["ll"].append(s.left_lr[lr_sl])
            views["rl"].append(s.right_lr[lr_sl])
            views["lh"].append(s.left_hr[hr_sl])
            views["rh"].append(s.right_hr[hr_sl])
        return {k: _stack(v, dtype) for k, v in views.items()}

    def compute_loss(b):
        sr_l, sr_r = model(b["ll"], b["rl"])
        return sr_loss(cfg.loss, sr_l, sr_r, b["lh"], b["rh"])

    return _run(model, cfg, len(dataset), cfg.resolved_batch_size(scale), make_batch, compute_loss,
                "sr", sr_model_config(model), resume, on_checkpoint)


def seg_inputs(dataset, sr_model=None):
    """Images fed to segmentation: SR reconstructions of the left view, or HR frames."""
    if sr_model is None:
        return [s.left_hr for s in dataset]
    return [super_resolve(s.left_lr, s.right_lr, sr_model)[0].numpy() for s in dataset]


def train_seg(cfg: TrainConfig, dataset: list[StereoSample], model: SPPLinkNet, task=None,
              images=None, resume=None, on_checkpoint=None) -> TrainResult:
    """Fit the segmentation model with cross-entropy + (1 - soft Jaccard) and Adam.

    ``images`` overrides the input frames (e.g. SR outputs); defaults to left HR.
    """
    if cfg.loss != "seg_ce_jaccard":
        raise ValueError(f"train_seg needs loss 'seg_ce_jaccard', got {cfg.loss!r}")
    task = TaskKind(task or model.cfg.task)
    if task != model.cfg.task:
        raise ValueError(f"model head is for {model.cfg.task.value}, not {task.value}")
    images = images if images is not None else [s.left_hr for s in dataset]
    for s in dataset:
        if task not in s.masks:
            raise ValueError(f"sample {s.sample_id} has no {task.value} mask")
    if cfg.patch_size is not None and cfg.patch_size % 32:
        raise ValueError("segmentation patch_size must be a multiple of 32")
    dtype = next(model.parameters()).dtype
    k = task.class_count

    def make_batch(idx, gen):
        xs, ys = [], []
        for i in idx:
            img, mask = images[i], dataset[i].masks[task]
            h, w = mask.shape
            top, ph = _crop_origin(gen, h, cfg.patch_size)
            left, pw = _crop_origin(gen, w, cfg.patch_size)
            xs.append(np.asarray(img)[:, top : top + ph, left : left + pw])
            ys.append(mask[top : top + ph, left : left + pw])
        return _stack(xs, dtype), torch.as_tensor(np.stack(ys), dtype=torch.long)

    def compute_loss(b):
        x, y = b
        return seg_loss(model(x), y, k)

    return _run(model, cfg, len(dataset), cfg.resolved_batch_size(), make_batch, compute_loss,
                "seg", seg_model_config(model), resume, on_checkpoint)


# -- gradient verification ----------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    passed: bool
    n_coords: int
    n_kinks: int = 0
    errors: np.ndarray = field(repr=False, default=None)


def gradient_check(fn: Callable, x, step: float = 1e-3, tol: float = 1e-3, n_coords: int = 24,
                   seed: int = 0, analytic: Callable | None = None, rel_floor: float = 1e-2,
                   kink_fallback: bool = True, max_halvings: int = 8) -> GradCheckResult:
    """Compare autograd against central differences for ``sum(r * fn(x))``.

    ``x`` is a tensor (or a shape, filled with seeded normals); work happens in
    float64. ``r`` is a seeded random projection of the output. The relative
    error at coordinate i is |a_i - n_i| / max(|n_i|, rel_floor * max_j |n_j|),
    so coordinates with negligible gradient do not dominate.

    ReLU and max-pool make networks piecewise smooth, so a +-step probe can
    straddle a kink. A coordinate whose forward and backward differences
    disagree by more than ``tol / 10`` (relative) is counted as a kink; its
    probe is halved (up to ``max_halvings`` times) until the one-sided
    differences agree to that level, and the central difference at that step
    is used. A wrong gradient still fails once the interval is
    smooth.

    ``analytic`` replaces autograd: it receives (scalar_fn, x) and returns the
    gradient.
    """
    gen = torch.Generator().manual_seed(seed)
    if not isinstance(x, torch.Tensor):
        x = torch.randn(tuple(x), generator=gen, dtype=torch.float64)
    x = x.detach().to(torch.float64)
    with torch.no_grad():
        r = torch.randn(fn(x).shape, generator=gen, dtype=torch.float64)

    def scalar(v):
        return (fn(v) * r).sum()

    if analytic is None:
        xg = x.clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(scalar(xg), xg)
    else:
        grad = analytic(scalar, x)
    grad = grad.detach().reshape(-1)

    n = x.numel()
    coords = torch.randperm(n, generator=gen)[: min(n_coords, n)].tolist()
    flat = x.reshape(-1)
    with torch.no_grad():
        f0 = float(scalar(x))

        def one_sided(i, h):
            xp, xm = flat.clone(), flat.clone()
            xp[i] += h
            xm[i] -= h
            return (float(scalar(xp.reshape(x.shape))) - f0) / h, (f0 - float(scalar(xm.reshape(x.shape)))) / h

        fwd, bwd = np.array([one_sided(i, step) for i in coords]).T.reshape(2, -1)
    central = 0.5 * (fwd + bwd)
    a = grad[coords].numpy()
    floor = max(rel_floor * np.abs(central).max(), 1e-12)

    def rel(ai, ref):
        return np.abs(ai - ref) / np.maximum(np.abs(ref), floor)

    errors = rel(a, central)
    n_kinks = 0
    if kink_fallback:
        gap = np.abs(fwd - bwd) / np.maximum(np.abs(central), floor)
        agree = 0.1 * tol
        for k in np.flatnonzero(gap > agree):
            n_kinks += 1
            h = step
            with torch.no_grad():
                for _ in range(max_halvings):
                    h /= 2
                    f, b = one_sided(coords[k], h)
                    if abs(f - b) / max(abs(0.5 * (f + b)), floor) <= agree:
                        break
            errors[k] = rel(a[k], 0.5 * (f + b))
    worst = float(errors.max())
    return GradCheckResult(worst, worst <= tol, len(coords), n_kinks, errors)


# -- evaluation -----------------------------------------------------------------

def sr_predictor(model):
    def predict(sample):
        sr_l, sr_r = super_resolve(sample.left_lr, sample.right_lr, model)
        return sr_l.numpy(), sr_r.numpy()
    return predict


def bicubic_predictor(scale):
    model = BicubicBaseline(scale)

    def predict(sample):
        lr_l, lr_r = (np.asarray(v, dtype=np.float64) for v in (sample.left_lr, sample.right_lr))
        sr_l, sr_r = super_resolve(lr_l, lr_r, model)
        return sr_l.numpy(), sr_r.numpy()
    return predict


def seg_predictor(model, sr_model=None):
    def predict(sample):
        if sr_model is None:
            image = sample.left_hr
        else:
            image = super_resolve(sample.left_lr, sample.right_lr, sr_model)[0]
        return segment(image, model).numpy()
    return predict


def _fold_map(dataset, folds):
    if folds is None:
        return {s.sample_id: 0 for s in dataset}
    return dict(folds.assignments)


def evaluate_sr(dataset, folds: FoldSplit | None, predict, scale, method="SEGSRNet") -> metrics.MetricReport:
    """PSNR/SSIM per sample (each the mean of the left and right view scores)."""
    report = metrics.MetricReport(
        "sr", f"x{scale}", method, fold_of=_fold_map(dataset, folds),
        meta={"views": "per-view then averaged", "data_range": 1.0, "k": folds.k if folds else 1},
    )
    for fold in sorted(set(report.fold_of.values())):
        for s in dataset:
            if report.fold_of[s.sample_id] != fold:
                continue
            sr_l, sr_r = predict(s)
            p = 0.5 * (metrics.psnr(sr_l, s.left_hr) + metrics.psnr(sr_r, s.right_hr))
            q = 0.5 * (metrics.ssim(sr_l, s.left_hr) + metrics.ssim(sr_r, s.right_hr))
            report.per_sample += [(s.sample_id, "psnr", p), (s.sample_id, "ssim", q)]
    return report


def evaluate_seg(dataset, folds: FoldSplit | None, predict, task, method="SPP-LinkNet34") -> metrics.MetricReport:
    """IoU/Dice per sample (mean over classes present in prediction or ground truth)."""
    task = TaskKind(task)
    report = metrics.MetricReport(
        "seg", task.value, method, fold_of=_fold_map(dataset, folds),
        meta={"class_absence": "excluded when absent from both masks", "k": folds.k if folds else 1},
    )
    for fold in sorted(set(report.fold_of.values())):
        for s in dataset:
            if report.fold_of[s.sample_id] != fold:
                continue
            pred, gt = predict(s), s.masks[task]
            report.per_sample += [
                (s.sample_id, "iou", metrics.iou(pred, gt, task.class_count).mean),
                (s.sample_id, "dice", metrics.dice(pred, gt, task.class_count).mean),
            ]
    return report


def evaluate(checkpoint: Checkpoint, dataset, folds=None, task_or_scale=None, sr_model=None):
    """Score a checkpoint on ``dataset``, grouping per-sample metrics by fold."""
    model = model_from_checkpoint(checkpoint)
    if checkpoint.kind == "sr":
        return evaluate_sr(dataset, folds, sr_predictor(model), model.scale)
    task = TaskKind(task_or_scale or model.cfg.task)
    return evaluate_seg(dataset, folds, seg_predictor(model, sr_model), task)


def save_report(report: metrics.MetricReport, out_dir, stem="report") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}.csv"]
    paths[0].write_text(report.to_json() + "\n")
    paths[1].write_text(report.to_csv())
    return paths
