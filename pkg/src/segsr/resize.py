"""Separable bicubic resampling (a = -0.5 cubic convolution).

Downscaling is anti-aliased: the kernel support is stretched by the
reduction factor, the same convention Pillow uses. Edge taps that fall
outside the image are dropped and the remaining weights renormalised.
"""
from functools import lru_cache

import numpy as np
import torch

CUBIC_A = -0.5


def cubic_kernel(x, a=CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x < 1.0
    far = (x >= 1.0) & (x < 2.0)
    xn = x[near]
    xf = x[far]
    out[near] = ((a + 2.0) * xn - (a + 3.0)) * xn * xn + 1.0
    out[far] = (((xf - 5.0) * xf + 8.0) * xf - 4.0) * a
    return out


@lru_cache(maxsize=64)
def _resize_matrix(n_in, n_out, a):
    scale = n_in / n_out
    filterscale = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale
    taps = np.arange(n_in) + 0.5
    w = cubic_kernel((taps[None, :] - centers[:, None]) / filterscale, a)
    w /= w.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    return w


def resize_matrix(n_in: int, n_out: int, a: float = CUBIC_A) -> np.ndarray:
    """Dense (n_out, n_in) matrix mapping a 1-D signal to its resampled version."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    return _resize_matrix(int(n_in), int(n_out), float(a))


def resize(img, out_hw):
    """Bicubic resize of the last two axes of a numpy array or torch tensor.

    Torch inputs stay on the autograd graph, so this can sit inside a model.
    """
    h, w = img.shape[-2:]
    oh, ow = out_hw
    rh = resize_matrix(h, oh)
    rw = resize_matrix(w, ow)
    if isinstance(img, torch.Tensor):
        rh_t = torch.tensor(rh, dtype=img.dtype, device=img.device)
        rw_t = torch.tensor(rw, dtype=img.dtype, device=img.device)
        return rh_t @ img @ rw_t.T
    img = np.asarray(img)
    dtype = img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64
    out = rh @ img.astype(np.float64) @ rw.T
    return out.astype(dtype, copy=False)


def upscale(img, scale: int):
    h, w = img.shape[-2:]
    return resize(img, (h * scale, w * scale))
