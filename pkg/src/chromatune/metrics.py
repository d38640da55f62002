"""Reference-quality PSNR and SSIM used for all quantitative reporting.

Conventions (disclosed in every report header): PSNR is computed over all
pixels and channels jointly with MAX = 1.0; SSIM uses an 11x11 Gaussian
window (sigma 1.5, K1 = 0.01, K2 = 0.03), is computed per RGB channel with
windows fully inside the image, and channel scores are averaged. Both
metrics accumulate in float64 regardless of the input dtype.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(pred: torch.Tensor, truth: torch.Tensor) -> None:
    if pred.shape != truth.shape:
        raise ShapeError(
            f"image shapes differ: {tuple(pred.shape)} vs {tuple(truth.shape)}"
        )


def psnr(pred: torch.Tensor, truth: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Returns +inf when the images are identical.
    """
    _check_pair(pred, truth)
    diff = pred.detach().to(torch.float64) - truth.detach().to(torch.float64)
    mse = diff.pow(2).mean().item()
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_window() -> torch.Tensor:
    half = (SSIM_WINDOW - 1) // 2
    x = torch.arange(-half, half + 1, dtype=torch.float64)
    g = torch.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    g = g / g.sum()
    k = torch.outer(g, g)
    return (k / k.sum()).reshape(1, 1, SSIM_WINDOW, SSIM_WINDOW)


_WINDOW = _gaussian_window()


def ssim(pred: torch.Tensor, truth: torch.Tensor) -> float:
    """Mean structural similarity for (H, W, C) images in [0, 1]."""
    _check_pair(pred, truth)
    if pred.ndim == 2:
        pred = pred.unsqueeze(-1)
        truth = truth.unsqueeze(-1)
    if pred.ndim != 3:
        raise ShapeError(f"expected (H, W, C) images, got shape {tuple(pred.shape)}")
    h, w = pred.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(
            f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )

    # channels become the batch axis; valid-mode filtering keeps windows inside
    x = pred.detach().to(torch.float64).permute(2, 0, 1).unsqueeze(1)
    y = truth.detach().to(torch.float64).permute(2, 0, 1).unsqueeze(1)

    mu_x = F.conv2d(x, _WINDOW)
    mu_y = F.conv2d(y, _WINDOW)
    var_x = F.conv2d(x * x, _WINDOW) - mu_x * mu_x
    var_y = F.conv2d(y * y, _WINDOW) - mu_y * mu_y
    cov = F.conv2d(x * y, _WINDOW) - mu_x * mu_y

    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return s.mean().item()
