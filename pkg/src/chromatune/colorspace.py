"""Color space conversions shared by the whole pipeline.

Implements exact, invertible conversions between 8-bit RGB, normalized RGB,
grayscale and CIE L*a*b* (D65 white point, sRGB companding). All functions
take and return torch tensors with channels on the last axis, preserve the
input dtype, and are differentiable almost everywhere, so they can sit inside
a training loss. Internally everything is computed in float64: the neutral
axis (R=G=B gives a=b=0) and round-trip guarantees would not survive float32
cancellation.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import InvalidInputError, ShapeError

# Scaling used to put L and (a, b) on comparable footing in the losses.
L_SCALE = 100.0
AB_SCALE = 128.0

# Rec. 601 luma weights, the default grayscale reduction.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# sRGB -> XYZ (linear light), IEC 61966-2-1 primaries.
_SRGB_TO_XYZ = torch.tensor(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=torch.float64,
)
_XYZ_TO_SRGB = torch.linalg.inv(_SRGB_TO_XYZ)

# White point defined as the exact row sums of the matrix so that a gray
# input maps to X/Xn == Y/Yn == Z/Zn and the neutral axis stays neutral.
_D65_WHITE = _SRGB_TO_XYZ.sum(dim=1)

_DELTA = 6.0 / 29.0
_GRAY_W64 = torch.tensor(GRAY_WEIGHTS, dtype=torch.float64)


def _require_channels(img: torch.Tensor, channels: int, name: str) -> torch.Tensor:
    if not isinstance(img, torch.Tensor):
        raise ShapeError(f"{name} must be a torch.Tensor, got {type(img).__name__}")
    if img.ndim < 1 or img.shape[-1] != channels:
        raise ShapeError(
            f"{name} must have {channels} channels on the last axis, got shape {tuple(img.shape)}"
        )
    if not torch.isfinite(img.detach()).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    return img


def _srgb_to_linear(c: torch.Tensor) -> torch.Tensor:
    # clamp inside the pow branch so torch.where never sees NaN gradients
    gamma = ((c.clamp(min=0.04045) + 0.055) / 1.055) ** 2.4
    return torch.where(c <= 0.04045, c / 12.92, gamma)


def _linear_to_srgb(c: torch.Tensor) -> torch.Tensor:
    gamma = 1.055 * c.clamp(min=0.0031308) ** (1.0 / 2.4) - 0.055
    return torch.where(c <= 0.0031308, 12.92 * c, gamma)


def _lab_f(t: torch.Tensor) -> torch.Tensor:
    cube_root = t.clamp(min=_DELTA**3) ** (1.0 / 3.0)
    return torch.where(t > _DELTA**3, cube_root, t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(u: torch.Tensor) -> torch.Tensor:
    return torch.where(u > _DELTA, u**3, 3.0 * _DELTA**2 * (u - 4.0 / 29.0))


def rgb_to_lab(img: torch.Tensor) -> torch.Tensor:
    """Convert normalized sRGB (..., 3) in [0, 1] to CIE L*a*b* (..., 3).

    L is in [0, 100]; a and b land in [-128, 127] for in-gamut input.
    """
    img = _require_channels(img, 3, "rgb image")
    x = img.to(torch.float64)
    lin = _srgb_to_linear(x)
    xyz = lin @ _SRGB_TO_XYZ.T
    f = _lab_f(xyz / _D65_WHITE)
    lum = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return torch.stack((lum, a, b), dim=-1).to(img.dtype)


def lab_to_rgb(img: torch.Tensor) -> torch.Tensor:
    """Convert CIE L*a*b* (..., 3) back to normalized sRGB in [0, 1].

    Inverse of :func:`rgb_to_lab`; out-of-gamut colors are clamped after
    conversion.
    """
    img = _require_channels(img, 3, "lab image")
    x = img.to(torch.float64)
    fy = (x[..., 0] + 16.0) / 116.0
    fx = fy + x[..., 1] / 500.0
    fz = fy - x[..., 2] / 200.0
    xyz = _lab_f_inv(torch.stack((fx, fy, fz), dim=-1)) * _D65_WHITE
    lin = xyz @ _XYZ_TO_SRGB.T
    rgb = _linear_to_srgb(lin).clamp(0.0, 1.0)
    return rgb.to(img.dtype)


def split_lab(img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a LAB image into its (..., 1) luminance and (..., 2) chroma planes.

    The planes are views over disjoint channel ranges, so recombining them
    with :func:`merge_lab` reproduces the input bitwise.
    """
    img = _require_channels(img, 3, "lab image")
    return img[..., :1], img[..., 1:]


def merge_lab(lum: torch.Tensor, ab: torch.Tensor) -> torch.Tensor:
    """Recombine the planes produced by :func:`split_lab`."""
    _require_channels(lum, 1, "luminance plane")
    _require_channels(ab, 2, "chroma planes")
    return torch.cat((lum, ab), dim=-1)


def normalize_lab(lab: torch.Tensor) -> torch.Tensor:
    """Scale LAB to comparable ranges: L/100 in [0,1], (a,b)/128 in [-1,1]."""
    scale = torch.tensor([L_SCALE, AB_SCALE, AB_SCALE], dtype=lab.dtype)
    return lab / scale


def denormalize_lab(lab_norm: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`normalize_lab`."""
    scale = torch.tensor([L_SCALE, AB_SCALE, AB_SCALE], dtype=lab_norm.dtype)
    return lab_norm * scale


def rgb_to_gray(img: torch.Tensor, mode: str = "rec601") -> torch.Tensor:
    """Reduce an RGB image (..., 3) to a single-channel (..., 1) gray image.

    mode "rec601" (default) uses 0.299 R + 0.587 G + 0.114 B; mode
    "luminance" uses the L* channel rescaled to [0, 1].
    """
    img = _require_channels(img, 3, "rgb image")
    if mode == "rec601":
        gray = img.to(torch.float64) @ _GRAY_W64
    elif mode == "luminance":
        gray = rgb_to_lab(img)[..., 0].to(torch.float64) / L_SCALE
    else:
        raise ValueError(f"unknown grayscale mode {mode!r}")
    return gray.unsqueeze(-1).to(img.dtype)


def from_uint8(arr, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Decode 8-bit channel values to normalized floats (divide by 255)."""
    t = torch.from_numpy(np.array(arr, copy=True))
    return t.to(dtype) / 255.0


def to_uint8(img: torch.Tensor) -> torch.Tensor:
    """Re-quantize normalized values to 8 bits: round(v*255) clamped to [0, 255]."""
    return (img.detach().to(torch.float64) * 255.0).round().clamp(0, 255).to(torch.uint8)
