"""Dataset ingestion and synthetic toy clips.

A sequence on disk is a directory of 8-bit PNG frames with uniform
dimensions, ordered by filename (explicit lexicographic sort, never
directory order). Loading produces the evaluation triple: ground-truth
color frames, their Rec. 601 monochrome counterparts, and the first frame
as the colorized reference.

`make_toy_clip` builds small procedural clips (colored shapes translating
over a textured background) so the full pipeline can be trained and
evaluated at desk scale without any external dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from . import colorspace
from .errors import DecodeError, NoFramesError, ParameterError, ShapeError


@dataclass
class SequenceRecord:
    """One evaluation sequence: ground truth, derived mono input, reference."""

    name: str
    truth: torch.Tensor      # (T, H, W, 3) in [0, 1]
    mono: torch.Tensor       # (T, H, W, 1) in [0, 1]
    reference: torch.Tensor  # (H, W, 3), frame 1 of truth
    source_path: Path | None = None


def record_from_truth(name: str, truth: torch.Tensor,
                      source_path: Path | None = None) -> SequenceRecord:
    """Derive the mono sequence and reference from ground-truth color frames."""
    if truth.ndim != 4 or truth.shape[-1] != 3:
        raise ShapeError(f"truth must have shape (T, H, W, 3), got {tuple(truth.shape)}")
    return SequenceRecord(
        name=name,
        truth=truth,
        mono=colorspace.rgb_to_gray(truth),
        reference=truth[0].clone(),
        source_path=source_path,
    )


def _decode_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError("cannot decode frame", path) from exc


def _frame_files(directory: Path) -> list[Path]:
    try:
        entries = list(directory.iterdir())
    except (FileNotFoundError, NotADirectoryError) as exc:
        raise NoFramesError(f"no such sequence directory: {directory}") from exc
    return sorted(
        (p for p in entries if p.is_file() and p.suffix.lower() == ".png"),
        key=lambda p: p.name,
    )


def load_sequence(directory) -> SequenceRecord:
    """Load a ground-truth color sequence from a directory of PNG frames."""
    directory = Path(directory)
    files = _frame_files(directory)
    if not files:
        raise NoFramesError(f"no PNG frames in {directory}")
    frames = []
    for path in files:
        arr = _decode_frame(path)
        if frames and arr.shape != frames[0].shape:
            raise ShapeError(
                f"frame {path.name} has size {arr.shape[:2]}, "
                f"expected {frames[0].shape[:2]}"
            )
        frames.append(arr)
    truth = colorspace.from_uint8(np.stack(frames, axis=0))
    return record_from_truth(directory.name, truth, source_path=directory)


def load_mono_sequence(directory) -> torch.Tensor:
    """Load a monochrome input sequence as (T, H, W, 1) in [0, 1].

    Grayscale PNGs are decoded directly; color-encoded frames are reduced
    with the package's Rec. 601 convention.
    """
    directory = Path(directory)
    files = _frame_files(directory)
    if not files:
        raise NoFramesError(f"no PNG frames in {directory}")
    frames = []
    for path in files:
        try:
            with Image.open(path) as img:
                if img.mode == "L":
                    gray = colorspace.from_uint8(np.asarray(img, dtype=np.uint8))
                    gray = gray.unsqueeze(-1)
                else:
                    rgb = colorspace.from_uint8(
                        np.asarray(img.convert("RGB"), dtype=np.uint8)
                    )
                    gray = colorspace.rgb_to_gray(rgb)
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise DecodeError("cannot decode frame", path) from exc
        if frames and gray.shape != frames[0].shape:
            raise ShapeError(
                f"frame {path.name} has size {tuple(gray.shape[:2])}, "
                f"expected {tuple(frames[0].shape[:2])}"
            )
        frames.append(gray)
    return torch.stack(frames, dim=0)


def load_image(path) -> torch.Tensor:
    """Load one image as (H, W, 3) in [0, 1]."""
    arr = _decode_frame(Path(path))
    return colorspace.from_uint8(arr)


def write_image(path, img: torch.Tensor) -> Path:
    """Write an (H, W, 3) or (H, W, 1) image as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = colorspace.to_uint8(img).numpy()
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)
    return path


def write_frames(directory, frames: torch.Tensor, prefix: str = "") -> list[Path]:
    """Write a (T, H, W, C) tensor as zero-padded numbered PNG frames."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(frames.shape[0]):
        paths.append(write_image(directory / f"{prefix}{i:05d}.png", frames[i]))
    return paths


@dataclass(frozen=True)
class ToyClipSpec:
    """Parameters of one procedural clip; same seed means bitwise-same clip."""

    height: int = 48
    width: int = 48
    frames: int = 8
    palette: tuple[tuple[float, float, float], ...] | None = None
    palette_size: int = 3
    motion: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ParameterError(
                f"clip must be at least 16x16, got {self.height}x{self.width}"
            )
        if self.frames < 2:
            raise ParameterError(f"clip needs at least 2 frames, got {self.frames}")
        if self.palette is None and self.palette_size < 1:
            raise ParameterError("palette_size must be >= 1")
        if self.motion < 0:
            raise ParameterError("motion must be >= 0")


def _toy_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    # low-frequency gray texture with a mild color cast, upsampled bilinearly
    grid = rng.uniform(0.3, 0.7, size=(4, 4, 1))
    tint = rng.uniform(-0.08, 0.08, size=(1, 1, 3))
    low = np.clip(grid + tint, 0.0, 1.0)
    t = torch.from_numpy(low).permute(2, 0, 1).unsqueeze(0)
    up = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=True)
    return up.squeeze(0).permute(1, 2, 0).numpy()


def make_toy_clip(spec: ToyClipSpec) -> SequenceRecord:
    """Generate a clip of solid-colored rectangles drifting over a textured background."""
    rng = np.random.default_rng(spec.seed)
    h, w, t_total = spec.height, spec.width, spec.frames
    background = _toy_background(rng, h, w)

    if spec.palette is not None:
        palette = np.asarray(spec.palette, dtype=np.float64)
    else:
        palette = 0.15 + 0.7 * rng.uniform(size=(spec.palette_size, 3))

    n_shapes = palette.shape[0]
    sizes = np.stack(
        [
            rng.integers(h // 6, max(h // 3, h // 6 + 1), size=n_shapes),
            rng.integers(w // 6, max(w // 3, w // 6 + 1), size=n_shapes),
        ],
        axis=1,
    )
    starts = rng.uniform(0, [h, w], size=(n_shapes, 2))
    angles = rng.uniform(0, 2 * np.pi, size=n_shapes)
    velocity = spec.motion * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    clip = np.repeat(background[None], t_total, axis=0)
    for t in range(t_total):
        for s in range(n_shapes):
            top = int(round(starts[s, 0] + velocity[s, 0] * t))
            left = int(round(starts[s, 1] + velocity[s, 1] * t))
            rows = (top + np.arange(sizes[s, 0])) % h
            cols = (left + np.arange(sizes[s, 1])) % w
            clip[t][np.ix_(rows, cols)] = palette[s]

    clip = np.round(clip * 255.0) / 255.0  # snap to the 8-bit grid, PNG-exact
    truth = torch.from_numpy(clip.astype(np.float32))
    return record_from_truth(f"toy{spec.seed:04d}", truth)
