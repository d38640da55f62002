"""The reference-based colorization network and its parameter-state plumbing.

The network maps a monochrome frame sequence plus one colorized reference
frame to a colorized sequence. Grayscale frames are encoded in sliding
temporal windows, a correspondence block matches target features against
reference features and transports the reference chroma, and a decoder emits
per-frame LAB which is converted back to RGB.

Parameters live outside the module as a flat vector (`ModelState`), so a
tuning run can own a private copy while the pretrained baseline stays
untouched. Checkpoints are a small self-describing binary container (see
README for the byte layout). Alternative architectures (e.g. an externally
converted pretrained colorizer) can be plugged in through `register_arch`.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import colorspace
from .errors import (
    CheckpointParseError,
    IncompatibleCheckpointError,
    InvalidStateError,
    ParameterError,
    ShapeError,
)

CHECKPOINT_VERSION = 1
_CHECKPOINT_MAGIC = b"CTCHKPT\x00"
_DTYPE_TAGS = {torch.float32: "<f4", torch.float64: "<f8"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; fully determines the network shape and init."""

    kind: str = "compact"
    window: int = 5
    base_channels: int = 16
    feat_channels: int = 32
    levels: int = 2
    init_seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ParameterError(f"window must be odd and >= 1, got {self.window}")
        if self.base_channels < 1 or self.feat_channels < 1:
            raise ParameterError("channel counts must be >= 1")
        if self.levels < 0:
            raise ParameterError(f"levels must be >= 0, got {self.levels}")


@dataclass
class ModelState:
    """Flat parameter vector plus the architecture it belongs to."""

    theta: torch.Tensor
    arch: ArchSpec
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        if not isinstance(self.theta, torch.Tensor) or self.theta.ndim != 1:
            raise InvalidStateError("theta must be a 1-D torch.Tensor")
        expected = param_count(self.arch)
        if self.theta.numel() != expected:
            raise InvalidStateError(
                f"theta has {self.theta.numel()} parameters, arch expects {expected}"
            )


class _DownBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.down = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.conv = nn.Conv2d(c_out, c_out, 3, padding=1)

    def forward(self, x):
        x = F.relu(self.down(x))
        return F.relu(self.conv(x))


def _pyramid_sizes(h: int, w: int, levels: int) -> list[tuple[int, int]]:
    sizes = [(h, w)]
    for _ in range(levels):
        h, w = (h + 1) // 2, (w + 1) // 2
        sizes.append((h, w))
    return sizes


def _attend(queries: torch.Tensor, keys: torch.Tensor, values: torch.Tensor,
            chunk: int = 8192) -> torch.Tensor:
    """Softmax attention transport, row-chunked to bound memory at large sizes."""
    scale = 1.0 / math.sqrt(queries.shape[-1])
    out = []
    for i in range(0, queries.shape[0], chunk):
        att = torch.softmax(queries[i : i + chunk] @ keys.T * scale, dim=-1)
        out.append(att @ values)
    return torch.cat(out, dim=0)


class ColorizerNet(nn.Module):
    """Compact encoder / correspondence / decoder colorization network."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        widths = [arch.base_channels] + [arch.feat_channels] * arch.levels
        feat = widths[-1]
        self.tgt_in = nn.Conv2d(arch.window, widths[0], 3, padding=1)
        self.ref_in = nn.Conv2d(3, widths[0], 3, padding=1)
        self.tgt_down = nn.ModuleList(
            _DownBlock(widths[i], widths[i + 1]) for i in range(arch.levels)
        )
        self.ref_down = nn.ModuleList(
            _DownBlock(widths[i], widths[i + 1]) for i in range(arch.levels)
        )
        self.query_proj = nn.Conv2d(feat, feat, 1)
        self.key_proj = nn.Conv2d(feat, feat, 1)
        self.fuse = nn.Conv2d(feat + 2, feat, 3, padding=1)
        self.refine = nn.Conv2d(feat, feat, 3, padding=1)
        self.up = nn.ModuleList(
            nn.Conv2d(widths[i + 1], widths[i], 3, padding=1)
            for i in reversed(range(arch.levels))
        )
        self.skip_fuse = nn.Conv2d(widths[0] + 1, widths[0], 3, padding=1)
        self.head = nn.Conv2d(widths[0], 3, 3, padding=1)

    def _encode(self, x, in_conv, blocks):
        x = F.relu(in_conv(x))
        for block in blocks:
            x = block(x)
        return x

    def encode_reference(self, ref_lab_norm: torch.Tensor) -> dict:
        """Precompute attention keys and chroma values from the (1,3,H,W) reference."""
        feats = self._encode(ref_lab_norm, self.ref_in, self.ref_down)
        keys = self.key_proj(feats).flatten(2).squeeze(0).T  # (n_ref, C)
        chroma = F.adaptive_avg_pool2d(ref_lab_norm[:, 1:3], feats.shape[-2:])
        values = chroma.flatten(2).squeeze(0).T  # (n_ref, 2)
        return {"keys": keys, "values": values}

    def colorize_frame(self, window: torch.Tensor, center: torch.Tensor,
                       ref: dict) -> torch.Tensor:
        """Colorize a batch of frames given their (B,window,H,W) gray context.

        `center` is the (B,1,H,W) gray frame being colorized; the return is
        (B,3,H,W) normalized LAB (L/100 in [0,1], ab/128 in (-1,1)).
        """
        b, _, h, w = window.shape
        feats = self._encode(window, self.tgt_in, self.tgt_down)
        fh, fw = feats.shape[-2:]
        queries = self.query_proj(feats).flatten(2).transpose(1, 2)  # (B, n, C)
        warped = _attend(
            queries.reshape(b * fh * fw, -1), ref["keys"], ref["values"]
        )
        warped = warped.reshape(b, fh * fw, 2).transpose(1, 2).reshape(b, 2, fh, fw)
        x = F.relu(self.fuse(torch.cat((feats, warped), dim=1)))
        x = F.relu(self.refine(x))
        sizes = _pyramid_sizes(h, w, self.arch.levels)
        for conv, size in zip(self.up, reversed(sizes[:-1])):
            x = F.interpolate(x, size=size, mode="nearest")
            x = F.relu(conv(x))
        x = F.relu(self.skip_fuse(torch.cat((x, center), dim=1)))
        raw = self.head(x)
        lum = torch.sigmoid(raw[:, 0:1])
        ab = torch.tanh(raw[:, 1:3]) * (127.0 / colorspace.AB_SCALE)
        return torch.cat((lum, ab), dim=1)


ArchBuilder = Callable[[ArchSpec], nn.Module]
_ARCH_BUILDERS: dict[str, ArchBuilder] = {}


def register_arch(kind: str, builder: ArchBuilder) -> None:
    """Register a network builder so checkpoints of this kind can be loaded.

    The builder must return an nn.Module implementing `encode_reference` and
    `colorize_frame` with the same contracts as `ColorizerNet`.
    """
    _ARCH_BUILDERS[kind] = builder


register_arch("compact", ColorizerNet)


def _build_net(arch: ArchSpec) -> nn.Module:
    try:
        builder = _ARCH_BUILDERS[arch.kind]
    except KeyError:
        raise ParameterError(f"unknown architecture kind {arch.kind!r}") from None
    with torch.random.fork_rng():
        return builder(arch)


@lru_cache(maxsize=None)
def param_count(arch: ArchSpec) -> int:
    return sum(p.numel() for p in _build_net(arch).parameters())


def _flatten(net: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()]).clone()


def _load_theta(net: nn.Module, theta: torch.Tensor) -> None:
    # copy slice-by-slice; never alias the vector's storage into the module
    offset = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            p.copy_(theta[offset : offset + n].view_as(p))
            offset += n


def _materialize(state: ModelState) -> nn.Module:
    if not torch.isfinite(state.theta).all():
        raise InvalidStateError("model parameters contain non-finite values")
    net = _build_net(state.arch).to(state.theta.dtype)
    _load_theta(net, state.theta)
    return net


def new_state(arch: ArchSpec, dtype: torch.dtype = torch.float32) -> ModelState:
    """Freshly initialized parameters (uniform fan-in init, seeded by the arch)."""
    try:
        builder = _ARCH_BUILDERS[arch.kind]
    except KeyError:
        raise ParameterError(f"unknown architecture kind {arch.kind!r}") from None
    with torch.random.fork_rng():
        torch.manual_seed(arch.init_seed)
        net = builder(arch)
    return ModelState(theta=_flatten(net).to(dtype), arch=arch)


def clone_state(state: ModelState) -> ModelState:
    """Independent deep copy; mutating the clone leaves the original untouched."""
    return ModelState(
        theta=state.theta.detach().clone(), arch=state.arch, version=state.version
    )


def _check_forward_inputs(state: ModelState, mono: torch.Tensor,
                          reference: torch.Tensor) -> None:
    if not isinstance(mono, torch.Tensor) or mono.ndim != 4 or mono.shape[-1] != 1:
        raise ShapeError(
            f"mono sequence must have shape (T, H, W, 1), got {tuple(getattr(mono, 'shape', ()))}"
        )
    if mono.shape[0] < 1:
        raise ShapeError("mono sequence must contain at least one frame")
    if not isinstance(reference, torch.Tensor) or reference.ndim != 3 or reference.shape[-1] != 3:
        raise ShapeError(
            f"reference must have shape (H, W, 3), got {tuple(getattr(reference, 'shape', ()))}"
        )
    if tuple(reference.shape[:2]) != tuple(mono.shape[1:3]):
        raise ShapeError(
            f"reference size {tuple(reference.shape[:2])} does not match "
            f"sequence size {tuple(mono.shape[1:3])}"
        )


def _encode_reference(net: nn.Module, reference: torch.Tensor, dtype: torch.dtype) -> dict:
    ref_lab = colorspace.rgb_to_lab(reference.to(dtype))
    ref_norm = colorspace.normalize_lab(ref_lab).permute(2, 0, 1).unsqueeze(0)
    return net.encode_reference(ref_norm)


def _lab_norm_to_rgb(lab_norm: torch.Tensor) -> torch.Tensor:
    # (B,3,H,W) normalized LAB -> (B,H,W,3) RGB
    lab = colorspace.denormalize_lab(lab_norm.permute(0, 2, 3, 1))
    return colorspace.lab_to_rgb(lab)


def _run_frames(net: nn.Module, window: int, mono: torch.Tensor,
                reference: torch.Tensor, indices: Iterable[int]) -> torch.Tensor:
    """Colorize the listed frames one at a time (the inference/tuning path)."""
    dtype = next(net.parameters()).dtype
    xs = mono.to(dtype).permute(0, 3, 1, 2)  # (T,1,H,W)
    radius = (window - 1) // 2
    pad = torch.zeros((radius,) + xs.shape[1:], dtype=dtype)
    padded = torch.cat((pad, xs, pad), dim=0)
    ref = _encode_reference(net, reference, dtype)
    frames = []
    for t in indices:
        win = padded[t : t + window].permute(1, 0, 2, 3)  # (1,window,H,W)
        lab_norm = net.colorize_frame(win, xs[t : t + 1], ref)
        frames.append(_lab_norm_to_rgb(lab_norm)[0])
    return torch.stack(frames, dim=0)


def _run_frames_batched(net: nn.Module, window: int, mono: torch.Tensor,
                        reference: torch.Tensor) -> torch.Tensor:
    """Colorize all frames in one batched pass (the training path)."""
    dtype = next(net.parameters()).dtype
    xs = mono.to(dtype).permute(0, 3, 1, 2)
    t_total = xs.shape[0]
    radius = (window - 1) // 2
    pad = torch.zeros((radius,) + xs.shape[1:], dtype=dtype)
    padded = torch.cat((pad, xs, pad), dim=0)
    windows = torch.stack(
        [padded[t : t + window].squeeze(1) for t in range(t_total)], dim=0
    )  # (T,window,H,W)
    ref = _encode_reference(net, reference, dtype)
    lab_norm = net.colorize_frame(windows, xs, ref)
    return _lab_norm_to_rgb(lab_norm)


def forward(state: ModelState, mono: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Colorize a full (T, H, W, 1) sequence; returns (T, H, W, 3) in [0, 1]."""
    _check_forward_inputs(state, mono, reference)
    net = _materialize(state)
    with torch.no_grad():
        return _run_frames(net, state.arch.window, mono, reference, range(mono.shape[0]))


def forward_first(state: ModelState, mono: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Colorize only the first frame; equals `forward(...)[0]` bitwise."""
    _check_forward_inputs(state, mono, reference)
    net = _materialize(state)
    with torch.no_grad():
        return _run_frames(net, state.arch.window, mono, reference, (0,))[0]


def save_checkpoint(state: ModelState, path) -> Path:
    """Write a checkpoint: magic, JSON header, raw little-endian parameters."""
    path = Path(path)
    tag = _DTYPE_TAGS.get(state.theta.dtype)
    if tag is None:
        raise ParameterError(f"unsupported parameter dtype {state.theta.dtype}")
    payload = np.ascontiguousarray(state.theta.detach().numpy()).astype(tag).tobytes()
    header = json.dumps(
        {
            "version": state.version,
            "arch": asdict(state.arch),
            "dtype": tag,
            "param_count": state.theta.numel(),
            "crc32": zlib.crc32(payload),
        },
        sort_keys=True,
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)
    return path


def load_checkpoint(path) -> ModelState:
    """Read a checkpoint written by `save_checkpoint`; validates everything."""
    blob = Path(path).read_bytes()
    if len(blob) < len(_CHECKPOINT_MAGIC) + 4:
        raise CheckpointParseError(f"file too short to be a checkpoint: {path}")
    if blob[: len(_CHECKPOINT_MAGIC)] != _CHECKPOINT_MAGIC:
        raise CheckpointParseError(f"bad magic bytes, not a checkpoint: {path}")
    offset = len(_CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if len(blob) < offset + header_len:
        raise CheckpointParseError(f"truncated checkpoint header: {path}")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
        version = header["version"]
        arch_fields = header["arch"]
        tag = header["dtype"]
        count = header["param_count"]
        crc = header["crc32"]
    except (ValueError, KeyError) as exc:
        raise CheckpointParseError(f"unreadable checkpoint header: {path}") from exc
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    if tag not in _TAG_DTYPES:
        raise CheckpointParseError(f"unknown parameter dtype tag {tag!r}: {path}")
    try:
        arch = ArchSpec(**arch_fields)
    except (TypeError, ParameterError) as exc:
        raise CheckpointParseError(f"invalid architecture descriptor: {path}") from exc
    payload = blob[offset + header_len :]
    expected = count * np.dtype(tag).itemsize
    if len(payload) != expected:
        raise CheckpointParseError(
            f"truncated checkpoint payload ({len(payload)} bytes, expected {expected}): {path}"
        )
    if zlib.crc32(payload) != crc:
        raise CheckpointParseError(f"checkpoint payload failed its checksum: {path}")
    theta = torch.from_numpy(np.frombuffer(payload, dtype=tag).copy())
    try:
        return ModelState(theta=theta, arch=arch, version=version)
    except InvalidStateError as exc:
        raise CheckpointParseError(f"parameter count mismatch: {path}") from exc
