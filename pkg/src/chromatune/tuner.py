"""Test-time tuning of the colorizer on the reference / monochrome pair.

At inference time the colorized first frame is the only ground truth
available, so the network is fine-tuned on that single sample before
colorizing the rest of the sequence. The tuning objective lives in LAB
space: a luminance term (suppresses artifacts in L) plus a chroma term
(drives the color transfer), computed on normalized planes so neither
channel group dominates. An RGB mean-squared-error objective is kept as
the ablation baseline.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch

from . import colorspace, metrics, model
from .errors import DivergenceError, ParameterError, ShapeError

LOSS_MODES = ("lab_combined", "lab_l_only", "lab_ab_only", "rgb")


@dataclass(frozen=True)
class TuningConfig:
    """Knobs for one test-time tuning run."""

    iterations: int = 20
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_mode: str = "lab_combined"
    seed: int = 0
    # loss-space scaling; set both to 1.0 for raw (unnormalized) LAB values
    l_scale: float = colorspace.L_SCALE
    ab_scale: float = colorspace.AB_SCALE
    # abort when the loss exceeds this multiple of its initial value
    divergence_factor: float = 1e3
    # substring mask over parameter names; empty tunes every parameter
    param_filter: str = ""

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError(f"iterations must be >= 0, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.loss_mode not in LOSS_MODES:
            raise ParameterError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.l_scale <= 0 or self.ab_scale <= 0:
            raise ParameterError("loss scales must be > 0")
        if self.divergence_factor <= 0:
            raise ParameterError("divergence_factor must be > 0")


@dataclass
class TuningReport:
    """Per-iteration trace of one tuning run plus the tuned parameters.

    Trace index i holds the values measured after i optimizer steps, so both
    traces have length iterations + 1 and index 0 is the untuned model.
    """

    loss_trace: list[float]
    psnr_trace: list[float]
    wall_time: float
    final_state: model.ModelState


def _check_pair(pred: torch.Tensor, ref: torch.Tensor) -> None:
    if not isinstance(pred, torch.Tensor) or not isinstance(ref, torch.Tensor):
        raise ShapeError("loss inputs must be torch.Tensors")
    if pred.shape != ref.shape:
        raise ShapeError(
            f"image shapes differ: {tuple(pred.shape)} vs {tuple(ref.shape)}"
        )
    if pred.shape[-1] != 3:
        raise ShapeError(f"expected 3 channels on the last axis, got {pred.shape[-1]}")


def loss_rgb(pred: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all RGB values (the ablation baseline)."""
    _check_pair(pred, ref)
    diff = pred.to(torch.float64) - ref.to(torch.float64)
    return diff.pow(2).mean()


def loss_luminance(pred: torch.Tensor, ref: torch.Tensor,
                   l_scale: float = colorspace.L_SCALE) -> torch.Tensor:
    """Squared error between L planes, mean over pixels, L divided by l_scale."""
    _check_pair(pred, ref)
    pl, _ = colorspace.split_lab(colorspace.rgb_to_lab(pred.to(torch.float64)))
    rl, _ = colorspace.split_lab(colorspace.rgb_to_lab(ref.to(torch.float64)))
    return ((pl - rl) / l_scale).pow(2).mean()


def loss_chroma(pred: torch.Tensor, ref: torch.Tensor,
                ab_scale: float = colorspace.AB_SCALE) -> torch.Tensor:
    """Squared error between (a, b) planes, mean over values, divided by ab_scale."""
    _check_pair(pred, ref)
    _, pab = colorspace.split_lab(colorspace.rgb_to_lab(pred.to(torch.float64)))
    _, rab = colorspace.split_lab(colorspace.rgb_to_lab(ref.to(torch.float64)))
    return ((pab - rab) / ab_scale).pow(2).mean()


def loss_lab(pred: torch.Tensor, ref: torch.Tensor,
             l_scale: float = colorspace.L_SCALE,
             ab_scale: float = colorspace.AB_SCALE) -> torch.Tensor:
    """Combined tuning objective: luminance term plus chroma term."""
    return loss_luminance(pred, ref, l_scale) + loss_chroma(pred, ref, ab_scale)


def _loss_fn(cfg: TuningConfig) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    if cfg.loss_mode == "lab_combined":
        return lambda y, z: loss_lab(y, z, cfg.l_scale, cfg.ab_scale)
    if cfg.loss_mode == "lab_l_only":
        return lambda y, z: loss_luminance(y, z, cfg.l_scale)
    if cfg.loss_mode == "lab_ab_only":
        return lambda y, z: loss_chroma(y, z, cfg.ab_scale)
    return loss_rgb


def tune(state: model.ModelState, mono: torch.Tensor, reference: torch.Tensor,
         cfg: TuningConfig) -> TuningReport:
    """Fine-tune a private copy of `state` on the reference / first-frame pair.

    Each iteration colorizes the first frame, evaluates the configured loss
    against the reference, and takes one Adam step on all parameters. The
    input state is never mutated. Deterministic given identical inputs.
    """
    model._check_forward_inputs(state, mono, reference)
    torch.manual_seed(cfg.seed)
    net = model._materialize(state)
    if cfg.param_filter:
        params = [p for name, p in net.named_parameters() if cfg.param_filter in name]
        if not params:
            raise ParameterError(
                f"param_filter {cfg.param_filter!r} matches no parameters"
            )
    else:
        params = list(net.parameters())
    opt = torch.optim.Adam(
        params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )
    objective = _loss_fn(cfg)

    losses: list[float] = []
    psnrs: list[float] = []
    elapsed = 0.0
    initial = None
    for it in range(cfg.iterations):
        start = time.perf_counter()
        y1 = model._run_frames(net, state.arch.window, mono, reference, (0,))[0]
        loss = objective(y1, reference)
        elapsed += time.perf_counter() - start

        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError("tuning loss is not finite", it)
        if initial is None:
            initial = value
        elif initial > 0 and value > cfg.divergence_factor * initial:
            raise DivergenceError(
                f"tuning loss {value:.3e} exceeded {cfg.divergence_factor:g}x "
                f"its initial value {initial:.3e}",
                it,
            )

        start = time.perf_counter()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        elapsed += time.perf_counter() - start
        for p in params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise DivergenceError("tuning gradient is not finite", it)

        losses.append(value)
        psnrs.append(metrics.psnr(y1.detach(), reference))

        start = time.perf_counter()
        opt.step()
        elapsed += time.perf_counter() - start

    with torch.no_grad():
        y1 = model._run_frames(net, state.arch.window, mono, reference, (0,))[0]
        losses.append(float(objective(y1, reference)))
        psnrs.append(metrics.psnr(y1, reference))

    final_state = model.ModelState(
        theta=model._flatten(net), arch=state.arch, version=state.version
    )
    return TuningReport(
        loss_trace=losses, psnr_trace=psnrs, wall_time=elapsed, final_state=final_state
    )


def colorize_tuned(state: model.ModelState, mono: torch.Tensor,
                   reference: torch.Tensor, cfg: TuningConfig
                   ) -> tuple[torch.Tensor, TuningReport]:
    """Tune, then colorize the whole sequence with the tuned parameters."""
    report = tune(state, mono, reference, cfg)
    frames = model.forward(report.final_state, mono, reference)
    return frames, report


def write_trace_csv(report: TuningReport, path, header_lines: tuple[str, ...] = ()) -> Path:
    """Serialize a tuning trace as `iteration,loss,psnr` rows plus a summary."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "psnr"])
        for i, (lo, ps) in enumerate(zip(report.loss_trace, report.psnr_trace)):
            writer.writerow([i, repr(lo), repr(ps)])
        steps = len(report.loss_trace) - 1
        fh.write(
            f"# summary: iterations={steps} final_loss={report.loss_trace[-1]!r} "
            f"final_psnr={report.psnr_trace[-1]!r}\n"
        )
    return path


def read_trace_csv(path) -> tuple[list[float], list[float]]:
    """Parse a trace written by `write_trace_csv` back into its two traces."""
    losses: list[float] = []
    psnrs: list[float] = []
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    for row in csv.reader(rows[1:]):
        if not row:
            continue
        losses.append(float(row[1]))
        psnrs.append(float(row[2]))
    return losses, psnrs
