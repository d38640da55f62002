"""Experiment harness: pretraining, evaluation, ablations, sweeps, timing.

Everything here is a pure function of (checkpoint, dataset, config, seed),
so reports are reproducible byte-for-byte. Wall-clock measurements are the
one exception and are therefore confined to the timing table; the metric
reports never contain them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import torch

from . import model, tuner
from .data import SequenceRecord, ToyClipSpec, make_toy_clip, write_frames
from .errors import ParameterError, TrainingError
from .metrics import psnr, ssim
from .model import ArchSpec, ModelState
from .tuner import TuningConfig, TuningReport

REPORT_COLUMNS = ("sequence", "method", "psnr", "ssim", "psnr_all", "ssim_all")


@dataclass
class EvalRow:
    """Metrics for one (sequence, method) cell.

    `psnr`/`ssim` average frames 2..T (the propagated frames); the `_all`
    variants average every frame including the reference frame itself.
    """

    sequence: str
    method: str
    psnr: float
    ssim: float
    psnr_all: float
    ssim_all: float
    tuning_time: float = 0.0


@dataclass
class AblationGrid:
    """One EvalRow per loss mode per dataset (tuned results only)."""

    rows: list[EvalRow]


@dataclass(frozen=True)
class SweepPoint:
    iteration: int
    loss: float
    psnr: float


@dataclass
class TimingTable:
    """Mean tuning seconds per resolution group and iteration count."""

    resolutions: list[str]          # "HxW", sorted by pixel count
    iterations: list[int]
    seconds: list[list[float]]      # seconds[i][j]: iterations[i] x resolutions[j]


@dataclass
class PretrainResult:
    state: ModelState
    epoch_losses: list[float]


@dataclass(frozen=True)
class ToyRecipe:
    """The fixed desk-scale training setup; versioned so derived numbers stay put."""

    arch: ArchSpec = ArchSpec(
        kind="compact", window=5, base_channels=16, feat_channels=32, levels=2,
        init_seed=7,
    )
    height: int = 48
    width: int = 48
    frames: int = 8
    palette_size: int = 3
    motion: float = 1.0
    train_seeds: tuple[int, ...] = (201, 202, 203, 204)
    epochs: int = 80
    learning_rate: float = 2e-3
    shuffle_seed: int = 11


DEFAULT_TOY_RECIPE = ToyRecipe()


def toy_clip(recipe: ToyRecipe, seed: int) -> SequenceRecord:
    """One procedural clip drawn from the recipe's clip family."""
    return make_toy_clip(
        ToyClipSpec(
            height=recipe.height,
            width=recipe.width,
            frames=recipe.frames,
            palette_size=recipe.palette_size,
            motion=recipe.motion,
            seed=seed,
        )
    )


def pretrain_toy(arch: ArchSpec, clips: Sequence[SequenceRecord], epochs: int,
                 seed: int, learning_rate: float = DEFAULT_TOY_RECIPE.learning_rate,
                 checkpoint_path=None) -> PretrainResult:
    """Train the compact model on ground truth with the combined LAB loss.

    The evaluation clip must not be in `clips`; the train/test gap is what
    test-time tuning is later supposed to close. Deterministic given `seed`
    (which only shuffles the clip order; the init comes from the arch).
    """
    if len(clips) < 2:
        raise ParameterError(f"need at least 2 training clips, got {len(clips)}")
    if epochs < 0:
        raise ParameterError(f"epochs must be >= 0, got {epochs}")
    state = model.new_state(arch)
    if epochs == 0:
        if checkpoint_path is not None:
            model.save_checkpoint(state, checkpoint_path)
        return PretrainResult(state=state, epoch_losses=[])

    net = model._materialize(state)
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    order = random.Random(seed)
    epoch_losses = []
    for epoch in range(epochs):
        indices = list(range(len(clips)))
        order.shuffle(indices)
        total = 0.0
        for i in indices:
            rec = clips[i]
            pred = model._run_frames_batched(net, arch.window, rec.mono, rec.reference)
            loss = tuner.loss_lab(pred, rec.truth)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingError("training loss is not finite", epoch)
            total += value
        epoch_losses.append(total / len(clips))

    result = PretrainResult(
        state=ModelState(theta=model._flatten(net), arch=arch),
        epoch_losses=epoch_losses,
    )
    if checkpoint_path is not None:
        model.save_checkpoint(result.state, checkpoint_path)
    return result


def pretrain_recipe(recipe: ToyRecipe = DEFAULT_TOY_RECIPE,
                    checkpoint_path=None) -> PretrainResult:
    """Run the fixed toy pretraining recipe end to end."""
    clips = [toy_clip(recipe, s) for s in recipe.train_seeds]
    return pretrain_toy(
        recipe.arch,
        clips,
        recipe.epochs,
        recipe.shuffle_seed,
        recipe.learning_rate,
        checkpoint_path,
    )


def sequence_metrics(pred: torch.Tensor, truth: torch.Tensor
                     ) -> tuple[float, float, float, float]:
    """Per-frame PSNR/SSIM averaged over frames 2..T and over all frames."""
    per_psnr = [psnr(pred[t], truth[t]) for t in range(pred.shape[0])]
    per_ssim = [ssim(pred[t], truth[t]) for t in range(pred.shape[0])]
    tail_psnr = per_psnr[1:] if len(per_psnr) > 1 else per_psnr
    tail_ssim = per_ssim[1:] if len(per_ssim) > 1 else per_ssim
    mean = lambda xs: sum(xs) / len(xs)
    return mean(tail_psnr), mean(tail_ssim), mean(per_psnr), mean(per_ssim)


def evaluate(state: ModelState, rec: SequenceRecord, cfg: TuningConfig,
             out_dir=None) -> tuple[EvalRow, EvalRow, TuningReport]:
    """Score the untouched baseline and the test-time-tuned model on one sequence."""
    baseline_frames = model.forward(state, rec.mono, rec.reference)
    baseline = EvalRow(rec.name, "baseline", *sequence_metrics(baseline_frames, rec.truth))

    tuned_frames, report = tuner.colorize_tuned(state, rec.mono, rec.reference, cfg)
    tuned = EvalRow(
        rec.name,
        f"tuned-{cfg.loss_mode}",
        *sequence_metrics(tuned_frames, rec.truth),
        tuning_time=report.wall_time,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_frames(out_dir / rec.name / "baseline", baseline_frames)
        write_frames(out_dir / rec.name / "tuned", tuned_frames)
    return baseline, tuned, report


def iteration_sweep(state: ModelState, rec: SequenceRecord,
                    iteration_list: Sequence[int], cfg: TuningConfig
                    ) -> list[SweepPoint]:
    """First-frame loss/PSNR at several iteration budgets from a single run.

    One tuning run at max(iteration_list); the requested checkpoints are
    read off the per-iteration trace, never re-run.
    """
    if not iteration_list:
        raise ParameterError("iteration_list must be non-empty")
    if list(iteration_list) != sorted(iteration_list) or min(iteration_list) < 0:
        raise ParameterError(f"iteration_list must be sorted and >= 0, got {iteration_list}")
    run_cfg = replace(cfg, iterations=max(iteration_list))
    report = tuner.tune(state, rec.mono, rec.reference, run_cfg)
    return [
        SweepPoint(i, report.loss_trace[i], report.psnr_trace[i])
        for i in iteration_list
    ]


def ablation(state: ModelState, datasets: Mapping[str, Sequence[SequenceRecord]],
             cfg: TuningConfig) -> AblationGrid:
    """Tuned metrics for every loss mode on each dataset with identical seeds."""
    rows = []
    for ds_name in datasets:
        recs = datasets[ds_name]
        if not recs:
            raise ParameterError(f"dataset {ds_name!r} has no sequences")
        for mode in tuner.LOSS_MODES:
            mode_cfg = replace(cfg, loss_mode=mode)
            tuned_rows = [evaluate(state, rec, mode_cfg)[1] for rec in recs]
            n = len(tuned_rows)
            rows.append(
                EvalRow(
                    sequence=ds_name,
                    method=mode,
                    psnr=sum(r.psnr for r in tuned_rows) / n,
                    ssim=sum(r.ssim for r in tuned_rows) / n,
                    psnr_all=sum(r.psnr_all for r in tuned_rows) / n,
                    ssim_all=sum(r.ssim_all for r in tuned_rows) / n,
                    tuning_time=sum(r.tuning_time for r in tuned_rows) / n,
                )
            )
    return AblationGrid(rows=rows)


def timing(state: ModelState, recs: Sequence[SequenceRecord],
           iteration_list: Sequence[int] = (5, 20),
           cfg: TuningConfig = TuningConfig(), warmup: bool = True,
           repeats: int = 3) -> TimingTable:
    """Tuning wall time per resolution group and iteration budget.

    Measures only the optimization loop (forward, backward, optimizer step);
    model materialization and dataset decode are excluded. Runs are pinned
    to one torch thread, each group gets an untimed warmup so first-call
    kernel setup is not billed, and every cell is the median over `repeats`
    runs averaged across the group's sequences.
    """
    if any(i < 0 for i in iteration_list):
        raise ParameterError("iteration counts must be >= 0")
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    groups: dict[str, list[SequenceRecord]] = {}
    for rec in recs:
        key = f"{rec.truth.shape[1]}x{rec.truth.shape[2]}"
        groups.setdefault(key, []).append(rec)
    resolutions = sorted(groups, key=lambda k: math.prod(int(v) for v in k.split("x")))

    seconds = [[0.0] * len(resolutions) for _ in iteration_list]
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for j, res in enumerate(resolutions):
            if warmup:
                tuner.tune(state, groups[res][0].mono, groups[res][0].reference,
                           replace(cfg, iterations=3))
            for i, iters in enumerate(iteration_list):
                run_cfg = replace(cfg, iterations=iters)
                times = []
                for rec in groups[res]:
                    samples = sorted(
                        tuner.tune(state, rec.mono, rec.reference, run_cfg).wall_time
                        for _ in range(repeats)
                    )
                    times.append(samples[len(samples) // 2])
                seconds[i][j] = sum(times) / len(times)
    finally:
        torch.set_num_threads(n_threads)
    return TimingTable(resolutions=resolutions, iterations=list(iteration_list),
                       seconds=seconds)


def config_hash(cfg: TuningConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def report_header(cfg: TuningConfig | None) -> list[str]:
    """Disclosure lines stamped on every report: the conventions behind the numbers."""
    lines = [
        "psnr: joint MSE over RGB, max=1.0, per-frame then averaged",
        "ssim: 11x11 gaussian sigma=1.5 K1=0.01 K2=0.03, per RGB channel, averaged",
        "frame aggregation: psnr/ssim average frames 2..T, *_all average frames 1..T",
        "grayscale: rec601 0.299R + 0.587G + 0.114B",
    ]
    if cfg is not None:
        lines.append(f"loss normalization: L/{cfg.l_scale:g}, ab/{cfg.ab_scale:g}")
        tuning = (
            f"tuning: loss_mode={cfg.loss_mode} iterations={cfg.iterations} "
            f"lr={cfg.learning_rate:g} seed={cfg.seed}"
        )
        if cfg.param_filter:
            tuning += f" param_filter={cfg.param_filter}"
        lines.append(tuning)
        lines.append(f"config_hash: {config_hash(cfg)}")
    return lines


def emit_report(rows: Sequence[EvalRow], out_dir, cfg: TuningConfig | None = None,
                name: str = "report") -> tuple[Path, Path]:
    """Write rows as a commented CSV plus a human-readable text table.

    Wall-clock columns are deliberately absent so the files are byte-stable
    across runs with the same seed.
    """
    if not rows:
        raise ParameterError("cannot emit a report with no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        for line in report_header(cfg):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.sequence, r.method, repr(r.psnr), repr(r.ssim),
                 repr(r.psnr_all), repr(r.ssim_all)]
            )

    txt_path = out_dir / f"{name}.txt"
    widths = [max(len(c), 12) for c in REPORT_COLUMNS]
    widths[0] = max([len(r.sequence) for r in rows] + [len("sequence")]) + 2
    widths[1] = max([len(r.method) for r in rows] + [len("method")]) + 2
    with open(txt_path, "w") as fh:
        for line in report_header(cfg):
            fh.write(f"# {line}\n")
        header = "".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))
        fh.write(header.rstrip() + "\n")
        fh.write("-" * len(header) + "\n")
        for r in rows:
            cells = [r.sequence, r.method] + [
                f"{v:.4f}" for v in (r.psnr, r.ssim, r.psnr_all, r.ssim_all)
            ]
            fh.write("".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip() + "\n")
    return csv_path, txt_path


def parse_report(csv_path) -> list[EvalRow]:
    """Read back a report CSV written by `emit_report`."""
    with open(csv_path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ParameterError(f"unexpected report columns: {header}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(
            EvalRow(rec[0], rec[1], float(rec[2]), float(rec[3]),
                    float(rec[4]), float(rec[5]))
        )
    return rows


def write_timing_csv(table: TimingTable, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# mean tuning seconds per sequence (optimization loop only)\n")
        writer = csv.writer(fh)
        writer.writerow(["iterations"] + table.resolutions)
        for iters, row in zip(table.iterations, table.seconds):
            writer.writerow([iters] + [f"{v:.6f}" for v in row])
    return path


def write_sweep_csv(points: Sequence[SweepPoint], path,
                    cfg: TuningConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in report_header(cfg):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "psnr"])
        for p in points:
            writer.writerow([p.iteration, repr(p.loss), repr(p.psnr)])
    return path


def run_benchmark(state: ModelState, recs: Sequence[SequenceRecord],
                  cfg: TuningConfig, out_dir, workers: int = 1,
                  write_outputs: bool = True) -> list[EvalRow]:
    """Evaluate every sequence, then emit report files and figures.

    Sequences are independent; with workers > 1 they are evaluated in a
    thread pool (each run owns its private model copy, results are
    identical to the serial order).
    """
    if not recs:
        raise ParameterError("no sequences to benchmark")
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames" if write_outputs else None

    def job(rec):
        return evaluate(state, rec, cfg, out_dir=frames_dir)

    ordered = sorted(recs, key=lambda r: r.name)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, ordered))
    else:
        results = [job(rec) for rec in ordered]

    rows: list[EvalRow] = []
    for (baseline, tuned, report), rec in zip(results, ordered):
        rows.extend([baseline, tuned])
        tuner.write_trace_csv(
            report, out_dir / f"trace_{rec.name}.csv",
            header_lines=tuple(report_header(cfg)),
        )

    for method in ("baseline", f"tuned-{cfg.loss_mode}"):
        group = [r for r in rows if r.method == method]
        n = len(group)
        rows.append(
            EvalRow(
                sequence="average",
                method=method,
                psnr=sum(r.psnr for r in group) / n,
                ssim=sum(r.ssim for r in group) / n,
                psnr_all=sum(r.psnr_all for r in group) / n,
                ssim_all=sum(r.ssim_all for r in group) / n,
            )
        )
    emit_report(rows, out_dir, cfg)
    return rows
