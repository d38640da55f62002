"""Single entry point: `chromatune <subcommand>`.

Subcommands cover the full pipeline: colorize / tune a sequence, pretrain
the desk-scale model on synthetic clips, and run the benchmark, ablation,
iteration-sweep and timing harnesses. All diagnostics go to stderr;
machine-readable outputs are written to files only. Exit codes: 0 success,
1 usage error, 2 runtime error.

Options may also be supplied through `--config FILE` (flat `key=value`
lines, keys named like the long flags); explicit flags win over the file,
and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench, data, model, plots, tuner
from .errors import ChromatuneError
from .model import ArchSpec
from .tuner import TuningConfig

_LOSS_FLAGS = {
    "lab": "lab_combined",
    "lab-l": "lab_l_only",
    "lab-ab": "lab_ab_only",
    "rgb": "rgb",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _add_tuning_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--iterations", type=int, default=20,
                    help="tuning iterations (default: 20)")
    sp.add_argument("--lr", type=float, default=1e-4,
                    help="tuning learning rate (default: 1e-4)")
    sp.add_argument("--loss", choices=sorted(_LOSS_FLAGS), default="lab",
                    help="tuning objective (default: lab)")
    sp.add_argument("--seed", type=int, default=0,
                    help="run seed (default: 0)")


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--out", default=None, help="output directory (required)")
    sp.add_argument("--config", default=None,
                    help="key=value config file; flags override it (default: none)")


def _build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="chromatune",
                     description="Video colorization with test-time tuning.")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    registry: dict[str, argparse.ArgumentParser] = {}

    sp = subs.add_parser("colorize",
                         help="colorize a monochrome sequence from a reference frame")
    sp.add_argument("--input", default=None,
                    help="directory of monochrome PNG frames (required)")
    sp.add_argument("--reference", default=None,
                    help="colorized first frame PNG (required)")
    sp.add_argument("--checkpoint", default=None,
                    help="model checkpoint to tune from (required)")
    _add_tuning_flags(sp)
    _add_common_flags(sp)
    registry["colorize"] = sp

    sp = subs.add_parser("tune",
                         help="tune a checkpoint on the ref-mono pair and save it")
    sp.add_argument("--input", default=None,
                    help="directory of monochrome PNG frames (required)")
    sp.add_argument("--reference", default=None,
                    help="colorized first frame PNG (required)")
    sp.add_argument("--checkpoint", default=None,
                    help="model checkpoint to tune from (required)")
    _add_tuning_flags(sp)
    _add_common_flags(sp)
    registry["tune"] = sp

    sp = subs.add_parser("pretrain-toy",
                         help="pretrain the compact model on synthetic clips")
    sp.add_argument("--clips", type=int, default=4,
                    help="number of training clips (default: 4)")
    sp.add_argument("--clip-seed-base", type=int, default=201,
                    help="seed of the first training clip (default: 201)")
    sp.add_argument("--epochs", type=int, default=bench.DEFAULT_TOY_RECIPE.epochs,
                    help=f"training epochs (default: {bench.DEFAULT_TOY_RECIPE.epochs})")
    sp.add_argument("--lr", type=float, default=bench.DEFAULT_TOY_RECIPE.learning_rate,
                    help="training learning rate "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.learning_rate})")
    sp.add_argument("--seed", type=int, default=bench.DEFAULT_TOY_RECIPE.shuffle_seed,
                    help="clip-order shuffle seed "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.shuffle_seed})")
    sp.add_argument("--height", type=int, default=bench.DEFAULT_TOY_RECIPE.height,
                    help=f"clip height (default: {bench.DEFAULT_TOY_RECIPE.height})")
    sp.add_argument("--width", type=int, default=bench.DEFAULT_TOY_RECIPE.width,
                    help=f"clip width (default: {bench.DEFAULT_TOY_RECIPE.width})")
    sp.add_argument("--frames", type=int, default=bench.DEFAULT_TOY_RECIPE.frames,
                    help=f"frames per clip (default: {bench.DEFAULT_TOY_RECIPE.frames})")
    sp.add_argument("--palette-size", type=int,
                    default=bench.DEFAULT_TOY_RECIPE.palette_size,
                    help="colors per clip "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.palette_size})")
    sp.add_argument("--motion", type=float, default=bench.DEFAULT_TOY_RECIPE.motion,
                    help="shape speed in px/frame "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.motion})")
    sp.add_argument("--window", type=int, default=bench.DEFAULT_TOY_RECIPE.arch.window,
                    help="temporal window "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.arch.window})")
    sp.add_argument("--base-channels", type=int,
                    default=bench.DEFAULT_TOY_RECIPE.arch.base_channels,
                    help="encoder width "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.arch.base_channels})")
    sp.add_argument("--feat-channels", type=int,
                    default=bench.DEFAULT_TOY_RECIPE.arch.feat_channels,
                    help="feature width "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.arch.feat_channels})")
    sp.add_argument("--levels", type=int, default=bench.DEFAULT_TOY_RECIPE.arch.levels,
                    help="downsampling stages "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.arch.levels})")
    sp.add_argument("--init-seed", type=int,
                    default=bench.DEFAULT_TOY_RECIPE.arch.init_seed,
                    help="parameter init seed "
                         f"(default: {bench.DEFAULT_TOY_RECIPE.arch.init_seed})")
    _add_common_flags(sp)
    registry["pretrain-toy"] = sp

    sp = subs.add_parser("bench",
                         help="baseline-vs-tuned benchmark over a dataset root")
    sp.add_argument("--data", default=None,
                    help="dataset root: one subdirectory of PNG frames per sequence "
                         "(required)")
    sp.add_argument("--checkpoint", default=None, help="model checkpoint (required)")
    sp.add_argument("--workers", type=int, default=1,
                    help="parallel sequence workers (default: 1)")
    _add_tuning_flags(sp)
    _add_common_flags(sp)
    registry["bench"] = sp

    sp = subs.add_parser("ablate",
                         help="run all four tuning objectives over datasets")
    sp.add_argument("--data", action="append", default=None,
                    help="dataset root, repeatable (required)")
    sp.add_argument("--checkpoint", default=None, help="model checkpoint (required)")
    _add_tuning_flags(sp)
    _add_common_flags(sp)
    registry["ablate"] = sp

    sp = subs.add_parser("sweep",
                         help="PSNR at several iteration budgets from one tuning run")
    sp.add_argument("--input", default=None,
                    help="one ground-truth color sequence directory (required)")
    sp.add_argument("--checkpoint", default=None, help="model checkpoint (required)")
    sp.add_argument("--iterations-list", default="0,1,5,20",
                    help="comma-separated checkpoints (default: 0,1,5,20)")
    _add_tuning_flags(sp)
    _add_common_flags(sp)
    registry["sweep"] = sp

    sp = subs.add_parser("timing",
                         help="mean tuning time per resolution group")
    sp.add_argument("--data", default=None, help="dataset root (required)")
    sp.add_argument("--checkpoint", default=None, help="model checkpoint (required)")
    sp.add_argument("--iterations-list", default="5,20",
                    help="comma-separated iteration budgets (default: 5,20)")
    _add_tuning_flags(sp)
    _add_common_flags(sp)
    registry["timing"] = sp

    return parser, registry


def _read_config_file(path: str) -> list[tuple[str, str]]:
    entries = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        entries.append((key.strip(), value.strip()))
    return entries


def _apply_config(ns: argparse.Namespace, sub: argparse.ArgumentParser,
                  argv: list[str]) -> None:
    options: dict[str, argparse.Action] = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                options[opt[2:]] = action
    explicit = {a[2:].split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, raw in _read_config_file(ns.config):
        action = options.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} in {ns.config}")
        if key in explicit:
            continue
        if action.choices is not None and raw not in action.choices:
            raise UsageError(
                f"config key {key!r}: {raw!r} is not one of {sorted(action.choices)}"
            )
        try:
            value = action.type(raw) if action.type is not None else raw
        except ValueError as exc:
            raise UsageError(f"config key {key!r}: bad value {raw!r}") from exc
        setattr(ns, action.dest, value)


def _print_resolved(ns: argparse.Namespace) -> None:
    print(f"resolved config for {ns.command}:", file=sys.stderr)
    for key in sorted(vars(ns)):
        if key == "command":
            continue
        print(f"  {key} = {getattr(ns, key)}", file=sys.stderr)


def _require(ns: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(ns, name) is None:
            flag = "--" + name.replace("_", "-")
            raise UsageError(f"{flag} is required")


def _tuning_config(ns: argparse.Namespace) -> TuningConfig:
    return TuningConfig(
        iterations=ns.iterations,
        learning_rate=ns.lr,
        loss_mode=_LOSS_FLAGS[ns.loss],
        seed=ns.seed,
    )


def _parse_int_list(raw: str) -> list[int]:
    try:
        values = [int(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad iteration list {raw!r}") from exc
    if not values:
        raise UsageError(f"bad iteration list {raw!r}")
    return values


def _load_dataset(root: str) -> list:
    root_path = Path(root)
    dirs = sorted(d for d in root_path.iterdir() if d.is_dir())
    if not dirs:
        raise UsageError(f"no sequence directories under {root}")
    return [data.load_sequence(d) for d in dirs]


def _cmd_colorize(ns: argparse.Namespace) -> int:
    _require(ns, "input", "reference", "checkpoint", "out")
    state = model.load_checkpoint(ns.checkpoint)
    mono = data.load_mono_sequence(ns.input)
    reference = data.load_image(ns.reference)
    cfg = _tuning_config(ns)
    frames, report = tuner.colorize_tuned(state, mono, reference, cfg)
    out = Path(ns.out)
    data.write_frames(out, frames)
    name = Path(ns.input).name
    tuner.write_trace_csv(report, out / f"trace_{name}.csv",
                          header_lines=tuple(bench.report_header(cfg)))
    plots.save_trace_figure(report.loss_trace, report.psnr_trace,
                            out / f"trace_{name}.png", title=f"tuning on {name}")
    print(f"wrote {frames.shape[0]} frames to {out}", file=sys.stderr)
    return 0


def _cmd_tune(ns: argparse.Namespace) -> int:
    _require(ns, "input", "reference", "checkpoint", "out")
    state = model.load_checkpoint(ns.checkpoint)
    mono = data.load_mono_sequence(ns.input)
    reference = data.load_image(ns.reference)
    cfg = _tuning_config(ns)
    report = tuner.tune(state, mono, reference, cfg)
    out = Path(ns.out)
    ckpt = model.save_checkpoint(report.final_state, out / "tuned.ckpt")
    name = Path(ns.input).name
    tuner.write_trace_csv(report, out / f"trace_{name}.csv",
                          header_lines=tuple(bench.report_header(cfg)))
    plots.save_trace_figure(report.loss_trace, report.psnr_trace,
                            out / f"trace_{name}.png", title=f"tuning on {name}")
    print(f"tuned checkpoint written to {ckpt} "
          f"(loss {report.loss_trace[0]:.4g} -> {report.loss_trace[-1]:.4g}, "
          f"{report.wall_time:.2f}s)", file=sys.stderr)
    return 0


def _cmd_pretrain_toy(ns: argparse.Namespace) -> int:
    _require(ns, "out")
    if ns.clips < 2:
        raise UsageError("--clips must be at least 2")
    arch = ArchSpec(
        kind="compact",
        window=ns.window,
        base_channels=ns.base_channels,
        feat_channels=ns.feat_channels,
        levels=ns.levels,
        init_seed=ns.init_seed,
    )
    recipe = bench.ToyRecipe(
        arch=arch,
        height=ns.height,
        width=ns.width,
        frames=ns.frames,
        palette_size=ns.palette_size,
        motion=ns.motion,
        train_seeds=tuple(ns.clip_seed_base + i for i in range(ns.clips)),
        epochs=ns.epochs,
        learning_rate=ns.lr,
        shuffle_seed=ns.seed,
    )
    out = Path(ns.out)
    result = bench.pretrain_recipe(recipe, checkpoint_path=out / "toy.ckpt")
    if result.epoch_losses:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "pretrain_loss.csv", "w") as fh:
            fh.write("epoch,loss\n")
            for i, v in enumerate(result.epoch_losses):
                fh.write(f"{i},{v!r}\n")
        plots.save_loss_curve(result.epoch_losses, out / "pretrain_loss.png",
                              title="toy pretraining loss")
        print(f"pretrained {ns.epochs} epochs, loss "
              f"{result.epoch_losses[0]:.4g} -> {result.epoch_losses[-1]:.4g}",
              file=sys.stderr)
    print(f"checkpoint written to {out / 'toy.ckpt'}", file=sys.stderr)
    return 0


def _cmd_bench(ns: argparse.Namespace) -> int:
    _require(ns, "data", "checkpoint", "out")
    state = model.load_checkpoint(ns.checkpoint)
    recs = _load_dataset(ns.data)
    cfg = _tuning_config(ns)
    rows = bench.run_benchmark(state, recs, cfg, ns.out, workers=ns.workers)
    plots.save_report_figure(rows, Path(ns.out) / "report.png")
    print(f"benchmarked {len(recs)} sequences, report in {ns.out}", file=sys.stderr)
    return 0


def _cmd_ablate(ns: argparse.Namespace) -> int:
    _require(ns, "data", "checkpoint", "out")
    state = model.load_checkpoint(ns.checkpoint)
    datasets = {Path(root).name: _load_dataset(root) for root in ns.data}
    cfg = _tuning_config(ns)
    grid = bench.ablation(state, datasets, cfg)
    out = Path(ns.out)
    bench.emit_report(grid.rows, out, cfg, name="ablation")
    plots.save_report_figure(grid.rows, out / "ablation.png",
                             title="tuning objective ablation")
    print(f"ablation over {len(datasets)} dataset(s) written to {out}", file=sys.stderr)
    return 0


def _cmd_sweep(ns: argparse.Namespace) -> int:
    _require(ns, "input", "checkpoint", "out")
    state = model.load_checkpoint(ns.checkpoint)
    rec = data.load_sequence(ns.input)
    iteration_list = _parse_int_list(ns.iterations_list)
    cfg = _tuning_config(ns)
    points = bench.iteration_sweep(state, rec, iteration_list, cfg)
    out = Path(ns.out)
    bench.write_sweep_csv(points, out / f"sweep_{rec.name}.csv", cfg)
    plots.save_sweep_figure(points, out / f"sweep_{rec.name}.png",
                            title=f"PSNR vs iterations on {rec.name}")
    print(f"sweep over {iteration_list} written to {out}", file=sys.stderr)
    return 0


def _cmd_timing(ns: argparse.Namespace) -> int:
    _require(ns, "data", "checkpoint", "out")
    state = model.load_checkpoint(ns.checkpoint)
    recs = _load_dataset(ns.data)
    iteration_list = _parse_int_list(ns.iterations_list)
    cfg = _tuning_config(ns)
    table = bench.timing(state, recs, iteration_list, cfg)
    out = Path(ns.out)
    bench.write_timing_csv(table, out / "timing.csv")
    plots.save_timing_figure(table, out / "timing.png")
    print(f"timing table written to {out / 'timing.csv'}", file=sys.stderr)
    return 0


_HANDLERS = {
    "colorize": _cmd_colorize,
    "tune": _cmd_tune,
    "pretrain-toy": _cmd_pretrain_toy,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "timing": _cmd_timing,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, registry = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a subcommand is required (see --help)")
        if getattr(ns, "config", None):
            _apply_config(ns, registry[ns.command], argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    _print_resolved(ns)
    try:
        return _HANDLERS[ns.command](ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ChromatuneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
