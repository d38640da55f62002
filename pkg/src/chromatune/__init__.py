"""chromatune: reference-based video colorization with test-time tuning."""

from .bench import (
    AblationGrid,
    DEFAULT_TOY_RECIPE,
    EvalRow,
    PretrainResult,
    SweepPoint,
    TimingTable,
    ToyRecipe,
    ablation,
    emit_report,
    evaluate,
    iteration_sweep,
    parse_report,
    pretrain_recipe,
    pretrain_toy,
    run_benchmark,
    timing,
    toy_clip,
)
from .colorspace import (
    lab_to_rgb,
    merge_lab,
    rgb_to_gray,
    rgb_to_lab,
    split_lab,
)
from .data import (
    SequenceRecord,
    ToyClipSpec,
    load_image,
    load_mono_sequence,
    load_sequence,
    make_toy_clip,
    write_frames,
)
from .metrics import psnr, ssim
from .model import (
    ArchSpec,
    ModelState,
    clone_state,
    forward,
    forward_first,
    load_checkpoint,
    new_state,
    register_arch,
    save_checkpoint,
)
from .tuner import (
    LOSS_MODES,
    TuningConfig,
    TuningReport,
    colorize_tuned,
    loss_chroma,
    loss_lab,
    loss_luminance,
    loss_rgb,
    tune,
)

__version__ = "0.1.0"
