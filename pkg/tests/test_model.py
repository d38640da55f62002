"""Model contracts: shapes, determinism, gradients, checkpoints, cloning."""

import numpy as np
import pytest
import torch
import torch.nn as nn

from chromatune import colorspace, model
from chromatune.data import ToyClipSpec, make_toy_clip
from chromatune.errors import (
    CheckpointParseError,
    IncompatibleCheckpointError,
    InvalidStateError,
    ParameterError,
    ShapeError,
)


@pytest.fixture(scope="module")
def small_arch():
    return model.ArchSpec(window=3, base_channels=6, feat_channels=12, levels=1,
                          init_seed=5)


@pytest.fixture(scope="module")
def clip():
    return make_toy_clip(ToyClipSpec(height=24, width=24, frames=4, seed=9))


def test_default_arch_is_compact():
    count = model.param_count(model.ArchSpec())
    assert 50_000 <= count <= 500_000


def test_arch_validation():
    with pytest.raises(ParameterError):
        model.ArchSpec(window=4)
    with pytest.raises(ParameterError):
        model.ArchSpec(levels=-1)
    with pytest.raises(ParameterError):
        model.ArchSpec(base_channels=0)


def test_forward_shape_and_range(small_arch, clip):
    state = model.new_state(small_arch)
    mono = colorspace.rgb_to_gray(clip.reference).unsqueeze(0)
    out = model.forward(state, mono, clip.reference)
    assert out.shape == (1, 24, 24, 3)
    assert out.min().item() >= 0.0 and out.max().item() <= 1.0


def test_forward_is_deterministic(small_arch, clip):
    state = model.new_state(small_arch)
    a = model.forward(state, clip.mono, clip.reference)
    b = model.forward(state, clip.mono, clip.reference)
    assert torch.equal(a, b)


def test_forward_first_equals_first_frame(small_arch, clip):
    state = model.new_state(small_arch)
    full = model.forward(state, clip.mono, clip.reference)
    first = model.forward_first(state, clip.mono, clip.reference)
    assert torch.equal(first, full[0])


def test_forward_first_on_single_frame_sequence(small_arch, clip):
    state = model.new_state(small_arch)
    mono = clip.mono[:1]
    full = model.forward(state, mono, clip.reference)
    assert torch.equal(model.forward_first(state, mono, clip.reference), full[0])


def test_output_range_for_arbitrary_parameters(small_arch, clip):
    state = model.new_state(small_arch)
    state.theta = state.theta * 40.0  # grossly out-of-distribution weights
    out = model.forward(state, clip.mono, clip.reference)
    assert torch.isfinite(out).all()
    assert out.min().item() >= 0.0 and out.max().item() <= 1.0


def test_shape_preserved_for_odd_sizes(small_arch):
    rec = make_toy_clip(ToyClipSpec(height=19, width=23, frames=3, seed=2))
    state = model.new_state(small_arch)
    out = model.forward(state, rec.mono, rec.reference)
    assert out.shape == (3, 19, 23, 3)


def test_dimension_mismatch_rejected(small_arch, clip):
    state = model.new_state(small_arch)
    bad_ref = clip.reference[:-2]
    with pytest.raises(ShapeError):
        model.forward(state, clip.mono, bad_ref)
    with pytest.raises(ShapeError):
        model.forward(state, clip.truth, clip.reference)  # 3-channel frames


def test_non_finite_parameters_rejected(small_arch, clip):
    state = model.new_state(small_arch)
    state.theta[0] = float("nan")
    with pytest.raises(InvalidStateError):
        model.forward(state, clip.mono, clip.reference)


def test_wrong_parameter_count_rejected(small_arch):
    with pytest.raises(InvalidStateError):
        model.ModelState(theta=torch.zeros(10), arch=small_arch)


def test_gradient_of_forward_first_scalar(tiny_arch):
    rec = make_toy_clip(ToyClipSpec(height=16, width=16, frames=3, seed=77))
    state = model.new_state(tiny_arch, dtype=torch.float64)
    mono = rec.mono.to(torch.float64)
    ref = rec.reference.to(torch.float64)
    rng = np.random.default_rng(21)
    weights = torch.from_numpy(rng.standard_normal((16, 16, 3)))

    def scalar(theta):
        net = model._materialize(model.ModelState(theta=theta, arch=tiny_arch))
        with torch.no_grad():
            y1 = model._run_frames(net, tiny_arch.window, mono, ref, (0,))[0]
        return float((y1 * weights).sum())

    net = model._materialize(state)
    y1 = model._run_frames(net, tiny_arch.window, mono, ref, (0,))[0]
    (y1 * weights).sum().backward()
    grad = torch.cat([p.grad.reshape(-1) for p in net.parameters()])

    # relative check with an absolute floor: below 1e-6 the finite-difference
    # oracle's own truncation noise dominates the true derivative
    h = 1e-5
    coords = rng.choice(state.theta.numel(), size=20, replace=False)
    for c in coords:
        plus = state.theta.clone()
        minus = state.theta.clone()
        plus[c] += h
        minus[c] -= h
        fd = (scalar(plus) - scalar(minus)) / (2 * h)
        ad = grad[c].item()
        assert abs(ad - fd) <= 1e-3 * max(abs(ad), abs(fd), 1e-6)


def test_clone_is_independent(small_arch, clip):
    state = model.new_state(small_arch)
    copy = model.clone_state(state)
    assert torch.equal(copy.theta, state.theta)
    original = state.theta.clone()
    copy.theta += 1.0
    assert torch.equal(state.theta, original)
    assert torch.equal(
        model.forward(model.clone_state(state), clip.mono, clip.reference),
        model.forward(state, clip.mono, clip.reference),
    )


def test_checkpoint_round_trip(small_arch, tmp_path):
    state = model.new_state(small_arch)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(state, path)
    loaded = model.load_checkpoint(path)
    assert torch.equal(loaded.theta, state.theta)
    assert loaded.theta.dtype == state.theta.dtype
    assert loaded.arch == state.arch
    assert loaded.version == state.version


def test_checkpoint_round_trip_float64(small_arch, tmp_path):
    state = model.new_state(small_arch, dtype=torch.float64)
    path = tmp_path / "model64.ckpt"
    model.save_checkpoint(state, path)
    loaded = model.load_checkpoint(path)
    assert loaded.theta.dtype == torch.float64
    assert torch.equal(loaded.theta, state.theta)


def test_checkpoint_version_mismatch(small_arch, tmp_path):
    state = model.new_state(small_arch)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(state, path)
    blob = path.read_bytes()
    tampered = blob.replace(b'"version": 1', b'"version": 9', 1)
    assert tampered != blob
    path.write_bytes(tampered)
    with pytest.raises(IncompatibleCheckpointError):
        model.load_checkpoint(path)


def test_truncated_checkpoint_rejected(small_arch, tmp_path):
    state = model.new_state(small_arch)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(state, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 64])
    with pytest.raises(CheckpointParseError):
        model.load_checkpoint(path)


def test_corrupt_payload_rejected(small_arch, tmp_path):
    state = model.new_state(small_arch)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(state, path)
    blob = bytearray(path.read_bytes())
    blob[-5] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointParseError):
        model.load_checkpoint(path)


def test_not_a_checkpoint_rejected(tmp_path):
    path = tmp_path / "noise.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointParseError):
        model.load_checkpoint(path)


def test_registered_arch_round_trips(tmp_path, clip):
    class FlatColorizer(nn.Module):
        """Minimal adapter-style network: per-pixel conv, no correspondence."""

        def __init__(self, arch):
            super().__init__()
            self.arch = arch
            self.body = nn.Conv2d(arch.window, 8, 3, padding=1)
            self.head = nn.Conv2d(9, 3, 3, padding=1)

        def encode_reference(self, ref_lab_norm):
            return {}

        def colorize_frame(self, window, center, ref):
            x = torch.relu(self.body(window))
            raw = self.head(torch.cat((x, center), dim=1))
            lum = torch.sigmoid(raw[:, 0:1])
            ab = torch.tanh(raw[:, 1:3]) * (127.0 / colorspace.AB_SCALE)
            return torch.cat((lum, ab), dim=1)

    model.register_arch("flat-test", FlatColorizer)
    try:
        arch = model.ArchSpec(kind="flat-test", window=3)
        state = model.new_state(arch)
        out = model.forward(state, clip.mono, clip.reference)
        assert out.shape == clip.truth.shape
        path = tmp_path / "flat.ckpt"
        model.save_checkpoint(state, path)
        loaded = model.load_checkpoint(path)
        assert torch.equal(loaded.theta, state.theta)
        assert loaded.arch.kind == "flat-test"
    finally:
        model._ARCH_BUILDERS.pop("flat-test", None)


def test_unknown_arch_kind_rejected():
    with pytest.raises(ParameterError):
        model.new_state(model.ArchSpec(kind="no-such-kind"))
