"""Shared fixtures: the pretrained desk-scale model, cached across runs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import pytest
import torch

from chromatune import bench, model
from chromatune.data import ToyClipSpec, make_toy_clip

CACHE_DIR = Path(__file__).parent / ".cache"

# the two-color clip family used by the overfit regression anchor
OVERFIT_PALETTE = ((0.72, 0.45, 0.38), (0.38, 0.48, 0.72))
OVERFIT_EPOCHS = 300
OVERFIT_SIZE = 32


def _recipe_key(tag: str, payload: dict) -> Path:
    blob = json.dumps(payload, sort_keys=True).encode()
    digest = hashlib.sha256(blob).hexdigest()[:16]
    return CACHE_DIR / f"{tag}-{digest}.ckpt"


def _cached_state(path: Path, trainer) -> model.ModelState:
    if path.exists():
        try:
            return model.load_checkpoint(path)
        except Exception:
            path.unlink()
    state = trainer()
    model.save_checkpoint(state, path)
    return state


@pytest.fixture(scope="session")
def toy_recipe() -> bench.ToyRecipe:
    return bench.DEFAULT_TOY_RECIPE


@pytest.fixture(scope="session")
def toy_state(toy_recipe) -> model.ModelState:
    """The fixed-recipe pretrained model every tuning test starts from."""
    path = _recipe_key("toy", asdict(toy_recipe))
    return _cached_state(path, lambda: bench.pretrain_recipe(toy_recipe).state)


@pytest.fixture(scope="session")
def overfit_clip() -> object:
    return make_toy_clip(
        ToyClipSpec(height=OVERFIT_SIZE, width=OVERFIT_SIZE, frames=8,
                    palette=OVERFIT_PALETTE, seed=31)
    )


@pytest.fixture(scope="session")
def overfit_state(toy_recipe, overfit_clip) -> model.ModelState:
    """Model overfit to convergence on a pair of two-color clips."""
    payload = {
        "arch": asdict(toy_recipe.arch),
        "palette": OVERFIT_PALETTE,
        "epochs": OVERFIT_EPOCHS,
        "size": OVERFIT_SIZE,
    }

    def train():
        other = make_toy_clip(
            ToyClipSpec(height=OVERFIT_SIZE, width=OVERFIT_SIZE, frames=8,
                        palette=OVERFIT_PALETTE, seed=32)
        )
        return bench.pretrain_toy(
            toy_recipe.arch, [overfit_clip, other], epochs=OVERFIT_EPOCHS, seed=9
        ).state

    return _cached_state(_recipe_key("overfit2", payload), train)


@pytest.fixture(scope="session")
def tiny_arch() -> model.ArchSpec:
    """A <10k-parameter model for finite-difference gradient checks."""
    return model.ArchSpec(window=3, base_channels=4, feat_channels=8, levels=1,
                          init_seed=3)


@pytest.fixture(scope="session")
def eval_clip(toy_recipe):
    """Held-out clip (seed disjoint from the training seeds)."""
    return bench.toy_clip(toy_recipe, 1)


def seeded_image(seed: int, h: int = 24, w: int = 24) -> torch.Tensor:
    import numpy as np

    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.random((h, w, 3)))
