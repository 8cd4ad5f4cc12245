"""Shared fixtures: tiny network configs and a small synthetic dataset."""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from src.core.config import SpoofCueSettings, SynthConfig
from src.data.synthetic import synth_dataset

TINY_OVERRIDES = {
    "generator": {
        "input_size": 32,
        "encoder_stage_widths": [4, 4, 8, 8, 8],
        "decoder_stage_widths": [8, 8, 8, 4, 4],
    },
    "classifier": {"backbone_widths": [4, 4, 8, 8]},
    "pipeline": {"patch_size": 32},
    "train": {"batch_size": 4, "epochs": 2, "log_every_steps": 1},
    "eval": {"batch_size": 4},
}


def tiny_settings(tmp_path=None, **sections) -> SpoofCueSettings:
    overrides = {name: dict(values) for name, values in TINY_OVERRIDES.items()}
    if tmp_path is not None:
        overrides["train"]["checkpoint_dir"] = str(tmp_path / "run")
    for name, values in sections.items():
        overrides.setdefault(name, {}).update(values)
    return SpoofCueSettings.from_config_file(None, overrides)


@pytest.fixture
def settings(tmp_path):
    return tiny_settings(tmp_path)


@pytest.fixture
def synthetic_manifest(tmp_path):
    """10 live + 10 spoof 32px images (moire, color_cast); 6/2/2 per class across splits"""
    config = SynthConfig(count=10, image_size=32, artifact_types=["moire", "color_cast"], seed=3)
    return synth_dataset(config, tmp_path / "synth")
