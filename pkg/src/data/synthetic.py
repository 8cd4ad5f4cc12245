#!/usr/bin/env python3
"""
Procedural live/spoof image generator.

Live images are smooth low-frequency color fields with a soft elliptical
face-like region. Spoof images start from the same kind of base and add one
artifact: moire (high-frequency sinusoidal interference), color_cast (global
channel shift) or banding (horizontal intensity stripes).
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image

from ..core.config import SynthConfig
from ..monitoring.error import DatasetIOError, InputValidationError
from ..monitoring.performance import timed_operation
from .manifest import LIVE, DatasetManifest, Label, LabeledSample, Split, write_manifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
TRAIN_FRACTION = 0.6
DEV_FRACTION = 0.2

# Peak artifact amplitudes in 8-bit units at strength 1
MOIRE_AMPLITUDE = 40.0
COLOR_CAST_AMPLITUDE = 50.0
BANDING_AMPLITUDE = 30.0


def render_live_base(size: int, rng: np.random.Generator) -> np.ndarray:
    """Float HWC image in [0, 255]: smooth background plus a soft elliptical face"""
    grid = rng.uniform(40, 215, size=(4, 4, 3)).astype(np.uint8)
    background = np.asarray(
        Image.fromarray(grid).resize((size, size), Image.Resampling.BILINEAR), dtype=np.float64
    )

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size * rng.uniform(0.4, 0.6)
    cx = size * rng.uniform(0.4, 0.6)
    ry = size * rng.uniform(0.28, 0.4)
    rx = ry * rng.uniform(0.65, 0.85)
    distance = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2
    mask = np.clip(1.5 - distance, 0.0, 1.0)[..., None]

    skin = np.array([rng.uniform(150, 230), rng.uniform(110, 180), rng.uniform(90, 150)])
    shading = 1.0 - 0.15 * (ys - cy)[..., None] / size
    face = skin[None, None, :] * shading
    return background * (1.0 - mask) + face * mask


def apply_artifact(base: np.ndarray, artifact: str, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Add one spoof artifact to a float [0, 255] image"""
    size_y, size_x = base.shape[:2]
    ys, xs = np.mgrid[0:size_y, 0:size_x].astype(np.float64)

    if artifact == "moire":
        frequency = rng.uniform(0.25, 0.45)
        angle = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        pattern = np.sin(2 * np.pi * frequency * (xs * np.cos(angle) + ys * np.sin(angle)) + phase)
        return base + MOIRE_AMPLITUDE * strength * pattern[..., None]

    if artifact == "color_cast":
        direction = rng.uniform(-1.0, 1.0, size=3)
        direction /= max(np.abs(direction).max(), 1e-6)
        return base + COLOR_CAST_AMPLITUDE * strength * direction[None, None, :]

    if artifact == "banding":
        period = int(rng.integers(6, 13))
        offset = int(rng.integers(0, period))
        stripes = np.where(((ys + offset) % period) < period / 2, 1.0, -1.0)
        return base + BANDING_AMPLITUDE * strength * stripes[..., None]

    raise InputValidationError(f"unknown artifact type {artifact!r}")


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(image + 0.5), 0, 255).astype(np.uint8)


def split_for_index(index: int, count: int, split_counts: Optional[Sequence[int]] = None) -> Split:
    if split_counts is not None:
        n_train, n_dev, _ = split_counts
        if index < n_train:
            return Split.TRAIN
        return Split.DEV if index < n_train + n_dev else Split.TEST
    if index < int(round(TRAIN_FRACTION * count)):
        return Split.TRAIN
    if index < int(round((TRAIN_FRACTION + DEV_FRACTION) * count)):
        return Split.DEV
    return Split.TEST


def artifact_for_index(index: int, split: Split, config: SynthConfig) -> str:
    """Round-robin artifact choice; held-out artifacts only enter the test split"""
    if split is Split.TEST:
        pool = config.artifact_types
    else:
        pool = [name for name in config.artifact_types if name not in config.held_out_artifacts]
    return pool[index % len(pool)]


@timed_operation("synth_dataset")
def synth_dataset(config: SynthConfig, out_dir: Union[str, Path]) -> DatasetManifest:
    """
    Write `count` live and `count` spoof PNG images plus manifest.jsonl into out_dir.
    Spoof artifacts are assigned round-robin over config.artifact_types; artifacts in
    config.held_out_artifacts appear in the test split only.
    """
    out_dir = Path(out_dir)
    samples = []
    try:
        for label in (Label.LIVE, Label.SPOOF):
            for index in range(config.count):
                rng = np.random.default_rng([config.seed, index, int(label)])
                image = render_live_base(config.image_size, rng)
                split = split_for_index(index, config.count, config.split_counts)
                if label is Label.SPOOF:
                    attack_type = artifact_for_index(index, split, config)
                    image = apply_artifact(image, attack_type, config.artifact_strength, rng)
                else:
                    attack_type = LIVE

                path = out_dir / split.value / label.tag / f"{index:05d}_{attack_type}.png"
                path.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(_to_uint8(image)).save(path, format="PNG")

                samples.append(LabeledSample(
                    image_path=path,
                    label=label,
                    attack_type=attack_type,
                    subject_id=f"synth-{label.tag}-{index:05d}",
                    split=split,
                ))
        manifest = DatasetManifest(samples=tuple(samples), root=out_dir)
        write_manifest(manifest, out_dir / MANIFEST_NAME)
    except OSError as e:
        raise DatasetIOError(f"failed writing synthetic dataset to {out_dir}: {e}") from e

    logger.info(
        f"Synthetic dataset: {config.count} live + {config.count} spoof images "
        f"({', '.join(config.artifact_types)}) at {config.image_size}px in {out_dir}"
    )
    return manifest
