#!/usr/bin/env python3
"""
Versioned checkpoint container.

A checkpoint is a torch.save'd dict:
    format_version   int
    epoch            completed epochs
    global_step      optimizer updates applied
    settings         SpoofCueSettings.model_dump(mode="json")
    generator        generator state dict
    classifier       classifier state dict
    optimizer        optimizer state dict (None for exported inference weights)
    rng_state        torch CPU generator state
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import torch

from ..core.config import SpoofCueSettings
from ..models.classifier import AuxiliaryClassifier
from ..models.generator import SpoofCueGenerator
from ..monitoring.error import CheckpointError, ConfigurationError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    format_version: int
    epoch: int
    global_step: int
    settings: Dict[str, Any]
    generator: Dict[str, torch.Tensor]
    classifier: Dict[str, torch.Tensor]
    optimizer: Optional[Dict[str, Any]]
    rng_state: Optional[torch.Tensor]

    def restore_settings(self) -> SpoofCueSettings:
        try:
            return SpoofCueSettings.from_dump(self.settings)
        except ConfigurationError as e:
            raise CheckpointError(f"checkpoint carries invalid settings: {e}") from e


def save_checkpoint(
    path: Union[str, Path],
    generator: SpoofCueGenerator,
    classifier: AuxiliaryClassifier,
    optimizer: Optional[torch.optim.Optimizer],
    epoch: int,
    global_step: int,
    settings: SpoofCueSettings,
) -> Path:
    path = Path(path)
    checkpoint = Checkpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        epoch=epoch,
        global_step=global_step,
        settings=settings.model_dump(mode="json"),
        generator=generator.state_dict(),
        classifier=classifier.state_dict(),
        optimizer=optimizer.state_dict() if optimizer is not None else None,
        rng_state=torch.get_rng_state(),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    torch.save(asdict(checkpoint), tmp_path)
    tmp_path.replace(path)
    logger.info(f"Saved checkpoint {path} (epoch {epoch}, step {global_step})")
    return path


def load_checkpoint(path: Union[str, Path], device: Union[str, torch.device] = "cpu") -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}", details={"path": str(path)})
    try:
        data = torch.load(path, map_location=device, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    version = data.get("format_version") if isinstance(data, dict) else None
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {version!r} in {path}; expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        return Checkpoint(**data)
    except TypeError as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e


def restore_models(
    checkpoint: Checkpoint, device: Union[str, torch.device] = "cpu"
) -> Tuple[SpoofCueGenerator, AuxiliaryClassifier, SpoofCueSettings]:
    """Rebuild both networks from the stored settings and load their weights"""
    settings = checkpoint.restore_settings()
    generator = SpoofCueGenerator(settings.generator)
    classifier = AuxiliaryClassifier(settings.classifier)
    try:
        generator.load_state_dict(checkpoint.generator, strict=True)
        classifier.load_state_dict(checkpoint.classifier, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint weights do not match the stored configuration: {e}") from e
    return generator.to(device), classifier.to(device), settings
