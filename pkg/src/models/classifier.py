#!/usr/bin/env python3
"""
Auxiliary classifier over the overlay S = I + C (or the cue map alone).
Used only during training; test-time decisions come from the cue map.
"""

import logging

import torch
from torch import nn

from ..core.config import ClassifierConfig
from ..monitoring.error import InputValidationError, ShapeError

logger = logging.getLogger(__name__)


def overlay(image: torch.Tensor, cue: torch.Tensor) -> torch.Tensor:
    """S = I + C, unclamped (range [-2, 2])"""
    if image.shape != cue.shape:
        raise ShapeError(f"image shape {tuple(image.shape)} does not match cue shape {tuple(cue.shape)}")
    return image + cue


def classifier_input(image: torch.Tensor, cue: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "overlay":
        return overlay(image, cue)
    if mode == "cue_only":
        return cue
    raise InputValidationError(f"unknown classifier input mode {mode!r}")


class AuxiliaryClassifier(nn.Module):
    """Four stride-2 conv stages, global average pooling, one logit"""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        stages = []
        in_channels = 3
        for width in config.backbone_widths:
            stages.extend([
                nn.Conv2d(in_channels, width, kernel_size=3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ])
            in_channels = width
        self.features = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_channels, 1)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        """Returns one logit per sample"""
        if inputs.dim() != 4 or inputs.shape[1] != 3:
            raise ShapeError(f"expected a batch of shape (N, 3, H, W), got {tuple(inputs.shape)}")
        pooled = self.pool(self.features(inputs)).flatten(1)
        return self.fc(pooled).squeeze(1)


def classify(clf: AuxiliaryClassifier, inputs: torch.Tensor) -> torch.Tensor:
    """Probability of spoof, q in (0, 1)"""
    return torch.sigmoid(clf(inputs))


def build_classifier(config: ClassifierConfig, seed: int) -> AuxiliaryClassifier:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return AuxiliaryClassifier(config)
