#!/usr/bin/env python3
"""
Spoof cue generator: a ResNet18-style encoder and a five-block residual decoder
with skip connections, producing a cue map the size of the input in [-1, 1].

Tap layers (pooled features for the triplet loss):
    E5      deepest encoder stage
    D1..D4  decoder blocks one to four
    SC      the cue map itself
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models.resnet import BasicBlock

from ..core.config import GeneratorConfig
from ..monitoring.error import CheckpointError, ShapeError

logger = logging.getLogger(__name__)

DOWNSAMPLE_FACTOR = 32


@dataclass
class GeneratorOutput:
    cue_map: torch.Tensor
    taps: "OrderedDict[str, torch.Tensor]"


def _make_stage(inplanes: int, planes: int, stride: int, blocks: int = 2) -> nn.Sequential:
    downsample = None
    if stride != 1 or inplanes != planes:
        downsample = nn.Sequential(
            nn.Conv2d(inplanes, planes, kernel_size=1, stride=stride, bias=False),
            nn.BatchNorm2d(planes),
        )
    layers = [BasicBlock(inplanes, planes, stride=stride, downsample=downsample)]
    layers.extend(BasicBlock(planes, planes) for _ in range(blocks - 1))
    return nn.Sequential(*layers)


class ResNetEncoder(nn.Module):
    """ResNet18 layout; parameter names match torchvision's resnet18 minus fc"""

    def __init__(self, widths: Sequence[int]):
        super().__init__()
        stem, w1, w2, w3, w4 = widths
        self.conv1 = nn.Conv2d(3, stem, kernel_size=7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(stem)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        self.layer1 = _make_stage(stem, w1, stride=1)
        self.layer2 = _make_stage(w1, w2, stride=2)
        self.layer3 = _make_stage(w2, w3, stride=2)
        self.layer4 = _make_stage(w3, w4, stride=2)

        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        """Returns [stem, E2, E3, E4, E5] feature maps"""
        stem = self.relu(self.bn1(self.conv1(x)))
        e2 = self.layer1(self.maxpool(stem))
        e3 = self.layer2(e2)
        e4 = self.layer3(e3)
        e5 = self.layer4(e4)
        return [stem, e2, e3, e4, e5]


class DecoderResidualBlock(nn.Module):
    """Nearest 2x upsample, 2x2 conv, optional skip concat, residual body with 1x1 shortcut"""

    def __init__(self, in_channels: int, out_channels: int, skip_channels: int = 0):
        super().__init__()
        self.up_conv = nn.Conv2d(in_channels, out_channels, kernel_size=2)
        merged = out_channels + skip_channels
        self.conv1 = nn.Conv2d(merged, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Conv2d(merged, out_channels, kernel_size=1)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor, skip: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        # pad right/bottom so the even kernel keeps the upsampled size
        x = self.up_conv(F.pad(x, (0, 1, 0, 1)))
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class SpoofCueGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        enc = list(config.encoder_stage_widths)
        dec = list(config.decoder_stage_widths)
        self.encoder = ResNetEncoder(enc)

        # D1..D4 pair with E4, E3, E2 and the stem output; D5 has no skip
        skips = [enc[3], enc[2], enc[1], enc[0], 0]
        inputs = [enc[4]] + dec[:4]
        self.decoder = nn.ModuleList(
            DecoderResidualBlock(inputs[i], dec[i], skips[i]) for i in range(5)
        )
        self.head = nn.Conv2d(dec[4], 3, kernel_size=1)
        self.tanh = nn.Tanh()
        self.tap_layers = list(config.tap_layers)

    def tap_widths(self) -> Dict[str, int]:
        enc = self.config.encoder_stage_widths
        dec = self.config.decoder_stage_widths
        widths = {"E5": enc[4], "SC": 3}
        widths.update({f"D{i + 1}": dec[i] for i in range(4)})
        return {name: widths[name] for name in self.tap_layers}

    def forward(self, images: torch.Tensor, tap_layers: Optional[Sequence[str]] = None) -> GeneratorOutput:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected a batch of shape (N, 3, H, W), got {tuple(images.shape)}")
        height, width = images.shape[-2:]
        if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
            raise ShapeError(
                f"input spatial size {height}x{width} must be divisible by {DOWNSAMPLE_FACTOR}"
            )
        wanted = list(tap_layers) if tap_layers is not None else self.tap_layers

        stem, e2, e3, e4, e5 = self.encoder(images)
        features = {"E5": e5}
        x = e5
        for index, (block, skip) in enumerate(zip(self.decoder, (e4, e3, e2, stem, None))):
            x = block(x, skip)
            features[f"D{index + 1}"] = x
        cue_map = self.tanh(self.head(x))
        features["SC"] = cue_map

        taps = OrderedDict((name, features[name].mean(dim=(2, 3))) for name in wanted)
        return GeneratorOutput(cue_map=cue_map, taps=taps)


def load_pretrained_encoder(generator: SpoofCueGenerator, path: str) -> None:
    """Load a torchvision resnet18 state dict into the encoder (fc weights ignored)"""
    weights_path = Path(path)
    if not weights_path.is_file():
        raise CheckpointError(f"pretrained encoder weights not found: {weights_path}")
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read pretrained encoder weights {weights_path}: {e}") from e

    state = {key: value for key, value in state.items() if not key.startswith("fc.")}
    try:
        generator.encoder.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"pretrained encoder weights do not match the encoder: {e}") from e
    logger.info(f"Loaded pretrained encoder weights from {weights_path}")


def build_generator(config: GeneratorConfig, seed: int) -> SpoofCueGenerator:
    """Deterministic construction: the global torch RNG is left untouched"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = SpoofCueGenerator(config)
    if config.use_pretrained_encoder:
        load_pretrained_encoder(generator, config.pretrained_encoder_path)
    parameter_count = sum(p.numel() for p in generator.parameters())
    logger.debug(f"Built generator with {parameter_count} parameters (seed {seed})")
    return generator
