#!/usr/bin/env python3
"""
Config file discovery, output directories, devices and parameter fingerprints.
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Optional, Union

import torch
from torch import nn

logger = logging.getLogger(__name__)

CONFIG_CANDIDATES = (
    "spoofcue.env",
    "config/spoofcue.env",
)


def find_config_file(custom_path: Optional[str] = None) -> Optional[str]:
    """
    Find the configuration file to use.

    Returns:
        Path of the first existing candidate, or None for defaults plus environment only
    """
    if custom_path:
        if os.path.exists(custom_path):
            logger.info(f"Using custom config file: {custom_path}")
            return custom_path
        logger.warning(f"Custom config file not found: {custom_path}")

    for candidate in CONFIG_CANDIDATES:
        if os.path.exists(candidate):
            logger.info(f"Using config file: {candidate}")
            return candidate

    logger.info("No configuration file found. Using defaults and environment variables only.")
    return None


def get_output_directory(path: Union[str, Path]) -> Path:
    """Create (if needed) and return an output directory"""
    directory = Path(path)
    if not directory.exists():
        logger.info(f"Creating output directory {directory}")
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def resolve_device(name: str) -> torch.device:
    device = torch.device(name)
    if device.type == "cuda" and not torch.cuda.is_available():
        logger.warning(f"Device {name} requested but CUDA is unavailable; falling back to cpu")
        return torch.device("cpu")
    return device


def parameter_fingerprint(module: nn.Module) -> str:
    """SHA-256 over every state tensor (parameters and buffers) in key order"""
    digest = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        digest.update(key.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
