#!/usr/bin/env python3
"""
Input preparation: 8-bit normalization, patch sampling or face resizing,
and 1:1 live/spoof batch sampling.

Images travel through the pipeline as float32 HWC arrays in [-1, 1] and are
converted to CHW tensors at the dataset boundary.
"""

import hashlib
import logging
import math
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import Dataset, Sampler

from ..core.config import PipelineConfig
from ..monitoring.error import DatasetIOError, InputValidationError, ShapeError
from .manifest import Label, LabeledSample

logger = logging.getLogger(__name__)

PatchIndex = Tuple[int, int]


def normalize_image(raw: np.ndarray) -> np.ndarray:
    """Map 8-bit pixels to [-1, 1] with x / 127.5 - 1"""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[-1] != 3:
        raise ShapeError(f"expected an HxWx3 image, got shape {raw.shape}")
    return (raw.astype(np.float64) / 127.5 - 1.0).astype(np.float32)


def denormalize_image(image: np.ndarray) -> np.ndarray:
    """Inverse of normalize_image, rounded half up and clipped to uint8"""
    values = np.floor((np.asarray(image, dtype=np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(values, 0, 255).astype(np.uint8)


def load_image(sample: LabeledSample) -> np.ndarray:
    """Read an RGB image (cropped to the sample's face box) as uint8 HWC"""
    try:
        with Image.open(sample.image_path) as image:
            image = image.convert("RGB")
            if sample.crop_box is not None:
                image = image.crop(sample.crop_box)
            return np.asarray(image, dtype=np.uint8).copy()
    except OSError as e:
        raise DatasetIOError(
            f"cannot read image {sample.image_path}: {e}", details={"path": str(sample.image_path)}
        ) from e


def _resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.shape[0] == height and image.shape[1] == width:
        return image.astype(np.float32, copy=True)
    tensor = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
    resized = F.interpolate(tensor, size=(height, width), mode="bilinear", align_corners=False)
    return resized.squeeze(0).permute(1, 2, 0).contiguous().numpy()


def resize_face(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to size x size"""
    return _resize(image, size, size)


def _upscale_short_side(image: np.ndarray, size: int) -> np.ndarray:
    height, width = image.shape[:2]
    short = min(height, width)
    if short >= size:
        return image
    scale = size / short
    new_height = max(size, int(round(height * scale)))
    new_width = max(size, int(round(width * scale)))
    return _resize(image, new_height, new_width)


def sample_patch(image: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random size x size crop; images smaller than size are upscaled first"""
    image = _upscale_short_side(image, size)
    height, width = image.shape[:2]
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return image[top:top + size, left:left + size].copy()


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    image = _upscale_short_side(image, size)
    height, width = image.shape[:2]
    top = (height - size) // 2
    left = (width - size) // 2
    return image[top:top + size, left:left + size].copy()


def to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1).contiguous()


def eval_view_rng(raw: np.ndarray, seed: int) -> np.random.Generator:
    """Patch rng for evaluation views, keyed by the pixels so every entry point draws the same patches"""
    raw = np.ascontiguousarray(raw, dtype=np.uint8)
    key = int.from_bytes(hashlib.blake2b(raw.tobytes(), digest_size=8).digest(), "little")
    return np.random.default_rng([seed, raw.shape[0], raw.shape[1], key])


def prepare_train_view(image: np.ndarray, config: PipelineConfig, rng: np.random.Generator) -> np.ndarray:
    if config.input_mode == "resized":
        return resize_face(image, config.patch_size)
    return sample_patch(image, config.patch_size, rng)


def prepare_eval_views(image: np.ndarray, config: PipelineConfig, rng: np.random.Generator) -> List[np.ndarray]:
    """One center crop, or eval_patches random patches whose scores are averaged"""
    if config.input_mode == "resized":
        return [resize_face(image, config.patch_size)]
    if config.eval_patches == 1:
        return [center_crop(image, config.patch_size)]
    return [sample_patch(image, config.patch_size, rng) for _ in range(config.eval_patches)]


class FaceImageDataset(Dataset):
    """
    Map-style dataset over labeled samples.

    Training items are indexed by (sample_index, patch_seed) so that patch
    coordinates are fixed by the batch sampler, independent of worker scheduling.
    Evaluation items are indexed by sample index and return a stack of views;
    their patches depend only on the pixels and the pipeline seed.
    """

    def __init__(self, samples: Sequence[LabeledSample], config: PipelineConfig, train: bool = True):
        self.samples = list(samples)
        self.config = config
        self.train = train

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: Union[int, PatchIndex]):
        if isinstance(index, tuple):
            sample_index, patch_seed = index
        else:
            sample_index, patch_seed = int(index), int(index)
        sample = self.samples[sample_index]
        raw = load_image(sample)
        image = normalize_image(raw)

        if self.train:
            rng = np.random.default_rng([self.config.seed, patch_seed])
            view = to_tensor(prepare_train_view(image, self.config, rng))
        else:
            rng = eval_view_rng(raw, self.config.seed)
            view = torch.stack([to_tensor(v) for v in prepare_eval_views(image, self.config, rng)])
        return view, int(sample.label)


class BalancedBatchSampler(Sampler):
    """
    Yields batches of (sample_index, patch_seed) with exactly batch_size / 2 live
    and batch_size / 2 spoof entries. The majority class is visited in a fresh
    permutation every epoch; the minority class is drawn from concatenated
    permutations (resampling with replacement across the epoch).
    """

    def __init__(self, labels: Sequence[int], batch_size: int, seed: int = 0, balance: bool = True):
        if batch_size < 2 or batch_size % 2 != 0:
            raise InputValidationError(f"batch_size must be even and >= 2, got {batch_size}")
        self.labels = [int(label) for label in labels]
        self.live_indices = np.array([i for i, z in enumerate(self.labels) if z == Label.LIVE], dtype=np.int64)
        self.spoof_indices = np.array([i for i, z in enumerate(self.labels) if z == Label.SPOOF], dtype=np.int64)
        if len(self.live_indices) == 0 or len(self.spoof_indices) == 0:
            raise InputValidationError(
                f"balanced sampling needs both classes (live={len(self.live_indices)}, "
                f"spoof={len(self.spoof_indices)})"
            )
        self.batch_size = batch_size
        self.seed = seed
        self.balance = balance
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        if not self.balance:
            return math.ceil(len(self.labels) / self.batch_size)
        majority = max(len(self.live_indices), len(self.spoof_indices))
        return math.ceil(2 * majority / self.batch_size)

    @staticmethod
    def _draw(indices: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
        chunks = []
        drawn = 0
        while drawn < count:
            chunk = rng.permutation(indices)
            chunks.append(chunk)
            drawn += len(chunk)
        return np.concatenate(chunks)[:count]

    def __iter__(self) -> Iterator[List[PatchIndex]]:
        rng = np.random.default_rng([self.seed, self.epoch])
        num_batches = len(self)

        if not self.balance:
            order = rng.permutation(len(self.labels))
            seeds = rng.integers(0, 2 ** 62, size=len(order))
            for start in range(0, len(order), self.batch_size):
                yield [(int(i), int(s)) for i, s in zip(order[start:start + self.batch_size],
                                                         seeds[start:start + self.batch_size])]
            return

        half = self.batch_size // 2
        live = self._draw(self.live_indices, num_batches * half, rng)
        spoof = self._draw(self.spoof_indices, num_batches * half, rng)
        seeds = rng.integers(0, 2 ** 62, size=(num_batches, self.batch_size))
        for b in range(num_batches):
            members = np.concatenate([live[b * half:(b + 1) * half], spoof[b * half:(b + 1) * half]])
            yield [(int(i), int(s)) for i, s in zip(members, seeds[b])]


def make_balanced_sampler(
    samples: Sequence[LabeledSample], batch_size: int, seed: int, balance: bool = True
) -> BalancedBatchSampler:
    sampler = BalancedBatchSampler([int(s.label) for s in samples], batch_size, seed=seed, balance=balance)
    logger.info(
        f"Balanced sampler: {len(sampler.live_indices)} live, {len(sampler.spoof_indices)} spoof, "
        f"{len(sampler)} batches of {batch_size} per epoch"
    )
    return sampler


def steps_per_epoch(samples: Sequence[LabeledSample], batch_size: int, balance: bool = True) -> int:
    live = sum(1 for s in samples if s.is_live)
    spoof = len(samples) - live
    if not balance:
        return math.ceil(len(samples) / batch_size)
    return math.ceil(2 * max(live, spoof) / batch_size)


def collate_eval(batch) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Flatten per-sample view stacks: returns (views, labels, owner index per view)"""
    views, labels, owners = [], [], []
    for position, (stack, label) in enumerate(batch):
        views.append(stack)
        labels.append(label)
        owners.extend([position] * stack.shape[0])
    return torch.cat(views), torch.tensor(labels, dtype=torch.long), torch.tensor(owners, dtype=torch.long)


def load_views(paths: Sequence[str], config: PipelineConfig) -> List[torch.Tensor]:
    """Evaluation views for loose image files, identical to FaceImageDataset(train=False) views"""
    stacks = []
    for path in paths:
        try:
            with Image.open(path) as image:
                raw = np.asarray(image.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise DatasetIOError(f"cannot read image {path}: {e}", details={"path": str(path)}) from e
        views = prepare_eval_views(normalize_image(raw), config, eval_view_rng(raw, config.seed))
        stacks.append(torch.stack([to_tensor(v) for v in views]))
    return stacks
