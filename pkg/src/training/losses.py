#!/usr/bin/env python3
"""
Training objectives.

    regression   per-element-mean |C| over live samples
    triplet      batch-all triplet loss on L2-normalized taps, live anchors and positives
    auxiliary    binary cross-entropy of the classifier's spoof probability
    total        alpha1 * regression + alpha2 * sum(triplet per tap) + alpha3 * auxiliary
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

import torch

from ..core.config import LossWeights
from ..monitoring.error import NonFiniteLossError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12
PROB_EPS = 1e-7


@dataclass
class LossBreakdown:
    """Scalar loss components of one step"""
    regression: float
    triplet_per_tap: Dict[str, float]
    auxiliary: float
    total: float
    triplet_count_per_tap: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "regression": self.regression,
            "triplet_per_tap": dict(self.triplet_per_tap),
            "triplet_count_per_tap": dict(self.triplet_count_per_tap),
            "auxiliary": self.auxiliary,
            "total": self.total,
        }


@dataclass
class LossTerms:
    """Differentiable loss components"""
    regression: torch.Tensor
    triplet_per_tap: Dict[str, torch.Tensor]
    triplet_count_per_tap: Dict[str, int]
    auxiliary: torch.Tensor
    total: torch.Tensor

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            regression=float(self.regression.detach()),
            triplet_per_tap={k: float(v.detach()) for k, v in self.triplet_per_tap.items()},
            auxiliary=float(self.auxiliary.detach()),
            total=float(self.total.detach()),
            triplet_count_per_tap=dict(self.triplet_count_per_tap),
        )


def regression_loss(cue_maps: torch.Tensor, labels: torch.Tensor, mode: str = "live_only") -> torch.Tensor:
    """
    Mean over live samples of the per-element mean |C|; exactly 0 without live samples.
    In live_and_spoof mode spoof maps are additionally pulled toward an all-one map
    and the mean runs over every sample.
    """
    labels = labels.to(cue_maps.device)
    live = (labels == 0).nonzero(as_tuple=True)[0]

    if mode == "live_and_spoof":
        targets = (labels != 0).to(cue_maps.dtype).view(-1, *([1] * (cue_maps.dim() - 1)))
        return (cue_maps - targets).abs().flatten(1).mean(dim=1).mean()

    if live.numel() == 0:
        return cue_maps.new_zeros(())
    return cue_maps.index_select(0, live).abs().flatten(1).mean(dim=1).mean()


def pairwise_distances(features: torch.Tensor) -> torch.Tensor:
    """Euclidean distances between L2-normalized rows; symmetric, zero diagonal, in [0, 2]"""
    squared_norm = features.pow(2).sum(dim=1, keepdim=True)
    if logger.isEnabledFor(logging.DEBUG) and bool((squared_norm == 0).any()):
        logger.debug(f"pairwise_distances: {int((squared_norm == 0).sum())} zero-norm feature vector(s)")
    unit = features / torch.sqrt(squared_norm + NORM_EPS)

    diff = unit.unsqueeze(1) - unit.unsqueeze(0)
    squared = diff.pow(2).sum(dim=2)
    # sqrt has an infinite derivative at 0
    zero = (squared == 0).to(squared.dtype)
    return torch.sqrt(squared + zero * NORM_EPS) * (1.0 - zero)


def _triplet_masks(labels: torch.Tensor, distances: torch.Tensor, margin: float) -> Tuple[torch.Tensor, torch.Tensor]:
    labels = labels.to(distances.device)
    live = labels == 0
    spoof = ~live
    batch = labels.shape[0]
    distinct = ~torch.eye(batch, dtype=torch.bool, device=distances.device)

    valid = (live.view(-1, 1, 1) & live.view(1, -1, 1) & distinct.unsqueeze(2) & spoof.view(1, 1, -1))
    hinge = distances.unsqueeze(2) - distances.unsqueeze(1) + margin
    return hinge, valid & (hinge > 0)


def mine_triplets(labels: torch.Tensor, distances: torch.Tensor, margin: float) -> List[Tuple[int, int, int]]:
    """All (anchor, positive, negative) with live anchor/positive, spoof negative and positive hinge"""
    _, active = _triplet_masks(labels, distances, margin)
    return [tuple(int(i) for i in triple) for triple in active.nonzero().tolist()]


def triplet_loss(features: torch.Tensor, labels: torch.Tensor, margin: float) -> Tuple[torch.Tensor, int]:
    """Mean hinge over active triplets, and their count; (0, 0) when none are mined"""
    distances = pairwise_distances(features)
    hinge, active = _triplet_masks(labels, distances, margin)
    count = int(active.sum())
    if count == 0:
        return features.new_zeros(()), 0
    return hinge[active].sum() / count, count


def classification_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy; z = 1 is spoof"""
    q = probabilities.clamp(PROB_EPS, 1.0 - PROB_EPS)
    z = labels.to(q.dtype).to(q.device)
    return -(z * torch.log(q) + (1.0 - z) * torch.log(1.0 - q)).mean()


def _check_finite(components: Mapping[str, torch.Tensor]) -> None:
    values = {name: float(value.detach()) for name, value in components.items()}
    bad = [name for name, value in values.items() if not math.isfinite(value)]
    if bad:
        raise NonFiniteLossError(f"non-finite loss components: {bad}", components=values)


def total_loss(
    regression: torch.Tensor,
    triplet_per_tap: Mapping[str, torch.Tensor],
    auxiliary: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    components = {"regression": regression, "auxiliary": auxiliary}
    components.update({f"triplet_{name}": value for name, value in triplet_per_tap.items()})
    _check_finite(components)

    triplet_sum = sum(triplet_per_tap.values(), regression.new_zeros(()))
    total = weights.alpha1 * regression + weights.alpha2 * triplet_sum + weights.alpha3 * auxiliary
    _check_finite({"total": total})
    return total


def compute_losses(
    cue_maps: torch.Tensor,
    taps: Mapping[str, torch.Tensor],
    probabilities: torch.Tensor,
    labels: torch.Tensor,
    weights: LossWeights,
    margin: float,
) -> LossTerms:
    regression = regression_loss(cue_maps, labels, weights.regression_mode)
    triplet_per_tap, counts = {}, {}
    for name, features in taps.items():
        triplet_per_tap[name], counts[name] = triplet_loss(features, labels, margin)
    auxiliary = classification_loss(probabilities, labels)
    total = total_loss(regression, triplet_per_tap, auxiliary, weights)
    return LossTerms(regression, triplet_per_tap, counts, auxiliary, total)
