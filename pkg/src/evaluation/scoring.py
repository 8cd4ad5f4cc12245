#!/usr/bin/env python3
"""
Test-time spoof scores from cue maps, decisions, video aggregation and score files.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import torch

from ..data.manifest import Label
from ..monitoring.error import DatasetIOError, InputValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    score: float
    label: Label
    attack_type: str

    def __post_init__(self):
        object.__setattr__(self, "label", Label.parse(self.label))
        object.__setattr__(self, "score", float(self.score))
        if not self.score >= 0:
            raise InputValidationError(f"score must be nonnegative, got {self.score} for {self.sample_id}")

    def to_dict(self) -> Dict:
        record = asdict(self)
        record["label"] = self.label.tag
        return record


def spoof_score(cue: torch.Tensor) -> float:
    """Element-wise mean of |C| over all channels and pixels"""
    return float(cue.abs().mean())


def spoof_scores(cue_maps: torch.Tensor) -> torch.Tensor:
    """Per-sample spoof scores for a batch of cue maps"""
    return cue_maps.abs().flatten(1).mean(dim=1)


def decide(score: float, threshold: float) -> Label:
    """Spoof iff score >= threshold"""
    if not threshold > 0:
        raise InputValidationError(f"threshold must be positive, got {threshold}")
    return Label.SPOOF if score >= threshold else Label.LIVE


def aggregate_video(frame_scores: Sequence[float], method: str = "mean") -> float:
    if len(frame_scores) == 0:
        raise InputValidationError("cannot aggregate an empty list of frame scores")
    if method == "mean":
        return float(np.mean(np.asarray(frame_scores, dtype=np.float64)))
    if method == "max":
        return float(max(frame_scores))
    raise InputValidationError(f"unknown video aggregation {method!r}")


def write_score_file(records: Iterable[ScoreRecord], path: Union[str, Path]) -> Path:
    """Line-delimited JSON: sample_id, score, label, attack_type"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict()) + "\n")
    return path


def read_score_file(path: Union[str, Path]) -> List[ScoreRecord]:
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(f"score file not found: {path}", details={"path": str(path)})
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                records.append(ScoreRecord(
                    sample_id=data["sample_id"],
                    score=data["score"],
                    label=data["label"],
                    attack_type=data["attack_type"],
                ))
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise InputValidationError(f"{path}:{line_number}: invalid score record: {e}") from e
    return records


def group_by_video(
    records: Sequence[ScoreRecord],
    video_ids: Sequence[Optional[str]],
    method: str = "mean",
) -> List[ScoreRecord]:
    """
    Collapse frame records sharing a video_id into one record per video.
    Records without a video_id pass through unchanged. Output order follows first occurrence.
    """
    if len(records) != len(video_ids):
        raise InputValidationError("records and video_ids must have equal length")

    grouped: Dict[str, List[ScoreRecord]] = {}
    order: List[Union[str, ScoreRecord]] = []
    for record, video_id in zip(records, video_ids):
        if video_id is None:
            order.append(record)
            continue
        if video_id not in grouped:
            grouped[video_id] = []
            order.append(video_id)
        grouped[video_id].append(record)

    result = []
    for item in order:
        if isinstance(item, ScoreRecord):
            result.append(item)
            continue
        frames = grouped[item]
        if len({(r.label, r.attack_type) for r in frames}) != 1:
            raise InputValidationError(f"video {item!r} mixes labels or attack types across frames")
        result.append(ScoreRecord(
            sample_id=item,
            score=aggregate_video([r.score for r in frames], method),
            label=frames[0].label,
            attack_type=frames[0].attack_type,
        ))
    return result
