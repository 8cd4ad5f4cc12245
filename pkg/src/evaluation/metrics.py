#!/usr/bin/env python3
"""
Presentation attack detection metrics.

    APCER per PAI   fraction of attack-type-t records decided live
    APCER           worst case over PAIs
    BPCER           fraction of live records decided spoof
    ACER            (APCER + BPCER) / 2
    HTER            (FRR + FAR) / 2 with all PAIs pooled

Rates are fractions in [0, 1]; percent formatting belongs to the CLI.
"""

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..data.manifest import LIVE, Label
from ..monitoring.error import InputValidationError, MetricsError
from .scoring import ScoreRecord

logger = logging.getLogger(__name__)

SINGLE_SCORE_FLOOR = 1e-6


@dataclass
class MetricsReport:
    apcer_per_pai: Dict[str, float]
    apcer: float
    bpcer: float
    acer: float
    threshold: float
    counts: Dict[str, int]
    hter: Optional[float] = None
    threshold_policy: str = "fixed"
    eer: Optional[float] = None
    classifier_accuracy: Optional[float] = None
    extras: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "MetricsReport":
        return cls(**data)

    def to_text(self) -> str:
        """Key-value text; one line per value"""
        lines = [
            f"threshold_policy: {self.threshold_policy}",
            f"threshold: {self.threshold!r}",
            f"apcer: {self.apcer!r}",
            f"bpcer: {self.bpcer!r}",
            f"acer: {self.acer!r}",
        ]
        if self.hter is not None:
            lines.append(f"hter: {self.hter!r}")
        if self.eer is not None:
            lines.append(f"dev_eer: {self.eer!r}")
        if self.classifier_accuracy is not None:
            lines.append(f"classifier_accuracy: {self.classifier_accuracy!r}")
        for attack_type, rate in sorted(self.apcer_per_pai.items()):
            lines.append(f"apcer[{attack_type}]: {rate!r}")
        for name, count in sorted(self.counts.items()):
            lines.append(f"count[{name}]: {count}")
        for key, value in sorted(self.extras.items()):
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> Tuple[Path, Path]:
        """Write <path> as key-value text and <path>.json as JSON"""
        text_path = Path(path)
        text_path.parent.mkdir(parents=True, exist_ok=True)
        json_path = text_path.with_suffix(".json")
        text_path.write_text(self.to_text(), encoding="utf-8")
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return text_path, json_path

    @classmethod
    def read_json(cls, path: Union[str, Path]) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _partition(
    records: Sequence[ScoreRecord], known_attacks: Optional[Iterable[str]] = None
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Live scores and spoof scores per PAI as float64 arrays"""
    live = [r.score for r in records if r.label is Label.LIVE]
    spoof_by_pai: Dict[str, List[float]] = defaultdict(list)
    known = set(known_attacks) if known_attacks is not None else None

    for record in records:
        if record.label is not Label.SPOOF:
            continue
        if not record.attack_type or record.attack_type == LIVE:
            raise MetricsError(f"spoof record {record.sample_id!r} carries no attack type")
        if known is not None and record.attack_type not in known:
            raise MetricsError(
                f"spoof record {record.sample_id!r} has unknown attack type {record.attack_type!r}",
                details={"known_attacks": sorted(known)},
            )
        spoof_by_pai[record.attack_type].append(record.score)

    if not live or not spoof_by_pai:
        raise MetricsError(
            f"metrics need both classes: {len(live)} live, "
            f"{sum(len(v) for v in spoof_by_pai.values())} spoof records"
        )
    return (
        np.asarray(live, dtype=np.float64),
        {attack_type: np.asarray(scores, dtype=np.float64) for attack_type, scores in spoof_by_pai.items()},
    )


def _pooled(spoof_by_pai: Dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([spoof_by_pai[attack_type] for attack_type in sorted(spoof_by_pai)])


def _check_threshold(threshold: float) -> None:
    if not threshold > 0:
        raise InputValidationError(f"threshold must be positive, got {threshold}")


def _error_rates(live: np.ndarray, spoof: np.ndarray, threshold: float) -> Tuple[float, float]:
    """(FRR, FAR): live decided spoof, spoof decided live"""
    _check_threshold(threshold)
    rejected = int(np.count_nonzero(live >= threshold))
    accepted = int(np.count_nonzero(spoof < threshold))
    return rejected / live.size, accepted / spoof.size


def compute_hter(records: Sequence[ScoreRecord], threshold: float) -> float:
    live, spoof_by_pai = _partition(records)
    frr, far = _error_rates(live, _pooled(spoof_by_pai), threshold)
    return (frr + far) / 2


def compute_acer_report(
    records: Sequence[ScoreRecord],
    threshold: float,
    known_attacks: Optional[Iterable[str]] = None,
    threshold_policy: str = "fixed",
) -> MetricsReport:
    live, spoof_by_pai = _partition(records, known_attacks)
    _check_threshold(threshold)

    apcer_per_pai = {
        attack_type: int(np.count_nonzero(scores < threshold)) / scores.size
        for attack_type, scores in sorted(spoof_by_pai.items())
    }
    bpcer = int(np.count_nonzero(live >= threshold)) / live.size
    apcer = max(apcer_per_pai.values())

    counts = {"live": int(live.size)}
    counts.update({attack_type: int(scores.size) for attack_type, scores in spoof_by_pai.items()})

    report = MetricsReport(
        apcer_per_pai=apcer_per_pai,
        apcer=apcer,
        bpcer=bpcer,
        acer=(apcer + bpcer) / 2,
        threshold=threshold,
        counts=counts,
        hter=compute_hter(records, threshold),
        threshold_policy=threshold_policy,
    )
    logger.info(
        f"Metrics at threshold {threshold:.6g}: APCER={report.apcer:.4f} "
        f"BPCER={report.bpcer:.4f} ACER={report.acer:.4f}"
    )
    return report


def _sweep(dev_records: Sequence[ScoreRecord]) -> Tuple[float, float, float]:
    """Returns (threshold, frr, far) at the equal-error midpoint"""
    live, spoof_by_pai = _partition(dev_records)
    spoof = _pooled(spoof_by_pai)
    scores = np.unique(np.concatenate([live, spoof]))

    if scores.size == 1:
        threshold = float(scores[0]) if scores[0] > 0 else SINGLE_SCORE_FLOOR
        frr, far = _error_rates(live, spoof, threshold)
        return threshold, frr, far

    n_live, n_spoof = live.size, spoof.size
    thresholds = (scores[:-1] + scores[1:]) / 2
    rejected = n_live - np.searchsorted(np.sort(live), thresholds, side="left")
    accepted = np.searchsorted(np.sort(spoof), thresholds, side="left")
    # |FRR - FAR| compared exactly in integers; argmin keeps the lowest midpoint on ties
    gaps = np.abs(rejected.astype(np.int64) * n_spoof - accepted.astype(np.int64) * n_live)
    best = int(np.argmin(gaps))
    return float(thresholds[best]), int(rejected[best]) / n_live, int(accepted[best]) / n_spoof


def select_threshold(dev_records: Sequence[ScoreRecord]) -> float:
    """Equal-error threshold over adjacent-score midpoints; ties go to the lowest"""
    threshold, frr, far = _sweep(dev_records)
    logger.info(f"Dev EER threshold {threshold:.6g} (FRR={frr:.4f}, FAR={far:.4f})")
    return threshold


def compute_eer(dev_records: Sequence[ScoreRecord]) -> Tuple[float, float]:
    """(equal error rate, threshold)"""
    threshold, frr, far = _sweep(dev_records)
    return (frr + far) / 2, threshold
