"""Line-delimited JSON training log (one record per optimizer step)."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Union

logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    regression: float
    triplet_per_tap: Dict[str, float] = field(default_factory=dict)
    triplet_count_per_tap: Dict[str, int] = field(default_factory=dict)
    auxiliary: float = 0.0
    total: float = 0.0
    duration_ms: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class StepLog:
    """Append-only JSONL writer with truncation support for resumed runs"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def reset(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def append(self, record: StepRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def read(self) -> List[Dict[str, Any]]:
        return list(self)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    yield json.loads(line)

    def truncate_after(self, step: int) -> None:
        """Drop records with step > `step` (records are 1-based step counts)"""
        kept = [record for record in self if record["step"] <= step]
        dropped = len(self.read()) - len(kept)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as handle:
            for record in kept:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        if dropped:
            logger.info(f"Dropped {dropped} step records beyond step {step} from {self.path}")
