#!/usr/bin/env python3
"""
Dataset manifests, labeled samples and evaluation protocols.

Manifest files are UTF-8 JSON Lines. The first non-blank line is a header
    {"format": "spoofcue-manifest", "version": 1, "root": "<dir relative to the manifest>"}
followed by one record per sample:
    {"path": ..., "label": "live"|"spoof", "attack_type": ..., "subject_id": ...,
     "split": "train"|"dev"|"test", "crop_box": [left, top, right, bottom], "video_id": ...}
crop_box and video_id are optional. Unknown fields are ignored with a warning.
"""

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

from PIL import Image
from pydantic import BaseModel, Field, ValidationError

from ..monitoring.error import LabelConflictError, ManifestError, ProtocolError

logger = logging.getLogger(__name__)

LIVE = "live"
MANIFEST_FORMAT = "spoofcue-manifest"
MANIFEST_VERSION = 1
KNOWN_RECORD_FIELDS = {"path", "label", "attack_type", "subject_id", "split", "crop_box", "video_id"}
HEADER_FIELDS = {"format", "version", "root"}


class Label(IntEnum):
    """Binary ground truth; spoof is the positive class of the auxiliary classifier"""
    LIVE = 0
    SPOOF = 1

    @classmethod
    def parse(cls, value: Any) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered == "live":
                return cls.LIVE
            if lowered == "spoof":
                return cls.SPOOF
        if isinstance(value, int) and not isinstance(value, bool) and value in (0, 1):
            return cls(value)
        raise ValueError(f"label must be 'live', 'spoof', 0 or 1, got {value!r}")

    @property
    def tag(self) -> str:
        return "live" if self is Label.LIVE else "spoof"


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


def validate_attack_type(name: Any) -> str:
    """Attack types are short non-empty tags; "live" is reserved for bona fide samples"""
    if not isinstance(name, str) or not name.strip():
        raise ValueError(f"attack_type must be a non-empty string, got {name!r}")
    if any(ch.isspace() for ch in name.strip()):
        raise ValueError(f"attack_type must not contain whitespace, got {name!r}")
    return name.strip()


def normalize_path(path: Union[str, Path]) -> Path:
    return Path(os.path.abspath(os.fspath(path)))


@dataclass(frozen=True)
class LabeledSample:
    """One frame with its ground truth and protocol metadata"""
    image_path: Path
    label: Label
    attack_type: str
    subject_id: str
    split: Split
    crop_box: Optional[Tuple[int, int, int, int]] = None
    video_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "image_path", normalize_path(self.image_path))
        object.__setattr__(self, "label", Label.parse(self.label))
        object.__setattr__(self, "split", Split(self.split))
        object.__setattr__(self, "attack_type", validate_attack_type(self.attack_type))
        object.__setattr__(self, "subject_id", str(self.subject_id))

        if (self.label is Label.LIVE) != (self.attack_type == LIVE):
            raise LabelConflictError(
                f"label={self.label.tag} contradicts attack_type={self.attack_type!r}: "
                f"label live requires attack_type 'live' and vice versa"
            )

        if self.crop_box is not None:
            box = tuple(int(v) for v in self.crop_box)
            if len(box) != 4:
                raise ValueError(f"crop_box must have 4 integers, got {self.crop_box!r}")
            left, top, right, bottom = box
            if left < 0 or top < 0 or right <= left or bottom <= top:
                raise ValueError(f"crop_box {box} is not a valid (left, top, right, bottom) rectangle")
            object.__setattr__(self, "crop_box", box)

    @property
    def is_live(self) -> bool:
        return self.label is Label.LIVE


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable sample list with its root directory"""
    samples: Tuple[LabeledSample, ...]
    root: Path
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "root", normalize_path(self.root))
        if self.version != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest version {self.version}; expected {MANIFEST_VERSION}")

        seen = Counter((sample.split, sample.image_path) for sample in self.samples)
        duplicates = sorted(
            f"{split.value}:{path}" for (split, path), count in seen.items() if count > 1
        )
        if duplicates:
            raise ManifestError(
                f"duplicate image_path within a split: {duplicates[:10]}",
                details={"duplicates": duplicates},
            )

    def __len__(self) -> int:
        return len(self.samples)

    def by_split(self, split: Union[Split, str]) -> List[LabeledSample]:
        split = Split(split)
        return [sample for sample in self.samples if sample.split is split]

    def attack_types(self) -> List[str]:
        return sorted({sample.attack_type for sample in self.samples})

    def spoof_attack_types(self) -> List[str]:
        return [name for name in self.attack_types() if name != LIVE]

    def splits(self) -> List[Split]:
        present = {sample.split for sample in self.samples}
        return [split for split in Split if split in present]

    def sample_id(self, sample: LabeledSample) -> str:
        """Stable identifier: image path relative to the manifest root"""
        try:
            return sample.image_path.relative_to(self.root).as_posix()
        except ValueError:
            return sample.image_path.as_posix()


def _record_to_sample(record: Mapping[str, Any], root: Path, line_number: int) -> LabeledSample:
    missing = [name for name in ("path", "label", "attack_type", "subject_id", "split") if name not in record]
    if missing:
        raise ManifestError(f"record is missing fields {missing}", line_number=line_number)
    try:
        return LabeledSample(
            image_path=root / str(record["path"]),
            label=Label.parse(record["label"]),
            attack_type=record["attack_type"],
            subject_id=record["subject_id"],
            split=Split(record["split"]),
            crop_box=tuple(record["crop_box"]) if record.get("crop_box") is not None else None,
            video_id=str(record["video_id"]) if record.get("video_id") is not None else None,
        )
    except LabelConflictError as e:
        raise LabelConflictError(e.context.message, line_number=line_number) from e
    except (ValueError, TypeError) as e:
        raise ManifestError(str(e), line_number=line_number) from e


def _check_crop_bounds(sample: LabeledSample) -> Optional[str]:
    if sample.crop_box is None:
        return None
    try:
        with Image.open(sample.image_path) as image:
            width, height = image.size
    except OSError as e:
        return f"{sample.image_path}: crop_box cannot be verified ({e})"
    left, top, right, bottom = sample.crop_box
    if right > width or bottom > height:
        return f"{sample.image_path}: crop_box {sample.crop_box} exceeds image bounds {width}x{height}"
    return None


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """
    Parse a JSONL manifest, resolve relative paths against its root and check invariants.

    Raises:
        ManifestError: parse errors (with line number) or invariant violations (listing samples)
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}", details={"path": str(path)})

    header: Optional[Dict[str, Any]] = None
    root: Optional[Path] = None
    samples: List[LabeledSample] = []
    violations: List[str] = []
    first_violation_line: Optional[int] = None
    warned_fields = set()

    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON: {e.msg}", line_number=line_number) from e
            if not isinstance(record, dict):
                raise ManifestError("record must be a JSON object", line_number=line_number)

            if header is None:
                if "version" not in record or "path" in record:
                    raise ManifestError("first record must be the version header", line_number=line_number)
                if record["version"] != MANIFEST_VERSION:
                    raise ManifestError(
                        f"unsupported manifest version {record['version']!r}; expected {MANIFEST_VERSION}",
                        line_number=line_number,
                    )
                header = record
                root = normalize_path(path.parent / str(record.get("root", ".")))
                for name in set(record) - HEADER_FIELDS:
                    logger.warning(f"{path}: ignoring unknown header field {name!r}")
                continue

            for name in set(record) - KNOWN_RECORD_FIELDS - warned_fields:
                logger.warning(f"{path}:{line_number}: ignoring unknown field {name!r}")
                warned_fields.add(name)

            try:
                sample = _record_to_sample(record, root, line_number)
            except LabelConflictError as e:
                violations.append(str(e))
                first_violation_line = first_violation_line or line_number
                continue

            bounds_problem = _check_crop_bounds(sample)
            if bounds_problem:
                violations.append(f"line {line_number}: {bounds_problem}")
                first_violation_line = first_violation_line or line_number
                continue
            samples.append(sample)

    if header is None:
        raise ManifestError(f"manifest {path} is empty (missing version header)")
    if violations:
        raise ManifestError(
            f"{len(violations)} invariant violation(s) in {path}: " + "; ".join(violations[:10]),
            details={"violations": violations, "first_line": first_violation_line},
        )

    manifest = DatasetManifest(samples=tuple(samples), root=root, version=header["version"])
    logger.info(f"Loaded manifest {path}: {len(manifest)} samples, attack types {manifest.attack_types()}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """Write a manifest in the JSONL format read by load_manifest"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_dir = normalize_path(path.parent)
    root_ref = os.path.relpath(manifest.root, manifest_dir)

    with open(path, "w", encoding="utf-8") as handle:
        header = {"format": MANIFEST_FORMAT, "version": manifest.version, "root": Path(root_ref).as_posix()}
        handle.write(json.dumps(header) + "\n")
        for sample in manifest.samples:
            record: Dict[str, Any] = {
                "path": Path(os.path.relpath(sample.image_path, manifest.root)).as_posix(),
                "label": sample.label.tag,
                "attack_type": sample.attack_type,
                "subject_id": sample.subject_id,
                "split": sample.split.value,
            }
            if sample.crop_box is not None:
                record["crop_box"] = list(sample.crop_box)
            if sample.video_id is not None:
                record["video_id"] = sample.video_id
            handle.write(json.dumps(record) + "\n")
    return path


SampleFilter = Callable[[str, str, Split], bool]


@dataclass(frozen=True)
class EvalProtocol:
    """Train/test (and dev) partition rules over (attack_type, subject_id, split)"""
    name: str
    train_filter: SampleFilter
    test_filter: SampleFilter
    unseen_attacks: FrozenSet[str] = frozenset()
    dev_filter: Optional[SampleFilter] = None
    referenced_attacks: FrozenSet[str] = frozenset()
    referenced_splits: FrozenSet[Split] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "unseen_attacks", frozenset(self.unseen_attacks))
        if LIVE in self.unseen_attacks:
            raise ProtocolError("'live' cannot be an unseen attack")


def _split_filter(splits: Iterable[Split]) -> SampleFilter:
    allowed = frozenset(splits)
    return lambda attack_type, subject_id, split: split in allowed


def intra_protocol() -> EvalProtocol:
    """Train on the train split, test on the test split, dev split for thresholds"""
    return EvalProtocol(
        name="intra",
        train_filter=_split_filter([Split.TRAIN]),
        test_filter=_split_filter([Split.TEST]),
        dev_filter=_split_filter([Split.DEV]),
        referenced_splits=frozenset({Split.TRAIN, Split.TEST}),
    )


def unseen_attack_protocol(attacks: Iterable[str]) -> EvalProtocol:
    """Leave-attacks-out: the listed attacks never appear in train or dev"""
    unseen = frozenset(validate_attack_type(a) for a in attacks)
    if not unseen:
        raise ProtocolError("unseen attack protocol needs at least one attack type")
    return EvalProtocol(
        name="unseen:" + ",".join(sorted(unseen)),
        train_filter=_split_filter([Split.TRAIN]),
        test_filter=_split_filter([Split.TEST]),
        dev_filter=lambda attack_type, subject_id, split: split is Split.DEV and attack_type not in unseen,
        unseen_attacks=unseen,
        referenced_attacks=unseen,
        referenced_splits=frozenset({Split.TRAIN, Split.TEST}),
    )


class ProtocolDefinition(BaseModel):
    """JSON protocol file; attack whitelists apply to spoof types, live always passes"""
    name: str
    train_splits: List[Split] = Field(default_factory=lambda: [Split.TRAIN])
    test_splits: List[Split] = Field(default_factory=lambda: [Split.TEST])
    dev_splits: List[Split] = Field(default_factory=lambda: [Split.DEV])
    train_attacks: Optional[List[str]] = None
    test_attacks: Optional[List[str]] = None
    train_subjects: Optional[List[str]] = None
    test_subjects: Optional[List[str]] = None
    unseen_attacks: List[str] = Field(default_factory=list)

    def to_protocol(self) -> EvalProtocol:
        def make_filter(splits, attacks, subjects, exclude=frozenset()) -> SampleFilter:
            split_set = frozenset(splits)
            attack_set = frozenset(attacks) if attacks is not None else None
            subject_set = frozenset(subjects) if subjects is not None else None

            def accept(attack_type: str, subject_id: str, split: Split) -> bool:
                if split not in split_set or attack_type in exclude:
                    return False
                if attack_set is not None and attack_type != LIVE and attack_type not in attack_set:
                    return False
                return subject_set is None or subject_id in subject_set
            return accept

        unseen = frozenset(self.unseen_attacks)
        referenced = frozenset(self.train_attacks or []) | frozenset(self.test_attacks or []) | unseen
        return EvalProtocol(
            name=self.name,
            train_filter=make_filter(self.train_splits, self.train_attacks, self.train_subjects, exclude=unseen),
            test_filter=make_filter(self.test_splits, self.test_attacks, self.test_subjects),
            dev_filter=make_filter(self.dev_splits, self.train_attacks, self.train_subjects, exclude=unseen),
            unseen_attacks=unseen,
            referenced_attacks=referenced - {LIVE},
            referenced_splits=frozenset(self.train_splits) | frozenset(self.test_splits),
        )


def load_protocol(name_or_path: Union[str, Path]) -> EvalProtocol:
    """Accepts "intra", "unseen:<attack>[,<attack>...]" or a JSON protocol file"""
    text = str(name_or_path)
    if text == "intra":
        return intra_protocol()
    if text.startswith("unseen:"):
        return unseen_attack_protocol(a for a in text[len("unseen:"):].split(",") if a.strip())
    path = Path(text)
    if not path.is_file():
        raise ProtocolError(
            f"unknown protocol {text!r}: expected 'intra', 'unseen:<attacks>' or a JSON file path"
        )
    try:
        definition = ProtocolDefinition.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ProtocolError(f"invalid protocol file {path}: {e}") from e
    return definition.to_protocol()


def _matches(sample: LabeledSample, predicate: SampleFilter) -> bool:
    return predicate(sample.attack_type, sample.subject_id, sample.split)


def resolve_protocol(
    manifest: DatasetManifest, protocol: EvalProtocol
) -> Tuple[List[LabeledSample], List[LabeledSample]]:
    """
    Split a manifest into (train_set, test_set) under a protocol.

    Raises:
        ProtocolError: references to absent attacks/splits, empty sets, overlap, or an
        unseen attack that is missing from the test set
    """
    present_attacks = set(manifest.attack_types())
    missing_attacks = sorted(protocol.referenced_attacks - present_attacks)
    if missing_attacks:
        raise ProtocolError(f"protocol {protocol.name!r} references attack types absent from manifest: {missing_attacks}")
    missing_splits = sorted(s.value for s in protocol.referenced_splits - set(manifest.splits()))
    if missing_splits:
        raise ProtocolError(f"protocol {protocol.name!r} references empty splits: {missing_splits}")

    train_set = [
        sample for sample in manifest.samples
        if _matches(sample, protocol.train_filter) and sample.attack_type not in protocol.unseen_attacks
    ]
    test_set = [sample for sample in manifest.samples if _matches(sample, protocol.test_filter)]

    if not train_set:
        raise ProtocolError(f"protocol {protocol.name!r} selects an empty train set")
    if not test_set:
        raise ProtocolError(f"protocol {protocol.name!r} selects an empty test set")

    overlap = set(train_set) & set(test_set)
    if overlap:
        raise ProtocolError(
            f"protocol {protocol.name!r} selects {len(overlap)} samples for both train and test",
            details={"overlap": sorted(str(s.image_path) for s in overlap)[:10]},
        )

    test_attacks = {sample.attack_type for sample in test_set}
    absent_unseen = sorted(protocol.unseen_attacks - test_attacks)
    if absent_unseen:
        raise ProtocolError(f"unseen attacks {absent_unseen} do not occur in the test set")

    logger.info(
        f"Protocol {protocol.name}: {len(train_set)} train samples, {len(test_set)} test samples, "
        f"unseen attacks {sorted(protocol.unseen_attacks)}"
    )
    return train_set, test_set


def resolve_dev_set(manifest: DatasetManifest, protocol: EvalProtocol) -> List[LabeledSample]:
    """Dev partition used to select an equal-error threshold"""
    if protocol.dev_filter is None:
        raise ProtocolError(f"protocol {protocol.name!r} defines no dev partition")
    dev_set = [
        sample for sample in manifest.samples
        if _matches(sample, protocol.dev_filter) and sample.attack_type not in protocol.unseen_attacks
    ]
    if not dev_set:
        raise ProtocolError(f"protocol {protocol.name!r} selects an empty dev set")
    return dev_set
