#!/usr/bin/env python3
"""
Configuration Management with Environment Variables and flat key-value files.

Features:
- One pydantic-settings section per component (generator, classifier, losses, pipeline, ...)
- Flat KEY=VALUE config files loaded through python-dotenv, one env prefix per section
- Precedence: explicit overrides (CLI flags) > process environment > config file > defaults
- Validation report with errors, warnings and recommendations
- Logging configuration
"""

import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Type, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from ..monitoring.error import ConfigurationError

# Load environment variables from .env file if it exists
load_dotenv()

logger = logging.getLogger(__name__)

TAP_LAYER_NAMES = ("E5", "D1", "D2", "D3", "D4", "SC")
ARTIFACT_TYPES = ("moire", "color_cast", "banding")


def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _section_config(prefix: str) -> SettingsConfigDict:
    return SettingsConfigDict(
        env_prefix=prefix,
        case_sensitive=False,
        extra="ignore",
        env_file_encoding="utf-8",
    )


class GeneratorConfig(BaseSettings):
    """Spoof cue generator architecture"""
    input_size: int = Field(224, description="Training input side length in pixels")
    encoder_stage_widths: Annotated[List[int], NoDecode] = Field(
        default_factory=lambda: [64, 64, 128, 256, 512],
        description="Stem width followed by the four encoder residual stage widths",
    )
    decoder_stage_widths: Annotated[List[int], NoDecode] = Field(
        default_factory=lambda: [256, 128, 64, 64, 64],
        description="Widths of the five decoder residual blocks D1-D5",
    )
    use_pretrained_encoder: bool = Field(False, description="Load ImageNet ResNet18 encoder weights")
    pretrained_encoder_path: Optional[str] = Field(None, description="Path to a resnet18 state dict")
    tap_layers: Annotated[List[str], NoDecode] = Field(
        default_factory=lambda: ["E5", "D1", "D2", "D3", "D4"],
        description="Layers whose pooled features receive the triplet loss",
    )

    model_config = _section_config("GENERATOR_")

    @field_validator("encoder_stage_widths", "decoder_stage_widths", "tap_layers", mode="before")
    @classmethod
    def parse_csv(cls, v):
        return _split_csv(v)

    @field_validator("input_size")
    @classmethod
    def check_input_size(cls, v):
        if v <= 0 or v % 32 != 0:
            raise ValueError(f"input_size must be a positive multiple of 32, got {v}")
        return v

    @field_validator("encoder_stage_widths", "decoder_stage_widths")
    @classmethod
    def check_widths(cls, v):
        if len(v) != 5 or any(w <= 0 for w in v):
            raise ValueError(f"expected 5 positive channel counts, got {v}")
        return v

    @field_validator("tap_layers")
    @classmethod
    def check_tap_layers(cls, v):
        layers = [name.upper() for name in v]
        if not layers:
            raise ValueError("tap_layers must not be empty")
        unknown = [name for name in layers if name not in TAP_LAYER_NAMES]
        if unknown:
            raise ValueError(f"unknown tap layers {unknown}; valid: {list(TAP_LAYER_NAMES)}")
        if len(set(layers)) != len(layers):
            raise ValueError(f"duplicate tap layers in {layers}")
        return layers

    @model_validator(mode="after")
    def check_pretrained(self):
        if self.use_pretrained_encoder and not self.pretrained_encoder_path:
            raise ValueError("use_pretrained_encoder requires pretrained_encoder_path")
        return self


class ClassifierConfig(BaseSettings):
    """Auxiliary classifier configuration"""
    input_mode: Literal["overlay", "cue_only"] = Field("overlay", description="Feed I + C or C alone")
    backbone_widths: Annotated[List[int], NoDecode] = Field(
        default_factory=lambda: [32, 64, 128, 256],
        description="Channel widths of the four strided conv stages",
    )

    model_config = _section_config("CLASSIFIER_")

    @field_validator("backbone_widths", mode="before")
    @classmethod
    def parse_csv(cls, v):
        return _split_csv(v)

    @field_validator("backbone_widths")
    @classmethod
    def check_widths(cls, v):
        if len(v) != 4 or any(w <= 0 for w in v):
            raise ValueError(f"expected 4 positive channel counts, got {v}")
        return v


class LossWeights(BaseSettings):
    """Weights of the regression, triplet and auxiliary losses"""
    alpha1: float = Field(5.0, description="Regression loss weight")
    alpha2: float = Field(1.0, description="Triplet loss weight (per tap layer)")
    alpha3: float = Field(5.0, description="Auxiliary classification loss weight")
    regression_mode: Literal["live_only", "live_and_spoof"] = Field(
        "live_only", description="Supervise live maps only, or also push spoof maps to one"
    )

    model_config = _section_config("LOSS_")

    @model_validator(mode="after")
    def check_weights(self):
        weights = (self.alpha1, self.alpha2, self.alpha3)
        if any(w < 0 for w in weights):
            raise ValueError(f"loss weights must be nonnegative, got {weights}")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one loss weight must be positive")
        return self


class TripletConfig(BaseSettings):
    """Triplet loss configuration"""
    margin: float = Field(0.5, description="Triplet margin m")
    mining: Literal["batch_all"] = Field("batch_all", description="Online mining strategy")

    model_config = _section_config("TRIPLET_")

    @field_validator("margin")
    @classmethod
    def check_margin(cls, v):
        if v <= 0:
            raise ValueError(f"margin must be positive, got {v}")
        return v


class PipelineConfig(BaseSettings):
    """Input preparation configuration"""
    input_mode: Literal["patched", "resized"] = Field("patched", description="Random patches or resized faces")
    patch_size: int = Field(224, description="Patch / resize side length")
    balance_classes: bool = Field(True, description="Resample to a 1:1 live-spoof ratio")
    seed: int = Field(0, description="Seed for patch sampling and batch order")
    eval_patches: int = Field(1, description="1 = center crop at eval; k > 1 = k random patches averaged")
    num_workers: int = Field(0, description="Batch prefetch workers (order preserving)")

    model_config = _section_config("PIPELINE_")

    @field_validator("patch_size")
    @classmethod
    def check_patch_size(cls, v):
        if v <= 0 or v % 32 != 0:
            raise ValueError(f"patch_size must be a positive multiple of 32, got {v}")
        return v

    @field_validator("eval_patches")
    @classmethod
    def check_eval_patches(cls, v):
        if v < 1:
            raise ValueError("eval_patches must be at least 1")
        return v

    @field_validator("num_workers")
    @classmethod
    def check_workers(cls, v):
        if v < 0:
            raise ValueError("num_workers must be nonnegative")
        return v


class EvalConfig(BaseSettings):
    """Scoring and evaluation configuration"""
    threshold: float = Field(0.01, description="Spoof score decision threshold")
    threshold_policy: Literal["fixed", "dev_eer"] = Field("fixed", description="Fixed threshold or dev-set EER")
    video_aggregation: Literal["mean", "max"] = Field("mean", description="Frame score aggregation per video")
    batch_size: int = Field(32, description="Inference batch size")

    model_config = _section_config("EVAL_")

    @field_validator("threshold")
    @classmethod
    def check_threshold(cls, v):
        if v <= 0:
            raise ValueError(f"threshold must be positive, got {v}")
        return v

    @field_validator("batch_size")
    @classmethod
    def check_batch_size(cls, v):
        if v < 1:
            raise ValueError("batch_size must be at least 1")
        return v


class TrainConfig(BaseSettings):
    """Optimization loop configuration"""
    batch_size: int = Field(32, description="Training batch size (even)")
    epochs: int = Field(20, description="Number of training epochs")
    base_lr: float = Field(1e-3, description="Learning rate after warm-up")
    decay_factor: float = Field(0.95, description="Step decay factor")
    decay_every_steps: int = Field(600, description="Steps between decays")
    warmup: bool = Field(True, description="Linear warm-up over the first epoch")
    adam_beta1: float = Field(0.9, description="Adam first moment decay")
    adam_beta2: float = Field(0.999, description="Adam second moment decay")
    adam_eps: float = Field(1e-8, description="Adam epsilon")
    seed: int = Field(0, description="Initialization seed")
    checkpoint_dir: str = Field("runs/spoofcue", description="Output directory for checkpoints and logs")
    checkpoint_every_epochs: int = Field(1, description="Periodic checkpoint interval in epochs")
    log_every_steps: int = Field(10, description="Console logging interval in steps")
    device: str = Field("cpu", description="Torch device")

    model_config = _section_config("TRAIN_")

    @field_validator("batch_size")
    @classmethod
    def check_batch_size(cls, v):
        if v < 2 or v % 2 != 0:
            raise ValueError(f"batch_size must be even and >= 2 for 1:1 batches, got {v}")
        return v

    @field_validator("epochs")
    @classmethod
    def check_epochs(cls, v):
        if v < 0:
            raise ValueError("epochs must be nonnegative")
        return v

    @field_validator("base_lr")
    @classmethod
    def check_lr(cls, v):
        if v <= 0:
            raise ValueError(f"base_lr must be positive, got {v}")
        return v

    @field_validator("decay_factor")
    @classmethod
    def check_decay(cls, v):
        if not 0 < v <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {v}")
        return v

    @field_validator("decay_every_steps", "checkpoint_every_epochs", "log_every_steps")
    @classmethod
    def check_positive(cls, v):
        if v < 1:
            raise ValueError("value must be at least 1")
        return v


class SynthConfig(BaseSettings):
    """Synthetic dataset generation configuration"""
    count: int = Field(100, description="Images per class")
    image_size: int = Field(96, description="Image side length in pixels")
    artifact_types: Annotated[List[str], NoDecode] = Field(
        default_factory=lambda: list(ARTIFACT_TYPES),
        description="Spoof artifact models, assigned round-robin",
    )
    held_out_artifacts: Annotated[List[str], NoDecode] = Field(
        default_factory=list,
        description="Artifact types generated for the test split only",
    )
    split_counts: Annotated[Optional[List[int]], NoDecode] = Field(
        None, description="Images per class in train, dev and test; replaces the 60/20/20 split of count"
    )
    artifact_strength: float = Field(0.6, description="Artifact amplitude in (0, 1]")
    seed: int = Field(0, description="Generation seed")

    model_config = _section_config("SYNTH_")

    @field_validator("artifact_types", "held_out_artifacts", mode="before")
    @classmethod
    def parse_csv(cls, v):
        return _split_csv(v)

    @field_validator("split_counts", mode="before")
    @classmethod
    def parse_counts(cls, v):
        if isinstance(v, str) and not v.strip():
            return None
        return _split_csv(v)

    @field_validator("artifact_types")
    @classmethod
    def check_artifacts(cls, v):
        if not v:
            raise ValueError("at least one artifact type is required")
        unknown = [name for name in v if name not in ARTIFACT_TYPES]
        if unknown:
            raise ValueError(f"unknown artifact types {unknown}; valid: {list(ARTIFACT_TYPES)}")
        return list(dict.fromkeys(v))

    @field_validator("held_out_artifacts", mode="after")
    @classmethod
    def dedupe_held_out(cls, v):
        return list(dict.fromkeys(v or []))

    @field_validator("split_counts")
    @classmethod
    def check_split_counts(cls, v):
        if v is None:
            return v
        if len(v) != 3 or any(n < 0 for n in v) or v[0] < 1:
            raise ValueError(f"split_counts must be three counts (train >= 1, dev, test), got {v}")
        return v

    @field_validator("count")
    @classmethod
    def check_count(cls, v):
        if v < 1:
            raise ValueError("count must be at least 1")
        return v

    @field_validator("image_size")
    @classmethod
    def check_size(cls, v):
        if v < 8:
            raise ValueError("image_size must be at least 8")
        return v

    @field_validator("artifact_strength")
    @classmethod
    def check_strength(cls, v):
        if not 0 < v <= 1:
            raise ValueError(f"artifact_strength must be in (0, 1], got {v}")
        return v

    @model_validator(mode="after")
    def check_layout(self):
        unknown = [name for name in self.held_out_artifacts if name not in self.artifact_types]
        if unknown:
            raise ValueError(f"held_out_artifacts {unknown} are not in artifact_types {self.artifact_types}")
        if len(self.held_out_artifacts) == len(self.artifact_types):
            raise ValueError("at least one artifact type must remain for the train and dev splits")
        if self.split_counts is not None:
            total = sum(self.split_counts)
            if "count" in self.model_fields_set and self.count != total:
                raise ValueError(f"count={self.count} disagrees with split_counts {self.split_counts} (sum {total})")
            self.count = total
        return self


class MonitoringConfig(BaseSettings):
    """Logging and performance monitoring configuration"""
    log_level: str = Field("INFO", description="Logging level")
    enable_performance_monitoring: bool = Field(True, description="Time train steps and eval passes")

    model_config = _section_config("")


SECTION_TYPES: Dict[str, Type[BaseSettings]] = {
    "generator": GeneratorConfig,
    "classifier": ClassifierConfig,
    "loss_weights": LossWeights,
    "triplet": TripletConfig,
    "pipeline": PipelineConfig,
    "eval": EvalConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "monitoring": MonitoringConfig,
}


def _section_keys(section_type: Type[BaseSettings]) -> List[str]:
    prefix = section_type.model_config.get("env_prefix", "")
    return [f"{prefix}{name}".upper() for name in section_type.model_fields]


def _flat_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(item) for item in value)
    if value is None:
        return ""
    return str(value)


class SpoofCueSettings(BaseModel):
    """Main configuration class combining all settings"""
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    triplet: TripletConfig = Field(default_factory=TripletConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    monitoring: MonitoringConfig = Field(default_factory=MonitoringConfig)

    @classmethod
    def from_config_file(
        cls,
        config_path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Mapping[str, Any]]] = None
    ) -> "SpoofCueSettings":
        """
        Build settings from a flat KEY=VALUE file, the environment and explicit overrides.
        Overrides are keyed by section name, e.g. {"train": {"epochs": 3}}.
        """
        overrides = overrides or {}
        unknown_sections = set(overrides) - set(SECTION_TYPES)
        if unknown_sections:
            raise ConfigurationError(f"Unknown configuration sections: {sorted(unknown_sections)}")

        env_file = None
        if config_path is not None:
            env_file = Path(config_path)
            if not env_file.is_file():
                raise ConfigurationError(
                    f"Config file not found: {env_file}", details={"path": str(env_file)}
                )
            cls._warn_unknown_keys(env_file)

        sections = {}
        try:
            for name, section_type in SECTION_TYPES.items():
                section_overrides = {
                    key: value for key, value in dict(overrides.get(name, {})).items()
                    if value is not None
                }
                sections[name] = section_type(_env_file=env_file, **section_overrides)
        except ValidationError as e:
            raise ConfigurationError(f"Configuration validation failed: {e}") from e

        return cls(**sections)

    @classmethod
    def from_dump(cls, dump: Mapping[str, Mapping[str, Any]]) -> "SpoofCueSettings":
        """Restore settings from the dictionary produced by model_dump(mode='json')"""
        try:
            return cls(**{
                name: section_type(**dict(dump.get(name, {})))
                for name, section_type in SECTION_TYPES.items()
            })
        except ValidationError as e:
            raise ConfigurationError(f"Stored configuration is invalid: {e}") from e

    @staticmethod
    def _warn_unknown_keys(env_file: Path) -> None:
        known = {key for section_type in SECTION_TYPES.values() for key in _section_keys(section_type)}
        for key in dotenv_values(env_file):
            if key.upper() not in known:
                logger.warning(f"Ignoring unknown config key {key!r} in {env_file}")

    def to_flat_dict(self) -> Dict[str, str]:
        """Serialize to the flat KEY=VALUE layout read by from_config_file"""
        flat: Dict[str, str] = {}
        for name, section_type in SECTION_TYPES.items():
            prefix = section_type.model_config.get("env_prefix", "")
            for field_name, value in getattr(self, name).model_dump().items():
                if value is None:
                    continue
                flat[f"{prefix}{field_name}".upper()] = _flat_value(value)
        return flat

    def write_config_file(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{key}={value}" for key, value in self.to_flat_dict().items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def setup_logging(self):
        """Setup logging configuration based on monitoring settings"""
        logging.basicConfig(
            level=getattr(logging, self.monitoring.log_level.upper(), logging.INFO),
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        )
        logging.getLogger("PIL").setLevel(logging.WARNING)

    def validate_configuration(self) -> Dict[str, Any]:
        """Validate cross-section consistency and return validation report"""
        validation_report = {
            "valid": True,
            "warnings": [],
            "errors": [],
            "recommendations": []
        }

        if self.pipeline.patch_size != self.generator.input_size:
            validation_report["warnings"].append(
                f"pipeline.patch_size={self.pipeline.patch_size} differs from "
                f"generator.input_size={self.generator.input_size}; the generator is fully "
                "convolutional and will run at the pipeline size"
            )

        if self.loss_weights.regression_mode != "live_only":
            validation_report["warnings"].append(
                "Regression on live and spoof samples is an ablation setting"
            )

        if self.classifier.input_mode != "overlay":
            validation_report["warnings"].append(
                "Auxiliary classifier on the cue map alone is an ablation setting"
            )

        if self.loss_weights.alpha2 > 0 and self.train.batch_size < 4:
            validation_report["errors"].append(
                "Triplet loss needs at least two live and one spoof sample per batch (batch_size >= 4)"
            )
            validation_report["valid"] = False

        if self.pipeline.input_mode == "resized":
            validation_report["recommendations"].append(
                "Patched input preserves local texture; consider PIPELINE_INPUT_MODE=patched"
            )

        if self.generator.use_pretrained_encoder and self.generator.encoder_stage_widths != [64, 64, 128, 256, 512]:
            validation_report["errors"].append(
                "Pretrained ResNet18 weights require encoder widths 64,64,128,256,512"
            )
            validation_report["valid"] = False

        return validation_report


def write_config_template(path: Union[str, Path]) -> Path:
    """Write a config file listing every key with its default value"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# Spoof cue experiment configuration",
        "# Precedence: CLI flags > environment variables > this file > defaults",
    ]
    defaults = SpoofCueSettings.from_config_file()
    for name, section_type in SECTION_TYPES.items():
        lines.append("")
        lines.append(f"# {section_type.__doc__}")
        prefix = section_type.model_config.get("env_prefix", "")
        section = getattr(defaults, name)
        for field_name, field_info in section_type.model_fields.items():
            if field_info.description:
                lines.append(f"# {field_info.description}")
            value = getattr(section, field_name)
            key = f"{prefix}{field_name}".upper()
            lines.append(f"# {key}=" if value is None else f"{key}={_flat_value(value)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_settings(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None
) -> SpoofCueSettings:
    """
    Convenience function to load settings with proper error handling.
    Finds a default config file when none is given.
    """
    if config_path is None:
        from .utils import find_config_file
        config_path = find_config_file()

    try:
        settings = SpoofCueSettings.from_config_file(config_path, overrides)
        settings.setup_logging()

        validation = settings.validate_configuration()
        if not validation["valid"]:
            for error in validation["errors"]:
                logger.error(f"Configuration Error: {error}")
            raise ConfigurationError(
                "Configuration validation failed", details={"errors": validation["errors"]}
            )

        for warning in validation["warnings"]:
            logger.warning(f"Configuration Warning: {warning}")

        for rec in validation["recommendations"]:
            logger.info(f"Configuration Recommendation: {rec}")

        logger.info(f"Configuration loaded and validated successfully (file: {config_path or 'none'})")
        return settings

    except Exception as e:
        logger.error(f"Failed to load configuration: {e}")
        raise


if __name__ == "__main__":
    try:
        settings = load_settings()
        print("✅ Configuration loaded successfully")
        print(f"Generator input: {settings.generator.input_size}px, taps {settings.generator.tap_layers}")
        print(f"Batch size: {settings.train.batch_size}, epochs: {settings.train.epochs}")
        print(f"Threshold: {settings.eval.threshold}")
    except Exception as e:
        print(f"❌ Configuration loading failed: {e}")
