#!/usr/bin/env python3
"""
Configuration loading, precedence and validation tests
"""

import pytest

from src.core.config import (
    GeneratorConfig,
    LossWeights,
    SpoofCueSettings,
    SynthConfig,
    TrainConfig,
    load_settings,
    write_config_template,
)
from src.monitoring.error import ConfigurationError


def test_defaults_match_published_settings():
    settings = SpoofCueSettings.from_config_file()
    assert settings.generator.input_size == 224
    assert settings.generator.tap_layers == ["E5", "D1", "D2", "D3", "D4"]
    assert (settings.loss_weights.alpha1, settings.loss_weights.alpha2, settings.loss_weights.alpha3) == (5, 1, 5)
    assert settings.triplet.margin == 0.5
    assert settings.train.base_lr == 1e-3
    assert settings.train.decay_factor == 0.95
    assert settings.train.decay_every_steps == 600
    assert settings.train.batch_size == 32
    assert settings.train.epochs == 20
    assert settings.eval.threshold == 0.01


def test_precedence_overrides_environment_and_file(tmp_path, monkeypatch):
    config_file = tmp_path / "exp.env"
    config_file.write_text("TRAIN_EPOCHS=7\nTRAIN_BATCH_SIZE=8\nTRIPLET_MARGIN=0.3\n", encoding="utf-8")
    monkeypatch.setenv("TRAIN_BATCH_SIZE", "16")

    settings = SpoofCueSettings.from_config_file(config_file, {"triplet": {"margin": 0.7}})
    assert settings.train.epochs == 7
    assert settings.train.batch_size == 16
    assert settings.triplet.margin == 0.7


def test_csv_lists_from_file(tmp_path):
    config_file = tmp_path / "exp.env"
    config_file.write_text("GENERATOR_TAP_LAYERS=e5,sc\nSYNTH_ARTIFACT_TYPES=moire, banding\n", encoding="utf-8")
    settings = SpoofCueSettings.from_config_file(config_file)
    assert settings.generator.tap_layers == ["E5", "SC"]
    assert settings.synth.artifact_types == ["moire", "banding"]


def test_unknown_keys_are_warned_and_ignored(tmp_path, caplog):
    config_file = tmp_path / "exp.env"
    config_file.write_text("TRAIN_EPOCHS=3\nNOT_A_SETTING=1\n", encoding="utf-8")
    settings = SpoofCueSettings.from_config_file(config_file)
    assert settings.train.epochs == 3
    assert "NOT_A_SETTING" in caplog.text


def test_missing_config_file_is_an_error(tmp_path):
    with pytest.raises(ConfigurationError):
        SpoofCueSettings.from_config_file(tmp_path / "absent.env")


@pytest.mark.parametrize("section, values", [
    ("generator", {"input_size": 100}),
    ("generator", {"tap_layers": []}),
    ("generator", {"tap_layers": ["E6"]}),
    ("train", {"batch_size": 7}),
    ("train", {"decay_factor": 0.0}),
    ("train", {"base_lr": 0.0}),
    ("triplet", {"margin": 0.0}),
    ("loss_weights", {"alpha1": 0, "alpha2": 0, "alpha3": 0}),
    ("loss_weights", {"alpha1": -1}),
    ("synth", {"artifact_strength": 0.0}),
    ("synth", {"artifact_types": ["glare"]}),
    ("synth", {"artifact_types": ["moire"], "held_out_artifacts": ["banding"]}),
    ("synth", {"artifact_types": ["banding"], "held_out_artifacts": ["banding"]}),
    ("synth", {"split_counts": [4, 1]}),
    ("synth", {"count": 5, "split_counts": [4, 1, 1]}),
    ("eval", {"threshold": 0.0}),
])
def test_invalid_values_rejected(section, values):
    with pytest.raises(ConfigurationError):
        SpoofCueSettings.from_config_file(None, {section: values})


def test_single_weight_ablation_is_valid():
    weights = LossWeights(alpha1=1, alpha2=0, alpha3=0)
    assert weights.alpha1 == 1


def test_flat_dict_round_trip(tmp_path):
    settings = SpoofCueSettings.from_config_file(None, {
        "generator": {"tap_layers": ["E5", "SC"], "input_size": 64},
        "train": {"epochs": 4},
    })
    path = settings.write_config_file(tmp_path / "dump.env")
    restored = SpoofCueSettings.from_config_file(path)
    assert restored == settings


def test_dump_round_trip():
    settings = SpoofCueSettings.from_config_file(None, {"loss_weights": {"regression_mode": "live_and_spoof"}})
    restored = SpoofCueSettings.from_dump(settings.model_dump(mode="json"))
    assert restored == settings


def test_template_lists_every_key(tmp_path):
    path = write_config_template(tmp_path / "template.env")
    text = path.read_text(encoding="utf-8")
    for key in SpoofCueSettings.from_config_file().to_flat_dict():
        assert f"{key}=" in text
    assert SpoofCueSettings.from_config_file(path) == SpoofCueSettings.from_config_file()


def test_validation_report_flags_small_triplet_batches():
    settings = SpoofCueSettings.from_config_file(None, {"train": {"batch_size": 2}})
    report = settings.validate_configuration()
    assert not report["valid"]
    assert report["errors"]

    with pytest.raises(ConfigurationError):
        load_settings(None, {"train": {"batch_size": 2}})


def test_ablation_settings_produce_warnings():
    settings = SpoofCueSettings.from_config_file(None, {
        "classifier": {"input_mode": "cue_only"},
        "loss_weights": {"regression_mode": "live_and_spoof"},
    })
    report = settings.validate_configuration()
    assert report["valid"]
    assert len(report["warnings"]) >= 2


def test_section_types_validate_directly():
    assert GeneratorConfig(input_size=256).input_size == 256
    assert TrainConfig(batch_size=4).batch_size == 4
    assert SynthConfig(count=1).count == 1


def test_split_counts_set_the_per_class_count(tmp_path):
    config_file = tmp_path / "exp.env"
    config_file.write_text("SYNTH_SPLIT_COUNTS=4, 1, 1\nSYNTH_HELD_OUT_ARTIFACTS=banding\n", encoding="utf-8")
    settings = SpoofCueSettings.from_config_file(config_file)
    assert settings.synth.split_counts == [4, 1, 1]
    assert settings.synth.count == 6
    assert settings.synth.held_out_artifacts == ["banding"]

    restored = SpoofCueSettings.from_config_file(settings.write_config_file(tmp_path / "dump.env"))
    assert restored == settings
    assert SpoofCueSettings.from_dump(settings.model_dump(mode="json")) == settings
