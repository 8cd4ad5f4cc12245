#!/usr/bin/env python3
"""
Training step, schedule, checkpoint/resume and evaluation harness tests
"""

import copy
import dataclasses

import numpy as np
import pytest
import torch
from torch.func import functional_call

from src.core.config import EvalConfig, LossWeights, TrainConfig
from src.core.utils import parameter_fingerprint
from src.data.manifest import DatasetManifest, Split, intra_protocol
from src.evaluation.metrics import compute_acer_report
from src.evaluation.scoring import read_score_file
from src.models.classifier import build_classifier, classifier_input, classify
from src.models.generator import build_generator
from src.monitoring.error import CheckpointError
from src.monitoring.step_log import StepLog
from src.training.checkpoint import load_checkpoint, restore_models, save_checkpoint
from src.training.losses import compute_losses
from src.training.trainer import (
    FINAL_CHECKPOINT_NAME,
    STEP_LOG_NAME,
    create_train_state,
    evaluate,
    fit,
    lr_at,
    score_samples,
    train_step,
)

from tests.conftest import tiny_settings


def make_batch(seed=0):
    generator = torch.Generator().manual_seed(seed)
    images = torch.rand(4, 3, 32, 32, generator=generator) * 2 - 1
    return images, torch.tensor([0, 0, 1, 1])


def parameters_of(module):
    return [p.detach().clone() for p in module.parameters()]


def test_learning_rate_schedule():
    config = TrainConfig()
    assert lr_at(0, 10, config) == pytest.approx(1e-4)
    assert lr_at(9, 10, config) == pytest.approx(1e-3)
    assert lr_at(10, 10, config) == pytest.approx(1e-3)
    assert lr_at(609, 10, config) == pytest.approx(1e-3)
    assert lr_at(610, 10, config) == pytest.approx(9.5e-4)
    assert lr_at(1210, 10, config) == pytest.approx(9.025e-4)
    assert lr_at(1810, 10, config) == pytest.approx(1e-3 * 0.95 ** 3)

    no_warmup = TrainConfig(warmup=False)
    assert lr_at(0, 10, no_warmup) == pytest.approx(1e-3)
    assert lr_at(600, 10, no_warmup) == pytest.approx(9.5e-4)


def test_train_step_is_deterministic(settings):
    first = create_train_state(settings, 3, torch.device("cpu"))
    second = create_train_state(settings, 3, torch.device("cpu"))
    _, breakdown_a = train_step(first, make_batch(), settings)
    _, breakdown_b = train_step(second, make_batch(), settings)
    assert breakdown_a == breakdown_b
    assert parameter_fingerprint(first.generator) == parameter_fingerprint(second.generator)
    assert first.global_step == 1


def test_classifier_loss_alone_updates_generator(settings):
    settings = settings.model_copy(update={"loss_weights": LossWeights(alpha1=0, alpha2=0, alpha3=1)})
    state = create_train_state(settings, 3, torch.device("cpu"))
    before = parameters_of(state.generator)
    train_step(state, make_batch(), settings)
    after = parameters_of(state.generator)
    assert any(not torch.equal(a, b) for a, b in zip(before, after))


def test_zero_learning_rate_leaves_parameters_unchanged(settings):
    # the validator rejects base_lr=0; model_copy skips validation
    settings = settings.model_copy(update={"train": settings.train.model_copy(update={"base_lr": 0.0})})
    state = create_train_state(settings, 3, torch.device("cpu"))
    generator_before = parameters_of(state.generator)
    classifier_before = parameters_of(state.classifier)
    train_step(state, make_batch(), settings)
    assert all(torch.equal(a, b) for a, b in zip(generator_before, parameters_of(state.generator)))
    assert all(torch.equal(a, b) for a, b in zip(classifier_before, parameters_of(state.classifier)))


def test_regression_supervises_live_samples_only(settings):
    state = create_train_state(settings, 3, torch.device("cpu"))
    _, breakdown = train_step(state, make_batch(), settings, capture_gradients=True)
    gradients = state.captured_gradients

    regression = gradients["regression"]
    assert torch.count_nonzero(regression[2:]) == 0
    assert torch.count_nonzero(regression[:2]) > 0
    assert torch.count_nonzero(gradients["auxiliary"][2:]) > 0
    for name, gradient in gradients["triplet"].items():
        if breakdown.triplet_count_per_tap[name] > 0:
            assert torch.count_nonzero(gradient) > 0


def composite_objective(generator, classifier, images, labels, settings):
    output = generator(images)
    probabilities = classify(classifier, classifier_input(images, output.cue_map, "overlay"))
    # margin above the largest distance keeps the active triplet set fixed
    return compute_losses(output.cue_map, output.taps, probabilities, labels, settings.loss_weights, 2.5).total


def test_composite_objective_gradient_matches_finite_differences(settings):
    generator = build_generator(settings.generator, seed=3).double().eval()
    classifier = build_classifier(settings.classifier, seed=4).double().eval()
    labels = torch.tensor([0, 0, 1, 1])
    images = (torch.rand(4, 3, 32, 32, dtype=torch.float64) * 2 - 1).requires_grad_(True)

    def objective(x):
        return composite_objective(generator, classifier, x, labels, settings)

    objective(images).backward()
    direction = torch.randn_like(images)
    direction /= direction.norm()
    eps = 1e-6
    with torch.no_grad():
        numeric = (objective(images + eps * direction) - objective(images - eps * direction)) / (2 * eps)
    analytic = (images.grad * direction).sum()
    assert float(analytic) == pytest.approx(float(numeric), rel=1e-5, abs=1e-8)


def test_composite_objective_parameter_gradcheck(settings):
    generator = build_generator(settings.generator, seed=5).double().eval()
    classifier = build_classifier(settings.classifier, seed=6).double().eval()
    labels = torch.tensor([0, 0, 1, 1])
    images = torch.rand(4, 3, 32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(5)) * 2 - 1
    generator_names = ["head.weight", "head.bias"]
    classifier_names = ["fc.weight", "fc.bias"]
    generator_parameters = dict(generator.named_parameters())
    classifier_parameters = dict(classifier.named_parameters())
    inputs = tuple(generator_parameters[name].detach().clone().requires_grad_(True) for name in generator_names)
    inputs += tuple(classifier_parameters[name].detach().clone().requires_grad_(True) for name in classifier_names)

    def objective(*values):
        output = functional_call(generator, dict(zip(generator_names, values[:2])), (images,))
        probabilities = torch.sigmoid(
            functional_call(classifier, dict(zip(classifier_names, values[2:])),
                            (classifier_input(images, output.cue_map, "overlay"),))
        )
        return compute_losses(output.cue_map, output.taps, probabilities, labels, settings.loss_weights, 2.5).total

    assert torch.autograd.gradcheck(objective, inputs)


def test_composite_single_precision_gradients_match_double(settings):
    generator64 = build_generator(settings.generator, seed=7).double().eval()
    classifier64 = build_classifier(settings.classifier, seed=8).double().eval()
    models = [
        (generator64, classifier64, torch.float64),
        (copy.deepcopy(generator64).float(), copy.deepcopy(classifier64).float(), torch.float32),
    ]
    labels = torch.tensor([0, 0, 1, 1])
    images = torch.rand(4, 3, 32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(7)) * 2 - 1

    gradients = []
    for generator, classifier, dtype in models:
        x = images.to(dtype).requires_grad_(True)
        composite_objective(generator, classifier, x, labels, settings).backward()
        gradients.append((x.grad, generator.head.weight.grad, classifier.fc.weight.grad))
    for single, double in zip(gradients[1], gradients[0]):
        torch.testing.assert_close(single.double(), double, rtol=1e-3, atol=1e-5)


def test_zero_epochs_writes_initial_weights(tmp_path, synthetic_manifest):
    settings = tiny_settings(tmp_path, train={"epochs": 0})
    final_path = fit(settings, synthetic_manifest, intra_protocol())
    assert final_path.name == FINAL_CHECKPOINT_NAME

    generator, _, stored = restore_models(load_checkpoint(final_path))
    assert stored == settings
    expected = build_generator(settings.generator, settings.train.seed)
    assert parameter_fingerprint(generator) == parameter_fingerprint(expected)


def test_fit_writes_step_log_and_checkpoints(tmp_path, synthetic_manifest):
    settings = tiny_settings(tmp_path)
    final_path = fit(settings, synthetic_manifest, intra_protocol())

    run_dir = tmp_path / "run"
    records = StepLog(run_dir / STEP_LOG_NAME).read()
    # 6 live + 6 spoof training images in batches of 4: 3 steps per epoch
    assert [r["step"] for r in records] == [1, 2, 3, 4, 5, 6]
    assert all(np.isfinite(r["total"]) for r in records)
    assert (run_dir / "checkpoints" / "epoch_001.pt").is_file()
    assert (run_dir / "config.env").is_file()

    checkpoint = load_checkpoint(final_path)
    assert checkpoint.epoch == 2 and checkpoint.global_step == 6


def test_resume_matches_uninterrupted_run(tmp_path, synthetic_manifest):
    full = tiny_settings(tmp_path / "full")
    full_checkpoint = load_checkpoint(fit(full, synthetic_manifest, intra_protocol()))

    first_half = tiny_settings(tmp_path / "resumed", train={"epochs": 1})
    fit(first_half, synthetic_manifest, intra_protocol())
    resumed_settings = tiny_settings(tmp_path / "resumed")
    epoch_one = tmp_path / "resumed" / "run" / "checkpoints" / "epoch_001.pt"
    resumed_checkpoint = load_checkpoint(fit(resumed_settings, synthetic_manifest, intra_protocol(), resume_from=epoch_one))

    assert resumed_checkpoint.global_step == full_checkpoint.global_step
    for key, tensor in full_checkpoint.generator.items():
        assert torch.equal(tensor, resumed_checkpoint.generator[key]), key
    for key, tensor in full_checkpoint.classifier.items():
        assert torch.equal(tensor, resumed_checkpoint.classifier[key]), key

    full_log = StepLog(tmp_path / "full" / "run" / STEP_LOG_NAME).read()
    resumed_log = StepLog(tmp_path / "resumed" / "run" / STEP_LOG_NAME).read()
    assert [r["total"] for r in resumed_log] == [r["total"] for r in full_log]


def test_resume_rejects_different_architecture(tmp_path, synthetic_manifest):
    settings = tiny_settings(tmp_path, train={"epochs": 1})
    checkpoint_path = fit(settings, synthetic_manifest, intra_protocol())
    wider = tiny_settings(tmp_path, classifier={"backbone_widths": [8, 8, 8, 8]})
    with pytest.raises(CheckpointError):
        fit(wider, synthetic_manifest, intra_protocol(), resume_from=checkpoint_path)


def test_checkpoint_version_is_checked(tmp_path, settings):
    state = create_train_state(settings, 3, torch.device("cpu"))
    path = save_checkpoint(tmp_path / "c.pt", state.generator, state.classifier, None, 0, 0, settings)
    data = torch.load(path, weights_only=True)
    data["format_version"] = 99
    torch.save(data, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")


@pytest.fixture
def trained_checkpoint(tmp_path, synthetic_manifest):
    return fit(tiny_settings(tmp_path, train={"epochs": 1}), synthetic_manifest, intra_protocol())


def test_evaluate_writes_outputs(tmp_path, synthetic_manifest, trained_checkpoint):
    result = evaluate(trained_checkpoint, synthetic_manifest, intra_protocol(), tmp_path / "eval", report_classifier=True)

    assert result.report.threshold == pytest.approx(0.01)
    assert result.report.counts == {"live": 2, "moire": 1, "color_cast": 1}
    assert result.report.extras["protocol"] == "intra"
    assert 0.0 <= result.report.classifier_accuracy <= 1.0
    assert result.report_path.is_file()

    embeddings = np.load(result.embeddings_path)
    assert embeddings["embeddings"].shape == (4, 4)
    assert list(embeddings["labels"]) == [0, 0, 1, 1]

    records = read_score_file(result.score_path)
    assert records == result.records
    offline = compute_acer_report(records, result.report.threshold, known_attacks=["moire", "color_cast"])
    assert offline.acer == result.report.acer
    assert offline.apcer_per_pai == result.report.apcer_per_pai


def test_classifier_accuracy_is_counted_per_video(tmp_path, synthetic_manifest, trained_checkpoint):
    samples = [
        dataclasses.replace(s, video_id="live-video") if s.split is Split.TEST and s.is_live else s
        for s in synthetic_manifest.samples
    ]
    manifest = DatasetManifest(samples, synthetic_manifest.root)
    result = evaluate(trained_checkpoint, manifest, intra_protocol(), tmp_path / "eval", report_classifier=True)
    assert len(result.records) == 3

    generator, classifier, stored = restore_models(load_checkpoint(trained_checkpoint))
    test_set = manifest.by_split(Split.TEST)
    probabilities = score_samples(generator, test_set, stored.pipeline, 4, classifier, stored.classifier.input_mode)[
        "probabilities"
    ]
    live_video = np.mean([p for s, p in zip(test_set, probabilities) if s.is_live])
    spoof_frames = [p for s, p in zip(test_set, probabilities) if not s.is_live]
    correct = [live_video < 0.5] + [p >= 0.5 for p in spoof_frames]
    assert result.report.classifier_accuracy == pytest.approx(sum(correct) / 3)


def test_evaluate_with_dev_threshold(tmp_path, synthetic_manifest, trained_checkpoint):
    eval_config = EvalConfig(threshold_policy="dev_eer", batch_size=4)
    result = evaluate(trained_checkpoint, synthetic_manifest, intra_protocol(), tmp_path / "eval", eval_config)
    assert result.report.threshold_policy == "dev_eer"
    assert result.report.eer is not None and 0.0 <= result.report.eer <= 1.0
    assert result.report.threshold > 0
