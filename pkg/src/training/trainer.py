#!/usr/bin/env python3
"""
Training loop and evaluation harness.

fit() trains the generator and auxiliary classifier jointly on the train
partition of a protocol, writing checkpoints and a JSONL step log.
evaluate() scores a protocol's test partition from the cue map and writes a
score file, a metrics report and D4 embeddings.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader

from ..core.config import EvalConfig, PipelineConfig, SpoofCueSettings, TrainConfig
from ..core.utils import get_output_directory, resolve_device
from ..data.manifest import DatasetManifest, EvalProtocol, Label, LabeledSample, resolve_dev_set, resolve_protocol
from ..data.pipeline import FaceImageDataset, collate_eval, make_balanced_sampler, steps_per_epoch
from ..evaluation.metrics import MetricsReport, compute_acer_report, compute_eer
from ..evaluation.scoring import ScoreRecord, group_by_video, spoof_scores, write_score_file
from ..models.classifier import AuxiliaryClassifier, build_classifier, classifier_input, classify
from ..models.generator import SpoofCueGenerator, build_generator
from ..monitoring.error import CheckpointError, MetricsError
from ..monitoring.performance import PerformanceTimer, log_performance_summary
from ..monitoring.step_log import StepLog, StepRecord
from .checkpoint import load_checkpoint, restore_models, save_checkpoint
from .losses import LossBreakdown, compute_losses

logger = logging.getLogger(__name__)

STEP_LOG_NAME = "train_log.jsonl"
FINAL_CHECKPOINT_NAME = "final.pt"
EMBEDDING_TAP = "D4"


@dataclass
class TrainState:
    generator: SpoofCueGenerator
    classifier: AuxiliaryClassifier
    optimizer: torch.optim.Optimizer
    steps_per_epoch: int
    global_step: int = 0
    epoch: int = 0
    captured_gradients: Optional[Dict] = None


@dataclass
class EvaluationResult:
    report: MetricsReport
    records: List[ScoreRecord]
    score_path: Path
    report_path: Path
    embeddings_path: Path


def lr_at(step: int, steps_per_epoch: int, config: TrainConfig) -> float:
    """Linear warm-up over epoch 0, then step decay counted from the end of warm-up"""
    if config.warmup and step < steps_per_epoch:
        return config.base_lr * (step + 1) / steps_per_epoch
    post_warmup = step - steps_per_epoch if config.warmup else step
    return config.base_lr * config.decay_factor ** (post_warmup // config.decay_every_steps)


def create_train_state(settings: SpoofCueSettings, steps: int, device: torch.device) -> TrainState:
    generator = build_generator(settings.generator, settings.train.seed).to(device)
    classifier = build_classifier(settings.classifier, settings.train.seed + 1).to(device)
    optimizer = torch.optim.Adam(
        list(generator.parameters()) + list(classifier.parameters()),
        lr=settings.train.base_lr,
        betas=(settings.train.adam_beta1, settings.train.adam_beta2),
        eps=settings.train.adam_eps,
    )
    return TrainState(generator=generator, classifier=classifier, optimizer=optimizer, steps_per_epoch=steps)


def _capture_gradients(terms, output, settings: SpoofCueSettings) -> Dict:
    """Gradients of each weighted loss component w.r.t. the cue map (and the taps for triplet)"""
    weights = settings.loss_weights

    def grad_of(value: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        if not value.requires_grad:
            return torch.zeros_like(target)
        (gradient,) = torch.autograd.grad(value, target, retain_graph=True, allow_unused=True)
        return torch.zeros_like(target) if gradient is None else gradient.detach()

    return {
        "regression": grad_of(weights.alpha1 * terms.regression, output.cue_map),
        "auxiliary": grad_of(weights.alpha3 * terms.auxiliary, output.cue_map),
        "triplet": {
            name: grad_of(weights.alpha2 * terms.triplet_per_tap[name], features)
            for name, features in output.taps.items()
        },
    }


def train_step(
    state: TrainState,
    batch: Tuple[torch.Tensor, torch.Tensor],
    settings: SpoofCueSettings,
    capture_gradients: bool = False,
) -> Tuple[TrainState, LossBreakdown]:
    """One joint optimizer update of generator and classifier"""
    device = next(state.generator.parameters()).device
    images, labels = batch[0].to(device), batch[1].to(device)

    state.generator.train()
    state.classifier.train()
    lr = lr_at(state.global_step, state.steps_per_epoch, settings.train)
    for group in state.optimizer.param_groups:
        group["lr"] = lr

    output = state.generator(images)
    probabilities = classify(
        state.classifier, classifier_input(images, output.cue_map, settings.classifier.input_mode)
    )
    terms = compute_losses(
        output.cue_map, output.taps, probabilities, labels, settings.loss_weights, settings.triplet.margin
    )
    state.captured_gradients = _capture_gradients(terms, output, settings) if capture_gradients else None

    state.optimizer.zero_grad(set_to_none=True)
    terms.total.backward()
    state.optimizer.step()
    state.global_step += 1
    return state, terms.breakdown()


def _check_resume_compatible(stored: SpoofCueSettings, current: SpoofCueSettings) -> None:
    for section in ("generator", "classifier"):
        if getattr(stored, section) != getattr(current, section):
            raise CheckpointError(
                f"cannot resume: {section} configuration differs from the checkpoint",
                details={"stored": getattr(stored, section).model_dump(mode="json")},
            )


def fit(
    settings: SpoofCueSettings,
    manifest: DatasetManifest,
    protocol: EvalProtocol,
    resume_from: Optional[Union[str, Path]] = None,
) -> Path:
    """
    Train for settings.train.epochs epochs and return the final checkpoint path.

    Periodic checkpoints go to <checkpoint_dir>/checkpoints/epoch_NNN.pt, the final
    one to <checkpoint_dir>/final.pt, step records to <checkpoint_dir>/train_log.jsonl.
    Resuming restores weights, optimizer moments, step/epoch counters and rng state;
    step records past the checkpoint are dropped.
    """
    train_set, _ = resolve_protocol(manifest, protocol)
    device = resolve_device(settings.train.device)
    out_dir = get_output_directory(settings.train.checkpoint_dir)
    settings.write_config_file(out_dir / "config.env")

    steps = steps_per_epoch(train_set, settings.train.batch_size, settings.pipeline.balance_classes)
    state = create_train_state(settings, steps, device)
    step_log = StepLog(out_dir / STEP_LOG_NAME)

    if resume_from is not None:
        checkpoint = load_checkpoint(resume_from, device)
        _check_resume_compatible(checkpoint.restore_settings(), settings)
        state.generator.load_state_dict(checkpoint.generator)
        state.classifier.load_state_dict(checkpoint.classifier)
        if checkpoint.optimizer is not None:
            state.optimizer.load_state_dict(checkpoint.optimizer)
        if checkpoint.rng_state is not None:
            torch.set_rng_state(checkpoint.rng_state.cpu())
        state.global_step = checkpoint.global_step
        state.epoch = checkpoint.epoch
        step_log.truncate_after(state.global_step)
        logger.info(f"Resumed from {resume_from} at epoch {state.epoch}, step {state.global_step}")
    else:
        step_log.reset()

    dataset = FaceImageDataset(train_set, settings.pipeline, train=True)
    sampler = make_balanced_sampler(
        train_set, settings.train.batch_size, settings.pipeline.seed, settings.pipeline.balance_classes
    )
    loader = DataLoader(dataset, batch_sampler=sampler, num_workers=settings.pipeline.num_workers)

    for epoch in range(state.epoch, settings.train.epochs):
        sampler.set_epoch(epoch)
        for batch in loader:
            with PerformanceTimer("train_step", metadata={"epoch": epoch}) as timer:
                state, breakdown = train_step(state, batch, settings)
            step_log.append(StepRecord(
                step=state.global_step,
                epoch=epoch,
                lr=state.optimizer.param_groups[0]["lr"],
                regression=breakdown.regression,
                triplet_per_tap=breakdown.triplet_per_tap,
                triplet_count_per_tap=breakdown.triplet_count_per_tap,
                auxiliary=breakdown.auxiliary,
                total=breakdown.total,
                duration_ms=round(timer.duration_ms, 3),
            ))
            if state.global_step % settings.train.log_every_steps == 0:
                logger.info(
                    f"epoch {epoch} step {state.global_step}: total={breakdown.total:.4f} "
                    f"Lr={breakdown.regression:.4f} Lt={sum(breakdown.triplet_per_tap.values()):.4f} "
                    f"La={breakdown.auxiliary:.4f}"
                )

        state.epoch = epoch + 1
        if state.epoch % settings.train.checkpoint_every_epochs == 0:
            save_checkpoint(
                out_dir / "checkpoints" / f"epoch_{state.epoch:03d}.pt",
                state.generator, state.classifier, state.optimizer, state.epoch, state.global_step, settings,
            )

    final_path = save_checkpoint(
        out_dir / FINAL_CHECKPOINT_NAME,
        state.generator, state.classifier, state.optimizer, state.epoch, state.global_step, settings,
    )
    if settings.monitoring.enable_performance_monitoring:
        log_performance_summary()
    return final_path


@torch.no_grad()
def score_samples(
    generator: SpoofCueGenerator,
    samples: Sequence[LabeledSample],
    pipeline_config: PipelineConfig,
    batch_size: int,
    classifier: Optional[AuxiliaryClassifier] = None,
    classifier_mode: str = "overlay",
) -> Dict[str, np.ndarray]:
    """
    Per-sample spoof scores and D4 embeddings, averaged over evaluation views.
    With a classifier, also the mean spoof probability per sample.
    """
    device = next(generator.parameters()).device
    generator.eval()
    if classifier is not None:
        classifier.eval()

    dataset = FaceImageDataset(samples, pipeline_config, train=False)
    loader = DataLoader(
        dataset, batch_size=batch_size, shuffle=False, collate_fn=collate_eval,
        num_workers=pipeline_config.num_workers,
    )
    scores, embeddings, probabilities = [], [], []
    for views, labels, owners in loader:
        views, owners = views.to(device), owners.to(device)
        output = generator(views, tap_layers=[EMBEDDING_TAP])
        counts = torch.bincount(owners, minlength=len(labels)).to(views.dtype)

        def per_sample(values: torch.Tensor) -> torch.Tensor:
            shape = (len(labels),) + tuple(values.shape[1:])
            total = torch.zeros(shape, dtype=values.dtype, device=device).index_add_(0, owners, values)
            return total / counts.view(-1, *([1] * (values.dim() - 1)))

        scores.append(per_sample(spoof_scores(output.cue_map)).cpu())
        embeddings.append(per_sample(output.taps[EMBEDDING_TAP]).cpu())
        if classifier is not None:
            q = classify(classifier, classifier_input(views, output.cue_map, classifier_mode))
            probabilities.append(per_sample(q).cpu())

    result = {
        "scores": torch.cat(scores).numpy().astype(np.float64),
        "embeddings": torch.cat(embeddings).numpy(),
    }
    if classifier is not None:
        result["probabilities"] = torch.cat(probabilities).numpy()
    return result


def _records_for(manifest: DatasetManifest, samples: Sequence[LabeledSample], scores: np.ndarray) -> List[ScoreRecord]:
    return [
        ScoreRecord(manifest.sample_id(s), float(score), s.label, s.attack_type)
        for s, score in zip(samples, scores)
    ]


def evaluate(
    checkpoint_path: Union[str, Path],
    manifest: DatasetManifest,
    protocol: EvalProtocol,
    out_dir: Union[str, Path],
    eval_config: Optional[EvalConfig] = None,
    pipeline_config: Optional[PipelineConfig] = None,
    device: str = "cpu",
    report_classifier: bool = False,
) -> EvaluationResult:
    """
    Score the test partition with the cue-map spoof score and write
    scores.jsonl, report.txt / report.json and embeddings.npz into out_dir.
    eval/pipeline configs default to the ones stored in the checkpoint.
    """
    torch_device = resolve_device(device)
    checkpoint = load_checkpoint(checkpoint_path, torch_device)
    generator, classifier, stored = restore_models(checkpoint, torch_device)
    eval_config = eval_config or stored.eval
    pipeline_config = pipeline_config or stored.pipeline
    out_dir = get_output_directory(out_dir)

    _, test_set = resolve_protocol(manifest, protocol)
    with PerformanceTimer("evaluate", metadata={"samples": len(test_set)}, log_level=logging.INFO):
        scored = score_samples(
            generator, test_set, pipeline_config, eval_config.batch_size,
            classifier if report_classifier else None, stored.classifier.input_mode,
        )
    frame_records = _records_for(manifest, test_set, scored["scores"])
    records = group_by_video(frame_records, [s.video_id for s in test_set], eval_config.video_aggregation)

    eer = None
    threshold = eval_config.threshold
    if eval_config.threshold_policy == "dev_eer":
        dev_set = resolve_dev_set(manifest, protocol)
        dev_scores = score_samples(generator, dev_set, pipeline_config, eval_config.batch_size)["scores"]
        dev_records = group_by_video(
            _records_for(manifest, dev_set, dev_scores), [s.video_id for s in dev_set], eval_config.video_aggregation
        )
        eer, threshold = compute_eer(dev_records)

    try:
        report = compute_acer_report(
            records, threshold, known_attacks=manifest.spoof_attack_types(),
            threshold_policy=eval_config.threshold_policy,
        )
    except MetricsError as e:
        raise MetricsError(f"cannot evaluate protocol {protocol.name!r}: {e}") from e
    report.eer = eer
    report.extras["protocol"] = protocol.name
    report.extras["checkpoint_step"] = str(checkpoint.global_step)

    if report_classifier:
        # same per-video aggregation as the cue-map scores
        video_probabilities = group_by_video(
            _records_for(manifest, test_set, scored["probabilities"]),
            [s.video_id for s in test_set], eval_config.video_aggregation,
        )
        correct = [(r.score >= 0.5) == (r.label is Label.SPOOF) for r in video_probabilities]
        report.classifier_accuracy = float(np.mean(correct))

    score_path = write_score_file(records, out_dir / "scores.jsonl")
    report_path, _ = report.write(out_dir / "report.txt")
    embeddings_path = out_dir / "embeddings.npz"
    np.savez(
        embeddings_path,
        sample_ids=np.array([manifest.sample_id(s) for s in test_set]),
        embeddings=scored["embeddings"],
        labels=np.array([int(s.label) for s in test_set]),
        attack_types=np.array([s.attack_type for s in test_set]),
    )
    logger.info(f"Evaluation written to {out_dir}")
    return EvaluationResult(report, records, score_path, report_path, embeddings_path)


def score_split(
    checkpoint_path: Union[str, Path],
    manifest: DatasetManifest,
    samples: Sequence[LabeledSample],
    out_path: Union[str, Path],
    eval_config: Optional[EvalConfig] = None,
    pipeline_config: Optional[PipelineConfig] = None,
    device: str = "cpu",
) -> List[ScoreRecord]:
    """Score arbitrary samples and write a score file, without metrics"""
    torch_device = resolve_device(device)
    generator, _, stored = restore_models(load_checkpoint(checkpoint_path, torch_device), torch_device)
    eval_config = eval_config or stored.eval
    pipeline_config = pipeline_config or stored.pipeline
    scores = score_samples(generator, samples, pipeline_config, eval_config.batch_size)["scores"]
    records = group_by_video(
        _records_for(manifest, samples, scores), [s.video_id for s in samples], eval_config.video_aggregation
    )
    write_score_file(records, out_path)
    return records
