#!/usr/bin/env python3
"""
Regression, triplet, classification and total loss tests
"""

import math

import pytest
import torch

from src.core.config import LossWeights
from src.monitoring.error import NonFiniteLossError
from src.training.losses import (
    classification_loss,
    compute_losses,
    mine_triplets,
    pairwise_distances,
    regression_loss,
    total_loss,
    triplet_loss,
)

LIVE, SPOOF = 0, 1


def circle_points(*angles):
    return torch.tensor([[math.cos(a), math.sin(a)] for a in angles], dtype=torch.float64)


def chord_angle(distance):
    """Angle between unit vectors whose Euclidean distance is `distance`"""
    return 2 * math.asin(distance / 2)


# regression

def test_regression_zero_maps():
    assert float(regression_loss(torch.zeros(2, 3, 4, 4), torch.tensor([LIVE, LIVE]))) == 0.0


def test_regression_is_per_element_mean():
    loss = regression_loss(torch.full((1, 3, 4, 4), 0.1), torch.tensor([LIVE]))
    assert float(loss) == pytest.approx(0.1)


def test_regression_ignores_spoof_samples():
    cues = torch.randn(3, 3, 4, 4)
    assert float(regression_loss(cues, torch.tensor([SPOOF, SPOOF, SPOOF]))) == 0.0
    mixed = regression_loss(cues, torch.tensor([LIVE, SPOOF, SPOOF]))
    assert float(mixed) == pytest.approx(float(cues[0].abs().mean()))


def test_regression_gradient_is_zero_for_spoof_rows():
    cues = torch.randn(4, 3, 4, 4, requires_grad=True)
    regression_loss(cues, torch.tensor([LIVE, SPOOF, LIVE, SPOOF])).backward()
    assert torch.count_nonzero(cues.grad[[1, 3]]) == 0
    assert torch.count_nonzero(cues.grad[[0, 2]]) > 0


def test_regression_live_and_spoof_targets():
    cues = torch.cat([torch.zeros(1, 3, 2, 2), torch.ones(1, 3, 2, 2)])
    assert float(regression_loss(cues, torch.tensor([LIVE, SPOOF]), "live_and_spoof")) == 0.0
    assert float(regression_loss(torch.zeros(2, 3, 2, 2), torch.tensor([LIVE, SPOOF]), "live_and_spoof")) == 0.5


# distances and mining

def test_pairwise_distance_examples():
    distances = pairwise_distances(torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [2.0, 0.0]]))
    assert float(distances[0, 1]) == pytest.approx(math.sqrt(2))
    assert float(distances[0, 2]) == pytest.approx(2.0)
    assert float(distances[0, 3]) == 0.0
    assert torch.equal(distances, distances.T)
    assert torch.count_nonzero(distances.diagonal()) == 0


def test_zero_feature_vector_keeps_gradients_finite():
    features = torch.tensor([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]], requires_grad=True)
    distances = pairwise_distances(features)
    assert float(distances[0, 1]) == pytest.approx(1.0)
    distances.sum().backward()
    assert bool(torch.isfinite(features.grad).all())


def test_identical_features_mine_both_live_orderings():
    labels = torch.tensor([LIVE, LIVE, SPOOF])
    features = torch.ones(3, 4)
    assert mine_triplets(labels, pairwise_distances(features), 0.5) == [(0, 1, 2), (1, 0, 2)]
    loss, count = triplet_loss(features, labels, 0.5)
    assert count == 2
    assert float(loss) == pytest.approx(0.5)


def test_all_live_batch_mines_nothing():
    labels = torch.tensor([LIVE, LIVE, LIVE])
    features = torch.randn(3, 4)
    assert mine_triplets(labels, pairwise_distances(features), 0.5) == []
    loss, count = triplet_loss(features, labels, 0.5)
    assert count == 0 and float(loss) == 0.0


def test_satisfied_margin_gives_zero_loss():
    # a at 0, p at d(a,p)=0.2, n on the other side at d(a,n)=0.9
    features = circle_points(0.0, chord_angle(0.2), -chord_angle(0.9))
    loss, count = triplet_loss(features, torch.tensor([LIVE, LIVE, SPOOF]), 0.5)
    assert count == 0
    assert float(loss) == 0.0


def test_violated_margin_hinge_value():
    # d(a,p)=0.6, d(a,n)=0.3: hinge for (a, p, n) is 0.6 - 0.3 + 0.5 = 0.8
    features = circle_points(0.0, chord_angle(0.6), -chord_angle(0.3))
    labels = torch.tensor([LIVE, LIVE, SPOOF])
    distances = pairwise_distances(features)
    assert float(distances[0, 1]) == pytest.approx(0.6)
    assert float(distances[0, 2]) == pytest.approx(0.3)

    reverse_hinge = 0.6 - float(distances[1, 2]) + 0.5
    loss, count = triplet_loss(features, labels, 0.5)
    assert count == 2
    assert float(loss) == pytest.approx((0.8 + reverse_hinge) / 2)


def brute_force_triplets(labels, distances, margin):
    triplets = []
    batch = len(labels)
    for a in range(batch):
        for p in range(batch):
            for n in range(batch):
                if labels[a] != LIVE or labels[p] != LIVE or labels[n] != SPOOF or a == p:
                    continue
                if distances[a][p] - distances[a][n] + margin > 0:
                    triplets.append((a, p, n))
    return triplets


def test_mining_matches_brute_force_enumeration():
    generator = torch.Generator().manual_seed(0)
    for trial in range(500):
        batch = int(torch.randint(2, 13, (), generator=generator))
        if trial % 50 == 0:
            labels = torch.full((batch,), trial // 50 % 2)
        else:
            labels = torch.randint(0, 2, (batch,), generator=generator)
        features = torch.randn(batch, 5, generator=generator, dtype=torch.float64)
        margin = float(torch.rand((), generator=generator, dtype=torch.float64))
        distances = pairwise_distances(features)
        expected = brute_force_triplets(labels.tolist(), distances.tolist(), margin)
        assert mine_triplets(labels, distances, margin) == expected


def test_triplet_loss_is_scale_invariant():
    generator = torch.Generator().manual_seed(1)
    features = torch.randn(8, 6, generator=generator, dtype=torch.float64)
    labels = torch.tensor([LIVE, SPOOF] * 4)
    loss, count = triplet_loss(features, labels, 0.5)
    scaled, scaled_count = triplet_loss(features * 3.7, labels, 0.5)
    assert count == scaled_count
    assert float(scaled) == pytest.approx(float(loss), rel=1e-9)


def test_triplet_loss_gradcheck():
    generator = torch.Generator().manual_seed(2)
    features = torch.randn(6, 4, generator=generator, dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([LIVE, LIVE, LIVE, SPOOF, SPOOF, SPOOF])
    # margin above the largest possible distance keeps every triplet active
    assert torch.autograd.gradcheck(lambda f: triplet_loss(f, labels, 2.5)[0], (features,))


def test_regression_gradcheck():
    generator = torch.Generator().manual_seed(3)
    cues = (torch.rand(3, 3, 4, 4, generator=generator, dtype=torch.float64) + 0.1).requires_grad_(True)
    labels = torch.tensor([LIVE, SPOOF, LIVE])
    assert torch.autograd.gradcheck(lambda c: regression_loss(c, labels), (cues,))


# classification and total

def test_classification_loss_examples():
    assert float(classification_loss(torch.tensor([1.0]), torch.tensor([SPOOF]))) == pytest.approx(0.0, abs=1e-6)
    assert float(classification_loss(torch.tensor([0.5]), torch.tensor([SPOOF]))) == pytest.approx(math.log(2))
    batch = classification_loss(torch.tensor([0.9, 0.1]), torch.tensor([SPOOF, LIVE]))
    assert float(batch) == pytest.approx(-math.log(0.9), rel=1e-5)
    assert float(batch) == pytest.approx(0.10536, abs=1e-5)


def test_classification_loss_gradcheck():
    generator = torch.Generator().manual_seed(5)
    probabilities = (torch.rand(6, generator=generator, dtype=torch.float64) * 0.9 + 0.05).requires_grad_(True)
    labels = torch.tensor([LIVE, SPOOF, SPOOF, LIVE, SPOOF, LIVE])
    assert torch.autograd.gradcheck(lambda q: classification_loss(q, labels), (probabilities,))


def numeric_gradient(fn, x, eps=1e-6):
    """Double-precision central differences, one element at a time"""
    x = x.detach().double()
    gradient = torch.zeros_like(x)
    for index in range(x.numel()):
        step = torch.zeros(x.numel(), dtype=x.dtype)
        step[index] = eps
        step = step.view_as(x)
        gradient.view(-1)[index] = (fn(x + step) - fn(x - step)) / (2 * eps)
    return gradient


def single_precision_gradient(fn, x):
    x = x.detach().float().requires_grad_(True)
    fn(x).backward()
    return x.grad.double()


LABELS = torch.tensor([LIVE, LIVE, LIVE, SPOOF, SPOOF, SPOOF])


@pytest.mark.parametrize(
    "name, fn, shape, offset",
    [
        ("regression", lambda c: regression_loss(c, LABELS), (6, 3, 4, 4), 0.1),
        ("triplet", lambda f: triplet_loss(f, LABELS, 2.5)[0], (6, 4), 0.0),
        ("classification", lambda q: classification_loss(q, LABELS), (6,), 0.05),
    ],
)
def test_single_precision_loss_gradients(name, fn, shape, offset):
    generator = torch.Generator().manual_seed(6)
    if name == "triplet":
        x = torch.randn(*shape, generator=generator, dtype=torch.float64)
    else:
        x = torch.rand(*shape, generator=generator, dtype=torch.float64) * 0.9 + offset
    torch.testing.assert_close(single_precision_gradient(fn, x), numeric_gradient(fn, x), rtol=1e-3, atol=1e-5)


def test_classification_loss_is_finite_at_extremes():
    loss = classification_loss(torch.tensor([0.0, 1.0]), torch.tensor([SPOOF, LIVE]))
    assert math.isfinite(float(loss))


def test_total_loss_weighting():
    weights = LossWeights()
    total = total_loss(torch.tensor(0.1), {"E5": torch.tensor(0.2)}, torch.tensor(0.3), weights)
    assert float(total) == pytest.approx(2.2)
    zero = total_loss(torch.tensor(0.0), {"E5": torch.tensor(0.0)}, torch.tensor(0.0), weights)
    assert float(zero) == 0.0
    ablation = total_loss(torch.tensor(0.1), {"E5": torch.tensor(0.2)}, torch.tensor(0.3), LossWeights(alpha1=1, alpha2=0, alpha3=0))
    assert float(ablation) == pytest.approx(0.1)


def test_triplet_terms_are_summed_over_taps():
    weights = LossWeights(alpha1=0, alpha2=1, alpha3=0)
    total = total_loss(torch.tensor(0.0), {"E5": torch.tensor(0.2), "D1": torch.tensor(0.4)}, torch.tensor(0.0), weights)
    assert float(total) == pytest.approx(0.6)


def test_non_finite_component_is_reported():
    with pytest.raises(NonFiniteLossError) as excinfo:
        total_loss(torch.tensor(float("nan")), {"E5": torch.tensor(0.2)}, torch.tensor(0.3), LossWeights())
    assert "regression" in str(excinfo.value)


def test_compute_losses_breakdown():
    generator = torch.Generator().manual_seed(4)
    labels = torch.tensor([LIVE, LIVE, SPOOF, SPOOF])
    taps = {"E5": torch.randn(4, 8, generator=generator), "D1": torch.randn(4, 4, generator=generator)}
    terms = compute_losses(
        torch.rand(4, 3, 8, 8, generator=generator) * 2 - 1, taps,
        torch.tensor([0.2, 0.3, 0.7, 0.8]), labels, LossWeights(), margin=0.5,
    )
    breakdown = terms.breakdown()
    assert set(breakdown.triplet_per_tap) == {"E5", "D1"}
    assert all(0 <= count <= 4 for count in breakdown.triplet_count_per_tap.values())
    expected = 5 * breakdown.regression + sum(breakdown.triplet_per_tap.values()) + 5 * breakdown.auxiliary
    assert breakdown.total == pytest.approx(expected, rel=1e-5)
