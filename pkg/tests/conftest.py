import numpy as np
import pytest

from labelclean.data import Example, ExampleSet
from labelclean.nnet import ArchitectureSpec, TrainConfig


def make_tiny_problem(seed: int) -> tuple[ExampleSet, Example]:
    """Non-separable 8-point, 2-D, 2-class problem with a decisive
    counter-example: three deep points per cluster plus a contradicting
    near-coincident pair in the ambiguous mid-region.  The suspicious example
    sits on the pair annotated with the intruder's label.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    mu = direction * rng.uniform(1.5, 2.0)
    a = rng.normal(size=(3, 2)) * 0.3 - mu
    b = rng.normal(size=(3, 2)) * 0.3 + mu
    alpha = rng.uniform(-0.4, 0.4)
    spot = alpha * mu + rng.normal(size=2) * 0.2
    pair_a = spot + rng.normal(size=2) * 0.05
    pair_b = spot + rng.normal(size=2) * 0.05
    X = np.concatenate([a, [pair_a], b, [pair_b]])
    y = np.array([1, 1, 1, 1, 2, 2, 2, 2])
    examples = tuple(
        Example(id=i, x=X[i], observed_label=int(y[i]), true_label=int(y[i]))
        for i in range(8)
    )
    dataset = ExampleSet(examples=examples, num_classes=2, feature_dim=2, name="tiny")
    sx = spot + rng.normal(size=2) * 0.05
    suspicious = Example(id=999, x=sx, observed_label=2, true_label=2)
    return dataset, suspicious


def tiny_arch(seed: int) -> ArchitectureSpec:
    return ArchitectureSpec(kind="linear-softmax", input_dim=2, num_classes=2, seed=seed)


def tiny_train_config(seed: int) -> TrainConfig:
    # fixed-budget full-batch training tight enough for leave-one-out
    # retraining comparisons; early stopping off so every retrain runs the
    # same number of steps
    return TrainConfig(epochs=1200, batch_size=8, early_stop=False,
                       learning_rate=0.05, seed=seed)


@pytest.fixture
def tiny_problem():
    return make_tiny_problem(1000)
