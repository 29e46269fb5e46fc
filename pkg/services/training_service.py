"""
Training service for kantize.
Minibatch momentum SGD on softmax cross-entropy for the desk-scale models.
"""
import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from kan.model import Model
from services.dataset_service import Dataset
from utils import DivergenceError, InvalidArgumentError, ShapeMismatchError, setup_logger
from config import TrainConfig, config


logger = setup_logger(__name__, config.app.log_level)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy and its gradient wrt the logits.

    Returns:
        (loss, grad [M, C])
    """
    M = logits.shape[0]
    rows = np.arange(M)
    loss = -float(log_softmax(logits, axis=1)[rows, labels].mean())
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / M


class MomentumSGD:
    """Heavy-ball SGD over the coefficient matrices of a model's KAN layers."""

    def __init__(self, model: Model, lr: float, momentum: float = 0.9):
        self.model = model
        self.lr = lr
        self.momentum = momentum
        self.velocities = [np.zeros_like(layer.coeffs) for layer in model.kan_layers()]

    def step(self, grads: List[np.ndarray]) -> None:
        for layer, velocity, grad in zip(self.model.kan_layers(), self.velocities, grads):
            velocity *= self.momentum
            velocity += grad
            layer.coeffs = layer.coeffs - self.lr * velocity


@dataclass
class TrainResult:
    """Outcome of one training run."""
    model: Model
    initial_loss: float
    final_loss: float
    # (epoch, step, loss) per minibatch
    curve: List[Tuple[int, int, float]] = field(default_factory=list)
    epoch_accuracy: List[float] = field(default_factory=list)

    def write_curve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "step", "loss"])
            for epoch, step, loss in self.curve:
                writer.writerow([epoch, step, repr(loss)])
        logger.info(f"Loss curve written to {path}")
        return path


def dataset_loss(model: Model, dataset: Dataset, batch: int = 512) -> float:
    """Mean cross-entropy of the fp32 model over a whole dataset."""
    total = 0.0
    for X, y in dataset.batches(batch):
        loss, _ = cross_entropy(model.forward(X), y)
        total += loss * X.shape[0]
    return total / max(len(dataset), 1)


def _check_compatible(model: Model, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    if dataset.n_features != model.input_size:
        raise ShapeMismatchError(
            f"model {model.name} takes {model.input_size} features, dataset has {dataset.n_features}"
        )
    if dataset.labels.max() >= model.n_classes:
        raise ShapeMismatchError(
            f"model {model.name} has {model.n_classes} outputs, dataset has label {dataset.labels.max()}"
        )


def snap_float32(model: Model) -> None:
    """Round every coefficient to its float32 value so saved models reload bit-exactly."""
    for layer in model.kan_layers():
        layer.coeffs = layer.coeffs.astype(np.float32).astype(np.float64)


def train(
    model: Model,
    dataset: Dataset,
    hyper: Optional[TrainConfig] = None,
    loss_csv: Optional[Union[str, Path]] = None,
    **overrides,
) -> TrainResult:
    """
    Train a model in place.

    Args:
        model: Model to train (its coefficients are replaced)
        dataset: Training data inside the grid domain
        hyper: Recipe, defaults to the configured one
        loss_csv: Optional path for the (epoch, step, loss) curve
        **overrides: Individual TrainConfig fields (lr, epochs, batch, momentum, seed)

    Returns:
        TrainResult with the initial/final full-dataset loss

    Raises:
        ShapeMismatchError: If model and dataset do not compose
        DivergenceError: If a minibatch loss becomes NaN or infinite
    """
    hyper = replace(hyper or config.train, **overrides)
    _check_compatible(model, dataset)
    rng = np.random.default_rng(hyper.seed)
    optimizer = MomentumSGD(model, hyper.lr, hyper.momentum)
    update = hyper.lr > 0

    initial_loss = dataset_loss(model, dataset)
    logger.info(
        f"Training {model.name}: {len(dataset)} samples, {hyper.epochs} epochs, "
        f"batch {hyper.batch}, lr {hyper.lr}, momentum {hyper.momentum}, initial loss {initial_loss:.4f}"
    )
    curve, epoch_accuracy = [], []
    step = 0
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(dataset))
        epoch_loss, correct = 0.0, 0
        for start in range(0, len(dataset), hyper.batch):
            index = order[start:start + hyper.batch]
            X, y = dataset.inputs[index], dataset.labels[index]
            logits, caches = model.forward_train(X)
            loss, grad = cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}, step {step}")
            if update:
                _, coeff_grads = model.backward(caches, grad)
                optimizer.step(coeff_grads)
            curve.append((epoch, step, loss))
            epoch_loss += loss * len(index)
            correct += int((logits.argmax(axis=1) == y).sum())
            step += 1
        epoch_accuracy.append(correct / len(dataset))
        logger.info(
            f"Epoch {epoch}/{hyper.epochs}: loss {epoch_loss / len(dataset):.4f}, "
            f"train accuracy {epoch_accuracy[-1]:.4f}"
        )

    if update:
        snap_float32(model)
    final_loss = dataset_loss(model, dataset)
    logger.info(f"Training finished: loss {initial_loss:.4f} -> {final_loss:.4f}")
    result = TrainResult(model, initial_loss, final_loss, curve, epoch_accuracy)
    if loss_csv is not None:
        result.write_curve(loss_csv)
    return result
