"""
Adam with coupled weight decay and the epoch-level training driver.
"""

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng, backward
from .exceptions import ContractError, DimensionError, NonFiniteGradientError
from .network import decide, loss

logger = logging.getLogger(__name__)

TRAINING_LOG_FIELDS = ('epoch', 'mean_loss', 'train_accuracy', 'wall_seconds')


@dataclass
class AdamState:
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyperparameters(self):
        return {
            'learning_rate': self.learning_rate,
            'weight_decay': self.weight_decay,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            't': self.t,
        }


def adam_step(params, grads, state):
    """
    One Adam update over named arrays.

    Weight decay is coupled: the decay term joins the gradient before the
    moment estimates. Nothing is updated if any gradient is non-finite.

    Args:
        params: dict name -> parameter array
        grads: dict name -> gradient array of the same shape
        state: AdamState before the step

    Returns:
        tuple: (dict of new parameter arrays, new AdamState)
    """
    for name, value in params.items():
        if name not in grads:
            raise ContractError(f"No gradient for parameter '{name}'")
        grad = grads[name]
        if grad.shape != value.shape:
            raise DimensionError(f"Gradient for '{name}' has shape {grad.shape}, parameter has {value.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    t = state.t + 1
    beta1, beta2 = state.beta1, state.beta2
    correction1 = 1 - beta1 ** t
    correction2 = 1 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        grad = grads[name] + state.weight_decay * value
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1 - beta1) * grad
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = (value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype)
        new_m[name] = m.astype(value.dtype)
        new_v[name] = v.astype(value.dtype)
    return new_params, dataclasses.replace(state, t=t, m=new_m, v=new_v)


class Adam:
    """Steps the tracked parameter Nodes of a model in place of their values."""

    def __init__(self, named_parameters, state=None):
        self.parameters = named_parameters
        self.state = state or AdamState()

    def step(self):
        params = {name: node.value for name, node in self.parameters.items()}
        grads = {name: node.grad for name, node in self.parameters.items()}
        new_params, self.state = adam_step(params, grads, self.state)
        for name, node in self.parameters.items():
            node.value = new_params[name]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self):
        if self.epochs < 0:
            raise ContractError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be positive, got {self.batch_size}")
        return self


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float
    wall_seconds: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    adam_state: AdamState = None

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return [record.mean_loss for record in self.records]

    def write_csv(self, path):
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(TRAINING_LOG_FIELDS)
            for record in self.records:
                writer.writerow([
                    record.epoch, repr(record.mean_loss), repr(record.train_accuracy),
                    f"{record.wall_seconds:.3f}",
                ])


def batches(count, batch_size, rng):
    """Shuffled index batches; the last one may be smaller."""
    order = rng.permutation(count)
    return [order[start:start + batch_size] for start in range(0, count, batch_size)]


def train_epochs(model, dataset, config, state=None):
    """
    Train ``model`` on ``dataset`` (``images`` [N, C, H, W], ``labels`` [N]).

    Each epoch reshuffles with ``Rng(seed).split('shuffle', epoch)``. A batch
    size above the dataset size yields a single smaller batch.

    Returns:
        TrainingLog with one EpochRecord per epoch and the final AdamState
    """
    config.validate()
    if len(dataset) == 0:
        raise ContractError("Cannot train on an empty dataset")
    optimizer = Adam(
        model.named_parameters(),
        state or AdamState(learning_rate=config.learning_rate, weight_decay=config.weight_decay),
    )
    log = TrainingLog(adam_state=optimizer.state)
    shuffle = Rng(config.seed).split('shuffle')

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        total_loss, correct = 0.0, 0
        for indices in batches(len(dataset), config.batch_size, shuffle.split(epoch)):
            images, labels = dataset.images[indices], dataset.labels[indices]
            batch_loss, result = loss(model, images, labels, mode='train')
            backward(batch_loss)
            optimizer.step()
            total_loss += float(batch_loss.value) * len(indices)
            correct += int((decide(result.logits.value).classes == labels).sum())
        record = EpochRecord(
            epoch=epoch,
            mean_loss=total_loss / len(dataset),
            train_accuracy=100.0 * correct / len(dataset),
            wall_seconds=time.perf_counter() - started,
        )
        log.records.append(record)
        logger.info(
            f"Epoch {epoch}/{config.epochs}: loss {record.mean_loss:.6f}, "
            f"train accuracy {record.train_accuracy:.2f}%, {record.wall_seconds:.1f}s"
        )
    log.adam_state = optimizer.state
    return log
