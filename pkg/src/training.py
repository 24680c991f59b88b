from dataclasses import dataclass
from typing import Callable, Iterator, Literal

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from datagen import CHANNELS, LabeledDataset, to_batch
from layers import softmax_cross_entropy
from network import Model
from optimizers import Adam, SGDMomentum
from snapshot import EpochRecord, ModelSnapshot

EVAL_BATCH = 256


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"Non-finite loss {loss} at epoch {epoch}, batch {batch}.")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class EvaluationError(RuntimeError):
    pass


class TrainConfig(BaseModel):
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(128, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    lr: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    shuffle_seed: int = Field(0, ge=0)

    def build_optimizer(self) -> Adam | SGDMomentum:
        if self.optimizer == "sgd":
            return SGDMomentum(lr=self.lr, momentum=self.momentum)
        return Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass(frozen=True)
class Predictions:
    labels: np.ndarray
    predictions: np.ndarray
    max_probs: np.ndarray

    @property
    def accuracy(self) -> float:
        if len(self.labels) == 0:
            return 0.0
        return int((self.labels == self.predictions).sum()) / len(self.labels)

    def records(self) -> Iterator[tuple[int, int, float]]:
        for label, prediction, prob in zip(self.labels, self.predictions, self.max_probs):
            yield int(label), int(prediction), float(prob)


def _check_compatible(model: Model, dataset: LabeledDataset) -> None:
    if dataset.channels != CHANNELS:
        raise EvaluationError(
            f"Model input stage {model.config.input_stage} expects {CHANNELS}-channel images, "
            f"dataset has {dataset.channels}."
        )
    if len(dataset) and int(dataset.labels.max()) >= model.config.classes:
        raise EvaluationError(
            f"Dataset label {int(dataset.labels.max())} exceeds model classes {model.config.classes}."
        )


def evaluate(
    model: Model | ModelSnapshot, dataset: LabeledDataset, batch_size: int = EVAL_BATCH
) -> Predictions:
    """Eval-mode predictions (running batch-norm stats, dropout off)."""
    if isinstance(model, ModelSnapshot):
        model = model.to_model()
    _check_compatible(model, dataset)
    predictions = np.empty(len(dataset), dtype=np.int64)
    max_probs = np.empty(len(dataset), dtype=np.float64)
    for start in range(0, len(dataset), batch_size):
        probs = model.predict_proba(to_batch(dataset.images[start : start + batch_size]))
        predictions[start : start + len(probs)] = probs.argmax(axis=1)
        max_probs[start : start + len(probs)] = probs.max(axis=1)
    return Predictions(dataset.labels.astype(np.int64), predictions, max_probs)


def train(
    model: Model,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    progress: bool = False,
) -> ModelSnapshot:
    """Mini-batch training keeping the parameters of the best validation epoch.

    Ties on validation accuracy keep the earliest epoch.
    """
    if not len(train_set) or not len(val_set):
        raise ValueError("Training and validation sets must be nonempty.")
    if model.config.norm == "batch" and config.batch_size < 2:
        raise ValueError("Batch normalization needs batch_size >= 2.")
    _check_compatible(model, train_set)
    _check_compatible(model, val_set)

    optimizer = config.build_optimizer()
    rng = np.random.default_rng(config.shuffle_seed)
    labels = train_set.labels.astype(np.int64)
    history: list[EpochRecord] = []
    best_state, best_acc, best_epoch = model.state_dict(), -1.0, 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        starts = range(0, len(order), config.batch_size)
        loss_sum, correct = 0.0, 0
        for batch, start in enumerate(
            tqdm(starts, desc=f"epoch {epoch}", disable=not progress, leave=False), start=1
        ):
            idx = order[start : start + config.batch_size]
            logits = model.forward(to_batch(train_set.images[idx]), training=True)
            loss, probs, grad = softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, batch, loss)
            model.backward(grad.astype(logits.dtype, copy=False))
            optimizer.step(model.named_parameters(), model.named_gradients())
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == labels[idx]).sum())

        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / len(order),
            train_accuracy=correct / len(order),
            val_accuracy=evaluate(model, val_set).accuracy,
        )
        history.append(record)
        if record.val_accuracy > best_acc:
            best_state, best_acc, best_epoch = model.state_dict(), record.val_accuracy, epoch
        if on_epoch is not None:
            on_epoch(record)

    return ModelSnapshot(
        config=model.config,
        state=best_state,
        best_val_accuracy=best_acc,
        epoch_of_best=best_epoch,
        history=history,
        train_config=config.model_dump(),
        data={
            "train": train_set.provenance.model_dump(mode="json"),
            "val": val_set.provenance.model_dump(mode="json"),
        },
    )
