import csv
import json
from pathlib import Path
from typing import Any, Literal, Mapping

import numpy as np
from pydantic import BaseModel, Field
from sklearn.metrics import confusion_matrix

from datagen import CLASSES, LabeledDataset
from network import Model
from snapshot import ModelSnapshot
from training import Predictions, evaluate

DECIMALS = 4


class MatrixEntry(BaseModel):
    model: str
    dataset: str
    accuracy: float = Field(ge=0.0, le=1.0)


class ConfidenceEntry(BaseModel):
    model: str
    dataset: str
    label: int
    bucket: Literal["correct", "incorrect"]
    mean: float
    count: int = Field(ge=1)


class ClassCountEntry(BaseModel):
    model: str
    dataset: str
    label: int
    correct: int = Field(ge=0)
    total: int = Field(ge=0)


class ConfusionEntry(BaseModel):
    model: str
    dataset: str
    matrix: list[list[int]]


class EvalReport(BaseModel):
    matrix: list[MatrixEntry]
    confidence: list[ConfidenceEntry]
    class_counts: list[ClassCountEntry]
    confusion: list[ConfusionEntry] = Field(default_factory=list)
    provenance: dict[str, Any] = Field(default_factory=dict)

    def accuracy(self, model: str, dataset: str) -> float:
        for entry in self.matrix:
            if entry.model == model and entry.dataset == dataset:
                return entry.accuracy
        raise KeyError(f"No matrix entry for ({model}, {dataset}).")


Grid = dict[tuple[str, str], Predictions]


def evaluate_grid(
    models: Mapping[str, Model | ModelSnapshot], datasets: Mapping[str, LabeledDataset]
) -> Grid:
    """Evaluate every model on every dataset, in insertion order."""
    grid: Grid = {}
    for model_id, model in models.items():
        live = model.to_model() if isinstance(model, ModelSnapshot) else model
        for dataset_id, dataset in datasets.items():
            grid[(model_id, dataset_id)] = evaluate(live, dataset)
    return grid


def matrix_entries(grid: Grid) -> list[MatrixEntry]:
    return [MatrixEntry(model=m, dataset=d, accuracy=p.accuracy) for (m, d), p in grid.items()]


def accuracy_matrix(
    models: Mapping[str, Model | ModelSnapshot], datasets: Mapping[str, LabeledDataset]
) -> list[MatrixEntry]:
    return matrix_entries(evaluate_grid(models, datasets))


def confidence_report(
    predictions: Predictions, model: str = "", dataset: str = "", classes: int = CLASSES
) -> list[ConfidenceEntry]:
    """Mean max-probability per (class, correctness); empty buckets are omitted."""
    correct = predictions.labels == predictions.predictions
    entries = []
    for label in range(classes):
        in_class = predictions.labels == label
        for bucket, mask in (("correct", in_class & correct), ("incorrect", in_class & ~correct)):
            count = int(mask.sum())
            if count:
                entries.append(
                    ConfidenceEntry(
                        model=model,
                        dataset=dataset,
                        label=label,
                        bucket=bucket,
                        mean=float(predictions.max_probs[mask].mean()),
                        count=count,
                    )
                )
    return entries


def _confusion(predictions: Predictions, classes: int) -> np.ndarray:
    return confusion_matrix(predictions.labels, predictions.predictions, labels=list(range(classes)))


def class_count_report(
    predictions: Predictions, model: str = "", dataset: str = "", classes: int = CLASSES
) -> list[ClassCountEntry]:
    matrix = _confusion(predictions, classes)
    return [
        ClassCountEntry(
            model=model,
            dataset=dataset,
            label=label,
            correct=int(matrix[label, label]),
            total=int(matrix[label].sum()),
        )
        for label in range(classes)
    ]


def _model_provenance(model: Model | ModelSnapshot) -> dict:
    if isinstance(model, ModelSnapshot):
        return {
            "config": model.config.model_dump(mode="json"),
            "train_config": model.train_config,
            "best_val_accuracy": model.best_val_accuracy,
            "epoch_of_best": model.epoch_of_best,
            "data": model.data,
        }
    return {"config": model.config.model_dump(mode="json")}


def build_report(
    models: Mapping[str, Model | ModelSnapshot],
    datasets: Mapping[str, LabeledDataset],
    classes: int = CLASSES,
    extra_provenance: dict | None = None,
) -> EvalReport:
    grid = evaluate_grid(models, datasets)
    confidence, counts, confusion = [], [], []
    for (m, d), predictions in grid.items():
        confidence.extend(confidence_report(predictions, m, d, classes))
        counts.extend(class_count_report(predictions, m, d, classes))
        confusion.append(
            ConfusionEntry(model=m, dataset=d, matrix=_confusion(predictions, classes).tolist())
        )
    provenance = {
        "datasets": {d: ds.provenance.model_dump(mode="json") for d, ds in datasets.items()},
        "models": {m: _model_provenance(model) for m, model in models.items()},
        "seeds": {
            "datasets": {d: ds.provenance.seed for d, ds in datasets.items()},
            "models": {m: model.config.seed for m, model in models.items()},
        },
        **(extra_provenance or {}),
    }
    return EvalReport(
        matrix=matrix_entries(grid),
        confidence=confidence,
        class_counts=counts,
        confusion=confusion,
        provenance=provenance,
    )


def _rounded(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, DECIMALS)
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_rounded(v) for v in value]
    return value


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.{DECIMALS}f}" if isinstance(v, float) else v for v in row])
    return path


def emit_report(report: EvalReport, fmt: Literal["json", "csv"], path: Path) -> list[Path]:
    """Serialize a report; JSON to one file, CSV to one file per table in `path`."""
    path = Path(path)
    if fmt == "json":
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = _rounded(report.model_dump(mode="json"))
        path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        return [path]
    if fmt != "csv":
        raise ValueError(f"Unknown report format '{fmt}'. Use json or csv.")

    path.mkdir(parents=True, exist_ok=True)
    models = list(dict.fromkeys(e.model for e in report.matrix))
    datasets = list(dict.fromkeys(e.dataset for e in report.matrix))
    cells = {(e.model, e.dataset): e.accuracy for e in report.matrix}
    return [
        _write_csv(
            path / "matrix.csv",
            ["model", *datasets],
            [[m, *(cells.get((m, d), "") for d in datasets)] for m in models],
        ),
        _write_csv(
            path / "confidence.csv",
            ["model", "dataset", "label", "bucket", "mean", "count"],
            [[e.model, e.dataset, e.label, e.bucket, e.mean, e.count] for e in report.confidence],
        ),
        _write_csv(
            path / "class_counts.csv",
            ["model", "dataset", "label", "correct", "total"],
            [[e.model, e.dataset, e.label, e.correct, e.total] for e in report.class_counts],
        ),
    ]


def load_report(path: Path) -> EvalReport:
    return EvalReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
