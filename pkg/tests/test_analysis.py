import csv
import json

import numpy as np
import pytest

from analysis import (
    EvalReport,
    accuracy_matrix,
    build_report,
    class_count_report,
    confidence_report,
    emit_report,
    load_report,
)
from conftest import colorized
from datagen import ColorScheme
from network import build_model
from training import Predictions, evaluate


def _predictions(labels, predictions, probs):
    return Predictions(np.array(labels), np.array(predictions), np.array(probs, dtype=float))


@pytest.fixture
def grid(small_config):
    models = {f"MM{i}": build_model(small_config(seed=i)) for i in (1, 2, 3)}
    datasets = {
        f"MD{s.position}": colorized(20, s, seed=1, image_seed=s.position) for s in ColorScheme
    }
    return models, datasets


def test_confidence_all_correct():
    entries = confidence_report(_predictions([0, 0, 1], [0, 0, 1], [1.0, 1.0, 1.0]))
    assert [(e.label, e.bucket, e.mean, e.count) for e in entries] == [
        (0, "correct", 1.0, 2),
        (1, "correct", 1.0, 1),
    ]


def test_confidence_means_per_bucket():
    entries = confidence_report(_predictions([3, 3, 3], [3, 3, 5], [0.6, 0.8, 0.4]))
    by_bucket = {e.bucket: e for e in entries}
    assert by_bucket["correct"].mean == pytest.approx(0.7)
    assert by_bucket["incorrect"].mean == pytest.approx(0.4)
    assert by_bucket["incorrect"].count == 1


def test_confidence_matches_brute_force(grid):
    models, datasets = grid
    predictions = evaluate(models["MM1"], datasets["MD3"])
    entries = confidence_report(predictions, "MM1", "MD3")
    for e in entries:
        probs = [
            p
            for label, pred, p in predictions.records()
            if label == e.label and (pred == label) == (e.bucket == "correct")
        ]
        assert e.count == len(probs)
        assert e.mean == pytest.approx(sum(probs) / len(probs))
    assert sum(e.count for e in entries) == len(datasets["MD3"])


def test_class_counts_perfect_classifier():
    labels = [0, 1, 1, 2, 9]
    counts = class_count_report(_predictions(labels, labels, [0.9] * 5))
    assert len(counts) == 10
    assert all(c.correct == c.total for c in counts)
    assert counts[1].total == 2 and counts[5].total == 0


def test_class_counts_weighted_mean_is_accuracy(grid):
    models, datasets = grid
    predictions = evaluate(models["MM2"], datasets["MD2"])
    counts = class_count_report(predictions)
    assert sum(c.correct for c in counts) / sum(c.total for c in counts) == predictions.accuracy


def test_accuracy_matrix_covers_every_pair(grid):
    models, datasets = grid
    entries = accuracy_matrix(models, datasets)
    assert [(e.model, e.dataset) for e in entries] == [
        (m, d) for m in models for d in datasets
    ]
    for e in entries:
        assert e.accuracy == evaluate(models[e.model], datasets[e.dataset]).accuracy


def test_build_report_records_provenance(grid):
    models, datasets = grid
    report = build_report(models, datasets, extra_provenance={"note": "unit"})
    assert len(report.matrix) == 9
    assert len(report.class_counts) == 9 * 10
    assert len(report.confusion) == 9
    assert np.array(report.confusion[0].matrix).sum() == 20
    assert report.provenance["seeds"]["models"] == {"MM1": 1, "MM2": 2, "MM3": 3}
    assert report.provenance["seeds"]["datasets"]["MD2"] == 1
    assert report.provenance["datasets"]["MD3"]["scheme"] == "HorizontalThirds"
    assert report.provenance["note"] == "unit"
    assert report.accuracy("MM2", "MD1") == report.matrix[3].accuracy
    with pytest.raises(KeyError):
        report.accuracy("MM9", "MD1")


def test_json_report_round_trip(grid, tmp_path):
    report = build_report(*grid)
    (path,) = emit_report(report, "json", tmp_path / "report.json")
    doc = json.loads(path.read_text())
    assert set(doc) == {"matrix", "confidence", "class_counts", "confusion", "provenance"}
    back = load_report(path)
    assert isinstance(back, EvalReport)
    for a, b in zip(back.matrix, report.matrix):
        assert (a.model, a.dataset) == (b.model, b.dataset)
        assert a.accuracy == pytest.approx(b.accuracy, abs=5e-5)


def test_json_report_is_deterministic(grid, tmp_path):
    a = emit_report(build_report(*grid), "json", tmp_path / "a.json")[0]
    b = emit_report(build_report(*grid), "json", tmp_path / "b.json")[0]
    assert a.read_text() == b.read_text()


def test_csv_tables(grid, tmp_path):
    report = build_report(*grid)
    paths = emit_report(report, "csv", tmp_path / "csv")
    assert [p.name for p in paths] == ["matrix.csv", "confidence.csv", "class_counts.csv"]
    with paths[0].open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["model", "MD1", "MD2", "MD3"]
    assert [r[0] for r in rows[1:]] == ["MM1", "MM2", "MM3"]
    with paths[2].open() as f:
        assert len(list(csv.reader(f))) == 1 + 90


def test_unknown_report_format(grid, tmp_path):
    with pytest.raises(ValueError, match="format"):
        emit_report(build_report(*grid), "xml", tmp_path / "r.xml")
