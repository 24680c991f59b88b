import json

import pytest
from pydantic import ValidationError

from datagen import ColorScheme, DatasetFormatError
from experiment import ExperimentPlan, model_id, run_plan
from snapshot import read_snapshot


def _plan(**overrides) -> ExperimentPlan:
    settings = {
        "train_subset": 40,
        "val_subset": 20,
        "val_size": 100,
        "conv_widths": (4, 8, 8),
        "dense_widths": (16, 16),
        "epochs": 1,
        "batch_size": 16,
        **overrides,
    }
    return ExperimentPlan(**settings)


def test_plan_defaults():
    plan = ExperimentPlan()
    assert plan.schemes == list(ColorScheme)
    assert plan.eval_schemes == list(ColorScheme)
    assert (plan.train_subset, plan.val_subset, plan.epochs) == (10000, 2000, 10)


def test_full_scale_uses_whole_splits():
    plan = ExperimentPlan(scale="full")
    assert plan.train_subset is None and plan.val_subset is None
    assert plan.epochs == 50


def test_plan_validation():
    with pytest.raises(ValidationError):
        ExperimentPlan(train_subset=0)
    with pytest.raises(ValidationError):
        ExperimentPlan(val_subset=6000)
    with pytest.raises(ValidationError):
        ExperimentPlan(norms=[])
    with pytest.raises(ValidationError):
        ExperimentPlan(batch_size=1)


def test_model_ids():
    one_norm = ExperimentPlan()
    assert model_id("mnist", ColorScheme.GREEN_ONLY, "batch", "plain3", one_norm) == "MM1"
    assert model_id("fashionmnist", ColorScheme.HORIZONTAL_THIRDS, "batch", "gray4", one_norm) == (
        "FM3-gray4"
    )
    many = ExperimentPlan(norms=["batch", "instance"])
    assert model_id("mnist", ColorScheme.RANDOM_SINGLE_CHANNEL, "instance", "plain3", many) == (
        "MM2-instance"
    )


def test_run_plan_writes_every_artifact(raw_dir, tmp_path):
    lines: list[str] = []
    out = tmp_path / "run"
    report = run_plan(_plan(), raw_dir, out, log=lines.append)
    assert [(e.model, e.dataset) for e in report.matrix] == [
        (m, d) for m in ("MM1", "MM2", "MM3") for d in ("MD1", "MD2", "MD3")
    ]
    for name in ("MM1", "MM2", "MM3"):
        snapshot = read_snapshot(out / "models" / f"{name}.cmsn")
        assert len(snapshot.history) == 1
    for dataset in ("MD1_train", "MD2_val", "MD3_test"):
        assert (out / "data" / f"{dataset}.cmds").exists()
        assert (out / "data" / f"{dataset}.cmds.json").exists()
    assert (out / "report.json").exists()
    assert (out / "csv" / "matrix.csv").exists()
    assert not (out / "PARTIAL.json").exists()
    assert any(line.startswith("MM2 epoch=1") for line in lines)
    doc = json.loads((out / "report.json").read_text())
    assert doc["provenance"]["plan"]["train_subset"] == 40


def test_run_plan_variants_and_concurrency(raw_dir, tmp_path):
    plan = _plan(
        schemes=[ColorScheme.GREEN_ONLY],
        eval_schemes=[ColorScheme.GREEN_ONLY, ColorScheme.RANDOM_SINGLE_CHANNEL],
        norms=["batch", "layer"],
        input_stages=["plain3", "gray4"],
        jobs=2,
    )
    report = run_plan(plan, raw_dir, tmp_path / "run", log=lambda line: None)
    models = list(dict.fromkeys(e.model for e in report.matrix))
    assert models == ["MM1-batch", "MM1-batch-gray4", "MM1-layer", "MM1-layer-gray4"]
    assert len(report.matrix) == 8


def test_run_plan_is_reproducible(raw_dir, tmp_path):
    plan = _plan(schemes=[ColorScheme.HORIZONTAL_THIRDS])
    run_plan(plan, raw_dir, tmp_path / "a", log=lambda line: None)
    run_plan(plan, raw_dir, tmp_path / "b", log=lambda line: None)
    assert (tmp_path / "a" / "report.json").read_text() == (tmp_path / "b" / "report.json").read_text()


def test_failed_run_leaves_partial_marker(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(DatasetFormatError):
        run_plan(_plan(), tmp_path / "missing", out, log=lambda line: None)
    partial = json.loads((out / "PARTIAL.json").read_text())
    assert partial["failed_stage"] == "datasets"
    assert partial["completed"] == []
