import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Literal

from pydantic import BaseModel, Field, model_validator

from analysis import EvalReport, build_report, emit_report
from datagen import VAL_SIZE, BandAxis, ColorScheme, LabeledDataset, Source, build_dataset, dataset_id
from dataset_store import write_dataset
from layers import CustomDropoutConfig
from network import InputStage, ModelConfig, build_model
from snapshot import ModelSnapshot, write_snapshot
from training import TrainConfig, train

SOURCE_TRAIN_SIZE = {"mnist": 60000, "fashionmnist": 60000}
DESK_TRAIN = 10000
DESK_VAL = 2000
DESK_EPOCHS = 10
FULL_EPOCHS = 50

Log = Callable[[str], None]


class ExperimentPlan(BaseModel):
    source: Source = "mnist"
    schemes: list[ColorScheme] = Field(default_factory=lambda: list(ColorScheme), min_length=1)
    eval_schemes: list[ColorScheme] = Field(default_factory=lambda: list(ColorScheme), min_length=1)
    norms: list[Literal["batch", "layer", "instance"]] = Field(default_factory=lambda: ["batch"], min_length=1)
    input_stages: list[InputStage] = Field(default_factory=lambda: ["plain3"], min_length=1)
    dropout: CustomDropoutConfig = Field(default_factory=CustomDropoutConfig)
    scale: Literal["desk", "full"] = "desk"
    train_subset: int | None = DESK_TRAIN
    val_subset: int | None = DESK_VAL
    test_subset: int | None = None
    val_size: int = Field(VAL_SIZE, ge=1)
    conv_widths: tuple[int, int, int] = (32, 64, 128)
    dense_widths: tuple[int, int] = (512, 256)
    epochs: int | None = None
    batch_size: int = Field(128, ge=2)
    band_axis: BandAxis = "rows"
    data_seed: int = Field(0, ge=0)
    model_seed: int = Field(0, ge=0)
    shuffle_seed: int = Field(0, ge=0)
    jobs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_scale(self) -> "ExperimentPlan":
        if self.scale == "full":
            self.train_subset = None
            self.val_subset = None
        elif self.train_subset is not None:
            available = SOURCE_TRAIN_SIZE[self.source] - self.val_size
            if not 1 <= self.train_subset <= available:
                raise ValueError(f"train_subset must be in [1, {available}], got {self.train_subset}")
        if self.val_subset is not None and not 1 <= self.val_subset <= self.val_size:
            raise ValueError(f"val_subset must be in [1, {self.val_size}], got {self.val_subset}")
        if self.epochs is None:
            self.epochs = FULL_EPOCHS if self.scale == "full" else DESK_EPOCHS
        return self


def model_id(source: str, scheme: ColorScheme, norm: str, stage: str, plan: ExperimentPlan) -> str:
    name = f"{'M' if source == 'mnist' else 'F'}M{scheme.position}"
    if len(plan.norms) > 1:
        name += f"-{norm}"
    if stage == "gray4":
        name += "-gray4"
    return name


def _write_partial(out_dir: Path, completed: list[str], stage: str, error: Exception) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    partial = {"completed": completed, "failed_stage": stage, "error": str(error)}
    (out_dir / "PARTIAL.json").write_text(json.dumps(partial, indent=2), encoding="utf-8")


def run_plan(
    plan: ExperimentPlan, data_dir: Path, out_dir: Path, log: Log = print, progress: bool = False
) -> EvalReport:
    """Generate datasets, train one model per (scheme, norm, input stage), emit the report."""
    out_dir = Path(out_dir)
    completed: list[str] = []
    stage = "datasets"
    try:
        train_sets: dict[ColorScheme, tuple[LabeledDataset, LabeledDataset]] = {}
        for scheme in plan.schemes:
            pair = []
            for split, limit in (("train", plan.train_subset), ("val", plan.val_subset)):
                ds = build_dataset(
                    plan.source, split, scheme, plan.data_seed, data_dir,
                    band_axis=plan.band_axis, limit=limit, val_size=plan.val_size,
                )
                name = f"{dataset_id(plan.source, scheme)}_{split}"
                path, _ = write_dataset(ds, out_dir / "data" / f"{name}.cmds")
                log(f"[OK] wrote {path} count={len(ds)} scheme={scheme.value} split={split}")
                pair.append(ds)
            train_sets[scheme] = (pair[0], pair[1])
        test_sets: dict[str, LabeledDataset] = {}
        for scheme in plan.eval_schemes:
            ds = build_dataset(
                plan.source, "test", scheme, plan.data_seed, data_dir,
                band_axis=plan.band_axis, limit=plan.test_subset,
            )
            name = dataset_id(plan.source, scheme)
            path, _ = write_dataset(ds, out_dir / "data" / f"{name}_test.cmds")
            log(f"[OK] wrote {path} count={len(ds)} scheme={scheme.value} split=test")
            test_sets[name] = ds
        completed.append(stage)

        stage = "training"
        train_config = TrainConfig(
            epochs=plan.epochs, batch_size=plan.batch_size, shuffle_seed=plan.shuffle_seed
        )
        runs = [
            (model_id(plan.source, scheme, norm, input_stage, plan), scheme, norm, input_stage)
            for scheme in plan.schemes
            for norm in plan.norms
            for input_stage in plan.input_stages
        ]

        def _train_one(run: tuple) -> ModelSnapshot:
            name, scheme, norm, input_stage = run
            config = ModelConfig(
                conv_widths=plan.conv_widths,
                dense_widths=plan.dense_widths,
                norm=norm,
                input_stage=input_stage,
                dropout=plan.dropout,
                seed=plan.model_seed,
            )
            model = build_model(config)
            log(f"[OK] built {name} params={model.parameter_count()}")
            train_set, val_set = train_sets[scheme]
            snapshot = train(
                model,
                train_set,
                val_set,
                train_config,
                on_epoch=lambda r: log(
                    f"{name} epoch={r.epoch} train_loss={r.train_loss:.4f} "
                    f"train_acc={r.train_accuracy:.4f} val_acc={r.val_accuracy:.4f}"
                ),
                progress=progress,
            )
            write_snapshot(snapshot, out_dir / "models" / f"{name}.cmsn")
            log(f"[OK] {name} best_val_acc={snapshot.best_val_accuracy:.4f} epoch={snapshot.epoch_of_best}")
            return snapshot

        with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
            snapshots = dict(zip((r[0] for r in runs), pool.map(_train_one, runs)))
        completed.append(stage)

        stage = "report"
        report = build_report(
            snapshots, test_sets, extra_provenance={"plan": plan.model_dump(mode="json")}
        )
        emit_report(report, "json", out_dir / "report.json")
        emit_report(report, "csv", out_dir / "csv")
        completed.append(stage)
        (out_dir / "PARTIAL.json").unlink(missing_ok=True)
    except Exception as e:
        _write_partial(out_dir, completed, stage, e)
        raise
    return report
