import argparse
import sys
from pathlib import Path

from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from analysis import build_report, emit_report
from config import ConfigError, Settings
from datagen import SCHEME_ALIASES, SOURCES, VAL_SIZE, ColorScheme, build_dataset
from dataset_store import read_dataset, write_dataset
from experiment import DESK_TRAIN, DESK_VAL, ExperimentPlan, run_plan
from layers import CustomDropoutConfig
from network import ModelConfig, build_model
from snapshot import read_snapshot, write_snapshot
from training import TrainConfig, train


def _csv_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _scheme(raw: str) -> ColorScheme:
    try:
        return ColorScheme.from_alias(raw)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _schemes(raw: str) -> list[ColorScheme]:
    return [_scheme(p) for p in _csv_list(raw)]


def _int_list(count: int):
    def parse(raw: str) -> tuple[int, ...]:
        try:
            values = tuple(int(p) for p in _csv_list(raw))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated integers") from None
        if len(values) != count:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated integers")
        return values

    return parse


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {raw!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def cmd_gen_data(args: argparse.Namespace) -> int:
    ds = build_dataset(
        args.source,
        args.split,
        args.scheme,
        args.seed,
        Path(args.data_dir),
        band_axis=args.bands,
        limit=args.limit,
        val_size=args.val_size,
        n_jobs=args.jobs,
    )
    path, meta_path = write_dataset(ds, Path(args.out))
    print(f"[OK] wrote {path} count={len(ds)} scheme={ds.provenance.scheme.value} seed={args.seed}")
    print(f"[OK] wrote {meta_path}")
    return 0


def train_configs(args: argparse.Namespace) -> tuple[ModelConfig, TrainConfig]:
    config = ModelConfig(
        conv_widths=args.conv_widths,
        dense_widths=args.dense_widths,
        norm=args.norm,
        input_stage=args.input,
        dropout=CustomDropoutConfig(prob=args.dropout_prob, per_sample=args.per_sample_mask),
        seed=args.seed,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        lr=args.lr,
        momentum=args.momentum,
        shuffle_seed=args.shuffle_seed if args.shuffle_seed is not None else args.seed,
    )
    return config, train_config


def cmd_train(args: argparse.Namespace) -> int:
    config, train_config = args.config
    train_set = read_dataset(Path(args.data))
    val_set = read_dataset(Path(args.val))
    model = build_model(config)
    print(f"[OK] built model norm={config.norm} input={config.input_stage} params={model.parameter_count()}")
    snapshot = train(
        model,
        train_set,
        val_set,
        train_config,
        on_epoch=lambda r: print(
            f"epoch={r.epoch} train_loss={r.train_loss:.4f} "
            f"train_acc={r.train_accuracy:.4f} val_acc={r.val_accuracy:.4f}",
            flush=True,
        ),
        progress=args.progress,
    )
    path = write_snapshot(snapshot, Path(args.out))
    print(f"[OK] wrote {path} best_val_acc={snapshot.best_val_accuracy:.4f} epoch={snapshot.epoch_of_best}")
    return 0


def cmd_eval_matrix(args: argparse.Namespace) -> int:
    snapshots = {Path(p).stem: read_snapshot(Path(p)) for p in args.snapshots}
    datasets = {Path(p).stem: read_dataset(Path(p)) for p in args.datasets}
    report = build_report(snapshots, datasets)
    for entry in report.matrix:
        print(f"{entry.model} {entry.dataset} {entry.accuracy:.4f}")
    emit_report(report, "json", Path(args.out))
    print(f"[OK] wrote {args.out}")
    if args.csv_dir:
        for path in emit_report(report, "csv", Path(args.csv_dir)):
            print(f"[OK] wrote {path}")
    return 0


def experiment_plan(args: argparse.Namespace) -> ExperimentPlan:
    return ExperimentPlan(
        source=args.source,
        schemes=args.schemes,
        norms=_csv_list(args.norms),
        input_stages=_csv_list(args.inputs),
        dropout=CustomDropoutConfig(prob=args.dropout_prob),
        scale=args.scale,
        train_subset=args.train_subset,
        val_subset=args.val_subset,
        val_size=args.val_size,
        conv_widths=args.conv_widths,
        dense_widths=args.dense_widths,
        epochs=args.epochs,
        batch_size=args.batch_size,
        band_axis=args.bands,
        data_seed=args.seed,
        model_seed=args.model_seed if args.model_seed is not None else args.seed,
        shuffle_seed=args.seed,
        jobs=args.jobs,
    )


def cmd_reproduce(args: argparse.Namespace) -> int:
    plan = args.config
    out_dir = Path(args.out_dir)
    report = run_plan(
        plan, Path(args.data_dir), out_dir, log=lambda line: print(line, flush=True), progress=args.progress
    )
    for entry in report.matrix:
        print(f"{entry.model} {entry.dataset} {entry.accuracy:.4f}")
    print(f"[OK] wrote {out_dir / 'report.json'}")
    return 0


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chroma", description="Colour-invariance experiments on colorized MNIST/FashionMNIST"
    )
    parser.add_argument("--threads", type=_positive_int, default=settings.threads, help="Numeric thread count")
    parser.add_argument("--progress", action="store_true", default=settings.progress, help="Show progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Colorize an IDX split into a dataset container")
    gen.add_argument("--source", choices=SOURCES, required=True)
    gen.add_argument("--scheme", type=_scheme, required=True, help=f"One of: {', '.join(SCHEME_ALIASES)}")
    gen.add_argument("--split", choices=["train", "val", "test"], required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="Output .cmds path")
    gen.add_argument("--data-dir", default=str(settings.data_dir), help="Root of raw IDX files")
    gen.add_argument("--bands", choices=["rows", "columns"], default="rows")
    gen.add_argument("--limit", type=_positive_int, help="Keep only the first N images of the split")
    gen.add_argument("--val-size", type=_positive_int, default=VAL_SIZE, help="Images held out of train for val")
    gen.add_argument("--jobs", type=_positive_int, default=1, help="Parallel colorization workers")
    gen.set_defaults(handler=cmd_gen_data, configure=None)

    tr = sub.add_parser("train", help="Train one model and write a snapshot")
    tr.add_argument("--data", required=True, help="Training .cmds path")
    tr.add_argument("--val", required=True, help="Validation .cmds path")
    tr.add_argument("--norm", choices=["batch", "layer", "instance", "none"], default="batch")
    tr.add_argument("--input", choices=["plain3", "gray4"], default="plain3")
    tr.add_argument("--dropout-prob", type=float, default=0.5)
    tr.add_argument("--per-sample-mask", action="store_true", help="One dropout draw per sample")
    tr.add_argument("--epochs", type=_positive_int, default=50)
    tr.add_argument("--batch-size", type=_positive_int, default=128)
    tr.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--momentum", type=float, default=0.9)
    tr.add_argument("--seed", type=int, default=0, help="Model initialization seed")
    tr.add_argument("--shuffle-seed", type=int, help="Defaults to --seed")
    tr.add_argument("--conv-widths", type=_int_list(3), default=(32, 64, 128))
    tr.add_argument("--dense-widths", type=_int_list(2), default=(512, 256))
    tr.add_argument("--out", required=True, help="Output .cmsn path")
    tr.set_defaults(handler=cmd_train, configure=train_configs)

    ev = sub.add_parser("eval-matrix", help="Evaluate snapshots on datasets and write a report")
    ev.add_argument("--snapshots", nargs="+", required=True)
    ev.add_argument("--datasets", nargs="+", required=True)
    ev.add_argument("--out", required=True, help="Output report.json path")
    ev.add_argument("--csv-dir", help="Also write CSV tables to this directory")
    ev.set_defaults(handler=cmd_eval_matrix, configure=None)

    rep = sub.add_parser("reproduce", help="Generate data, train, evaluate, report")
    rep.add_argument("--source", choices=SOURCES, default="mnist")
    rep.add_argument("--schemes", type=_schemes, default=list(ColorScheme), help="e.g. green,single,thirds")
    rep.add_argument("--norms", default="batch", help="e.g. batch,layer,instance")
    rep.add_argument("--inputs", default="plain3", help="e.g. plain3,gray4")
    rep.add_argument("--dropout-prob", type=float, default=0.5)
    rep.add_argument("--scale", choices=["desk", "full"], default="desk")
    rep.add_argument("--train-subset", type=_positive_int, default=DESK_TRAIN)
    rep.add_argument("--val-subset", type=_positive_int, default=DESK_VAL)
    rep.add_argument("--val-size", type=_positive_int, default=VAL_SIZE, help="Images held out of train for val")
    rep.add_argument("--conv-widths", type=_int_list(3), default=(32, 64, 128))
    rep.add_argument("--dense-widths", type=_int_list(2), default=(512, 256))
    rep.add_argument("--epochs", type=_positive_int, help="Defaults to 10 (desk) or 50 (full)")
    rep.add_argument("--batch-size", type=_positive_int, default=128)
    rep.add_argument("--bands", choices=["rows", "columns"], default="rows")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--model-seed", type=int, help="Defaults to --seed")
    rep.add_argument("--jobs", type=_positive_int, default=1, help="Concurrent trainers")
    rep.add_argument("--data-dir", default=str(settings.data_dir), help="Root of raw IDX files")
    rep.add_argument("--out-dir", default=str(settings.out_dir))
    rep.set_defaults(handler=cmd_reproduce, configure=experiment_plan)
    return parser


def _one_line(error: BaseException) -> str:
    return " ".join(str(error).split()) or type(error).__name__


def main(argv: list[str] | None = None) -> int:
    try:
        settings = Settings.from_env()
    except ConfigError as e:
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return 1
    parser = build_parser(settings)
    args = parser.parse_args(argv)
    try:
        args.config = args.configure(args) if args.configure else None
    except ValidationError as e:
        parser.error(f"{args.command}: {_one_line(e)}")
    try:
        with threadpool_limits(limits=args.threads):
            return args.handler(args)
    except (RuntimeError, ValueError, ArithmeticError, KeyError, OSError) as e:
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
