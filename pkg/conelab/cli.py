"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 runtime abort.
"""

import argparse
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .analysis import ALL_REPORTS, get_report
from .checkpoint import (
    CheckpointFormatError,
    IncompatibleArtifactsError,
    check_compatible,
    load_bank,
    load_checkpoint,
    save_bank,
    save_checkpoint,
)
from .config import ConfigError, TrainConfig, load_train_config, settings
from .data import DataGenerationError, DatasetFormatError, build_datasets, gen_multimode, write_csv
from .experiments import ABLATION_PRESETS, run_ablation, run_sweep, summarize
from .gradcheck import run_suite
from .models import RunManifest
from .numeric import SeededRng
from .report_generator import get_report_generator
from .trainer import NumericAbort, fit, write_metrics
from .utils import write_json, write_models_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_ABORT = 3

MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.json"
BANK_FILE = "bank.json"


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (TrainConfig field names)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config field; VALUE is parsed as JSON (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="run seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"conelab {__version__}")
    parser.add_argument("--log", choices=["debug", "info", "warning"], help="log level (default: CONE_LOG)")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a model and write run artifacts")
    _add_config_args(train)
    train.add_argument("--out", help="run directory (default: OUTPUT_DIR/<hash>-seed<N>)")

    gradcheck = commands.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    _add_config_args(gradcheck)
    gradcheck.add_argument("--tolerance", type=float, help="relative error bound for every component")
    gradcheck.add_argument("--instances", type=int, help="random instances per loss component")

    analyze = commands.add_parser("analyze", help="reports over a finished run")
    analyze.add_argument("report", choices=list(ALL_REPORTS), help="which report to write")
    analyze.add_argument("--run", help="run directory holding manifest, checkpoint and bank")
    analyze.add_argument("--checkpoint", help="checkpoint path (default: RUN/checkpoint.json)")
    analyze.add_argument("--bank", help="bank dump path (default: RUN/bank.json)")
    analyze.add_argument("--split", choices=["train", "test"], default="test", help="dataset split to analyze")
    analyze.add_argument("--samples", type=_int_list, help="sample ids for the coefficients report")
    analyze.add_argument("--out", help="output CSV (default: RUN/<report>.csv)")
    _add_config_args(analyze)

    gendata = commands.add_parser("gendata", help="write a synthetic multi-mode dataset as CSV")
    _add_config_args(gendata)
    gendata.add_argument("--out", required=True, help="destination CSV file")

    ablate = commands.add_parser("ablate", help="train loss-ablation presets over several seeds")
    _add_config_args(ablate)
    ablate.add_argument("--presets", default=",".join(ABLATION_PRESETS), help="comma-separated preset names")
    ablate.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4], help="comma-separated seeds")
    ablate.add_argument("--out", required=True, help="output directory")

    sweep = commands.add_parser("sweep", help="train once per value of one config field")
    _add_config_args(sweep)
    sweep.add_argument("--field", required=True, help="TrainConfig field to vary")
    sweep.add_argument("--values", required=True, help="comma-separated JSON values")
    sweep.add_argument("--seeds", type=_int_list, default=[0], help="comma-separated seeds")
    sweep.add_argument("--out", required=True, help="output directory")
    return parser


def _load_config(args: argparse.Namespace) -> TrainConfig:
    return load_train_config(args.config, args.overrides, args.seed)


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    run_dir = Path(args.out or Path(settings.OUTPUT_DIR) / f"{config.config_hash()[:12]}-seed{config.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "metrics_csv": str(run_dir / "metrics.csv"),
        "metrics_jsonl": str(run_dir / "metrics.jsonl"),
        "checkpoint": str(run_dir / CHECKPOINT_FILE),
        "bank": str(run_dir / BANK_FILE),
        "report": str(run_dir / "report.html"),
    }
    manifest = RunManifest(
        tool_version=__version__,
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        seed=config.seed,
        sub_seeds=config.sub_seeds(),
        rng_algorithm=SeededRng.algorithm,
        artifacts=artifacts,
    )
    manifest_path = str(run_dir / MANIFEST_FILE)
    write_json(manifest_path, manifest.model_dump(mode="json"))
    logger.info(f"run {manifest.config_hash[:12]} seed {config.seed} -> {run_dir}")

    train_set, test_set = build_datasets(config)
    try:
        result = fit(config, train_set, test_set)
    except NumericAbort:
        manifest.status = "aborted"
        manifest.finished_at = datetime.utcnow()
        write_json(manifest_path, manifest.model_dump(mode="json"))
        raise

    write_metrics(result.metrics, artifacts["metrics_csv"], artifacts["metrics_jsonl"])
    save_checkpoint(
        result.params,
        artifacts["checkpoint"],
        metadata={"config_hash": manifest.config_hash, "seed": config.seed, "epochs": config.epochs},
    )
    if result.state is not None:
        save_bank(result.state.bank, artifacts["bank"])
    else:
        manifest.artifacts.pop("bank", None)
    manifest.status = "completed"
    manifest.finished_at = datetime.utcnow()
    write_json(manifest_path, manifest.model_dump(mode="json"))
    get_report_generator().render_run_report(manifest, result.metrics, artifacts["report"])
    if result.metrics:
        final = result.metrics[-1]
        print(f"train_acc={final.train_acc:.4f} test_acc={final.test_acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _load_config(args)
    reports = run_suite(config, tolerance=args.tolerance, instances=args.instances)
    failed = [r for r in reports if not r.passed]
    for report in reports:
        print(f"{report.name:14s} max_rel_error={report.worst:.3e} tolerance={report.tolerance:.1e}")
    for report in failed:
        tensor = max(report.max_rel_error, key=report.max_rel_error.get)
        print(f"FAIL {report.name} ({tensor})")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _analysis_config(args: argparse.Namespace) -> TrainConfig:
    if args.config or not args.run:
        return _load_config(args)
    manifest_path = Path(args.run) / MANIFEST_FILE
    if not manifest_path.is_file():
        raise ConfigError(f"no {MANIFEST_FILE} in {args.run}; pass --config")
    manifest = RunManifest.model_validate(json.loads(manifest_path.read_text(encoding="utf-8")))
    return load_train_config(None, args.overrides, args.seed, base=manifest.config)


def cmd_analyze(args: argparse.Namespace) -> int:
    if not (args.run or args.checkpoint):
        raise ConfigError("analyze needs --run or --checkpoint")
    config = _analysis_config(args)
    run_dir = Path(args.run) if args.run else Path(settings.OUTPUT_DIR)
    params = load_checkpoint(args.checkpoint or str(run_dir / CHECKPOINT_FILE))
    report = get_report(args.report)

    bank = None
    if args.report != "export":
        bank = load_bank(args.bank or str(run_dir / BANK_FILE))
        check_compatible(params, bank)

    train_set, test_set = build_datasets(config)
    dataset = train_set if args.split == "train" else test_set
    if dataset.dim != params.input_dim:
        raise IncompatibleArtifactsError(f"dataset has dim {dataset.dim}, checkpoint expects {params.input_dim}")
    out_path = args.out or str(run_dir / report.filename)
    result = report.run(params, dataset, bank, config, out_path, sample_ids=args.samples)
    if args.report == "margins":
        summary_path = str(Path(out_path).with_suffix(".txt"))
        get_report_generator().render_margin_summary(result.data["stats"], config, summary_path)
    print(f"{result.display_name}: {result.summary} -> {out_path}")
    return EXIT_OK


def cmd_gendata(args: argparse.Namespace) -> int:
    config = _load_config(args)
    dataset = gen_multimode(
        config.data_classes,
        config.data_modes,
        config.data_dim,
        config.data_n_per_mode,
        config.data_separation,
        config.data_std,
        SeededRng(config.sub_seeds()["data"]),
    )
    write_csv(dataset, args.out)
    print(f"{len(dataset)} samples -> {args.out}")
    return EXIT_OK


def _write_scores(out_dir: str, name: str, scores, summary) -> None:
    write_models_csv(str(Path(out_dir) / f"{name}.csv"), scores, ["label", "seed", "train_acc", "test_acc", "probe_acc"])
    write_models_csv(
        str(Path(out_dir) / f"{name}_summary.csv"), summary, ["label", "runs", "mean_test_acc", "mean_probe_acc"]
    )
    for row in summary:
        print(f"{row.label:24s} test_acc={row.mean_test_acc:.4f} probe_acc={row.mean_probe_acc:.4f} (n={row.runs})")


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    scores = run_ablation(config, presets, args.seeds)
    _write_scores(args.out, "ablation", scores, summarize(scores))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    try:
        values = json.loads(f"[{args.values}]")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--values must be comma-separated JSON values: {exc.msg}") from exc
    scores = run_sweep(config, args.field, values, args.seeds)
    _write_scores(args.out, "sweep", scores, summarize(scores))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "analyze": cmd_analyze,
    "gendata": cmd_gendata,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    configure_logging(args.log)

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, IncompatibleArtifactsError, CheckpointFormatError, DatasetFormatError) as exc:
        logger.error(str(exc))
        return EXIT_USAGE
    except FileNotFoundError as exc:
        logger.error(f"file not found: {exc.filename or exc}")
        return EXIT_USAGE
    except (NumericAbort, DataGenerationError) as exc:
        logger.error(f"aborted: {exc}")
        return EXIT_ABORT
    except ValueError as exc:
        logger.error(str(exc))
        return EXIT_USAGE
