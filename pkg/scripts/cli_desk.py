#!/usr/bin/env python3
"""
CLI for the deepfake desk pipeline.

Each subcommand validates the run config, runs one pipeline step and writes
its artifacts under the run's out_dir. Results are printed as JSON on stdout;
structured logs go to stderr.

Usage:
    uv run python scripts/cli_desk.py synth --config config/run.example.yaml
    uv run python scripts/cli_desk.py augment-offline --out runs/demo
    uv run python scripts/cli_desk.py partition --out runs/demo
    uv run python scripts/cli_desk.py train --out runs/demo --backbone local-cnn
    uv run python scripts/cli_desk.py eval --out runs/demo
    uv run python scripts/cli_desk.py ensemble --out runs/demo
    uv run python scripts/cli_desk.py report --out runs/demo
    uv run python scripts/cli_desk.py ablate --out runs/ablation --threads 4
    uv run python scripts/cli_desk.py selftest

Exit codes: 0 success, 1 runtime failure, 2 invalid config or arguments.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import structlog
import yaml
from pydantic import ValidationError

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.config_schema import RunConfig, describe_validation_error  # noqa: E402
from scripts.ablation import AblationPlan, ablation_run, plan_from_config  # noqa: E402
from scripts.paths import RunPaths, run_paths  # noqa: E402
from scripts.recipe import (  # noqa: E402
    load_validation,
    run_augment_offline,
    run_ensemble,
    run_eval_member,
    run_partition,
    run_synth,
    run_train_member,
    write_resolved_config,
)
from scripts.report import report_emit  # noqa: E402
from scripts.selftest import run_selftest  # noqa: E402

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2

# Subcommands whose outputs do not depend on the worker count
THREADED_COMMANDS = {"synth", "augment-offline", "ablate"}


class ConfigError(Exception):
    """Raised for a config file or flag combination that cannot be used."""

    pass


def configure_logging(quiet: bool = False) -> None:
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(logging.WARNING if quiet else logging.INFO),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    )


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Config file (or defaults) with --seed / --out applied.

    Raises:
        ConfigError: Unreadable file, invalid keys or values, or a --threads
            value the subcommand does not allow.
    """
    if args.threads < 1:
        raise ConfigError(f"--threads must be at least 1, got {args.threads}")
    if args.threads > 1 and args.command not in THREADED_COMMANDS:
        raise ConfigError(f"--threads > 1 is only allowed for {', '.join(sorted(THREADED_COMMANDS))}")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig.defaults()
        return cfg.with_overrides(seed=args.seed, out_dir=args.out)
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e)) from e
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {args.config}: {e}") from e


def _setup(args: argparse.Namespace) -> tuple[RunConfig, RunPaths]:
    cfg = load_run_config(args)
    paths = run_paths(cfg.out_dir)
    write_resolved_config(cfg, paths)
    return cfg, paths


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _member_indices(cfg: RunConfig, backbone: str | None) -> list[int]:
    names = [b.name for b in cfg.backbones]
    if backbone is None:
        return list(range(len(names)))
    if backbone not in names:
        raise ConfigError(f"--backbone {backbone} is not one of {names}")
    return [names.index(backbone)]


def cmd_synth(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    manifest = run_synth(cfg, paths, threads=args.threads)
    _emit({"command": "synth", "manifest": str(paths.manifest), "samples": len(manifest.records)})
    return EXIT_OK


def cmd_augment_offline(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    manifest = run_augment_offline(cfg, paths, threads=args.threads)
    added = sum(1 for r in manifest.records if r.id.endswith("-aug"))
    _emit({"command": "augment-offline", "manifest": str(paths.augmented_manifest), "added": added})
    return EXIT_OK


def cmd_partition(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    plan = run_partition(cfg, paths)
    counts = [plan.trainset_counts(k) for k in range(plan.n_models)]
    _emit({"command": "partition", "plan": str(paths.partition_plan), "trainsets": counts})
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    indices = _member_indices(cfg, args.backbone)
    valset = load_validation(paths)
    trained = []
    for index in indices:
        checkpoint = run_train_member(cfg, paths, index, valset=valset)
        name = cfg.backbones[index].name
        trained.append({"backbone": name, "checkpoint": str(paths.classifier_checkpoint(name)), "steps": checkpoint.step})
    _emit({"command": "train", "models": trained})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    indices = _member_indices(cfg, args.backbone)
    valset = load_validation(paths)
    results = {}
    for index in indices:
        _, report = run_eval_member(cfg, paths, index, valset=valset)
        results[cfg.backbones[index].name] = report.model_dump(mode="json", by_alias=True)
    _emit({"command": "eval", "metrics": results})
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    files = [Path(p) for p in args.predictions] if args.predictions else None
    report = run_ensemble(cfg, paths, prediction_files=files)
    _emit(
        {
            "command": "ensemble",
            "decisions": str(paths.decisions),
            "metrics": report.model_dump(mode="json", by_alias=True),
        }
    )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    plan = plan_from_config(cfg)
    if args.backbone or args.seeds:
        plan = AblationPlan(
            backbone=args.backbone or plan.backbone,
            seeds=args.seeds or plan.seeds,
            configs=plan.configs,
        )
    table = ablation_run(cfg, plan, paths, threads=args.threads)
    _emit({"command": "ablate", "table": str(paths.ablation_dir / "ablation.json"), "rows": table["rows"]})
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    cfg, paths = _setup(args)
    document = report_emit(cfg, paths)
    _emit({"command": "report", "report": str(paths.report_dir / "report.json"), "result_table": document["result_table"]})
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    status = run_selftest(seed=cfg.seed)
    _emit(status)
    return EXIT_OK if status["ready"] else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config (YAML or JSON); defaults to the desk recipe")
    common.add_argument("--seed", type=int, help="Override the run seed")
    common.add_argument("--out", help="Override out_dir")
    common.add_argument("--threads", type=int, default=1, help="Worker threads (synth, augment-offline, ablate)")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = argparse.ArgumentParser(
        description="deepfake desk pipeline: synthetic data, two-stage training, ensembling",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    # Full recipe, step by step
    uv run python scripts/cli_desk.py synth --out runs/demo
    uv run python scripts/cli_desk.py augment-offline --out runs/demo
    uv run python scripts/cli_desk.py partition --out runs/demo
    uv run python scripts/cli_desk.py train --out runs/demo
    uv run python scripts/cli_desk.py eval --out runs/demo
    uv run python scripts/cli_desk.py ensemble --out runs/demo
    uv run python scripts/cli_desk.py report --out runs/demo

    # Ablation table over 5 seeds
    uv run python scripts/cli_desk.py ablate --out runs/ablation --threads 4
""",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth_parser = subparsers.add_parser("synth", parents=[common], help="Generate the synthetic corpus")
    synth_parser.set_defaults(func=cmd_synth)

    augment_parser = subparsers.add_parser(
        "augment-offline", parents=[common], help="Persist offline-augmented copies of train reals"
    )
    augment_parser.set_defaults(func=cmd_augment_offline)

    partition_parser = subparsers.add_parser("partition", parents=[common], help="Split train fakes across backbones")
    partition_parser.set_defaults(func=cmd_partition)

    train_parser = subparsers.add_parser("train", parents=[common], help="Stage 1 + stage 2 for each backbone")
    train_parser.add_argument("--backbone", help="Train only this preset")
    train_parser.set_defaults(func=cmd_train)

    eval_parser = subparsers.add_parser("eval", parents=[common], help="Score each backbone on the validation split")
    eval_parser.add_argument("--backbone", help="Evaluate only this preset")
    eval_parser.set_defaults(func=cmd_eval)

    ensemble_parser = subparsers.add_parser("ensemble", parents=[common], help="Majority-vote the three members")
    ensemble_parser.add_argument(
        "--predictions", nargs=3, metavar="FILE", help="Three prediction JSONL files (default: the run's members)"
    )
    ensemble_parser.set_defaults(func=cmd_ensemble)

    ablate_parser = subparsers.add_parser("ablate", parents=[common], help="Run the four-configuration ablation")
    ablate_parser.add_argument("--backbone", help="Designated backbone (default: fewest multiply-accumulates)")
    ablate_parser.add_argument("--seeds", type=int, nargs="+", help="Seeds to run each configuration with")
    ablate_parser.set_defaults(func=cmd_ablate)

    report_parser = subparsers.add_parser("report", parents=[common], help="Summarize a completed run")
    report_parser.set_defaults(func=cmd_report)

    selftest_parser = subparsers.add_parser("selftest", parents=[common], help="Run oracle and gradient checks")
    selftest_parser.set_defaults(func=cmd_selftest)

    return parser


def cmd_dispatch(argv: list[str] | None = None) -> int:
    """Parse argv, run one subcommand and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    configure_logging(quiet=args.quiet)

    try:
        return args.func(args)
    except ConfigError as e:
        print(json.dumps({"error": "invalid_config", "message": str(e)}), file=sys.stdout)
        return EXIT_INVALID
    except ValidationError as e:
        print(json.dumps({"error": "invalid_config", "message": describe_validation_error(e)}), file=sys.stdout)
        return EXIT_INVALID
    except Exception as e:
        structlog.get_logger().error("command_failed", command=args.command, error=str(e))
        print(
            json.dumps({"error": f"{args.command.replace('-', '_')}_failed", "message": f"{type(e).__name__}: {e}"}),
            file=sys.stdout,
        )
        return EXIT_FAILED


def main():
    return cmd_dispatch()


if __name__ == "__main__":
    sys.exit(main())
