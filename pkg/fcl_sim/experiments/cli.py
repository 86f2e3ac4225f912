"""
``fcl-sim`` command line: gen-data, pretrain, finetune-eval, ablate and report.

Exit codes: 0 on success, 1 on validation and usage errors, 2 on I/O and file-format errors.
"""
import argparse
import sys

from fcl_sim.exceptions import (
    DataFormatError,
    IntegrityError,
    PolicyViolationError,
    ValidationError,
)
from fcl_sim.experiments.config import METHODS, ExperimentConfig, load_config
from fcl_sim.experiments.main import (
    cmd_ablate,
    cmd_finetune_eval,
    cmd_gen_data,
    cmd_pretrain,
    cmd_report,
)
from fcl_sim.federation import NegativesPolicy
from fcl_sim.logger import get_logger, set_level

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_VALIDATION."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("--config", required=False, help="Path to a section.key=value config file")
    parser.add_argument("--seed", type=int, required=False, help="Run this seed only")
    parser.add_argument("--out", required=False, help="Output directory")
    parser.add_argument(
        "--policy",
        required=False,
        choices=[p.value for p in NegativesPolicy],
        help="Negatives policy for the fcl method",
    )
    parser.add_argument("--method", required=False, choices=METHODS, help="Pretraining method")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")


def parse_arguments(argv=None):
    parser = _Parser(prog="fcl-sim", description="Federated contrastive learning simulator.")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_common(commands.add_parser("gen-data", help="Generate and partition synthetic data"))
    _add_common(commands.add_parser("pretrain", help="Pretrain and write checkpoints"))

    finetune = commands.add_parser("finetune-eval", help="Fine-tune and evaluate a checkpoint")
    _add_common(finetune)
    finetune.add_argument(
        "--checkpoint", required=False, help="Checkpoint to use instead of the pretrain output"
    )

    _add_common(commands.add_parser("ablate", help="Compare the three negatives policies"))

    report = commands.add_parser("report", help="Summarize metrics CSVs")
    report.add_argument("metrics_dir", help="Directory searched for metrics.csv files")
    report.add_argument("--out", required=False, help="Report path (default: <metrics_dir>/report.md)")
    report.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    return parser.parse_args(argv)


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, out=args.out, policy=args.policy, method=args.method)


def run(args) -> None:
    if args.command == "report":
        print(cmd_report(args.metrics_dir, args.out))
        return

    cfg = resolve_config(args)
    if args.command == "gen-data":
        for path in cmd_gen_data(cfg):
            print(path)
    elif args.command == "pretrain":
        for run_dir in cmd_pretrain(cfg).values():
            print(run_dir)
    elif args.command == "finetune-eval":
        print(cmd_finetune_eval(cfg, args.checkpoint))
    elif args.command == "ablate":
        print(cmd_ablate(cfg).to_string(index=False))


def main(argv=None) -> int:
    args = parse_arguments(argv)
    if args.verbose:
        set_level("DEBUG")

    try:
        run(args)
    except (ValidationError, IntegrityError, PolicyViolationError) as e:
        logger.error(f"Error: {e}")
        return EXIT_VALIDATION
    except (DataFormatError, OSError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
