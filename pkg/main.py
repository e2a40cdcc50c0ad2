import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from src.checkpoint import Checkpoint
from src.config import load_run_config
from src.corpus_repository import CorpusRepository
from src.harness.runner import ABLATION_AXES, Runner, ablate, evaluate, spanning_sweep, train
from src.models import Task
from src.report_generator import ReportGenerator
from src.synth_data import (
    chain_grammar,
    desk_grammars,
    generate_corpus,
    long_range_grammar,
    markov_grammar,
    order_grammar,
    sparse_order_grammar,
)

# Load environment variables from .env file
load_dotenv()

CHECKPOINT_FILE = "checkpoint.bin"
LOSS_CURVE_FILE = "loss_curve.csv"
ABLATION_FILE = "ablation_{axis}.csv"
SWEEP_FILE = "spanning_sweep.csv"
CORPUS_INDEX_FILE = "corpus.csv"

GRAMMARS = {
    "desk": lambda: desk_grammars(),
    "chain": lambda: [chain_grammar()],
    "markov": lambda: [markov_grammar()],
    "long_range": lambda: [long_range_grammar()],
    "order3": lambda: [order_grammar(3)],
    "sparse_order3": lambda: [sparse_order_grammar(3)],
}

logger = logging.getLogger("main")


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    overrides: dict[str, object] = {"seed": args.seed, "task": args.task, "corpus": args.corpus, "out": args.out}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value
    return overrides


def run_generate(args: argparse.Namespace) -> None:
    sequences = generate_corpus(
        GRAMMARS[args.grammar](),
        args.n_sequences,
        args.seed,
        fps=args.fps,
        dim=args.dim,
        sigma=args.sigma,
        distractors=args.distractors,
        spike_rate=args.spike_rate,
        drift=args.drift,
    )
    repository = CorpusRepository(sequences)
    repository.save(args.out)
    ReportGenerator.write_table(repository.to_dataframe(), Path(args.out) / CORPUS_INDEX_FILE)


def run_train(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, _overrides(args))
    result = train(config, config.corpus)
    out = Path(config.out)
    result.checkpoint.save(out / CHECKPOINT_FILE)
    generator = ReportGenerator()
    generator.write_table(result.loss_curve, out / LOSS_CURVE_FILE)
    logger.info(f"Checkpoint {result.checkpoint.digest()} written to {out / CHECKPOINT_FILE}")

    scored = result.heldout_corpus if result.heldout_corpus.count else result.train_corpus
    report = Runner(config).evaluate(result.model, scored.sequences)
    generator.write_summary(report, out / "report.txt")
    generator.generate_report(report, tables={"loss curve": result.loss_curve}, output_path=out / "report.html")


def run_evaluate(args: argparse.Namespace) -> None:
    checkpoint = Checkpoint.load(args.checkpoint)
    task = Task(args.task) if args.task else None
    report = evaluate(checkpoint, args.corpus, task=task, out=args.out)
    logger.info(f"Primary metric: {report.primary_metric():.2f}")


def run_ablate(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, _overrides(args))
    table = ablate(config, config.corpus, args.axis)
    ReportGenerator.write_table(table, Path(config.out) / ABLATION_FILE.format(axis=args.axis))


def run_sweep(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, _overrides(args))
    table = spanning_sweep(config, config.corpus, args.fractions)
    ReportGenerator.write_table(table, Path(config.out) / SWEEP_FILE)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Temporal aggregate models for action anticipation")
    subparsers = parser.add_subparsers(dest="command", required=True)

    generate = subparsers.add_parser("generate", help="Write a synthetic corpus of feature files")
    generate.add_argument("--seed", type=int, required=True)
    generate.add_argument("--out", required=True)
    generate.add_argument("--grammar", choices=sorted(GRAMMARS), default="desk")
    generate.add_argument("--n-sequences", type=int, default=60)
    generate.add_argument("--dim", type=int, default=32)
    generate.add_argument("--fps", type=float, default=5.0)
    generate.add_argument("--sigma", type=float, default=0.5)
    generate.add_argument("--distractors", type=int, default=0)
    generate.add_argument("--spike-rate", type=float, default=1.0, help="Share of frames showing their prototype")
    generate.add_argument("--drift", type=float, default=0.0, help="Std of the per-segment feature offset")
    generate.set_defaults(handler=run_generate)

    def add_run_arguments(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--seed", type=int, required=True)
        sub.add_argument("--task", choices=[t.value for t in Task], required=True)
        sub.add_argument("--corpus", required=True)
        sub.add_argument("--out", required=True)
        sub.add_argument("--config", help="key=value config file")
        sub.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key")

    train_parser = subparsers.add_parser("train", help="Train a model and write a checkpoint")
    add_run_arguments(train_parser)
    train_parser.set_defaults(handler=run_train)

    evaluate_parser = subparsers.add_parser("evaluate", help="Evaluate a checkpoint")
    evaluate_parser.add_argument("--checkpoint", required=True)
    evaluate_parser.add_argument("--task", choices=[t.value for t in Task])
    evaluate_parser.add_argument("--corpus", required=True)
    evaluate_parser.add_argument("--out", required=True)
    evaluate_parser.set_defaults(handler=run_evaluate)

    ablate_parser = subparsers.add_parser("ablate", help="Train and evaluate variants along one axis")
    add_run_arguments(ablate_parser)
    ablate_parser.add_argument("--axis", choices=sorted(ABLATION_AXES), required=True)
    ablate_parser.set_defaults(handler=run_ablate)

    sweep_parser = subparsers.add_parser("sweep", help="Accuracy against the spanning start fraction")
    add_run_arguments(sweep_parser)
    sweep_parser.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 0.9])
    sweep_parser.set_defaults(handler=run_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
    except ValueError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    return 0


if __name__ == "__main__":
    logging.basicConfig(
        level=os.getenv("TAGG_LOG_LEVEL", "INFO").upper(), format="[%(levelname)s:%(name)s]  %(message)s"
    )
    sys.exit(main())
