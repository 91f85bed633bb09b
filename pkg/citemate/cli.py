"""Command-line interface: ``citemate <command> [options]``.

Exit status is 0 on success, 2 for invalid input data or usage and 1 for
runtime failures such as an unreachable endpoint or a missing upstream artifact.
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from citemate import __version__
from citemate.core.config import settings
from citemate.core.corpus import read_dataset
from citemate.core.pipeline import Pipeline, RunConfig
from citemate.core.similarity import SimilarityWeights

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


def _weights(value: str) -> SimilarityWeights:
    try:
        return SimilarityWeights.parse(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", type=Path, required=True, help="Dataset JSON file")
    common.add_argument("--out", type=Path, help="Output directory for artifacts")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--strategy", help="fixed:<k>, rerank:<k>:<n>, autocut, autocut-star, elbow, surprise[:alpha], all")
    run.add_argument("--query-mode", dest="query_mode", choices=["patient", "clinician", "both"])
    run.add_argument("--embedding", help="file:<path>, http(s)://<url> or hash:<dim>")
    run.add_argument("--text-embedding", dest="text_embedding", help="Provider for answer-side similarity")
    run.add_argument("--llm-endpoint", dest="llm_endpoint", help="Completion endpoint URL or mock:echo")
    run.add_argument("--model", help="Model name sent to the endpoint")
    run.add_argument("--shots", choices=["zero", "one"])
    run.add_argument("--attribution-mode", dest="attribution_mode", choices=["post-retrieval", "post-generation"])
    run.add_argument("--max-tokens", dest="max_tokens", type=int)
    run.add_argument("--word-limit", dest="word_limit", type=int)
    run.add_argument("--weights", type=_weights, help="Attribution weights w1,w2,w3")
    run.add_argument("--threshold", type=float, help="Attribution threshold")
    run.add_argument("--weight-step", dest="weight_step", type=float)
    run.add_argument("--thresholds", type=_floats, help="Grid thresholds, comma-separated")
    run.add_argument("--jobs", type=int, help="Per-case parallelism bound")
    run.add_argument("--seed", type=int)

    parser = argparse.ArgumentParser(prog="citemate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("validate", parents=[common], help="Validate a dataset file")
    commands.add_parser("stats", parents=[common, run], help="Sentence count and length statistics")
    commands.add_parser("retrieve", parents=[common, run], help="Rank and truncate every case")
    commands.add_parser("generate", parents=[common, run], help="Generate answers from retrieval output")
    commands.add_parser("attribute", parents=[common, run], help="Attach citations to answers")
    for name, help_text in (
        ("evaluate", "Score attributed answers"),
        ("grid-search", "Search attribution weights and thresholds"),
    ):
        sub = commands.add_parser(name, parents=[common, run], help=help_text)
        sub.add_argument("--answers", type=Path, help="Answers artifact to read instead of the default")
    return parser


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else settings.LOG_LEVEL
    logging.basicConfig(format=settings.LOG_FORMAT, level=level)
    if verbose:
        for name in list(logging.root.manager.loggerDict):
            if name.startswith("citemate"):
                logging.getLogger(name).setLevel(logging.DEBUG)


def _run_config(args: argparse.Namespace) -> RunConfig:
    fields: dict[str, Any] = {
        key: value
        for key, value in vars(args).items()
        if key in RunConfig.model_fields and value is not None
    }
    return RunConfig(**fields)


def _validate(args: argparse.Namespace) -> int:
    dataset = read_dataset(args.dataset)
    print(f"ok: {len(dataset.cases)} cases ({dataset.split} split)")
    return EXIT_OK


def _stats(pipeline: Pipeline) -> int:
    report = pipeline.stats()
    for section, key, value in report.csv_rows()[1:]:
        print(f"{section:<22} {key:<16} {value}")
    return EXIT_OK


def _retrieve(pipeline: Pipeline) -> int:
    artifact = pipeline.retrieve()
    for run in artifact.runs:
        kept = [len(c.truncation.kept_ids) for c in run.cases]
        line = f"{run.strategy}: kept {sum(kept)} sentences over {len(kept)} cases"
        if run.report is not None:
            line += f", strict F1 {run.report.strict.f1:.4f}, lenient F1 {run.report.lenient.f1:.4f}"
        print(line)
    return EXIT_OK


def _generate(pipeline: Pipeline) -> int:
    artifact = pipeline.generate()
    print(f"answered {len(artifact.cases)} cases, {len(artifact.failures)} failed")
    return EXIT_OK


def _attribute(pipeline: Pipeline) -> int:
    artifact = pipeline.attribute()
    cited = sum(1 for c in artifact.cases if c.citations)
    print(f"attributed {cited} of {len(artifact.cases)} answers")
    return EXIT_OK


def _evaluate(pipeline: Pipeline, answers: Path | None) -> int:
    score = pipeline.evaluate(answers)
    strict = score.factuality.strict
    print(
        f"strict P {strict.precision:.4f} R {strict.recall:.4f} F1 {strict.f1:.4f}, "
        f"relevance {score.relevance.mean:.4f}, overall {score.overall:.4f}"
    )
    return EXIT_OK


def _grid_search(pipeline: Pipeline, answers: Path | None) -> int:
    results = pipeline.grid_search(answers)
    best = results[0]
    w = best.weights
    print(
        f"{len(results)} configurations; best w=({w.w1:g}, {w.w2:g}, {w.w3:g}) "
        f"T={best.threshold:g} overall {best.score.overall:.4f}"
    )
    return EXIT_OK


def run_command(args: argparse.Namespace) -> int:
    if args.command == "validate":
        return _validate(args)
    with Pipeline(_run_config(args)) as pipeline:
        if args.command == "stats":
            return _stats(pipeline)
        if args.command == "retrieve":
            return _retrieve(pipeline)
        if args.command == "generate":
            return _generate(pipeline)
        if args.command == "attribute":
            return _attribute(pipeline)
        if args.command == "evaluate":
            return _evaluate(pipeline, args.answers)
        return _grid_search(pipeline, args.answers)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return run_command(args)
    except (ValueError, LookupError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
