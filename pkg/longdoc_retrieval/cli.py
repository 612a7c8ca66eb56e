#!/usr/bin/env python
"""
Command-line interface for long-document retrieval, evaluation and analysis.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional

from . import version
from .analysis import (
    NeedleSpec,
    profile_layers,
    run_needle_probe,
    select_layers,
    write_needle_csv,
)
from .backend import BackendError
from .config import (
    PipelineConfig,
    build_attention_backend,
    config_fingerprint,
    load_config,
)
from .constants import (
    ABLATION_ARMS,
    ABLATIONS,
    ENV_PREFIX,
    EXIT_BACKEND_ERROR,
    EXIT_INPUT_ERROR,
    EXIT_OK,
    STRATEGIES,
)
from .corpus import (
    InputError,
    RetrievalSample,
    dataset_statistics,
    load_dataset,
    segment_document,
)
from .evalharness import format_summary, run_ablation_suite, run_eval, write_report
from .fixtures import write_fixtures
from .retrieve import Retriever

logger = logging.getLogger(__name__)


def _emit(payload) -> None:
    if isinstance(payload, str):
        print(payload)
    else:
        print(json.dumps(payload, indent=2))


def _parse_ints(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {value!r}"
        )


def _resolve_config(args) -> PipelineConfig:
    """Load the config file and apply command-line overrides."""
    if not args.config:
        raise InputError("--config is required for this command")
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "strategy", None):
        changes["long_context"] = dataclasses.replace(
            cfg.long_context, strategy=args.strategy
        )
    if getattr(args, "k", None) is not None:
        changes["k"] = args.k
    if getattr(args, "ks", None):
        changes["ks"] = tuple(args.ks)
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    if getattr(args, "dataset", None):
        changes["dataset"] = args.dataset
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    ablation = getattr(args, "ablation", None)
    if ablation and ablation != "all":
        cfg = cfg.with_ablation(ablation)
    cfg.validate()
    return cfg


def _load_samples(cfg: PipelineConfig) -> List[RetrievalSample]:
    if not cfg.dataset:
        raise InputError("No dataset given (use --dataset or [paths] dataset)")
    try:
        return load_dataset(cfg.dataset, rules=cfg.segmentation)
    except OSError as e:
        raise InputError(f"Cannot read dataset {cfg.dataset}: {e}") from e


def cmd_retrieve(args) -> int:
    """Retrieve paragraphs of one document for one query and print the result JSON."""
    cfg = _resolve_config(args)
    try:
        with open(args.document, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"Cannot read document {args.document}: {e}") from e
    document = segment_document(
        text, cfg.segmentation, doc_id=os.path.basename(args.document)
    )
    sample = RetrievalSample(
        sample_id=document.doc_id, document=document, query=args.query
    )
    result = Retriever.from_config(cfg).retrieve(sample)
    _emit(result.to_json())
    return EXIT_OK


def cmd_eval(args) -> int:
    """Evaluate a dataset over the k sweep, write reports and print the summary."""
    cfg = _resolve_config(args)
    samples = _load_samples(cfg)
    if args.ablation == "all":
        reports = run_ablation_suite(samples, cfg, cfg.ks, ABLATION_ARMS, cfg.workers)
    else:
        arm = args.ablation or "full"
        reports = {arm: run_eval(samples, cfg, cfg.ks, cfg.workers, arm=arm)}

    tables = []
    for arm, report in reports.items():
        write_report(report, cfg.output_dir)
        summary = format_summary(report)
        tables.append(summary if not tables else summary.split("\n", 1)[1])
        if report.failed_ids:
            logger.warning(
                f"[{arm}] {len(report.failed_ids)} samples failed: "
                f"{', '.join(report.failed_ids)}"
            )
    _emit("\n".join(tables))
    return EXIT_OK


def cmd_analyze_layers(args) -> int:
    """Profile gold-paragraph ranks per layer and write the profile JSON and CSV."""
    cfg = _resolve_config(args)
    samples = _load_samples(cfg)
    backend = build_attention_backend(cfg.attention)
    profile = profile_layers(samples, backend, args.layers, cfg.long_context)

    os.makedirs(cfg.output_dir, exist_ok=True)
    json_path = os.path.join(cfg.output_dir, "layer_profile.json")
    csv_path = os.path.join(cfg.output_dir, "layer_profile.csv")
    data = profile.to_json()
    data["config_fingerprint"] = config_fingerprint(cfg)
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    profile.write_csv(csv_path)
    logger.info(
        f"Selected layers {select_layers(profile)}; wrote {json_path} and {csv_path}"
    )
    _emit(data)
    return EXIT_OK


def cmd_niah(args) -> int:
    """Run the needle probe over the spec's depths and write the head-count CSV."""
    cfg = _resolve_config(args)
    spec = NeedleSpec.load(args.spec)
    backend = build_attention_backend(cfg.attention)
    results = run_needle_probe(spec, backend, args.layers, cfg.long_context)

    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, "niah.csv")
    write_needle_csv(results, csv_path)
    _emit([dataclasses.asdict(r) for r in results])
    return EXIT_OK


def cmd_fixtures(args) -> int:
    """Write a synthetic dataset with scripted-backend fixtures and a ready config."""
    paths = write_fixtures(
        args.out,
        n_samples=args.samples,
        seed=args.seed or 0,
        subqueries=args.subqueries,
    )
    _emit(paths)
    return EXIT_OK


def cmd_stats(args) -> int:
    """Print dataset statistics as JSON."""
    try:
        samples = load_dataset(args.dataset)
    except OSError as e:
        raise InputError(f"Cannot read dataset {args.dataset}: {e}") from e
    _emit(dataset_statistics(samples).to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Pipeline configuration file (TOML)")
    common.add_argument(
        "--verbose",
        "-v",
        action="store_true",
        help="Show verbose output",
    )

    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument(
        "--strategy",
        choices=STRATEGIES,
        help="Long-context strategy",
    )
    pipeline.add_argument("--workers", type=int, help="Worker threads")
    pipeline.add_argument("--seed", type=int, help="Random seed")
    pipeline.add_argument("--out", help="Output directory")

    parser = argparse.ArgumentParser(
        prog="longdoc",
        description=(
            "Long-document paragraph retrieval from attention, embeddings and entities"
        ),
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {version.__version__}",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    retrieve_parser = subparsers.add_parser(
        "retrieve", parents=[common, pipeline], help=cmd_retrieve.__doc__
    )
    retrieve_parser.add_argument(
        "--document",
        required=True,
        help="Plain-text document file",
    )
    retrieve_parser.add_argument("--query", required=True, help="Query string")
    retrieve_parser.add_argument("--k", type=int, help="Top-k picks per category")
    retrieve_parser.add_argument(
        "--ablation",
        choices=ABLATIONS,
        help="Disable one view or entity expansion",
    )
    retrieve_parser.set_defaults(handler=cmd_retrieve)

    eval_parser = subparsers.add_parser(
        "eval", parents=[common, pipeline], help=cmd_eval.__doc__
    )
    eval_parser.add_argument("--dataset", help="Canonical JSONL dataset")
    eval_parser.add_argument(
        "--ks",
        "--k",
        dest="ks",
        type=_parse_ints,
        help="Comma-separated top-k values, e.g. 1,2,3,5",
    )
    eval_parser.add_argument(
        "--ablation",
        choices=ABLATIONS + ("all",),
        help="Run one ablation arm, or all arms",
    )
    eval_parser.set_defaults(handler=cmd_eval)

    layers_parser = subparsers.add_parser(
        "analyze-layers", parents=[common, pipeline], help=cmd_analyze_layers.__doc__
    )
    layers_parser.add_argument(
        "--dataset",
        help="Canonical JSONL dataset with subqueries",
    )
    layers_parser.add_argument(
        "--layers",
        type=_parse_ints,
        help="Layers to profile (default: all)",
    )
    layers_parser.set_defaults(handler=cmd_analyze_layers)

    niah_parser = subparsers.add_parser(
        "niah", parents=[common, pipeline], help=cmd_niah.__doc__
    )
    niah_parser.add_argument("--spec", required=True, help="Needle spec (TOML or JSON)")
    niah_parser.add_argument(
        "--layers",
        type=_parse_ints,
        help="Layers to probe (default: all)",
    )
    niah_parser.set_defaults(handler=cmd_niah)

    fixtures_parser = subparsers.add_parser(
        "fixtures", parents=[common], help=cmd_fixtures.__doc__
    )
    fixtures_parser.add_argument("--out", required=True, help="Output directory")
    fixtures_parser.add_argument(
        "--samples",
        type=int,
        default=10,
        help="Number of synthetic samples",
    )
    fixtures_parser.add_argument("--seed", type=int, default=0, help="Random seed")
    fixtures_parser.add_argument(
        "--subqueries",
        type=int,
        default=0,
        help="Subqueries per sample, with per-layer spikes",
    )
    fixtures_parser.set_defaults(handler=cmd_fixtures)

    stats_parser = subparsers.add_parser(
        "stats", parents=[common], help=cmd_stats.__doc__
    )
    stats_parser.add_argument(
        "--dataset",
        required=True,
        help="Canonical JSONL dataset",
    )
    stats_parser.set_defaults(handler=cmd_stats)

    return parser



def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the longdoc command.

    Returns:
        0 on success, 2 on invalid input or configuration, 3 on backend errors.
    """
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)

    if args.verbose or os.environ.get(f"{ENV_PREFIX}DEBUG") == "1":
        logging.root.setLevel(logging.DEBUG)
        logging.getLogger("longdoc_retrieval").setLevel(logging.DEBUG)
    else:
        logging.root.setLevel(logging.WARNING)
        logging.getLogger("longdoc_retrieval").setLevel(logging.WARNING)

    try:
        return args.handler(args)
    except (InputError, ValueError) as e:
        logger.error(str(e))
        return EXIT_INPUT_ERROR
    except BackendError as e:
        logger.error(str(e))
        return EXIT_BACKEND_ERROR


if __name__ == "__main__":
    sys.exit(main())
