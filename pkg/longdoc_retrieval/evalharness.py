"""
Retrieval evaluation: paragraph-level F-1 over a top-k sweep, ablation arms and timing.
"""

import csv
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence, Union

from .backend import BackendError
from .config import PipelineConfig, config_fingerprint
from .constants import ABLATION_ARMS, DEFAULT_KS
from .corpus import InputError, RetrievalSample
from .retrieve import InvalidK, Retriever
from .version import get_version_info

logger = logging.getLogger(__name__)


class EmptyGold(InputError):
    """Raised when F-1 is requested against an empty gold set."""

    pass


def retrieval_f1(retrieved: set, gold: set) -> tuple[float, float, float]:
    """
    Paragraph-level precision, recall and F-1.

    Raises:
        EmptyGold: If ``gold`` is empty.
    """
    if not gold:
        raise EmptyGold("Gold paragraph set is empty")
    hits = len(set(retrieved) & set(gold))
    precision = hits / len(retrieved) if retrieved else 0.0
    recall = hits / len(gold)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    k: int
    f1: float
    precision: float
    recall: float
    seconds: float
    paragraphs: tuple[int, ...] = ()
    failed: bool = False
    error: str = ""


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


@dataclass
class EvalReport:
    """Per-sample rows and per-k means; failed samples count as F-1 0."""

    per_sample: list
    ks: tuple[int, ...]
    config_fingerprint: str = ""
    arm: str = "full"

    @property
    def aggregates(self) -> dict:
        table = {}
        for k in self.ks:
            rows = [r for r in self.per_sample if r.k == k]
            table[k] = {
                "mean_f1": _mean([r.f1 for r in rows]),
                "mean_precision": _mean([r.precision for r in rows]),
                "mean_recall": _mean([r.recall for r in rows]),
                "mean_seconds": _mean([r.seconds for r in rows]),
                "n": len(rows),
                "failed": sum(r.failed for r in rows),
            }
        return table

    @property
    def failed_ids(self) -> list[str]:
        seen = []
        for record in self.per_sample:
            if record.failed and record.sample_id not in seen:
                seen.append(record.sample_id)
        return seen

    def to_json(self) -> dict:
        return {
            "arm": self.arm,
            "package": get_version_info(),
            "config_fingerprint": self.config_fingerprint,
            "ks": list(self.ks),
            "aggregates": {str(k): v for k, v in self.aggregates.items()},
            "failed_ids": self.failed_ids,
            "per_sample": [
                dict(asdict(r), paragraphs=list(r.paragraphs)) for r in self.per_sample
            ],
        }


RetrieverSource = Union[PipelineConfig, Callable[[], Retriever]]


def _evaluate_sample(
    retriever: Retriever, sample: RetrievalSample, ks: Sequence[int]
) -> list[SampleRecord]:
    def failure(k, seconds, error):
        return SampleRecord(
            sample.sample_id, k, 0.0, 0.0, 0.0, seconds, failed=True, error=str(error)
        )

    start = time.perf_counter()
    try:
        indexed = retriever.index(sample)
    except (InputError, BackendError) as e:
        logger.warning(f"Sample {sample.sample_id} failed during indexing: {e}")
        elapsed = time.perf_counter() - start
        return [failure(k, elapsed, e) for k in ks]
    index_seconds = time.perf_counter() - start

    records = []
    for k in ks:
        start = time.perf_counter()
        try:
            result = retriever.select(indexed, k)
            precision, recall, f1 = retrieval_f1(
                set(result.paragraphs), sample.gold_paragraph_indices
            )
        except (InputError, BackendError) as e:
            logger.warning(f"Sample {sample.sample_id} failed at k={k}: {e}")
            records.append(failure(k, index_seconds + time.perf_counter() - start, e))
            continue
        seconds = index_seconds + time.perf_counter() - start
        records.append(
            SampleRecord(
                sample.sample_id, k, f1, precision, recall, seconds, result.paragraphs
            )
        )
    return records


def run_eval(
    dataset: Sequence[RetrievalSample],
    retriever: RetrieverSource,
    ks: Sequence[int] = DEFAULT_KS,
    workers: int = 1,
    fingerprint: Optional[str] = None,
    arm: str = "full",
) -> EvalReport:
    """
    Evaluate every sample at every k.

    Each sample is indexed once and selected once per k; its time at k is the
    indexing time plus that selection. With ``workers > 1`` samples run in a
    thread pool where every thread builds its own retriever. Rows come back in
    dataset order regardless.

    Args:
        dataset: Samples with gold paragraphs.
        retriever: A pipeline config, or a factory returning a fresh retriever.
        ks: Top-k values to sweep.
        workers: Number of worker threads.
        fingerprint: Config fingerprint to store in the report.
        arm: Name of the ablation arm.
    """
    ks = tuple(ks)
    if not ks:
        raise InvalidK("At least one k is required")
    for k in ks:
        if k < 1:
            raise InvalidK(f"k must be at least 1, got {k}")

    if isinstance(retriever, PipelineConfig):
        cfg = retriever
        fingerprint = fingerprint or config_fingerprint(cfg)

        def factory():
            return Retriever.from_config(cfg)
    else:
        factory = retriever

    local = threading.local()

    def evaluate(sample):
        if not hasattr(local, "retriever"):
            local.retriever = factory()
        return _evaluate_sample(local.retriever, sample, ks)

    if workers <= 1:
        rows = [evaluate(sample) for sample in dataset]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, dataset))

    records = [r for sample_rows in rows for r in sample_rows]
    report = EvalReport(records, ks, fingerprint or "", arm)
    for k, values in report.aggregates.items():
        logger.info(
            f"[{arm}] k={k}: mean F-1 {values['mean_f1']:.4f} "
            f"over {values['n']} samples"
        )
    return report


def run_ablation_suite(
    dataset: Sequence[RetrievalSample],
    cfg: PipelineConfig,
    ks: Sequence[int] = DEFAULT_KS,
    arms: Sequence[str] = ABLATION_ARMS,
    workers: int = 1,
) -> dict:
    """Evaluate the full pipeline and each ablation arm, returning reports by arm."""
    reports = {}
    for arm in arms:
        arm_cfg = cfg.with_ablation(arm)
        reports[arm] = run_eval(dataset, arm_cfg, ks, workers, arm=arm)
    return reports


def write_report(
    report: EvalReport, out_dir: str, stem: Optional[str] = None
) -> tuple[str, str]:
    """Write the report as JSON and as a flat CSV; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or f"eval_{report.arm}"
    json_path = os.path.join(out_dir, f"{stem}.json")
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["sample_id", "k", "f1", "precision", "recall", "seconds", "failed"]
        )
        for r in report.per_sample:
            writer.writerow(
                [
                    r.sample_id,
                    r.k,
                    f"{r.f1:.6f}",
                    f"{r.precision:.6f}",
                    f"{r.recall:.6f}",
                    f"{r.seconds:.6f}",
                    int(r.failed),
                ]
            )
    logger.info(f"Wrote {json_path} and {csv_path}")
    return json_path, csv_path


def format_summary(report: EvalReport) -> str:
    """Per-k table as tab-separated text with a header row."""
    header = [
        "arm",
        "k",
        "mean_f1",
        "mean_precision",
        "mean_recall",
        "mean_seconds",
        "n",
        "failed",
    ]
    lines = ["\t".join(header)]
    for k, v in report.aggregates.items():
        lines.append(
            "\t".join(
                [
                    report.arm,
                    str(k),
                    f"{v['mean_f1']:.4f}",
                    f"{v['mean_precision']:.4f}",
                    f"{v['mean_recall']:.4f}",
                    f"{v['mean_seconds']:.4f}",
                    str(v["n"]),
                    str(v["failed"]),
                ]
            )
        )
    return "\n".join(lines)
