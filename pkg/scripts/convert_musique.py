#!/usr/bin/env python3
"""
Convert MuSiQue JSONL files to the canonical retrieval dataset format.

Each MuSiQue question becomes one sample whose document is the question's
paragraph list (title on the first line of each paragraph). Supporting
paragraphs are the gold set, and every step of the question decomposition
becomes a subquery whose gold is the paragraph that step is supported by.

Usage:
    python scripts/convert_musique.py musique_ans_v1.0_dev.jsonl data/musique.jsonl
    python scripts/convert_musique.py musique_ans_v1.0_dev.jsonl data/musique.jsonl \
        --limit 200 --hops 2
"""

import argparse
import json
import sys

from longdoc_retrieval.corpus import (
    EmptyDocument,
    QueryType,
    RetrievalSample,
    Subquery,
    document_from_paragraphs,
    save_dataset,
)


def paragraph_text(paragraph: dict) -> str:
    title = (paragraph.get("title") or "").strip()
    text = (paragraph.get("paragraph_text") or paragraph.get("text") or "").strip()
    return f"{title}\n{text}" if title else text


def convert_record(record: dict):
    """Turn one MuSiQue record into a sample, or None if it cannot be used."""
    if record.get("answerable") is False:
        return None
    paragraphs = record.get("paragraphs") or []
    # MuSiQue refers to paragraphs by their idx field, not by list position
    position = {p.get("idx", i): i for i, p in enumerate(paragraphs)}
    gold = frozenset(
        position[p.get("idx", i)]
        for i, p in enumerate(paragraphs)
        if p.get("is_supporting")
    )
    if not gold:
        return None

    subqueries = []
    for step in record.get("question_decomposition") or []:
        support = step.get("paragraph_support_idx")
        if support is None or support not in position:
            return None
        subqueries.append(Subquery(step["question"], frozenset({position[support]})))

    try:
        document = document_from_paragraphs(
            str(record["id"]), [paragraph_text(p) for p in paragraphs]
        )
    except EmptyDocument:
        return None
    return RetrievalSample(
        sample_id=str(record["id"]),
        document=document,
        query=record["question"],
        gold_paragraph_indices=gold,
        query_type=QueryType.COMPOSITION,
        subquery_gold=tuple(subqueries) or None,
    )


def main():
    parser = argparse.ArgumentParser(
        description="Convert MuSiQue to canonical retrieval JSONL"
    )
    parser.add_argument("source", help="MuSiQue JSONL file")
    parser.add_argument("target", help="Output canonical JSONL file")
    parser.add_argument("--limit", type=int, help="Keep at most this many samples")
    parser.add_argument(
        "--hops", type=int, help="Keep only questions with this many hops"
    )
    args = parser.parse_args()

    samples = []
    skipped = 0
    with open(args.source, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            hops = len(record.get("question_decomposition") or [])
            if args.hops and hops != args.hops:
                continue
            sample = convert_record(record)
            if sample is None:
                skipped += 1
                continue
            samples.append(sample)
            if args.limit and len(samples) >= args.limit:
                break

    if not samples:
        print(f"Error: no usable samples in {args.source}")
        sys.exit(1)

    save_dataset(samples, args.target)
    print(f"Wrote {len(samples)} samples to {args.target} (skipped {skipped})")


if __name__ == "__main__":
    main()
