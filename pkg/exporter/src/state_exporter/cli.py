"""Command-line wrapper mirroring the export job fields."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .catalog import read_catalog_file
from .export import ExportJob, export_traces


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="linkguard-export",
        description="export per-layer hidden states and branch labels to a trace file",
    )
    parser.add_argument("--model", default="toy", help="'toy' (builtin tiny transformer)")
    parser.add_argument("--catalog", required=True, help="schema catalog JSON (sidecar format)")
    parser.add_argument("--gold", required=True, help="JSONL of {question, tables} gold linkings")
    parser.add_argument("--out", required=True)
    parser.add_argument("--catalog-out", default=None)
    parser.add_argument("--prompt-template", default="link the schema for: {question}")
    parser.add_argument("--layer-subset", type=int, nargs="*", default=None)
    parser.add_argument("--model-seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        catalog = read_catalog_file(args.catalog)
        questions, gold = [], []
        for line in Path(args.gold).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            questions.append(str(record["question"]))
            gold.append([str(t) for t in record["tables"]])
        job = ExportJob(
            model=args.model,
            catalog=catalog,
            questions=questions,
            gold_linkings=gold,
            out_path=args.out,
            catalog_out_path=args.catalog_out,
            prompt_template=args.prompt_template,
            layer_subset=args.layer_subset,
            model_seed=args.model_seed,
        )
        summary = export_traces(job)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
