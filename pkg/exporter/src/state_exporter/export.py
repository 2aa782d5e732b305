"""Trace export: constrained generation, teacher-forcing labels, trace files.

One record per question: the model generates under the catalog's token
constraints while each emission is compared with the gold token; a mismatch
marks the position as a branching point and the gold token replaces it in
the context before generation resumes (the same labeling rule the consumer
library applies). Hidden states are the per-layer representations consumed
when emitting each token, cast to float32 on write.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog, ConstraintTrie, write_catalog_file
from .model import TinyCausalLM


class UnsupportedModelError(TypeError):
    """The model does not expose per-layer hidden states during generation."""


@dataclass
class ExportJob:
    model: object  # "toy" | anything with forward_hidden(tokens) -> (logits, hidden)
    catalog: Catalog
    questions: list[str]
    gold_linkings: list[list[str]]  # gold table names per question
    out_path: str
    catalog_out_path: str | None = None
    prompt_template: str = "link the schema for: {question}"
    layer_subset: list[int] | None = None
    prompt_length: int = 8
    model_seed: int = 0
    trace_prefix: str = "export"
    extras: dict = field(default_factory=dict)


def encode_prompt(text: str, vocab_size: int, length: int) -> list[int]:
    """Deterministic pseudo-token encoding of the prompt for the toy model.

    The toy vocabulary covers only schema pieces, so prompt words are hashed
    into it; a real integration would tokenize the prompt with the model's own
    tokenizer instead.
    """
    ids = []
    for i, word in enumerate(text.split()):
        digest = hashlib.sha256(f"{i}:{word}".encode("utf-8")).digest()
        ids.append(int.from_bytes(digest[:4], "big") % vocab_size)
        if len(ids) == length:
            break
    while len(ids) < length:
        ids.append(len(ids) % vocab_size)
    return ids


def _resolve_model(job: ExportJob) -> object:
    if job.model == "toy":
        return TinyCausalLM(job.catalog.vocab_size, seed=job.model_seed)
    if not hasattr(job.model, "forward_hidden"):
        raise UnsupportedModelError(
            f"{type(job.model).__name__} exposes no per-layer hidden states "
            "(needs forward_hidden(tokens) -> (logits, hidden))"
        )
    return job.model


def gold_tokens(catalog: Catalog, gold_tables: list[str]) -> list[int]:
    tokens: list[int] = []
    for i, name in enumerate(gold_tables):
        if i:
            tokens.append(catalog.separator_id)
        tokens.extend(catalog.tokenize(name))
    tokens.append(catalog.eos_id)
    return tokens


def generate_labeled(
    model,
    catalog: Catalog,
    trie: ConstraintTrie,
    prompt_ids: list[int],
    gold: list[int],
    layer_subset: list[int] | None,
) -> tuple[list[int], list[int], list[np.ndarray]]:
    """(emitted tokens, labels, per-token hidden) under forced-gold replay."""
    emitted: list[int] = []
    labels: list[int] = []
    hiddens: list[np.ndarray] = []
    context = list(prompt_ids)
    generated: list[int] = []
    for position, gold_token in enumerate(gold):
        logits, hidden = model.forward_hidden(context + generated)
        allowed = trie.allowed(generated)
        masked = np.full(logits.shape[-1], -np.inf)
        values = logits.detach().cpu().numpy()
        for tid in allowed:
            masked[tid] = values[tid]
        token = int(np.argmax(masked))
        state = hidden.detach().cpu().numpy()
        if layer_subset is not None:
            state = state[layer_subset]
        emitted.append(token)
        labels.append(0 if token == gold_token else 1)
        hiddens.append(state.astype(np.float32))
        generated.append(gold_token)  # teacher forcing: the gold token continues
    return emitted, labels, hiddens


def export_traces(job: ExportJob) -> dict:
    """Run every question and write the trace file plus its catalog sidecar."""
    model = _resolve_model(job)
    if len(job.questions) != len(job.gold_linkings):
        raise ValueError("questions and gold linkings must align")
    trie = ConstraintTrie(job.catalog)
    out = Path(job.out_path)
    n_branches = 0
    with out.open("w", encoding="utf-8") as fh:
        for index, (question, gold_tables) in enumerate(
            zip(job.questions, job.gold_linkings)
        ):
            prompt_text = job.prompt_template.format(question=question)
            prompt_ids = encode_prompt(prompt_text, job.catalog.vocab_size, job.prompt_length)
            gold = gold_tokens(job.catalog, gold_tables)
            emitted, labels, hiddens = generate_labeled(
                model, job.catalog, trie, prompt_ids, gold, job.layer_subset
            )
            n_branches += sum(labels)
            record = {
                "id": f"{job.trace_prefix}-{index}",
                "question": question,
                "gt_tables": sorted(gold_tables),
                "gt_tokens": gold,
                "gen_tokens": emitted,
                "labels": labels,
                "hidden": [[[float(x) for x in layer] for layer in tok] for tok in hiddens],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    catalog_out = job.catalog_out_path or str(out.with_suffix(".catalog.json"))
    write_catalog_file(job.catalog, catalog_out)
    return {
        "records": len(job.questions),
        "branching_points": n_branches,
        "out": str(out),
        "catalog": catalog_out,
    }
