"""Minimal catalog handling against the trace-file sidecar format.

The exporter only speaks the published file formats; it keeps its own small
reader, tokenizer, and constraint trie rather than importing the consumer
library.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

CATALOG_FORMAT = "schema-catalog"


@dataclass(frozen=True)
class Catalog:
    tables: tuple[tuple[str, tuple[str, ...]], ...]
    pieces: dict[str, int]  # text -> token id (plain pieces only)
    separator_id: int
    eos_id: int
    vocab_size: int

    @property
    def table_names(self) -> list[str]:
        return [name for name, _ in self.tables]

    def tokenize(self, name: str) -> list[int]:
        """Leftmost-longest exact segmentation into vocabulary pieces."""
        lengths = sorted({len(p) for p in self.pieces}, reverse=True)
        dead: set[int] = set()

        def go(pos: int):
            if pos == len(name):
                return []
            if pos in dead:
                return None
            for ln in lengths:
                piece = name[pos : pos + ln]
                if len(piece) == ln and piece in self.pieces:
                    rest = go(pos + ln)
                    if rest is not None:
                        return [self.pieces[piece]] + rest
            dead.add(pos)
            return None

        ids = go(0)
        if ids is None:
            raise ValueError(f"name {name!r} does not decompose into catalog pieces")
        return ids


def read_catalog_file(path: str | Path) -> Catalog:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CATALOG_FORMAT:
        raise ValueError(f"{path} is not a schema catalog file")
    pieces: dict[str, int] = {}
    separator_id = eos_id = None
    for entry in payload["vocabulary"]:
        if entry.get("is_separator"):
            separator_id = int(entry["id"])
        elif entry.get("is_eos"):
            eos_id = int(entry["id"])
        else:
            pieces[str(entry["text"])] = int(entry["id"])
    if separator_id is None or eos_id is None:
        raise ValueError("catalog vocabulary must carry separator and eos tokens")
    tables = tuple(
        (str(t["name"]), tuple(str(c) for c in t["columns"])) for t in payload["tables"]
    )
    return Catalog(
        tables,
        pieces,
        separator_id,
        eos_id,
        vocab_size=len(pieces) + 2,
    )


def write_catalog_file(catalog: Catalog, path: str | Path) -> None:
    vocabulary = [
        {"id": token_id, "text": text, "is_separator": False, "is_eos": False}
        for text, token_id in sorted(catalog.pieces.items(), key=lambda kv: kv[1])
    ]
    vocabulary.append(
        {"id": catalog.separator_id, "text": ",", "is_separator": True, "is_eos": False}
    )
    vocabulary.append(
        {"id": catalog.eos_id, "text": "<eos>", "is_separator": False, "is_eos": True}
    )
    vocabulary.sort(key=lambda entry: entry["id"])
    payload = {
        "format": CATALOG_FORMAT,
        "version": 1,
        "tables": [{"name": n, "columns": list(c)} for n, c in catalog.tables],
        "vocabulary": vocabulary,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def catalog_from_tables(tables: list[tuple[str, list[str]]], piece_len: int = 3) -> Catalog:
    """Derive a catalog from table/column names chunked into fixed-length pieces."""
    pieces: dict[str, int] = {}

    def add(name: str) -> None:
        if len(name) % piece_len:
            raise ValueError(f"name {name!r} length must be a multiple of {piece_len}")
        for i in range(0, len(name), piece_len):
            piece = name[i : i + piece_len]
            if piece not in pieces:
                pieces[piece] = len(pieces)

    for name, columns in tables:
        add(name)
        for column in columns:
            add(column)
    separator_id = len(pieces)
    eos_id = separator_id + 1
    return Catalog(
        tuple((n, tuple(c)) for n, c in tables),
        pieces,
        separator_id,
        eos_id,
        vocab_size=len(pieces) + 2,
    )


class ConstraintTrie:
    """Next-token constraint: walk table names, allowing separator/eos at ends."""

    def __init__(self, catalog: Catalog) -> None:
        self.catalog = catalog
        self.root: dict = {}
        self.ends: set[tuple[int, ...]] = set()
        for name in catalog.table_names:
            ids = tuple(catalog.tokenize(name))
            node = self.root
            for tid in ids:
                node = node.setdefault(tid, {})
            self.ends.add(ids)

    def allowed(self, prefix: list[int]) -> list[int]:
        """Token ids permitted after ``prefix`` under constrained decoding."""
        # rewind to the state after the last separator
        start = 0
        for i in range(len(prefix) - 1, -1, -1):
            if prefix[i] == self.catalog.separator_id:
                start = i + 1
                break
        current = [t for t in prefix[start:] if t != self.catalog.eos_id]
        node = self.root
        for tid in current:
            node = node.get(tid)
            if node is None:
                return [self.catalog.eos_id]
        allowed = list(node.keys())
        if tuple(current) in self.ends or (not current and not allowed):
            allowed.extend([self.catalog.separator_id, self.catalog.eos_id])
        if not current:
            # at a boundary the model may also stop
            if self.catalog.eos_id not in allowed:
                allowed.append(self.catalog.eos_id)
        return allowed
