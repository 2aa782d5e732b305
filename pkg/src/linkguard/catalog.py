"""Schema catalogs: token vocabularies, name tokenization, and the token trie.

A catalog fixes the universe the constrained generator may emit: table names
(each with one or more columns), a single separator token, and a single
end-of-sequence token. Every name must decompose exactly into vocabulary
pieces; the canonical decomposition computed here is the one used everywhere
else (generation, decoding, trace-back).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

SEPARATOR_TEXT = ","
EOS_TEXT = "<eos>"

CATALOG_FORMAT = "schema-catalog"
CATALOG_VERSION = 1


class CatalogError(ValueError):
    """A catalog or vocabulary violates its invariants."""


@dataclass(frozen=True)
class Token:
    """One vocabulary entry: a text piece with a stable integer id."""

    id: int
    text: str
    is_separator: bool = False
    is_eos: bool = False


class TrieNode:
    __slots__ = ("children", "name")

    def __init__(self) -> None:
        self.children: dict[int, "TrieNode"] = {}
        self.name: str | None = None


class TokenTrie:
    """Prefix tree over token-id sequences; end nodes carry the full name."""

    def __init__(self) -> None:
        self.root = TrieNode()

    def insert(self, token_ids: Sequence[int], name: str) -> None:
        node = self.root
        for tid in token_ids:
            node = node.children.setdefault(tid, TrieNode())
        node.name = name

    def walk(self, token_ids: Sequence[int]) -> TrieNode | None:
        """Follow ``token_ids`` from the root; None if the path leaves the trie."""
        node = self.root
        for tid in token_ids:
            child = node.children.get(tid)
            if child is None:
                return None
            node = child
        return node


@dataclass(frozen=True)
class Namespace:
    """A set of linkable names sharing one vocabulary (tables, or one table's columns)."""

    names: tuple[str, ...]
    catalog: "SchemaCatalog"

    def __post_init__(self) -> None:
        trie = TokenTrie()
        for name in self.names:
            trie.insert(self.catalog.tokenize(name), name)
        object.__setattr__(self, "_trie", trie)

    @property
    def trie(self) -> TokenTrie:
        return self._trie  # type: ignore[attr-defined]

    def tokenize(self, name: str) -> list[int]:
        if name not in self.names:
            raise CatalogError(f"name {name!r} is not in this namespace")
        return self.catalog.tokenize(name)

    @property
    def separator_id(self) -> int:
        return self.catalog.separator_id

    @property
    def eos_id(self) -> int:
        return self.catalog.eos_id

    def token_text(self, token_id: int) -> str:
        return self.catalog.token_by_id(token_id).text


@dataclass
class SchemaCatalog:
    """Tables with their columns, plus the token vocabulary derived from the names.

    Invariants enforced on construction: unique token ids, exactly one eos and
    one separator token, unique table names, at least one table, at least one
    column per table, and every table/column name segmentable into vocabulary
    pieces.
    """

    tables: list[tuple[str, list[str]]]
    vocabulary: list[Token]

    def __post_init__(self) -> None:
        ids = [t.id for t in self.vocabulary]
        if len(set(ids)) != len(ids):
            raise CatalogError("vocabulary token ids are not unique")
        eos = [t for t in self.vocabulary if t.is_eos]
        if len(eos) != 1:
            raise CatalogError(f"expected exactly one eos token, found {len(eos)}")
        seps = [t for t in self.vocabulary if t.is_separator]
        if len(seps) != 1:
            raise CatalogError(f"expected exactly one separator token, found {len(seps)}")
        names = [name for name, _ in self.tables]
        if not names:
            raise CatalogError("catalog must contain at least one table")
        if len(set(names)) != len(names):
            raise CatalogError("table names are not unique")
        for name, columns in self.tables:
            if not columns:
                raise CatalogError(f"table {name!r} has no columns")

        self._eos_id = eos[0].id
        self._separator_id = seps[0].id
        self._by_id = {t.id: t for t in self.vocabulary}
        self._pieces = {
            t.text: t.id for t in self.vocabulary if not (t.is_separator or t.is_eos)
        }
        self._tokenize_cache: dict[str, tuple[int, ...]] = {}
        for name, columns in self.tables:
            self.tokenize(name)
            for column in columns:
                self.tokenize(column)

    # -- vocabulary access -------------------------------------------------

    @property
    def separator_id(self) -> int:
        return self._separator_id

    @property
    def eos_id(self) -> int:
        return self._eos_id

    def token_by_id(self, token_id: int) -> Token:
        try:
            return self._by_id[token_id]
        except KeyError:
            raise CatalogError(f"unknown token id {token_id}") from None

    def text_of(self, token_ids: Iterable[int]) -> str:
        return "".join(self.token_by_id(t).text for t in token_ids)

    @property
    def table_names(self) -> list[str]:
        return [name for name, _ in self.tables]

    def columns_of(self, table: str) -> list[str]:
        for name, columns in self.tables:
            if name == table:
                return list(columns)
        raise CatalogError(f"unknown table {table!r}")

    # -- name segmentation -------------------------------------------------

    def tokenize(self, name: str) -> list[int]:
        """Segment ``name`` into vocabulary pieces, leftmost-longest, exactly.

        The decomposition is canonical: the same piece sequence is produced on
        every call and feeds the trie, the generator, and decode.
        """
        cached = self._tokenize_cache.get(name)
        if cached is not None:
            return list(cached)
        pieces = self._pieces
        lengths = sorted({len(p) for p in pieces}, reverse=True)
        dead: set[int] = set()

        def go(pos: int) -> list[int] | None:
            if pos == len(name):
                return []
            if pos in dead:
                return None
            for ln in lengths:
                piece = name[pos : pos + ln]
                if len(piece) == ln and piece in pieces:
                    rest = go(pos + ln)
                    if rest is not None:
                        return [pieces[piece]] + rest
            dead.add(pos)
            return None

        result = go(0)
        if result is None:
            raise CatalogError(f"name {name!r} does not decompose into vocabulary pieces")
        self._tokenize_cache[name] = tuple(result)
        return result

    # -- namespaces ---------------------------------------------------------

    def table_namespace(self) -> Namespace:
        return Namespace(tuple(self.table_names), self)

    def column_namespace(self, table: str) -> Namespace:
        return Namespace(tuple(self.columns_of(table)), self)


def build_catalog(tables: Sequence[tuple[str, Sequence[str]]]) -> SchemaCatalog:
    """Derive the vocabulary from the given names and assemble a catalog.

    Pieces are the distinct length-3 chunks of every table and column name in
    first-seen order, followed by the separator and eos tokens.
    """
    pieces: list[str] = []
    seen: set[str] = set()

    def add_pieces(name: str) -> None:
        if len(name) % 3 != 0:
            raise CatalogError(f"name {name!r} length must be a multiple of 3")
        for i in range(0, len(name), 3):
            piece = name[i : i + 3]
            if piece not in seen:
                seen.add(piece)
                pieces.append(piece)

    for name, columns in tables:
        add_pieces(name)
        for column in columns:
            add_pieces(column)

    vocabulary = [Token(i, piece) for i, piece in enumerate(pieces)]
    vocabulary.append(Token(len(vocabulary), SEPARATOR_TEXT, is_separator=True))
    vocabulary.append(Token(len(vocabulary), EOS_TEXT, is_eos=True))
    return SchemaCatalog([(n, list(c)) for n, c in tables], vocabulary)


# -- sidecar file ------------------------------------------------------------


def write_catalog(catalog: SchemaCatalog, path: str | Path) -> None:
    payload = {
        "format": CATALOG_FORMAT,
        "version": CATALOG_VERSION,
        "tables": [{"name": n, "columns": c} for n, c in catalog.tables],
        "vocabulary": [
            {"id": t.id, "text": t.text, "is_separator": t.is_separator, "is_eos": t.is_eos}
            for t in catalog.vocabulary
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def read_catalog(path: str | Path) -> SchemaCatalog:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogError(f"catalog file {path} is not valid JSON: {exc}") from exc
    if payload.get("format") != CATALOG_FORMAT:
        raise CatalogError(f"not a catalog file: {path}")
    tables = [(entry["name"], list(entry["columns"])) for entry in payload["tables"]]
    vocabulary = [
        Token(
            int(entry["id"]),
            str(entry["text"]),
            bool(entry.get("is_separator", False)),
            bool(entry.get("is_eos", False)),
        )
        for entry in payload["vocabulary"]
    ]
    return SchemaCatalog(tables, vocabulary)
