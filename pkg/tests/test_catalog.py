import pytest

from linkguard.catalog import (
    CatalogError,
    SchemaCatalog,
    Token,
    build_catalog,
    read_catalog,
    write_catalog,
)


def test_build_catalog_basics():
    cat = build_catalog([("tormelkal", ["colaba", "colbip"]), ("torvexnub", ["colzap"])])
    assert cat.table_names == ["tormelkal", "torvexnub"]
    assert cat.tokenize("tormelkal") != cat.tokenize("torvexnub")
    # shared first piece gets a shared first token id
    assert cat.tokenize("tormelkal")[0] == cat.tokenize("torvexnub")[0]
    assert cat.columns_of("tormelkal") == ["colaba", "colbip"]


def test_exactly_one_eos_and_separator():
    with pytest.raises(CatalogError, match="eos"):
        SchemaCatalog([("ab", ["cd"])], [Token(0, "ab"), Token(1, "cd"), Token(2, ",", is_separator=True)])


def test_duplicate_table_names_rejected():
    with pytest.raises(CatalogError, match="unique"):
        build_catalog([("tormelkal", ["colaba"]), ("tormelkal", ["colbip"])])


def test_table_without_columns_rejected():
    with pytest.raises(CatalogError, match="no columns"):
        build_catalog([("tormelkal", [])])


def test_name_must_decompose(race_catalog):
    with pytest.raises(CatalogError, match="decompose"):
        race_catalog.tokenize("unknownname")


def test_tokenize_is_canonical_and_exact(race_catalog):
    ids = race_catalog.tokenize("lapTimes")
    assert race_catalog.text_of(ids) == "lapTimes"
    assert race_catalog.tokenize("lapTimes") == ids  # cached path agrees


def test_catalog_file_round_trip(tmp_path):
    cat = build_catalog([("tormelkal", ["colaba", "colbip"]), ("torvexnub", ["colzap"])])
    path = tmp_path / "catalog.json"
    write_catalog(cat, path)
    loaded = read_catalog(path)
    assert loaded.tables == cat.tables
    assert loaded.vocabulary == cat.vocabulary


def test_read_catalog_rejects_other_files(tmp_path):
    path = tmp_path / "not_catalog.json"
    path.write_text('{"format": "something-else"}', encoding="utf-8")
    with pytest.raises(CatalogError, match="not a catalog"):
        read_catalog(path)


def test_namespace_trie_walk(race_catalog):
    ns = race_catalog.table_namespace()
    ids = race_catalog.tokenize("races")
    node = ns.trie.walk(ids)
    assert node is not None and node.name == "races"
    assert ns.trie.walk([999]) is None


def test_column_namespace_scoped(race_catalog):
    ns = race_catalog.column_namespace("races")
    assert ns.names == ("ra",)
    with pytest.raises(CatalogError):
        ns.tokenize("imes")  # column of another table
