from __future__ import annotations

from hypothesis import given, strategies as st

from dsr.sqltext import (
    extract_sql,
    extract_sql_statements,
    has_order_by,
    is_read_only_select,
    split_statements,
    table_refs,
)


def test_table_refs_basic():
    assert table_refs("SELECT a FROM t1 JOIN t2 ON t1.x = t2.x") == ["t1", "t2"]


def test_table_refs_skips_aliases():
    assert table_refs("SELECT * FROM orders AS users") == ["orders"]
    assert table_refs("SELECT * FROM t1 x WHERE x.a = 1") == ["t1"]


def test_table_refs_comma_list():
    assert table_refs("SELECT * FROM a, b, c WHERE a.x = b.x") == ["a", "b", "c"]


def test_table_refs_derived_table_inner_from():
    assert table_refs("SELECT * FROM (SELECT x FROM inner_t) d") == ["inner_t"]


def test_table_refs_ignores_strings_and_comments():
    assert table_refs("SELECT * FROM t1 WHERE note = 'FROM t2' -- JOIN t3") == ["t1"]
    assert table_refs("SELECT * /* FROM t2 */ FROM t1") == ["t1"]


def test_table_refs_quoted_identifiers():
    assert table_refs('SELECT * FROM "my table"') == ["my table"]
    assert table_refs("SELECT * FROM `t1` JOIN [t2] ON 1=1") == ["t1", "t2"]


def test_table_refs_malformed_degrades():
    assert table_refs("SELEC broken FROM t1") == ["t1"]
    assert table_refs("SELECT * FROM") == []
    assert table_refs("") == []


@given(st.text(max_size=300))
def test_table_refs_total(text):
    table_refs(text)  # never raises, whatever the input


def test_split_statements():
    assert split_statements("SELECT 1; SELECT 2;") == ["SELECT 1", "SELECT 2"]
    assert split_statements("SELECT ';' ; SELECT 2") == ["SELECT ';'", "SELECT 2"]
    assert split_statements("") == []


def test_is_read_only_select():
    assert is_read_only_select("SELECT * FROM t")
    assert is_read_only_select("WITH c AS (SELECT 1) SELECT * FROM c")
    assert not is_read_only_select("DROP TABLE t")
    assert not is_read_only_select("WITH c AS (SELECT 1) DELETE FROM t")
    assert not is_read_only_select("SELECT 1; SELECT 2")
    assert not is_read_only_select("INSERT INTO t VALUES (1)")


def test_has_order_by():
    assert has_order_by("SELECT * FROM t ORDER BY x")
    assert has_order_by("select a from t order    by a desc")
    assert not has_order_by("SELECT * FROM t")
    assert not has_order_by("SELECT * FROM (SELECT x FROM t ORDER BY x) d")


def test_extract_sql_tag_precedence():
    text = "analysis...\n```sql\nSELECT 1\n```\n<sql>SELECT 2</sql>"
    assert extract_sql(text) == "SELECT 2"


def test_extract_sql_last_fenced_block():
    text = "first\n```sql\nSELECT 1\n```\nmore prose\n```\nSELECT 2\n```"
    assert extract_sql(text) == "SELECT 2"


def test_extract_sql_statement_line_fallback():
    text = "I think the answer is\nSELECT a FROM t\nWHERE a > 1"
    assert extract_sql(text) == "SELECT a FROM t\nWHERE a > 1"


def test_extract_sql_none():
    assert extract_sql("no sql here at all") is None
    assert extract_sql("") is None


def test_extract_sql_statements_multiple_blocks():
    text = "```sql\nSELECT 1\n```\nand\n```sql\nSELECT 2; SELECT 3\n```"
    assert extract_sql_statements(text) == ["SELECT 1", "SELECT 2", "SELECT 3"]


def test_extract_sql_statements_line_fallback():
    text = "SELECT a FROM t\nprose\nSELECT b FROM u"
    assert extract_sql_statements(text) == ["SELECT a FROM t", "SELECT b FROM u"]
