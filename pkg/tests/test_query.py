"""SELECT evaluator: filtering semantics, grouping, aggregates, joins."""

import pytest

from dbnet.errors import MalformedQuery, UnknownColumn

from util import insert, make_sample_table, make_table, col, rows


@pytest.fixture
def seeded(kernel):
    make_sample_table(kernel)
    data = [
        (1, 0, 10.0, "a"),
        (2, 0, None, "b"),
        (3, 1, 30.0, "a"),
        (4, 1, 50.0, None),
        (5, 2, -5.0, "c"),
    ]
    for i, g, v, t in data:
        insert(kernel, "s.t", {"id": i, "grp": g, "val": v, "tag": t})
    return kernel


def test_where_keeps_only_true(seeded):
    # val > 0 is unknown for the null row and false for the negative one
    assert rows(seeded, "SELECT id FROM s.t WHERE val > 0.0") == [(1,), (3,), (4,)]
    assert rows(seeded, "SELECT id FROM s.t WHERE NOT (val > 0.0)") == [(5,)]
    assert rows(seeded, "SELECT id FROM s.t WHERE val = val") == \
        [(1,), (3,), (4,), (5,)]  # null = null is unknown, not true


def test_ungrouped_rows_ordered_by_insertion(seeded):
    assert [r[0] for r in rows(seeded, "SELECT id FROM s.t")] == [1, 2, 3, 4, 5]


def test_aggregates_skip_nulls(seeded):
    got = rows(seeded, "SELECT COUNT(val), SUM(val), AVG(val), MIN(val), "
                       "MAX(val) FROM s.t")
    assert got == [(4, 85.0, 21.25, -5.0, 50.0)]
    # COUNT(*) counts rows, COUNT(col) counts non-null values
    assert rows(seeded, "SELECT COUNT(*) FROM s.t") == [(5,)]
    assert rows(seeded, "SELECT COUNT(tag) FROM s.t") == [(4,)]


def test_aggregates_over_zero_rows(seeded):
    got = rows(seeded, "SELECT COUNT(id), SUM(val), AVG(val), MIN(val), "
                       "MAX(val) FROM s.t WHERE id > 100")
    assert got == [(0, None, None, None, None)]


def test_group_by_ordered_by_key(seeded):
    got = rows(seeded, "SELECT grp, AVG(val), COUNT(*) FROM s.t GROUP BY grp")
    assert got == [(0, 10.0, 2), (1, 40.0, 2), (2, -5.0, 1)]


def test_group_keys_sort_nulls_first(seeded):
    got = rows(seeded, "SELECT tag, COUNT(*) FROM s.t GROUP BY tag")
    assert got == [(None, 1), ("a", 2), ("b", 1), ("c", 1)]


def test_projection_validation(seeded):
    with pytest.raises(MalformedQuery):
        rows(seeded, "SELECT id, AVG(val) FROM s.t")  # mixing without GROUP BY
    with pytest.raises(MalformedQuery):
        rows(seeded, "SELECT tag FROM s.t GROUP BY grp")
    with pytest.raises(UnknownColumn):
        rows(seeded, "SELECT mystery FROM s.t")


def test_inner_equi_join(kernel):
    make_sample_table(kernel)
    make_table(kernel, "s", "names",
               [col("grp", "INT", "PrimaryKey"), col("label", "TEXT")])
    for i, g in ((1, 0), (2, 1), (3, 1), (4, 3)):
        insert(kernel, "s.t", {"id": i, "grp": g})
    for g, label in ((0, "zero"), (1, "one"), (2, "two")):
        insert(kernel, "s.names", {"grp": g, "label": label})
    got = rows(kernel, "SELECT id, label FROM s.t JOIN s.names "
                       "ON t.grp = names.grp")
    # grp 3 has no match; grp 2 has no left rows
    assert got == [(1, "zero"), (2, "one"), (3, "one")]


def test_join_drops_null_keys(kernel):
    make_table(kernel, "j", "a", [col("k", "INT"), col("x", "INT")])
    make_table(kernel, "j", "b", [col("k", "INT"), col("y", "INT")])
    insert(kernel, "j.a", {"k": None, "x": 1})
    insert(kernel, "j.a", {"k": 7, "x": 2})
    insert(kernel, "j.b", {"k": None, "y": 3})
    insert(kernel, "j.b", {"k": 7, "y": 4})
    got = rows(kernel, "SELECT x, y FROM j.a JOIN j.b ON a.k = b.k")
    assert got == [(2, 4)]


def test_ambiguous_column_requires_qualifier(kernel):
    make_table(kernel, "j", "a", [col("k", "INT"), col("v", "INT")])
    make_table(kernel, "j", "b", [col("k", "INT"), col("v", "INT")])
    insert(kernel, "j.a", {"k": 1, "v": 10})
    insert(kernel, "j.b", {"k": 1, "v": 20})
    with pytest.raises(MalformedQuery):
        rows(kernel, "SELECT v FROM j.a JOIN j.b ON a.k = b.k")
    assert rows(kernel, "SELECT a.v, b.v FROM j.a JOIN j.b ON a.k = b.k") == \
        [(10, 20)]


def test_group_by_join(kernel):
    make_table(kernel, "j", "a", [col("k", "INT"), col("v", "FLOAT")])
    make_table(kernel, "j", "b", [col("k", "INT"), col("tag", "TEXT")])
    for k, v in ((1, 1.0), (1, 3.0), (2, 5.0)):
        insert(kernel, "j.a", {"k": k, "v": v})
    for k, tag in ((1, "x"), (2, "y")):
        insert(kernel, "j.b", {"k": k, "tag": tag})
    got = rows(kernel, "SELECT tag, SUM(v) FROM j.a JOIN j.b ON a.k = b.k "
                       "GROUP BY tag")
    assert got == [("x", 4.0), ("y", 5.0)]
