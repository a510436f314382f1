"""Stored-procedure execution and trigger dispatch semantics."""

import pytest

from dbnet.errors import (
    ArgMismatch,
    CascadeDepthExceeded,
    DuplicateProcedure,
    DuplicateTrigger,
    ResolutionError,
    RuntimeFault,
    UnknownProcedure,
)

from util import col, insert, make_sample_table, make_table, rows, update


def _register(kernel, source):
    return kernel.register_procedure(source, "root")


def test_call_returns_values(kernel):
    _register(kernel, """
PROC add(a : INT, b : INT) BEGIN
  RETURN a + b, a * b;
END""")
    assert kernel.call_procedure("add", [3, 4], "root") == [7, 12]
    assert kernel.call_procedure("add", [3, None], "root") == [None, None]


def test_registration_time_resolution(kernel):
    make_sample_table(kernel)
    with pytest.raises(ResolutionError):
        _register(kernel, "PROC p() BEGIN SET x = 1; END")  # undeclared
    with pytest.raises(ResolutionError):
        _register(kernel, "PROC p() BEGIN DELETE FROM s.nope; END")
    with pytest.raises(ResolutionError):
        _register(kernel, "PROC p() BEGIN DELETE FROM s.t WHERE zzz = 1; END")
    with pytest.raises(UnknownProcedure):
        _register(kernel, "PROC p() BEGIN CALL missing(); END")
    with pytest.raises(ResolutionError):
        _register(kernel, "PROC p() BEGIN EXTERNAL reboot_everything(); END")
    _register(kernel, "PROC p() BEGIN DELETE FROM s.t WHERE grp = 99; END")
    with pytest.raises(DuplicateProcedure):
        _register(kernel, "PROC p() BEGIN END")


def test_arg_mismatch_leaves_no_proc_call_entry(kernel):
    _register(kernel, "PROC one(a : INT) BEGIN RETURN a; END")
    before = len(kernel.prov.all_entries())
    with pytest.raises(ArgMismatch):
        kernel.call_procedure("one", [1, 2], "root")
    with pytest.raises(ArgMismatch):
        kernel.call_procedure("one", ["text"], "root")
    entries = kernel.prov.all_entries()[before:]
    assert all(e.kind != "ProcCall" for e in entries)


def test_division_by_zero_aborts_txn(kernel):
    make_sample_table(kernel)
    _register(kernel, """
PROC boom() BEGIN
  INSERT INTO s.t (id, grp) VALUES (1, 0);
  DECLARE x : FLOAT;
  SET x = 1.0 / 0.0;
END""")
    with pytest.raises(RuntimeFault):
        kernel.call_procedure("boom", [], "root")
    assert rows(kernel, "SELECT COUNT(*) FROM s.t") == [(0,)]
    assert kernel.prov.all_entries()[-1].kind == "Rollback"


def test_raise_aborts_txn(kernel):
    make_sample_table(kernel)
    _register(kernel, """
PROC guard(v : INT) BEGIN
  INSERT INTO s.t (id, grp) VALUES (:v, 0);
  IF v > 10 THEN
    RAISE 'value out of range';
  END IF;
END""")
    kernel.call_procedure("guard", [5], "root")
    with pytest.raises(RuntimeFault, match="out of range"):
        kernel.call_procedure("guard", [11], "root")
    assert rows(kernel, "SELECT id FROM s.t") == [(5,)]


def test_select_into_cardinality(kernel):
    make_sample_table(kernel)
    insert(kernel, "s.t", {"id": 1, "grp": 0, "val": 1.0})
    insert(kernel, "s.t", {"id": 2, "grp": 0, "val": 2.0})
    _register(kernel, """
PROC pick(g : INT) BEGIN
  DECLARE v : FLOAT;
  SELECT val INTO v FROM s.t WHERE grp = :g;
  RETURN v;
END""")
    with pytest.raises(RuntimeFault):  # two matching rows
        kernel.call_procedure("pick", [0], "root")
    assert kernel.call_procedure("pick", [42], "root") == [None]  # zero rows


def test_for_loop_over_select(kernel):
    make_sample_table(kernel)
    make_table(kernel, "s", "out", [col("id", "INT"), col("dbl", "FLOAT")])
    for i in range(1, 4):
        insert(kernel, "s.t", {"id": i, "grp": 0, "val": float(i)})
    _register(kernel, """
PROC copy_double() BEGIN
  FOR r IN (SELECT id, val FROM s.t WHERE val > 1.0) LOOP
    INSERT INTO s.out (id, dbl) VALUES (:r.id, :r.val * 2.0);
  END LOOP;
END""")
    kernel.call_procedure("copy_double", [], "root")
    assert rows(kernel, "SELECT id, dbl FROM s.out") == [(2, 4.0), (3, 6.0)]


def test_triggers_fire_in_registration_order(kernel):
    make_sample_table(kernel)
    make_table(kernel, "s", "audit", [col("marker", "TEXT")])
    _register(kernel, "PROC mark_b(id : INT) BEGIN "
                      "INSERT INTO s.audit (marker) VALUES ('b'); END")
    _register(kernel, "PROC mark_a(id : INT) BEGIN "
                      "INSERT INTO s.audit (marker) VALUES ('a'); END")
    kernel.register_trigger("t_b", "s.t", "AfterInsert", None, "mark_b", "root")
    kernel.register_trigger("t_a", "s.t", "AfterInsert", None, "mark_a", "root")
    with pytest.raises(DuplicateTrigger):
        kernel.register_trigger("t_a", "s.t", "AfterInsert", None, "mark_a",
                                "root")
    insert(kernel, "s.t", {"id": 1, "grp": 0})
    assert [r[0] for r in rows(kernel, "SELECT marker FROM s.audit")] == \
        ["b", "a"]


def test_trigger_when_old_new(kernel):
    make_sample_table(kernel)
    make_table(kernel, "s", "audit", [col("marker", "TEXT")])
    _register(kernel, "PROC crossed(id : INT) BEGIN "
                      "INSERT INTO s.audit (marker) VALUES ('crossed'); END")
    kernel.register_trigger("rising", "s.t", "AfterUpdate",
                            "NEW.val > 10.0 AND OLD.val <= 10.0",
                            "crossed", "root")
    insert(kernel, "s.t", {"id": 1, "grp": 0, "val": 5.0})
    update(kernel, "s.t", {"val": 8.0}, "id = 1")   # below: no fire
    update(kernel, "s.t", {"val": 12.0}, "id = 1")  # crossing: fires
    update(kernel, "s.t", {"val": 20.0}, "id = 1")  # already above: no fire
    assert rows(kernel, "SELECT COUNT(*) FROM s.audit") == [(1,)]


def test_trigger_params_bound_from_row(kernel):
    make_sample_table(kernel)
    make_table(kernel, "s", "audit", [col("id", "INT"), col("tag", "TEXT")])
    _register(kernel, "PROC remember(id : INT, tag : TEXT) BEGIN "
                      "INSERT INTO s.audit (id, tag) VALUES (:id, :tag); END")
    kernel.register_trigger("on_del", "s.t", "AfterDelete", None, "remember",
                            "root")
    insert(kernel, "s.t", {"id": 9, "grp": 0, "tag": "bye"})
    kernel.execute_atomic([{"op": "delete", "table": "s.t",
                            "where": "id = 9"}], "root")
    assert rows(kernel, "SELECT id, tag FROM s.audit") == [(9, "bye")]


def test_trigger_params_must_be_columns(kernel):
    make_sample_table(kernel)
    _register(kernel, "PROC odd(unrelated : INT) BEGIN RETURN unrelated; END")
    with pytest.raises(ResolutionError):
        kernel.register_trigger("bad", "s.t", "AfterInsert", None, "odd",
                                "root")


def test_cascade_depth_limit_aborts_cleanly(kernel):
    make_sample_table(kernel)
    _register(kernel, """
PROC echo(id : INT) BEGIN
  INSERT INTO s.t (id, grp) VALUES (:id + 1, 0);
END""")
    kernel.register_trigger("loop", "s.t", "AfterInsert", None, "echo", "root")
    with pytest.raises(CascadeDepthExceeded):
        insert(kernel, "s.t", {"id": 1, "grp": 0})
    # the abort left zero residual rows
    assert rows(kernel, "SELECT COUNT(*) FROM s.t") == [(0,)]


def test_cascade_below_limit_completes(kernel):
    make_sample_table(kernel)
    _register(kernel, """
PROC echo(id : INT, grp : INT) BEGIN
  IF id < 16 THEN
    INSERT INTO s.t (id, grp) VALUES (:id + 1, 0);
  END IF;
END""")
    kernel.register_trigger("chain", "s.t", "AfterInsert", None, "echo", "root")
    insert(kernel, "s.t", {"id": 1, "grp": 0})
    assert rows(kernel, "SELECT COUNT(*) FROM s.t") == [(16,)]


def test_nested_call_depth_limit(kernel):
    _register(kernel, """
PROC recurse(n : INT) BEGIN
  IF n > 0 THEN
    CALL recurse(n - 1);
  END IF;
  RETURN n;
END""")
    assert kernel.call_procedure("recurse", [10], "root") == [10]
    with pytest.raises(RuntimeFault):
        kernel.call_procedure("recurse", [100], "root")
