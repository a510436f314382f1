"""Durability: journal replay, torn tails, and post-restart behavior."""

import pytest

from dbnet.journal import MAGIC, Journal, JournalCorrupt, read_records
from dbnet.kernel import Kernel

from util import col, delete, insert, make_sample_table, make_table, rows, update


@pytest.fixture
def journal_path(tmp_path):
    return str(tmp_path / "wal.dbn")


def _build(journal_path, **kw):
    return Kernel(journal_path=journal_path, provisioning_delay=0.0, **kw)


def _log_fingerprint(kernel):
    return [(e.log_id, e.kind, e.table, e.row_id, e.old_cells, e.new_cells,
             e.user, e.txn, e.detail, e.cause) for e in kernel.prov.all_entries()]


def test_replay_reproduces_state_and_log(journal_path):
    k1 = _build(journal_path)
    make_sample_table(k1)
    for i in range(3):
        insert(k1, "s.t", {"id": i, "grp": i % 2, "val": float(i)})
    update(k1, "s.t", {"val": 9.5}, "id = 1")
    delete(k1, "s.t", "id = 0")
    k1.register_procedure("PROC noop() BEGIN END", "root")
    k1.add_user("alice", ["reader"], "root")
    k1.add_acl_rule("reader", "s.t", "Read", "root")
    state, log = k1.dump_state(), _log_fingerprint(k1)
    k1.close()

    k2 = _build(journal_path)
    assert k2.dump_state() == state
    assert _log_fingerprint(k2) == log
    assert "noop" in k2.registry.procedures
    assert rows(k2, "SELECT COUNT(*) FROM s.t", user="alice") == [(2,)]
    k2.close()


def test_replay_does_not_refire_triggers(journal_path):
    k1 = _build(journal_path)
    make_sample_table(k1)
    make_table(k1, "s", "audit", [col("n", "INT")])
    k1.register_procedure("PROC mark(id : INT) BEGIN "
                          "INSERT INTO s.audit (n) VALUES (:id); END", "root")
    k1.register_trigger("t1", "s.t", "AfterInsert", None, "mark", "root")
    insert(k1, "s.t", {"id": 1, "grp": 0})
    assert rows(k1, "SELECT COUNT(*) FROM s.audit") == [(1,)]
    k1.close()

    k2 = _build(journal_path)
    # raw change application, not re-execution: still exactly one audit row
    assert rows(k2, "SELECT COUNT(*) FROM s.audit") == [(1,)]
    # but the trigger is live again for new mutations
    insert(k2, "s.t", {"id": 2, "grp": 0})
    assert rows(k2, "SELECT COUNT(*) FROM s.audit") == [(2,)]
    k2.close()


def test_fresh_ids_continue_after_restart(journal_path):
    k1 = _build(journal_path)
    make_sample_table(k1)
    insert(k1, "s.t", {"id": 1, "grp": 0})
    last_log_id = k1.prov.all_entries()[-1].log_id
    k1.close()

    k2 = _build(journal_path)
    insert(k2, "s.t", {"id": 2, "grp": 0})
    new_ids = [e.log_id for e in k2.prov.all_entries()]
    assert min(i for i in new_ids if i > last_log_id) > last_log_id
    assert len(new_ids) == len(set(new_ids))
    # primary-key uniqueness survived the replay
    from dbnet.errors import ConstraintViolation
    with pytest.raises(ConstraintViolation):
        insert(k2, "s.t", {"id": 1, "grp": 0})
    k2.close()


def test_unapplied_commands_survive_restart(journal_path):
    k1 = _build(journal_path)
    make_table(k1, "net", "nodes",
               [col("nodeId", "INT", "PrimaryKey"), col("podId", "INT")],
               device_backed=True, device_kind="Node")
    insert(k1, "net.nodes", {"nodeId": 1, "podId": 1})
    assert k1.reconciler.pending_count() == 1  # never drained
    k1.close()

    k2 = _build(journal_path)
    assert k2.reconciler.pending_count() == 1
    assert k2.drain_outbox() == 1
    assert k2.fleet.get_state("Node", 1)["alive"]
    k2.close()

    # applied commands are not re-enqueued on the next restart
    k3 = _build(journal_path)
    assert k3.reconciler.pending_count() == 0
    k3.close()


def test_fleet_state_is_not_persisted(journal_path):
    k1 = _build(journal_path)
    make_table(k1, "net", "nodes",
               [col("nodeId", "INT", "PrimaryKey"), col("podId", "INT")],
               device_backed=True, device_kind="Node")
    insert(k1, "net.nodes", {"nodeId": 1, "podId": 1})
    k1.drain_outbox()
    assert k1.fleet.alive_devices("Node")
    k1.close()

    # the journal restores rows and commands, not simulated device memory
    k2 = _build(journal_path)
    assert k2.fleet.alive_devices("Node") == {}
    assert rows(k2, "SELECT nodeId FROM net.nodes") == [(1,)]
    k2.close()


def test_torn_tail_is_tolerated(journal_path):
    k1 = _build(journal_path)
    make_sample_table(k1)
    insert(k1, "s.t", {"id": 1, "grp": 0})
    state = k1.dump_state()
    k1.close()

    with open(journal_path, "ab") as fh:
        fh.write(b"500 {\"t\": \"commit\", \"truncat")  # torn final record

    k2 = _build(journal_path)
    assert k2.dump_state() == state
    k2.close()


def test_bad_magic_is_corrupt(tmp_path):
    path = str(tmp_path / "bad.dbn")
    with open(path, "wb") as fh:
        fh.write(b"NOPE\n")
    with pytest.raises(JournalCorrupt):
        list(read_records(path))
    with pytest.raises(JournalCorrupt):
        Kernel(journal_path=path, provisioning_delay=0.0)


def test_journal_file_format(journal_path):
    journal = Journal(journal_path)
    journal.append({"t": "x", "n": 1})
    journal.close()
    with open(journal_path, "rb") as fh:
        assert fh.readline().rstrip() == MAGIC
    assert list(read_records(journal_path)) == [{"t": "x", "n": 1}]
