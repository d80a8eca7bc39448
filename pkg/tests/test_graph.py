from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from datacapsule.attributes import CONSENT_REQUIRED, NOTIFICATION_REQUIRED, Role, RoleVar
from datacapsule.errors import (
    GraphError,
    IdCollision,
    InvalidSchema,
    PolicyNotSatisfied,
    ProgramNotChecked,
    UnboundCapsule,
    UnboundVariable,
    UnknownCapsule,
    UnknownLabel,
    UnknownProgram,
    UnknownSubject,
)
from datacapsule.graph import CapsuleGraph
from datacapsule.policy import to_dnf
from datacapsule.policy_syntax import parse_policy
from datacapsule.residual import Analyst, ingest

from graphs import SCHEMA, build, csv_text, random_plan

GDPR = ("ALLOW SCHEMA NotPII AND NOTIFICATION_REQUIRED"
        " AND (ROLE $user_id OR (CONSENT_REQUIRED AND DECLASS DP 1 0.000001))")
DP = "dpCount(1.0, 1e-6, project({zip}, filter(age > 17, getDC(c1))))"
ANALYST = Analyst("ana", "Researcher")


def put(g: CapsuleGraph, tmp_path, cid, subject, rows, policy=GDPR):
    path = tmp_path / f"{cid}-in.csv"
    path.write_text(csv_text(rows))
    return g.ingest_capsule(path, SCHEMA, policy, subject, capsule_id=cid)


@pytest.fixture
def store(tmp_path):
    g = CapsuleGraph(tmp_path / "store")
    put(g, tmp_path, "c1", "alice", [(30, 90001, "alice"), (12, 90002, "alice")])
    return g


def run(g, source, pid=None, seed=0, out=None):
    pid = g.register_program(source, program_id=pid)
    g.check_program(pid)
    return g.run_program(pid, seed=seed, output_id=out)


class TestGdprScenario:
    def test_residual_clauses(self, store):
        pid = store.register_program(DP)
        r = store.check_program(pid).residual
        assert {c.atoms for c in r.clauses} == {
            frozenset({NOTIFICATION_REQUIRED, Role(RoleVar("user_id"))}),
            frozenset({NOTIFICATION_REQUIRED, CONSENT_REQUIRED}),
        }

    def test_refused_until_evidence(self, store):
        pid = store.register_program(DP)
        store.check_program(pid)
        out = store.run_program(pid)
        with pytest.raises(PolicyNotSatisfied) as exc:
            store.declassify(out, ANALYST)
        assert any("CONSENT_REQUIRED" in c for c in exc.value.blocking)
        store.record_notification("alice")
        with pytest.raises(PolicyNotSatisfied):
            store.declassify(out, ANALYST)
        store.record_consent("alice", pid)
        assert store.declassify(out, ANALYST) == store.payload_path(out)

    def test_subject_reads_own_derived_data_after_notice(self, store):
        out = run(store, DP)
        store.record_notification("alice")
        assert store.declassify(out, Analyst("alice", "Anyone"))
        with pytest.raises(PolicyNotSatisfied):
            store.declassify(out, Analyst("bob", "Anyone"))

    def test_consent_is_per_program(self, store):
        p1 = store.register_program(DP)
        p2 = store.register_program(DP)
        store.check_program(p1)
        store.check_program(p2)
        store.record_notification("alice")
        store.record_consent("alice", p1)
        o1, o2 = store.run_program(p1), store.run_program(p2)
        store.declassify(o1, ANALYST)
        with pytest.raises(PolicyNotSatisfied):
            store.declassify(o2, ANALYST)

    def test_check_does_not_read_payloads(self, store):
        store.payload_path("c1").unlink()
        pid = store.register_program(DP)
        assert len(store.check_program(pid).residual.clauses) == 2

    def test_audit_records_each_step(self, store):
        out = run(store, DP)
        with pytest.raises(PolicyNotSatisfied):
            store.declassify(out, ANALYST)
        ops = [(e["operation"], e["outcome"]) for e in store.audit_log()]
        assert ops == [("ingest", "ok"), ("register", "ok"), ("check", "ok"), ("run", "ok"),
                       ("declassify", "denied")]
        assert all({"timestamp", "actor", "target"} <= e.keys() for e in store.audit_log())


class TestLifecycle:
    def test_run_requires_check(self, store):
        pid = store.register_program(DP)
        with pytest.raises(ProgramNotChecked):
            store.run_program(pid)

    def test_rerun_is_identical_with_fresh_ids(self, store):
        pid = store.register_program(DP)
        store.check_program(pid)
        a = store.run_program(pid, seed=3)
        b = store.run_program(pid, seed=3)
        assert a != b
        assert store.payload_path(a).read_bytes() == store.payload_path(b).read_bytes()
        clone = store.capsule(b)["derived_by"]
        assert clone != pid and store.program(clone)["rerun_of"] == pid

    def test_rerun_shares_consent(self, store):
        pid = store.register_program(DP)
        store.check_program(pid)
        store.run_program(pid)
        store.record_notification("alice")
        store.record_consent("alice", pid)
        store.declassify(store.run_program(pid), ANALYST)

    def test_id_collision(self, store, tmp_path):
        with pytest.raises(IdCollision):
            put(store, tmp_path, "c1", "bob", [])
        with pytest.raises(IdCollision):
            store.register_program(DP, program_id="c1")

    def test_unknown_entities(self, store):
        with pytest.raises(UnknownSubject):
            store.record_notification("zed")
        with pytest.raises(UnknownProgram):
            store.check_program("p99")
        with pytest.raises(UnknownCapsule):
            store.policy("c99")
        with pytest.raises(UnboundCapsule):
            store.check_program(store.register_program("getDC(c99)"))

    def test_unknown_purpose(self, store):
        with pytest.raises(UnknownLabel):
            store.register_program(DP, purposes=["Astrology"])

    def test_header_only_capsule(self, store, tmp_path):
        put(store, tmp_path, "c2", "bob", [])
        out = run(store, "filter(age > 3, getDC(c2))")
        assert len(store.table(out)) == 0

    def test_schema_mismatch(self, store, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age,zip\n1,2\n")
        with pytest.raises(InvalidSchema):
            store.ingest_capsule(path, SCHEMA, GDPR, "bob")

    def test_subject_column_must_match(self, store, tmp_path):
        path = tmp_path / "subj.csv"
        path.write_text("_subject,age,zip,name\nbob,1,2,x\n")
        with pytest.raises(InvalidSchema):
            store.ingest_capsule(path, SCHEMA, GDPR, "carol")
        assert store.ingest_capsule(path, SCHEMA, GDPR, "bob")

    def test_unknown_datatype(self, store, tmp_path):
        with pytest.raises(InvalidSchema):
            store.ingest_capsule(tmp_path / "x.csv", {"age": "Martian"}, GDPR, "bob")

    def test_reopen_existing_store(self, store):
        again = CapsuleGraph(store.root, create=False)
        assert again.capsule_ids() == ["c1"]
        with pytest.raises(GraphError):
            CapsuleGraph(store.root / "missing", create=False)

    def test_graph_json_round_trips(self, store):
        out = run(store, DP)
        state = json.loads((store.root / "graph.json").read_text())
        assert set(state["capsules"]) == {"c1", out}
        assert not list(store.root.glob(".graph.*.tmp"))


def figure_graph(tmp_path) -> CapsuleGraph:
    """Six subjects; two programs each merge three of them and a third joins both results."""
    g = CapsuleGraph(tmp_path / "fig")
    for i in range(6):
        put(g, tmp_path, f"c{i}", f"s{i}", [(20 + i, 90000 + i % 2, f"n{i}")], "ALLOW SCHEMA NotPII")
    run(g, "union(union(getDC(c0), getDC(c1)), getDC(c2))", pid="pa", out="da")
    run(g, "union(union(getDC(c3), getDC(c4)), getDC(c5))", pid="pb", out="db")
    run(g, "project({zip}, union(getDC(da), getDC(db)))", pid="pc", out="dc")
    return g


class TestViews:
    def test_subject_view_follows_lineage(self, tmp_path):
        g = figure_graph(tmp_path)
        ids = {n["id"] for n in g.subject_view("s1").nodes}
        assert ids == {"c1", "pa", "da", "pc", "dc"}

    def test_export_contains_everything(self, tmp_path):
        sub = figure_graph(tmp_path).export_graph()
        assert len(sub.nodes) == 6 + 3 + 3 and len(sub.edges) == 6 + 2 + 3
        assert ('"pc" -> "dc";') in sub.to_dot()
        assert sub.to_json()["edges"][0].keys() == {"from", "to"}

    def test_portability_is_own_rows_only(self, tmp_path):
        g = figure_graph(tmp_path)
        run(g, "filter(age > 0, getDC(c2))", pid="pd", out="dd")
        exported = {p.capsule_id: p.table for p in g.portability_export("s2")}
        assert set(exported) == {"c2", "dd"}
        assert exported["dd"].rows == [(22, 90000, "n2")]

    def test_policies_of_derived_capsules_conserve(self, tmp_path):
        g = figure_graph(tmp_path)
        for pid in ("pa", "pb", "pc"):
            rec = g.program(pid)
            pin = ingest([g.policy(c) for c in rec["inputs"]], g.vocab).dnf
            assert to_dnf(parse_policy(rec["check"]["input_policy"])) == pin


class TestDeletion:
    def test_recompute_descendants(self, tmp_path):
        g = figure_graph(tmp_path)
        report = g.delete_capsule("c1")
        assert report.recomputed == ("da", "dc")
        assert g.capsule("da")["version"] == 2 and "s1" not in g.capsule("dc")["subjects"]
        assert all("n1" not in r for r in g.table("da").rows)

    def test_only_ingested_and_only_once(self, tmp_path):
        g = figure_graph(tmp_path)
        with pytest.raises(GraphError):
            g.delete_capsule("da")
        g.delete_capsule("c0")
        with pytest.raises(UnknownCapsule):
            g.delete_capsule("c0")
        with pytest.raises(UnknownCapsule):
            g.policy("c0")

    def test_delete_leaves_empty_policy_when_no_inputs_remain(self, tmp_path):
        g = CapsuleGraph(tmp_path / "s")
        put(g, tmp_path, "c1", "a", [(1, 2, "x")])
        out = run(g, "filter(age > 0, getDC(c1))")
        g.delete_capsule("c1")
        assert g.declassify(out, ANALYST)
        assert len(g.table(out)) == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_deletion_matches_scratch_rebuild(tmp_path_factory, seed):
    rng = random.Random(seed)
    plan = random_plan(rng)
    victim = rng.choice([c for c, *_ in plan.ingests])
    a = build(tmp_path_factory.mktemp("a"), plan)
    a.delete_capsule(victim)
    b = build(tmp_path_factory.mktemp("b"), plan, header_only=frozenset({victim}))
    for out in plan.derived():
        assert a.payload_path(out).read_bytes() == b.payload_path(out).read_bytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_portability_never_leaks(tmp_path_factory, seed):
    rng = random.Random(seed)
    plan = random_plan(rng)
    g = build(tmp_path_factory.mktemp("p"), plan)
    owner = {cid: subject for cid, subject, _, _ in plan.ingests}
    for subject in set(owner.values()):
        for cap in g.portability_export(subject):
            for prov in cap.table.provenance:
                assert prov and all(owner[c] == subject for c, _ in prov)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_no_release_without_discharge(tmp_path_factory, seed):
    """Nothing leaves the store unless some clause is fully discharged."""
    rng = random.Random(seed)
    plan = random_plan(rng)
    g = build(tmp_path_factory.mktemp("n"), plan)
    for cid in g.capsule_ids():
        r = g.current_residual(cid)
        try:
            g.declassify(cid, Analyst("outsider", "Anyone"))
            released = True
        except (PolicyNotSatisfied, UnboundVariable):
            released = False
        assert released == any(len(c) == 0 for c in r.clauses)
