"""Persistent lineage graph of capsules and analysis programs.

A store is a directory::

    graph.json          nodes, evidence, affiliations, id counter
    policies/<id>.priv  current policy of each live capsule (DNF text)
    payloads/<id>.csv   payload of each live capsule
    audit.jsonl         append-only log of operations

Mutations take an exclusive file lock, reload ``graph.json``, apply the change
and replace the file atomically, so readers always see a complete snapshot.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from filelock import FileLock

from .analysis import abstract_interpret
from .errors import (
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
from .lattice import Vocabulary, default_vocabulary
from .policy import PolicyClause, PolicyDNF, PolicyEffect, to_dnf
from .policy_syntax import SourcePolicy, parse_policy, print_policy
from .program import ProgramExpr, free_capsules, parse_program, row_preserving
from .residual import (
    Analyst,
    Evidence,
    InputPolicy,
    ResidualPolicy,
    blocking_clauses,
    declassifiable,
    ingest,
    metadata_discharge,
    residual_policy,
)
from .table import SUBJECT_COLUMN, Table, evaluate, read_csv, read_csv_text

_ID = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.\-]*")
USER_ID_VAR = "user_id"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class CheckResult:
    program_id: str
    inputs: tuple
    input_policy: PolicyDNF
    effect: PolicyEffect
    residual: ResidualPolicy
    evidence: Evidence
    schema: dict = field(hash=False)


@dataclass(frozen=True)
class DeletionReport:
    deleted: str
    recomputed: tuple


@dataclass(frozen=True)
class PortableCapsule:
    capsule_id: str
    table: Table = field(hash=False)


@dataclass
class Subgraph:
    nodes: list  # dicts: id, kind, and policy/schema/status where relevant
    edges: list  # (from, to)

    def to_json(self) -> dict:
        return {"nodes": self.nodes, "edges": [{"from": a, "to": b} for a, b in self.edges]}

    def to_dot(self) -> str:
        lines = ["digraph capsules {"]
        for n in self.nodes:
            shape = "box" if n["kind"] == "program" else "ellipse"
            style = ", style=dashed" if n.get("status") == "deleted" else ""
            lines.append(f'  "{n["id"]}" [shape={shape}{style}];')
        for a, b in self.edges:
            lines.append(f'  "{a}" -> "{b}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


class CapsuleGraph:
    """A capsule/program DAG persisted in ``root``."""

    def __init__(self, root: str | Path, vocab: Vocabulary | None = None, create: bool = True):
        self.root = Path(root)
        self.vocab = vocab or default_vocabulary()
        if not (self.root / "graph.json").exists():
            if not create:
                raise GraphError(f"{self.root} is not a capsule store")
            for sub in ("policies", "payloads"):
                (self.root / sub).mkdir(parents=True, exist_ok=True)
            self._lock = FileLock(str(self.root / ".lock"))
            with self._lock:
                if not (self.root / "graph.json").exists():
                    self._save(_empty_state())
        self._lock = FileLock(str(self.root / ".lock"))

    # ---------------------------------------------------------------- storage

    def _load(self) -> dict:
        return json.loads((self.root / "graph.json").read_text(encoding="utf-8"))

    def _save(self, state: dict) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".graph.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(state, fh, indent=1, sort_keys=False)
        os.replace(tmp, self.root / "graph.json")

    @contextmanager
    def _write(self) -> Iterator[dict]:
        with self._lock:
            state = self._load()
            yield state
            _check_acyclic(state)
            self._save(state)

    def _audit(self, operation: str, actor: str | None, target: str | None, outcome: str, **extra) -> None:
        entry = {"timestamp": _now(), "operation": operation, "actor": actor, "target": target, "outcome": outcome}
        entry.update(extra)
        with open(self.root / "audit.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def audit_log(self) -> list[dict]:
        path = self.root / "audit.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]

    def policy_path(self, cid: str) -> Path:
        return self.root / "policies" / f"{cid}.priv"

    def payload_path(self, cid: str) -> Path:
        return self.root / "payloads" / f"{cid}.csv"

    @staticmethod
    def _new_id(state: dict, prefix: str, requested: str | None) -> str:
        taken = state["capsules"].keys() | state["programs"].keys()
        if requested is not None:
            if not _ID.fullmatch(requested):
                raise GraphError(f"invalid id {requested!r}")
            if requested in taken:
                raise IdCollision(f"id {requested!r} is already in use")
            return requested
        while True:
            state["counter"] += 1
            cand = f"{prefix}{state['counter']}"
            if cand not in taken:
                return cand

    # ---------------------------------------------------------------- queries

    def capsule(self, cid: str, state: dict | None = None) -> dict:
        state = state or self._load()
        rec = state["capsules"].get(cid)
        if rec is None:
            raise UnknownCapsule(f"no capsule {cid!r}")
        return rec

    def program(self, pid: str, state: dict | None = None) -> dict:
        state = state or self._load()
        rec = state["programs"].get(pid)
        if rec is None:
            raise UnknownProgram(f"no program {pid!r}")
        return rec

    def capsule_ids(self, include_deleted: bool = False) -> list[str]:
        return [c for c, r in self._load()["capsules"].items() if include_deleted or not r["deleted"]]

    def program_ids(self) -> list[str]:
        return list(self._load()["programs"])

    def policy(self, cid: str) -> PolicyDNF:
        rec = self.capsule(cid)
        if rec["deleted"]:
            raise UnknownCapsule(f"capsule {cid!r} was deleted")
        return self._read_policy(cid)

    def _read_policy(self, cid: str) -> PolicyDNF:
        path = self.policy_path(cid)
        return to_dnf(parse_policy(SourcePolicy.from_file(path), self.vocab), self.vocab)

    def table(self, cid: str) -> Table:
        rec = self.capsule(cid)
        if rec["deleted"]:
            return Table.empty(rec["schema"].keys())
        t = read_csv(self.payload_path(cid), cid)
        return Table(t.columns, t.rows, t.provenance)

    def subjects(self) -> set[str]:
        return {s for r in self._load()["capsules"].values() if r["kind"] == "ingested" for s in r["subjects"]}

    # ---------------------------------------------------------------- ingestion

    def ingest_capsule(self, data: str | Path, schema: Mapping[str, str], policy,
                       subject: str, capsule_id: str | None = None) -> str:
        """Add an ingested capsule. ``policy`` is policy text, a path, or a :class:`PolicyDNF`."""
        if not subject:
            raise InvalidSchema("an ingested capsule needs a subject id")
        for f, label in schema.items():
            if label not in self.vocab.datatypes:
                raise InvalidSchema(f"field {f!r}: unknown datatype {label!r}")
        dnf = self._coerce_policy(policy)
        raw = Path(data).read_bytes()
        try:
            table = read_csv_text(raw.decode("utf-8"), capsule_id or "new")
        except Exception as exc:
            raise InvalidSchema(f"cannot read {data}: {exc}") from None
        if sorted(table.columns) != sorted(schema) or len(set(table.columns)) != len(table.columns):
            raise InvalidSchema(f"CSV columns {list(table.columns)} do not match schema fields {list(schema)}")
        if table.subjects is not None and any(s != subject for s in table.subjects):
            raise InvalidSchema(f"{SUBJECT_COLUMN} column names a subject other than {subject!r}")
        with self._write() as state:
            cid = self._new_id(state, "c", capsule_id)
            state["capsules"][cid] = {
                "id": cid,
                "kind": "ingested",
                "schema": {c: schema[c] for c in table.columns},
                "subjects": [subject],
                "derived_by": None,
                "created_at": _now(),
                "version": 1,
                "deleted": False,
            }
            self.payload_path(cid).write_bytes(raw)
            self.policy_path(cid).write_text(print_policy(dnf), encoding="utf-8")
        self._audit("ingest", subject, cid, "ok")
        return cid

    def _coerce_policy(self, policy) -> PolicyDNF:
        if isinstance(policy, PolicyDNF):
            return policy
        if isinstance(policy, Path):
            return to_dnf(parse_policy(SourcePolicy.from_file(policy), self.vocab), self.vocab)
        return to_dnf(parse_policy(policy, self.vocab), self.vocab)

    # ---------------------------------------------------------------- programs

    def register_program(self, source: str, purposes: Iterable[str] = (), analyst: Analyst | None = None,
                         program_id: str | None = None) -> str:
        parse_program(source)
        purposes = sorted(set(purposes))
        for p in purposes:
            if p not in self.vocab.purposes:
                raise UnknownLabel(f"unknown purpose {p!r}")
        analyst = analyst or Analyst("anonymous", self.vocab.roles.bottom)
        with self._write() as state:
            pid = self._new_id(state, "p", program_id)
            state["programs"][pid] = {
                "id": pid,
                "source": source,
                "purposes": purposes,
                "analyst": {"identity": analyst.identity, "role": analyst.role},
                "status": "registered",
                "inputs": [],
                "output": None,
                "seed": None,
                "rerun_of": None,
                "created_at": _now(),
            }
        self._audit("register", analyst.identity, pid, "ok")
        return pid

    def _root_program(self, rec: dict) -> str:
        return rec["rerun_of"] or rec["id"]

    def _evidence(self, state: dict, subjects: Iterable[str], program_id: str | None,
                  purposes: Iterable[str] = ()) -> Evidence:
        subjects = set(subjects)
        consent = {tuple(x) for x in state["evidence"]["consent"]}
        notified = set(state["evidence"]["notification"])
        return Evidence(
            consent=bool(subjects) and program_id is not None and all((s, program_id) in consent for s in subjects),
            notification=bool(subjects) and subjects <= notified,
            purposes=frozenset(purposes),
        )

    def _analyse(self, state: dict, pid: str) -> CheckResult:
        rec = self.program(pid, state)
        expr = parse_program(rec["source"], origin=pid)
        inputs = sorted(free_capsules(expr))
        env, policies, subjects = {}, [], set()
        for cid in inputs:
            cap = state["capsules"].get(cid)
            if cap is None:
                raise UnboundCapsule(f"program {pid} reads unknown capsule {cid!r}")
            env[cid] = cap["schema"]
            if not cap["deleted"]:
                policies.append(self._read_policy(cid))
                subjects.update(cap["subjects"])
        abstract = abstract_interpret(env, expr, self.vocab)
        pin = ingest(policies, self.vocab) if policies else InputPolicy(PolicyDNF({PolicyClause()}))
        evidence = self._evidence(state, subjects, self._root_program(rec), rec["purposes"])
        residual = metadata_discharge(residual_policy(pin, abstract.effect, self.vocab), evidence, self.vocab)
        return CheckResult(pid, tuple(inputs), pin.dnf, abstract.effect, residual, evidence, abstract.schema)

    def check_program(self, pid: str) -> CheckResult:
        """Static check: no payload is read."""
        with self._write() as state:
            try:
                result = self._analyse(state, pid)
            except Exception as exc:
                self._audit("check", None, pid, f"error: {exc}")
                raise
            rec = state["programs"][pid]
            if rec["status"] == "registered":
                rec["status"] = "checked"
            rec["inputs"] = list(result.inputs)
            rec["check"] = _check_to_json(result)
        self._audit("check", rec["analyst"]["identity"], pid, "ok")
        return result

    def run_program(self, pid: str, seed: int | None = 0, output_id: str | None = None) -> str:
        """Execute a checked program and store its output as a new capsule.

        Running an already executed program clones it into a fresh program
        node first, so every program keeps exactly one output.
        """
        seed = 0 if seed is None else int(seed)
        with self._write() as state:
            rec = self.program(pid, state)
            if rec["status"] == "registered":
                raise ProgramNotChecked(f"program {pid} has not been checked")
            if rec["status"] == "executed":
                clone = self._new_id(state, "p", None)
                state["programs"][clone] = dict(rec, id=clone, status="checked", output=None, seed=None,
                                                rerun_of=self._root_program(rec), created_at=_now())
                rec = state["programs"][clone]
            result = self._analyse(state, rec["id"])
            expr = parse_program(rec["source"], origin=rec["id"])
            table = evaluate(self._tables(state, result.inputs), expr, seed)
            cid = self._new_id(state, "d", output_id)
            subjects = sorted({s for c in result.inputs if not state["capsules"][c]["deleted"]
                               for s in state["capsules"][c]["subjects"]})
            state["capsules"][cid] = {
                "id": cid,
                "kind": "derived",
                "schema": result.schema,
                "subjects": subjects,
                "derived_by": rec["id"],
                "created_at": _now(),
                "version": 1,
                "deleted": False,
            }
            table.write_csv(self.payload_path(cid))
            self.policy_path(cid).write_text(print_policy(result.residual.dnf), encoding="utf-8")
            rec.update(status="executed", output=cid, seed=seed, inputs=list(result.inputs),
                       check=_check_to_json(result))
        self._audit("run", rec["analyst"]["identity"], rec["id"], "ok", output=cid, seed=seed)
        return cid

    def _tables(self, state: dict, inputs: Iterable[str]) -> dict:
        out = {}
        for cid in inputs:
            cap = state["capsules"][cid]
            if cap["deleted"]:
                out[cid] = Table.empty(cap["schema"].keys())
            else:
                t = read_csv(self.payload_path(cid), cid)
                out[cid] = Table(t.columns, t.rows, t.provenance)
        return out

    # ---------------------------------------------------------------- evidence

    def record_consent(self, subject: str, pid: str) -> str:
        with self._write() as state:
            self._require_subject(state, subject)
            rec = self.program(pid, state)
            entry = [subject, self._root_program(rec)]
            if entry not in state["evidence"]["consent"]:
                state["evidence"]["consent"].append(entry)
            eid = self._new_id(state, "e", None)
        self._audit("consent", subject, pid, "ok", evidence=eid)
        return eid

    def record_notification(self, subject: str) -> str:
        with self._write() as state:
            self._require_subject(state, subject)
            if subject not in state["evidence"]["notification"]:
                state["evidence"]["notification"].append(subject)
            eid = self._new_id(state, "e", None)
        self._audit("notify", subject, None, "ok", evidence=eid)
        return eid

    def add_affiliation(self, function: str, subject: str, identity: str) -> None:
        """Record that ``identity`` belongs to ``function($subject)`` for metafunction roles."""
        with self._write() as state:
            self._require_subject(state, subject)
            ids = state["affiliations"].setdefault(function, {}).setdefault(subject, [])
            if identity not in ids:
                ids.append(identity)
        self._audit("affiliate", subject, function, "ok", identity=identity)

    @staticmethod
    def _require_subject(state: dict, subject: str) -> None:
        if not any(subject in c["subjects"] for c in state["capsules"].values() if c["kind"] == "ingested"):
            raise UnknownSubject(f"no capsules for subject {subject!r}")

    # ---------------------------------------------------------------- declassification

    def current_residual(self, cid: str, state: dict | None = None) -> ResidualPolicy:
        """Stored policy with the latest evidence applied."""
        state = state or self._load()
        cap = self.capsule(cid, state)
        if cap["deleted"]:
            raise UnknownCapsule(f"capsule {cid!r} was deleted")
        r = ResidualPolicy(tuple(self._read_policy(cid).sorted_clauses()))
        pid = cap["derived_by"]
        root = self._root_program(state["programs"][pid]) if pid else None
        purposes = state["programs"][pid]["purposes"] if pid else ()
        return metadata_discharge(r, self._evidence(state, cap["subjects"], root, purposes), self.vocab)

    def declassify(self, cid: str, analyst: Analyst, bindings: Mapping[str, str] | None = None) -> Path:
        """Release the payload path iff the capsule's policy is fully discharged."""
        state = self._load()
        cap = self.capsule(cid, state)
        residual = self.current_residual(cid, state)
        binds = dict(bindings or {})
        if len(cap["subjects"]) == 1:
            binds.setdefault(USER_ID_VAR, cap["subjects"][0])
        try:
            ok = declassifiable(residual, analyst, binds, state["affiliations"], self.vocab)
        except UnboundVariable as exc:
            self._audit("declassify", analyst.identity, cid, f"error: {exc}")
            raise
        if not ok:
            blocking = [[str(a) for a in c] for c in blocking_clauses(residual)]
            self._audit("declassify", analyst.identity, cid, "denied")
            raise PolicyNotSatisfied(cid, blocking)
        self._audit("declassify", analyst.identity, cid, "released")
        return self.payload_path(cid)

    # ---------------------------------------------------------------- views

    def _edges(self, state: dict) -> list[tuple[str, str]]:
        edges = []
        for pid, rec in state["programs"].items():
            for cid in rec["inputs"]:
                if cid in state["capsules"]:
                    edges.append((cid, pid))
            if rec["output"]:
                edges.append((pid, rec["output"]))
        return edges

    def _node(self, state: dict, nid: str) -> dict:
        if nid in state["capsules"]:
            cap = state["capsules"][nid]
            node = {"id": nid, "kind": "capsule", "schema": cap["schema"],
                    "status": "deleted" if cap["deleted"] else cap["kind"]}
            if not cap["deleted"]:
                node["policy"] = self.policy_path(nid).read_text(encoding="utf-8")
            return node
        rec = state["programs"][nid]
        return {"id": nid, "kind": "program", "status": rec["status"]}

    def export_graph(self) -> Subgraph:
        state = self._load()
        nodes = list(state["capsules"]) + list(state["programs"])
        return Subgraph([self._node(state, n) for n in nodes], self._edges(state))

    def subject_view(self, subject: str) -> Subgraph:
        """Everything reachable from the subject's ingested capsules."""
        state = self._load()
        self._require_subject(state, subject)
        edges = self._edges(state)
        succ: dict[str, list[str]] = {}
        for a, b in edges:
            succ.setdefault(a, []).append(b)
        start = [c for c, r in state["capsules"].items() if r["kind"] == "ingested" and subject in r["subjects"]]
        seen, stack = set(start), list(start)
        while stack:
            for nxt in succ.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        order = [n for n in list(state["capsules"]) + list(state["programs"]) if n in seen]
        return Subgraph([self._node(state, n) for n in order], [(a, b) for a, b in edges if a in seen and b in seen])

    def _portable_lineage(self, state: dict, cid: str) -> bool:
        """True iff ``cid`` is reached from ingested data through row-preserving programs only."""
        cap = state["capsules"][cid]
        while cap["kind"] == "derived":
            prog = state["programs"][cap["derived_by"]]
            if not row_preserving(parse_program(prog["source"])):
                return False
            cap = state["capsules"][prog["inputs"][0]]
        return True

    def portability_export(self, subject: str) -> list[PortableCapsule]:
        """The subject's own data: ingested capsules in full, plus their rows in
        row-preserving derivations. Rows touching any other subject are never included."""
        state = self._load()
        self._require_subject(state, subject)
        owner = {c: r["subjects"][0] for c, r in state["capsules"].items() if r["kind"] == "ingested"}
        out = []
        for cid, cap in state["capsules"].items():
            if cap["deleted"] or subject not in cap["subjects"]:
                continue
            if cap["kind"] == "derived" and not self._portable_lineage(state, cid):
                continue
            t = read_csv(self.payload_path(cid), cid)
            keep = [i for i, p in enumerate(t.provenance) if p and all(owner.get(c) == subject for c, _ in p)]
            out.append(PortableCapsule(cid, Table(t.columns, [t.rows[i] for i in keep],
                                                  [t.provenance[i] for i in keep])))
        return out

    # ---------------------------------------------------------------- deletion

    def delete_capsule(self, cid: str) -> DeletionReport:
        """Remove an ingested capsule and recompute every capsule derived from it.

        The capsule is kept as a tombstone (schema only) so programs that read
        it still type-check; they see it as an empty table.  Recomputed
        capsules keep their ids and get a higher version.
        """
        with self._write() as state:
            cap = self.capsule(cid, state)
            if cap["deleted"]:
                raise UnknownCapsule(f"capsule {cid!r} was already deleted")
            if cap["kind"] != "ingested":
                raise GraphError(f"capsule {cid!r} is derived; only ingested capsules can be deleted")
            cap["deleted"] = True
            cap["version"] += 1
            self.payload_path(cid).unlink(missing_ok=True)
            self.policy_path(cid).unlink(missing_ok=True)

            affected = {cid}
            recomputed = []
            for pid in _topological_programs(state):
                rec = state["programs"][pid]
                if rec["status"] != "executed" or not affected.intersection(rec["inputs"]):
                    continue
                out = rec["output"]
                result = self._analyse(state, pid)
                table = evaluate(self._tables(state, result.inputs), parse_program(rec["source"]), rec["seed"])
                table.write_csv(self.payload_path(out))
                self.policy_path(out).write_text(print_policy(result.residual.dnf), encoding="utf-8")
                ocap = state["capsules"][out]
                ocap["version"] += 1
                ocap["subjects"] = sorted({s for c in result.inputs if not state["capsules"][c]["deleted"]
                                           for s in state["capsules"][c]["subjects"]})
                rec["check"] = _check_to_json(result)
                affected.add(out)
                recomputed.append(out)
        self._audit("delete", None, cid, "ok", recomputed=recomputed)
        return DeletionReport(cid, tuple(recomputed))


def _empty_state() -> dict:
    return {"format": 1, "counter": 0, "capsules": {}, "programs": {},
            "evidence": {"consent": [], "notification": []}, "affiliations": {}}


def _check_to_json(r: CheckResult) -> dict:
    return {
        "inputs": list(r.inputs),
        "effect": [str(a) for a in r.effect],
        "input_policy": print_policy(r.input_policy),
        "residual": print_policy(r.residual.dnf),
        "evidence": {"consent": r.evidence.consent, "notification": r.evidence.notification,
                     "purposes": sorted(r.evidence.purposes)},
    }


def _topological_programs(state: dict) -> list[str]:
    """Programs ordered so each comes after the producers of its inputs."""
    producer = {rec["output"]: pid for pid, rec in state["programs"].items() if rec["output"]}
    order, seen = [], set()

    def visit(pid: str) -> None:
        if pid in seen:
            return
        seen.add(pid)
        for cid in state["programs"][pid]["inputs"]:
            if cid in producer:
                visit(producer[cid])
        order.append(pid)

    for pid in state["programs"]:
        visit(pid)
    return order


def _check_acyclic(state: dict) -> None:
    succ: dict[str, list[str]] = {}
    for pid, rec in state["programs"].items():
        for cid in rec["inputs"]:
            succ.setdefault(cid, []).append(pid)
        if rec["output"]:
            succ.setdefault(pid, []).append(rec["output"])
    colour: dict[str, int] = {}
    for start in succ:
        if colour.get(start):
            continue
        stack = [(start, iter(succ.get(start, ())))]
        colour[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = 2
                stack.pop()
            elif colour.get(nxt) == 1:
                raise GraphError(f"mutation would create a cycle through {nxt!r}")
            elif not colour.get(nxt):
                colour[nxt] = 1
                stack.append((nxt, iter(succ.get(nxt, ()))))
