"""Concrete tables and the reference evaluator for programs.

Every row carries its provenance: the set of ``(capsule id, row index)``
pairs of ingested rows it was computed from.  Derived payloads store it in a
leading ``_provenance`` column; ingested CSVs may start with ``_subject``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .analysis import COUNT_FIELD
from .errors import EvaluationError, SchemaViolation, UnboundCapsule
from .program import (
    DPCountExpr,
    FilterExpr,
    GetDC,
    JoinExpr,
    ProgramExpr,
    ProjectExpr,
    RedactExpr,
    UnionExpr,
)

SUBJECT_COLUMN = "_subject"
PROVENANCE_COLUMN = "_provenance"

_INT = re.compile(r"-?\d+")
_FLOAT = re.compile(r"-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?|-?inf|nan")

Provenance = frozenset  # of (capsule_id, row_index)


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    subjects: tuple | None = None  # per-row ``_subject`` values, when the CSV had them

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.rows = [tuple(r) for r in self.rows]
        if not self.provenance:
            self.provenance = [frozenset() for _ in self.rows]
        if len(self.provenance) != len(self.rows):
            raise ValueError("one provenance entry per row is required")
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"row {r!r} has {len(r)} cells; expected {len(self.columns)}")

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def empty(cls, columns) -> "Table":
        return cls(tuple(columns), [], [])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def to_csv_text(self, with_provenance: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ((PROVENANCE_COLUMN,) if with_provenance else ()) + self.columns
        w.writerow(head)
        for row, prov in zip(self.rows, self.provenance):
            cells = [_format_cell(v) for v in row]
            if with_provenance:
                cells.insert(0, format_provenance(prov))
            w.writerow(cells)
        return buf.getvalue()

    def write_csv(self, path: str | Path, with_provenance: bool = True) -> None:
        Path(path).write_bytes(self.to_csv_text(with_provenance).encode("utf-8"))


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_cell(text: str):
    if _INT.fullmatch(text):
        return int(text)
    if _FLOAT.fullmatch(text) and any(ch.isdigit() for ch in text):
        return float(text)
    return text


def format_provenance(prov: Provenance) -> str:
    return ";".join(f"{cid}:{i}" for cid, i in sorted(prov))


def parse_provenance(text: str) -> Provenance:
    if not text:
        return frozenset()
    out = set()
    for item in text.split(";"):
        cid, _, idx = item.rpartition(":")
        out.add((cid, int(idx)))
    return frozenset(out)


def read_csv_text(text: str, capsule_id: str) -> Table:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EvaluationError(f"capsule {capsule_id}: CSV has no header row") from None
    header = [h.strip() for h in header]
    has_prov = bool(header) and header[0] == PROVENANCE_COLUMN
    has_subject = bool(header) and header[0] == SUBJECT_COLUMN
    skip = 1 if (has_prov or has_subject) else 0
    columns = tuple(header[skip:])
    rows, prov, subjects = [], [], []
    for i, raw in enumerate(r for r in reader if r):
        if len(raw) != len(header):
            raise EvaluationError(f"capsule {capsule_id}: row {i} has {len(raw)} cells, header has {len(header)}")
        rows.append(tuple(parse_cell(c) for c in raw[skip:]))
        if has_prov:
            prov.append(parse_provenance(raw[0]))
        else:
            prov.append(frozenset({(capsule_id, i)}))
        if has_subject:
            subjects.append(raw[0])
    return Table(columns, rows, prov, tuple(subjects) if has_subject else None)


def read_csv(path: str | Path, capsule_id: str) -> Table:
    return read_csv_text(Path(path).read_bytes().decode("utf-8"), capsule_id)


def redact_value(value, mode) -> str:
    if mode.name == "full":
        return "*"
    if mode.name == "hash":
        return hashlib.sha256(str(value).encode("utf-8")).hexdigest()[:16]
    return str(value)[: mode.k]


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def evaluate(store: Mapping[str, Table], e: ProgramExpr, seed=None) -> Table:
    """Run ``e`` over concrete tables.

    ``seed`` feeds a ``numpy`` generator used for ``dpCount`` noise, drawn in
    left-to-right order, so a fixed seed reproduces the output exactly.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def go(node: ProgramExpr) -> Table:
        if isinstance(node, GetDC):
            if node.capsule not in store:
                raise UnboundCapsule(f"no capsule {node.capsule!r}")
            t = store[node.capsule]
            return Table(t.columns, t.rows, t.provenance)

        if isinstance(node, FilterExpr):
            t = go(node.source)
            if node.pred.field not in t.columns:
                raise SchemaViolation(f"filter on missing field {node.pred.field!r}")
            i = t.columns.index(node.pred.field)
            rows, prov = [], []
            for r, p in zip(t.rows, t.provenance):
                v = r[i]
                if not _is_number(v):
                    raise EvaluationError(f"filter {node.pred}: {v!r} is not a number")
                if node.pred.holds(v):
                    rows.append(r)
                    prov.append(p)
            return Table(t.columns, rows, prov)

        if isinstance(node, ProjectExpr):
            t = go(node.source)
            missing = [f for f in node.fields if f not in t.columns]
            if missing:
                raise SchemaViolation(f"project of missing fields {missing}")
            idx = [t.columns.index(f) for f in node.fields]
            return Table(node.fields, [tuple(r[i] for i in idx) for r in t.rows], t.provenance)

        if isinstance(node, RedactExpr):
            t = go(node.source)
            if node.field not in t.columns:
                raise SchemaViolation(f"redact of missing field {node.field!r}")
            i = t.columns.index(node.field)
            rows = [r[:i] + (redact_value(r[i], node.mode),) + r[i + 1:] for r in t.rows]
            return Table(t.columns, rows, t.provenance)

        if isinstance(node, JoinExpr):
            left, right = go(node.left), go(node.right)
            shared = [c for c in left.columns if c in right.columns]
            extra = [c for c in right.columns if c not in left.columns]
            li = [left.columns.index(c) for c in shared]
            ri = [right.columns.index(c) for c in shared]
            xi = [right.columns.index(c) for c in extra]
            buckets: dict[tuple, list[int]] = {}
            for j, r in enumerate(right.rows):
                buckets.setdefault(tuple(r[k] for k in ri), []).append(j)
            rows, prov = [], []
            for lr, lp in zip(left.rows, left.provenance):
                for j in buckets.get(tuple(lr[k] for k in li), ()):
                    rr = right.rows[j]
                    rows.append(lr + tuple(rr[k] for k in xi))
                    prov.append(lp | right.provenance[j])
            return Table(left.columns + tuple(extra), rows, prov)

        if isinstance(node, UnionExpr):
            left, right = go(node.left), go(node.right)
            if set(left.columns) != set(right.columns) or len(left.columns) != len(right.columns):
                raise SchemaViolation(f"union of {left.columns} and {right.columns}")
            order = [right.columns.index(c) for c in left.columns]
            rows = left.rows + [tuple(r[k] for k in order) for r in right.rows]
            return Table(left.columns, rows, left.provenance + right.provenance)

        if isinstance(node, DPCountExpr):
            t = go(node.source)
            noise = float(rng.laplace(0.0, 1.0 / node.epsilon))
            prov = frozenset().union(*t.provenance) if t.provenance else frozenset()
            return Table((COUNT_FIELD,), [(len(t.rows) + noise,)], [prov])

        raise TypeError(f"not a program expression: {node!r}")

    return go(e)
