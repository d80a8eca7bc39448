"""Abstract interpretation of programs into a schema plus a policy effect."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .attributes import Declass, Filter, Redact, Schema
from .errors import SchemaViolation, UnboundCapsule
from .lattice import Vocabulary, default_vocabulary
from .policy import EMPTY_EFFECT, PolicyClause, PolicyEffect
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

CapsuleEnv = Mapping[str, Mapping[str, str]]
COUNT_FIELD = "count"
COUNT_LABEL = "Count"


@dataclass(frozen=True)
class AbstractCapsule:
    schema: dict = field(hash=False)  # field name -> datatype label, in column order
    effect: PolicyEffect = EMPTY_EFFECT


def _join_schemas(s1: dict, s2: dict) -> dict:
    out = dict(s1)
    for f, label in s2.items():
        if f in out and out[f] != label:
            raise SchemaViolation(f"join: field {f!r} is {out[f]} on one side and {label} on the other")
        out.setdefault(f, label)
    return out


def _widen_schema_atoms(effect: PolicyEffect, other_schema: dict, vocab: Vocabulary) -> list:
    # After a join the output also carries the other side's columns, so a
    # SCHEMA guarantee from one side only stays true once those labels are added.
    extra = set(other_schema.values())
    return [Schema.of(a.labels | extra, vocab) if isinstance(a, Schema) else a for a in effect.atoms]


def abstract_interpret(env: CapsuleEnv, e: ProgramExpr, vocab: Vocabulary | None = None) -> AbstractCapsule:
    """Derive ``(schema, effect)`` for ``e`` under the capsule schemas in ``env``.

    Raises :class:`UnboundCapsule` for a ``getDC`` of an id missing from ``env``
    and :class:`SchemaViolation` when a field precondition fails.
    """
    vocab = vocab or default_vocabulary()

    def go(node: ProgramExpr) -> AbstractCapsule:
        if isinstance(node, GetDC):
            if node.capsule not in env:
                raise UnboundCapsule(f"no capsule {node.capsule!r}")
            schema = dict(env[node.capsule])
            for f, label in schema.items():
                if label not in vocab.datatypes:
                    raise SchemaViolation(f"capsule {node.capsule!r}: field {f!r} has unknown datatype {label!r}")
            return AbstractCapsule(schema, EMPTY_EFFECT)

        if isinstance(node, FilterExpr):
            inner = go(node.source)
            if node.pred.field not in inner.schema:
                raise SchemaViolation(f"filter on {node.pred.field!r}, which is not in {sorted(inner.schema)}")
            return AbstractCapsule(inner.schema, inner.effect.add(Filter(node.pred.field, node.pred.interval), vocab))

        if isinstance(node, ProjectExpr):
            inner = go(node.source)
            missing = [f for f in node.fields if f not in inner.schema]
            if missing:
                raise SchemaViolation(f"project of {missing}, not in {sorted(inner.schema)}")
            schema = {f: inner.schema[f] for f in node.fields}
            return AbstractCapsule(schema, inner.effect.add(Schema.of(schema.values(), vocab), vocab))

        if isinstance(node, RedactExpr):
            inner = go(node.source)
            if node.field not in inner.schema:
                raise SchemaViolation(f"redact of {node.field!r}, which is not in {sorted(inner.schema)}")
            return AbstractCapsule(inner.schema, inner.effect.add(Redact(node.field, node.mode), vocab))

        if isinstance(node, JoinExpr):
            left, right = go(node.left), go(node.right)
            schema = _join_schemas(left.schema, right.schema)
            atoms = _widen_schema_atoms(left.effect, right.schema, vocab) + \
                _widen_schema_atoms(right.effect, left.schema, vocab)
            return AbstractCapsule(schema, PolicyClause.of(atoms, vocab))

        if isinstance(node, UnionExpr):
            left, right = go(node.left), go(node.right)
            if left.schema != right.schema:
                raise SchemaViolation(f"union of differing schemas {left.schema} and {right.schema}")
            return AbstractCapsule(left.schema, EMPTY_EFFECT)

        if isinstance(node, DPCountExpr):
            inner = go(node.source)
            label = COUNT_LABEL if COUNT_LABEL in vocab.datatypes else vocab.datatypes.top
            return AbstractCapsule({COUNT_FIELD: label},
                                   inner.effect.add(Declass.dp(node.epsilon, node.delta), vocab))

        raise TypeError(f"not a program expression: {node!r}")

    return go(e)
