"""Input policies, discharge of requirements, and residual policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping, Sequence

from .attributes import (
    AttrKind,
    Attribute,
    Flag,
    Purpose,
    Role,
    RoleCall,
    RoleLiteral,
    RoleVar,
    attr_leq,
)
from .errors import UnboundVariable
from .lattice import Vocabulary, default_vocabulary
from .policy import PolicyClause, PolicyDNF, PolicyEffect, clause_leq


def reduce_clauses(clauses: Iterable[PolicyClause], vocab: Vocabulary | None = None) -> frozenset:
    """Drop every clause that demands at least as much as another one.

    This covers strict atom supersets, and also clauses that differ only in a
    tighter value on a shared key.
    """
    unique = sorted(set(clauses), key=lambda c: (len(c), c.sort_key()))
    kept: list[PolicyClause] = []
    for c in unique:
        if not any(clause_leq(c, k, vocab) for k in kept):
            kept.append(c)
    return frozenset(k for k in kept if not any(o != k and clause_leq(k, o, vocab) for o in kept))


def policy_join(p1: PolicyDNF, p2: PolicyDNF, vocab: Vocabulary | None = None) -> PolicyDNF:
    """Least upper bound of two policies: pairwise clause unions, deduplicated and reduced."""
    unions = {c1.union(c2, vocab) for c1 in p1.clauses for c2 in p2.clauses}
    return PolicyDNF(reduce_clauses(unions, vocab))


@dataclass(frozen=True)
class InputPolicy:
    dnf: PolicyDNF
    sources: frozenset = frozenset()


def ingest(policies: Sequence[PolicyDNF], vocab: Vocabulary | None = None,
           sources: Iterable[str] = ()) -> InputPolicy:
    if not policies:
        raise ValueError("ingest needs at least one policy")
    joined = reduce(lambda a, b: policy_join(a, b, vocab), policies[1:], policies[0])
    return InputPolicy(joined, frozenset(sources))


def satisfies(req: Attribute, effect: PolicyEffect, vocab: Vocabulary | None = None) -> bool:
    """True iff some guarantee in ``effect`` is at least as restrictive as ``req``.

    Role requirements are never met by a program; they wait for declassification.
    """
    if isinstance(req, Role):
        return False
    if isinstance(req, Flag):
        return req in effect.atoms
    return any(g.key == req.key and attr_leq(g, req, vocab) for g in effect.atoms)


def residual_clause(c: PolicyClause, effect: PolicyEffect, vocab: Vocabulary | None = None) -> PolicyClause:
    return PolicyClause(frozenset(a for a in c.atoms if not satisfies(a, effect, vocab)))


@dataclass(frozen=True)
class ResidualPolicy:
    """Residual clauses aligned one-to-one with the input clauses they came from."""

    clauses: tuple

    @property
    def dnf(self) -> PolicyDNF:
        return PolicyDNF(frozenset(self.clauses))

    @property
    def satisfied(self) -> bool:
        return any(len(c) == 0 for c in self.clauses)


def residual_policy(pin: InputPolicy | PolicyDNF, effect: PolicyEffect,
                    vocab: Vocabulary | None = None) -> ResidualPolicy:
    dnf = pin.dnf if isinstance(pin, InputPolicy) else pin
    return ResidualPolicy(tuple(residual_clause(c, effect, vocab) for c in dnf.sorted_clauses()))


@dataclass(frozen=True)
class Evidence:
    """Per-run facts that can discharge metadata requirements."""

    consent: bool = False
    notification: bool = False
    purposes: frozenset = field(default_factory=frozenset)  # declared purpose labels


def _discharged_by(atom: Attribute, evidence: Evidence, vocab: Vocabulary) -> bool:
    if atom.kind is AttrKind.CONSENT_REQUIRED:
        return evidence.consent
    if atom.kind is AttrKind.NOTIFICATION_REQUIRED:
        return evidence.notification
    if isinstance(atom, Purpose) and evidence.purposes:
        return attr_leq(Purpose.of(evidence.purposes, vocab), atom, vocab)
    return False


def metadata_discharge(r: ResidualPolicy, evidence: Evidence, vocab: Vocabulary | None = None) -> ResidualPolicy:
    vocab = vocab or default_vocabulary()
    return ResidualPolicy(tuple(
        PolicyClause(frozenset(a for a in c.atoms if not _discharged_by(a, evidence, vocab)))
        for c in r.clauses
    ))


@dataclass(frozen=True)
class Analyst:
    identity: str
    role: str


# function name -> bound identity -> identities affiliated with it
Affiliations = Mapping[str, Mapping[str, Iterable[str]]]


def _role_ok(expr, analyst: Analyst, bindings: Mapping[str, str], affiliations: Affiliations,
             vocab: Vocabulary) -> bool:
    if isinstance(expr, RoleLiteral):
        roles = vocab.roles
        if expr.name == roles.top:
            return True
        return analyst.role in roles and roles.leq(analyst.role, expr.name)
    var = expr if isinstance(expr, RoleVar) else expr.arg
    if var.name not in bindings:
        raise UnboundVariable(f"no binding for ${var.name}")
    bound = bindings[var.name]
    if isinstance(expr, RoleVar):
        return analyst.identity == bound
    assert isinstance(expr, RoleCall)
    allowed = set(affiliations.get(expr.function, {}).get(bound, ()))
    return analyst.identity in allowed or analyst.role in allowed


def blocking_clauses(r: ResidualPolicy) -> list:
    return sorted(set(r.clauses), key=lambda c: (len(c), c.sort_key()))


def declassifiable(r: ResidualPolicy, analyst: Analyst, bindings: Mapping[str, str] | None = None,
                   affiliations: Affiliations | None = None, vocab: Vocabulary | None = None) -> bool:
    """True iff one residual clause is empty or consists only of roles the analyst holds.

    Raises :class:`UnboundVariable` when no clause succeeds and at least one
    was undecidable for lack of a ``$var`` binding.
    """
    vocab = vocab or default_vocabulary()
    bindings = bindings or {}
    affiliations = affiliations or {}
    unbound: UnboundVariable | None = None
    for c in r.clauses:
        if not c.atoms:
            return True
        if not all(isinstance(a, Role) for a in c.atoms):
            continue
        try:
            if all(_role_ok(a.expr, analyst, bindings, affiliations, vocab) for a in c.atoms):
                return True
        except UnboundVariable as exc:
            unbound = exc
    if unbound is not None:
        raise unbound
    return False
