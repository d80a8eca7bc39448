"""Policy formulas, clauses and disjunctive normal form."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Iterator, Union

from .attributes import Attribute, attr_leq, attr_meet
from .lattice import Vocabulary


@dataclass(frozen=True)
class Atom:
    attr: Attribute


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Top:
    """The unconditional clause (a bare ``ALLOW``)."""


Formula = Union[Atom, And, Or, Top]


@dataclass(frozen=True)
class PolicyAST:
    """One formula per ``ALLOW``; clauses are alternatives."""

    clauses: tuple

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        if not self.clauses:
            raise ValueError("a policy needs at least one ALLOW clause")


def merge_atoms(atoms: Iterable[Attribute], vocab: Vocabulary | None = None) -> frozenset:
    """Normalize a conjunction of atoms.

    Keyed atoms on the same key collapse by meet.  Among unkeyed atoms of one
    kind only the most restrictive are kept: ``SCHEMA Name AND SCHEMA PII`` is
    equivalent to ``SCHEMA Name``.
    """
    keyed: dict[tuple, Attribute] = {}
    plain: dict[tuple, set] = {}
    for a in atoms:
        if a.keyed:
            prev = keyed.get(a.key)
            keyed[a.key] = a if prev is None else attr_meet(prev, a, vocab)
        else:
            plain.setdefault(a.key, set()).add(a)
    out = set(keyed.values())
    for group in plain.values():
        if len(group) == 1:
            out |= group
            continue
        out |= {a for a in group if not any(b != a and attr_leq(b, a, vocab) for b in group)}
    return frozenset(out)


@dataclass(frozen=True)
class PolicyClause:
    """A conjunction of attribute requirements (or guarantees, for effects)."""

    atoms: frozenset = frozenset()

    def __post_init__(self):
        atoms = frozenset(self.atoms)
        keys = [a.key for a in atoms if a.keyed]
        if len(keys) != len(set(keys)):
            atoms = merge_atoms(atoms)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def of(cls, atoms: Iterable[Attribute], vocab: Vocabulary | None = None) -> "PolicyClause":
        return cls(merge_atoms(atoms, vocab))

    def __iter__(self) -> Iterator[Attribute]:
        return iter(self.sorted_atoms())

    def __len__(self) -> int:
        return len(self.atoms)

    def __contains__(self, atom: object) -> bool:
        return atom in self.atoms

    def sorted_atoms(self) -> list:
        return sorted(self.atoms, key=lambda a: a.sort_key())

    def sort_key(self) -> tuple:
        return tuple(a.sort_key() for a in self.sorted_atoms())

    def add(self, atom: Attribute, vocab: Vocabulary | None = None) -> "PolicyClause":
        return PolicyClause(merge_atoms([*self.atoms, atom], vocab))

    def union(self, other: "PolicyClause", vocab: Vocabulary | None = None) -> "PolicyClause":
        return PolicyClause(merge_atoms([*self.atoms, *other.atoms], vocab))

    def __str__(self) -> str:
        return " AND ".join(str(a) for a in self.sorted_atoms())


# A program's policy effect has the same shape as a clause: a conjunction of
# guarantees, keyed atoms merged by meet.
PolicyEffect = PolicyClause
EMPTY_EFFECT = PolicyClause()


@dataclass(frozen=True)
class PolicyDNF:
    clauses: frozenset

    def __post_init__(self):
        clauses = frozenset(self.clauses)
        if not clauses:
            raise ValueError("a DNF policy needs at least one clause")
        object.__setattr__(self, "clauses", clauses)

    def __iter__(self) -> Iterator[PolicyClause]:
        return iter(self.sorted_clauses())

    def __len__(self) -> int:
        return len(self.clauses)

    def sorted_clauses(self) -> list:
        return sorted(self.clauses, key=lambda c: (len(c), c.sort_key()))

    @classmethod
    def of(cls, clauses: Iterable[Iterable[Attribute]], vocab: Vocabulary | None = None) -> "PolicyDNF":
        return cls(frozenset(c if isinstance(c, PolicyClause) else PolicyClause.of(c, vocab) for c in clauses))


def _operands(f: Formula, node: type) -> list:
    """Operands of a chain of one connective, without recursing."""
    out, stack = [], [f]
    while stack:
        g = stack.pop()
        if isinstance(g, node):
            stack.append(g.right)
            stack.append(g.left)
        else:
            out.append(g)
    return out


def _formula_dnf(f: Formula) -> list:
    if isinstance(f, Atom):
        return [frozenset([f.attr])]
    if isinstance(f, Top):
        return [frozenset()]
    if isinstance(f, Or):
        return [c for g in _operands(f, Or) for c in _formula_dnf(g)]
    if isinstance(f, And):
        acc = [frozenset()]
        for g in _operands(f, And):
            acc = list({l | r for l, r in product(acc, _formula_dnf(g))})
        return acc
    raise TypeError(f"not a policy formula: {f!r}")


def to_dnf(policy: PolicyAST, vocab: Vocabulary | None = None) -> PolicyDNF:
    """Distribute AND over OR, split the disjuncts, drop duplicate clauses."""
    clauses = set()
    for formula in policy.clauses:
        for atoms in _formula_dnf(formula):
            clauses.add(PolicyClause(merge_atoms(atoms, vocab)))
    return PolicyDNF(frozenset(clauses))


def clause_leq(c1: PolicyClause, c2: PolicyClause, vocab: Vocabulary | None = None) -> bool:
    """True iff ``c1`` demands at least everything ``c2`` demands."""
    return all(
        any(a1.key == a2.key and attr_leq(a1, a2, vocab) for a1 in c1.atoms)
        for a2 in c2.atoms
    )


def formula_atoms(f: Formula) -> set:
    out, stack = set(), [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Atom):
            out.add(g.attr)
        elif isinstance(g, (And, Or)):
            stack.extend((g.left, g.right))
    return out


def eval_formula(f: Formula, truth) -> bool:
    """Evaluate a formula given ``truth(atom) -> bool``."""
    if isinstance(f, Atom):
        return bool(truth(f.attr))
    if isinstance(f, Top):
        return True
    if isinstance(f, And):
        return all(eval_formula(g, truth) for g in _operands(f, And))
    if isinstance(f, Or):
        return any(eval_formula(g, truth) for g in _operands(f, Or))
    raise TypeError(f"not a policy formula: {f!r}")
