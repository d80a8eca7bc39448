"""Finite lattices loaded from ``edge``/``top``/``bottom`` configuration text.

Three lattices make up a :class:`Vocabulary`: datatypes (for SCHEMA), analyst
roles (for ROLE) and processing purposes (for PURPOSE).  The declared top and
bottom are the greatest and least elements by definition, so edges to them
may be omitted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Iterable

from .errors import LatticeError


class Lattice:
    """A finite lattice over string labels with precomputed join/meet tables."""

    def __init__(self, edges: Iterable[tuple[str, str]], top: str, bottom: str, name: str = "lattice"):
        self.name = name
        self.top = top
        self.bottom = bottom
        self.edges = frozenset(edges)
        labels = {top, bottom}
        for child, parent in self.edges:
            labels.update((child, parent))
        self.labels = frozenset(labels)
        self._validate_edges()
        self._up = self._closure()
        self._down = {a: frozenset(b for b in self.labels if a in self._up[b]) for a in self.labels}
        self._join: dict[tuple[str, str], str] = {}
        self._meet: dict[tuple[str, str], str] = {}
        self._complete()

    @classmethod
    def parse(cls, text: str, name: str = "lattice") -> "Lattice":
        edges = []
        top = bottom = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "edge" and len(parts) == 3:
                edges.append((parts[1], parts[2]))
            elif parts[0] in ("top", "bottom") and len(parts) == 2:
                if parts[0] == "top":
                    if top is not None:
                        raise LatticeError(f"{name}: line {lineno}: top declared twice")
                    top = parts[1]
                else:
                    if bottom is not None:
                        raise LatticeError(f"{name}: line {lineno}: bottom declared twice")
                    bottom = parts[1]
            else:
                raise LatticeError(f"{name}: line {lineno}: cannot parse {raw.strip()!r}")
        if top is None or bottom is None:
            raise LatticeError(f"{name}: both 'top' and 'bottom' must be declared")
        return cls(edges, top, bottom, name=name)

    @classmethod
    def load(cls, path: str | Path) -> "Lattice":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), name=path.name)

    def _validate_edges(self) -> None:
        if self.top == self.bottom and len(self.labels) > 1:
            raise LatticeError(f"{self.name}: top and bottom coincide")
        for child, parent in self.edges:
            if child == parent:
                raise LatticeError(f"{self.name}: self-loop on {child!r}")
            if child == self.top:
                raise LatticeError(f"{self.name}: top {self.top!r} cannot have a parent ({parent!r})")
            if parent == self.bottom:
                raise LatticeError(f"{self.name}: bottom {self.bottom!r} cannot have a child ({child!r})")

    def _closure(self) -> dict[str, frozenset[str]]:
        parents: dict[str, set[str]] = {a: set() for a in self.labels}
        for child, parent in self.edges:
            parents[child].add(parent)
        for a in self.labels:
            if a != self.top:
                parents[a].add(self.top)
            if a != self.bottom:
                parents[self.bottom].add(a)

        up: dict[str, frozenset[str]] = {}
        state: dict[str, int] = {}

        def visit(node: str, path: list[str]) -> frozenset[str]:
            if state.get(node) == 2:
                return up[node]
            if state.get(node) == 1:
                cycle = path[path.index(node):] + [node]
                raise LatticeError(f"{self.name}: cycle in order: {' -> '.join(cycle)}")
            state[node] = 1
            acc = {node}
            for p in sorted(parents[node]):
                acc |= visit(p, path + [node])
            state[node] = 2
            up[node] = frozenset(acc)
            return up[node]

        for a in sorted(self.labels):
            visit(a, [])
        return up

    def _complete(self) -> None:
        ordered = sorted(self.labels)
        for a in ordered:
            self._join[a, a] = a
            self._meet[a, a] = a
        for a, b in combinations(ordered, 2):
            ub = self._up[a] & self._up[b]
            minimal = [u for u in ub if not any(v != u and v in self._down[u] for v in ub)]
            if len(minimal) != 1:
                raise LatticeError(
                    f"{self.name}: {a!r} and {b!r} have no least upper bound (candidates {sorted(minimal)})")
            lb = self._down[a] & self._down[b]
            maximal = [u for u in lb if not any(v != u and v in self._up[u] for v in lb)]
            if len(maximal) != 1:
                raise LatticeError(
                    f"{self.name}: {a!r} and {b!r} have no greatest lower bound (candidates {sorted(maximal)})")
            self._join[a, b] = self._join[b, a] = minimal[0]
            self._meet[a, b] = self._meet[b, a] = maximal[0]

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def leq(self, a: str, b: str) -> bool:
        return b in self._up[a]

    def join(self, a: str, b: str) -> str:
        return self._join[a, b]

    def meet(self, a: str, b: str) -> str:
        return self._meet[a, b]

    def maximal(self, labels: Iterable[str]) -> frozenset[str]:
        """The antichain of maximal elements of ``labels``."""
        s = set(labels)
        return frozenset(a for a in s if not any(b != a and b in self._up[a] for b in s))

    def to_text(self) -> str:
        lines = [f"top {self.top}", f"bottom {self.bottom}"]
        lines += [f"edge {c} {p}" for c, p in sorted(self.edges)]
        return "\n".join(lines) + "\n"


def _read_default(name: str) -> str:
    return resources.files("datacapsule").joinpath("data").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class Vocabulary:
    """The configured label universes used by the attribute domains."""

    datatypes: Lattice
    roles: Lattice
    purposes: Lattice

    @classmethod
    def load(cls, directory: str | Path) -> "Vocabulary":
        d = Path(directory)
        return cls(
            datatypes=Lattice.load(d / "datatypes.lattice"),
            roles=Lattice.load(d / "roles.lattice"),
            purposes=Lattice.load(d / "purposes.lattice"),
        )


@lru_cache(maxsize=1)
def default_vocabulary() -> Vocabulary:
    return Vocabulary(
        datatypes=Lattice.parse(_read_default("datatypes.lattice"), "datatypes.lattice"),
        roles=Lattice.parse(_read_default("roles.lattice"), "roles.lattice"),
        purposes=Lattice.parse(_read_default("purposes.lattice"), "purposes.lattice"),
    )
