"""The dataflow language analysis programs are written in.

Programs are nested calls::

    dpCount(1.0, 1e-6, project({zip}, filter(age > 17, getDC(c1))))

``redact`` takes a field, a mode (``full``, ``hash`` or ``truncate(k)``) and
a source; the two-argument form ``redact(field, e)`` means ``full``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Union

from .attributes import Interval, RedactMode
from .errors import ProgramSyntaxError


@dataclass(frozen=True)
class Pred:
    field: str
    op: str  # "<" or ">"
    value: int

    @property
    def interval(self) -> Interval:
        if self.op == ">":
            return Interval.at_least(self.value + 1)
        return Interval.at_most(self.value - 1)

    def holds(self, x: int) -> bool:
        return x > self.value if self.op == ">" else x < self.value

    def __str__(self) -> str:
        return f"{self.field} {self.op} {self.value}"


@dataclass(frozen=True)
class GetDC:
    capsule: str


@dataclass(frozen=True)
class FilterExpr:
    pred: Pred
    source: "ProgramExpr"


@dataclass(frozen=True)
class ProjectExpr:
    fields: tuple  # kept in the order written; duplicates removed
    source: "ProgramExpr"

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(dict.fromkeys(self.fields)))
        if not self.fields:
            raise ValueError("project needs at least one field")


@dataclass(frozen=True)
class RedactExpr:
    field: str
    mode: RedactMode
    source: "ProgramExpr"


@dataclass(frozen=True)
class JoinExpr:
    left: "ProgramExpr"
    right: "ProgramExpr"


@dataclass(frozen=True)
class UnionExpr:
    left: "ProgramExpr"
    right: "ProgramExpr"


@dataclass(frozen=True)
class DPCountExpr:
    epsilon: float
    delta: float
    source: "ProgramExpr"

    def __post_init__(self):
        eps, delta = float(self.epsilon), float(self.delta)
        if not (eps > 0 and math.isfinite(eps)):
            raise ValueError(f"dpCount epsilon must be positive, got {self.epsilon!r}")
        if not 0 <= delta < 1:
            raise ValueError(f"dpCount delta must lie in [0, 1), got {self.delta!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)


ProgramExpr = Union[GetDC, FilterExpr, ProjectExpr, RedactExpr, JoinExpr, UnionExpr, DPCountExpr]


def children(e: ProgramExpr) -> tuple:
    if isinstance(e, GetDC):
        return ()
    if isinstance(e, (JoinExpr, UnionExpr)):
        return (e.left, e.right)
    return (e.source,)


def walk(e: ProgramExpr) -> Iterator[ProgramExpr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def free_capsules(e: ProgramExpr) -> frozenset:
    """Capsule ids read by ``getDC`` leaves."""
    return frozenset(n.capsule for n in walk(e) if isinstance(n, GetDC))


def row_preserving(e: ProgramExpr) -> bool:
    """True iff every output row comes from exactly one input row.

    That holds for a single ``getDC`` under any stack of filter, project and
    redact.
    """
    node = e
    while isinstance(node, (FilterExpr, ProjectExpr, RedactExpr)):
        node = node.source
    return isinstance(node, GetDC)


def format_program(e: ProgramExpr) -> str:
    if isinstance(e, GetDC):
        return f"getDC({e.capsule})"
    if isinstance(e, FilterExpr):
        return f"filter({e.pred}, {format_program(e.source)})"
    if isinstance(e, ProjectExpr):
        return f"project({{{', '.join(e.fields)}}}, {format_program(e.source)})"
    if isinstance(e, RedactExpr):
        return f"redact({e.field}, {e.mode}, {format_program(e.source)})"
    if isinstance(e, JoinExpr):
        return f"join({format_program(e.left)}, {format_program(e.right)})"
    if isinstance(e, UnionExpr):
        return f"union({format_program(e.left)}, {format_program(e.right)})"
    if isinstance(e, DPCountExpr):
        return f"dpCount({e.epsilon!r}, {e.delta!r}, {format_program(e.source)})"
    raise TypeError(f"not a program expression: {e!r}")


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.\-]*)
  | (?P<punct>[(){},<>])
""", re.VERBOSE)


class _ProgramParser:
    def __init__(self, text: str, origin: str):
        self.text = text
        self.origin = origin
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                self.fail(f"unexpected character {text[pos]!r}", pos)
            if m.lastgroup not in ("ws", "comment"):
                self.tokens.append((m.lastgroup, m.group(0), pos))
            pos = m.end()
        self.tokens.append(("eof", "", len(text)))
        self.i = 0

    def fail(self, message: str, offset: int | None = None):
        if offset is None:
            offset = self.tokens[self.i][2]
        line = self.text.count("\n", 0, offset) + 1
        col = offset - (self.text.rfind("\n", 0, offset) + 1) + 1
        raise ProgramSyntaxError(message, line, col, self.origin)

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self, kind: str, text: str | None = None, what: str | None = None) -> str:
        k, t, _ = self.tokens[self.i]
        if k != kind or (text is not None and t != text):
            found = "end of input" if k == "eof" else repr(t)
            self.fail(f"expected {what or text or kind}, found {found}")
        self.i += 1
        return t

    def number(self) -> float:
        t = self.take("number", what="a number")
        return float(t)

    def integer(self) -> int:
        t = self.take("number", what="an integer")
        try:
            return int(t)
        except ValueError:
            self.i -= 1
            self.fail(f"expected an integer, found {t!r}")

    def program(self) -> ProgramExpr:
        e = self.expr()
        if self.peek()[0] != "eof":
            self.fail(f"unexpected {self.peek()[1]!r} after program")
        return e

    def expr(self) -> ProgramExpr:
        start = self.peek()[2]
        name = self.take("ident", what="an operator")
        self.take("punct", "(")
        try:
            node = self._call(name, start)
        except ValueError as exc:
            self.fail(str(exc), start)
        self.take("punct", ")")
        return node

    def _call(self, name: str, start: int) -> ProgramExpr:
        comma = lambda: self.take("punct", ",")
        if name == "getDC":
            return GetDC(self.take("ident", what="a capsule id"))
        if name == "filter":
            field = self.take("ident", what="a field name")
            k, op, _ = self.peek()
            if k != "punct" or op not in ("<", ">"):
                self.fail(f"expected '<' or '>', found {op!r}")
            self.i += 1
            pred = Pred(field, op, self.integer())
            comma()
            return FilterExpr(pred, self.expr())
        if name == "project":
            self.take("punct", "{")
            fields = [self.take("ident", what="a field name")]
            while self.peek()[1] == ",":
                self.i += 1
                fields.append(self.take("ident", what="a field name"))
            self.take("punct", "}")
            comma()
            return ProjectExpr(tuple(fields), self.expr())
        if name == "redact":
            field = self.take("ident", what="a field name")
            comma()
            mode = RedactMode.full()
            k, t, _ = self.peek()
            nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else ("eof", "", 0)
            if k == "ident" and t in ("full", "hash") and nxt[1] == ",":
                self.i += 1
                mode = RedactMode.full() if t == "full" else RedactMode.hash()
                comma()
            elif k == "ident" and t == "truncate" and nxt[1] == "(":
                self.i += 2
                n = self.integer()
                self.take("punct", ")")
                comma()
                mode = RedactMode.truncate(n)
            return RedactExpr(field, mode, self.expr())
        if name in ("join", "union"):
            left = self.expr()
            comma()
            right = self.expr()
            return JoinExpr(left, right) if name == "join" else UnionExpr(left, right)
        if name == "dpCount":
            eps = self.number()
            comma()
            delta = self.number()
            comma()
            return DPCountExpr(eps, delta, self.expr())
        self.fail(f"unknown operator {name!r}", start)


def parse_program(text: str | bytes, origin: str = "<program>") -> ProgramExpr:
    """Parse program text. Raises :class:`ProgramSyntaxError` with line/column."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProgramSyntaxError(f"not valid UTF-8: {exc.reason}", origin=origin) from None
    try:
        return _ProgramParser(text, origin).program()
    except RecursionError:
        raise ProgramSyntaxError("program nested too deeply", origin=origin) from None
