"""Reading and writing policy text.

Grammar (AND binds tighter than OR, both right-associative)::

    policy  := ("ALLOW" clause?)+
    clause  := disj
    disj    := conj ("OR" disj)?
    conj    := primary ("AND" conj)?
    primary := "(" disj ")" | attribute

A bare ``ALLOW`` is the unconditional clause.  ``#`` starts a line comment and
a parenthesised citation such as ``(Article 9)`` is ignored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

from .attributes import (
    CONSENT_REQUIRED,
    MECHANISM_ALIASES,
    NOTIFICATION_REQUIRED,
    ANY_DECLASS,
    Attribute,
    Declass,
    Filter,
    Interval,
    Purpose,
    Redact,
    RedactMode,
    Role,
    RoleCall,
    RoleLiteral,
    RoleVar,
    Schema,
)
from .errors import PolicySyntaxError, UnknownAttribute, UnknownLabel
from .lattice import Vocabulary, default_vocabulary
from .policy import And, Atom, Formula, Or, PolicyAST, PolicyDNF, Top, to_dnf

ATTRIBUTE_NAMES = frozenset({
    "SCHEMA", "ROLE", "FILTER", "DECLASS", "REDACT", "PURPOSE",
    "CONSENT_REQUIRED", "NOTIFICATION_REQUIRED",
})
KEYWORDS = frozenset({"ALLOW", "AND", "OR"})

_CITATION = re.compile(r"\(\s*(?:articles?|recitals?|sections?|§)(?![A-Za-z_])[^()]*\)", re.IGNORECASE)
_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>-inf(?![A-Za-z0-9_])|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<var>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<|>)
  | (?P<punct>[()\[\],])
""", re.VERBOSE)


@dataclass(frozen=True)
class SourcePolicy:
    text: str
    origin: str = "<inline>"

    @classmethod
    def from_file(cls, path: str | Path) -> "SourcePolicy":
        path = Path(path)
        try:
            text = path.read_bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PolicySyntaxError(f"not valid UTF-8: {exc.reason}", origin=str(path)) from None
        return cls(text, str(path))


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str, origin: str = "<inline>") -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        col = pos - line_start + 1
        if text[pos] == "(":
            cite = _CITATION.match(text, pos)
            if cite:
                chunk = cite.group(0)
                if "\n" in chunk:
                    line += chunk.count("\n")
                    line_start = pos + chunk.rindex("\n") + 1
                pos = cite.end()
                continue
        m = _TOKEN.match(text, pos)
        if not m:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", line, col, origin)
        kind = m.lastgroup
        chunk = m.group(0)
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, chunk, line, col))
        if "\n" in chunk:
            line += chunk.count("\n")
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _fold_right(node, parts: list) -> Formula:
    acc = parts[-1]
    for part in reversed(parts[:-1]):
        acc = node(part, acc)
    return acc


class _PolicyParser:
    def __init__(self, text: str, origin: str, vocab: Vocabulary):
        self.origin = origin
        self.vocab = vocab
        self.tokens = tokenize(text, origin)
        self.i = 0

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        if not self.at(kind, text):
            self.fail(f"expected {what or text or kind}, found {self.describe(self.tok)}")
        return self.advance()

    def describe(self, t: Token) -> str:
        return "end of input" if t.kind == "eof" else repr(t.text)

    def fail(self, message: str, tok: Token | None = None, cls=PolicySyntaxError):
        t = tok or self.tok
        raise cls(message, t.line, t.column, self.origin)

    # -- grammar
    def policy(self) -> PolicyAST:
        clauses = []
        if not self.at("ident", "ALLOW"):
            self.fail(f"policy must start with ALLOW, found {self.describe(self.tok)}")
        while self.at("ident", "ALLOW"):
            self.advance()
            if self.at("eof") or self.at("ident", "ALLOW"):
                clauses.append(Top())
            else:
                clauses.append(self.disj())
        if not self.at("eof"):
            self.fail(f"expected AND, OR or ALLOW, found {self.describe(self.tok)}")
        return PolicyAST(tuple(clauses))

    def disj(self) -> Formula:
        parts = [self.conj()]
        while self.at("ident", "OR"):
            self.advance()
            parts.append(self.conj())
        return _fold_right(Or, parts)

    def conj(self) -> Formula:
        parts = [self.primary()]
        while self.at("ident", "AND"):
            self.advance()
            parts.append(self.primary())
        return _fold_right(And, parts)

    def primary(self) -> Formula:
        if self.at("punct", "("):
            self.advance()
            inner = self.disj()
            self.expect("punct", ")")
            return inner
        return Atom(self.attribute())

    def attribute(self) -> Attribute:
        t = self.tok
        if t.kind != "ident":
            self.fail(f"expected an attribute, found {self.describe(t)}")
        if t.text in KEYWORDS:
            self.fail(f"expected an attribute, found keyword {t.text}")
        if t.text not in ATTRIBUTE_NAMES:
            self.fail(f"unknown attribute {t.text!r}", cls=UnknownAttribute)
        self.advance()
        name = t.text
        if name == "CONSENT_REQUIRED":
            return CONSENT_REQUIRED
        if name == "NOTIFICATION_REQUIRED":
            return NOTIFICATION_REQUIRED
        if name == "SCHEMA":
            labels = self.labels(self.vocab.datatypes, "datatype")
            return Schema.of(labels, self.vocab)
        if name == "PURPOSE":
            labels = self.labels(self.vocab.purposes, "purpose")
            return Purpose.of(labels, self.vocab)
        if name == "ROLE":
            return Role(self.role_expr())
        if name == "FILTER":
            return self.filter_attr()
        if name == "DECLASS":
            return self.declass_attr()
        return self.redact_attr()

    def labels(self, lattice, what: str) -> list[str]:
        out = []
        while self.at("ident") and self.tok.text not in KEYWORDS and self.tok.text not in ATTRIBUTE_NAMES:
            t = self.advance()
            if t.text not in lattice:
                self.fail(f"unknown {what} label {t.text!r}", t, UnknownLabel)
            out.append(t.text)
        if not out:
            self.fail(f"expected at least one {what} label, found {self.describe(self.tok)}")
        return out

    def role_expr(self):
        if self.at("var"):
            return RoleVar(self.advance().text[1:])
        t = self.expect("ident", what="a role")
        if t.text in KEYWORDS or t.text in ATTRIBUTE_NAMES:
            self.fail(f"expected a role, found keyword {t.text}", t)
        if self.at("punct", "("):
            self.advance()
            arg = self.expect("var", what="a $variable argument")
            self.expect("punct", ")")
            return RoleCall(t.text, RoleVar(arg.text[1:]))
        if t.text not in self.vocab.roles:
            self.fail(f"unknown role {t.text!r}", t, UnknownLabel)
        return RoleLiteral(t.text)

    def integer(self) -> int:
        t = self.expect("number", what="an integer")
        try:
            return int(t.text)
        except ValueError:
            self.fail(f"expected an integer, found {t.text!r}", t)

    def bound(self):
        t = self.tok
        if t.kind == "ident" and t.text == "inf":
            self.advance()
            return math.inf
        if t.kind == "number" and t.text == "-inf":
            self.advance()
            return -math.inf
        return self.integer()

    def field_name(self) -> str:
        t = self.expect("ident", what="a field name")
        if t.text in KEYWORDS or t.text in ATTRIBUTE_NAMES:
            self.fail(f"expected a field name, found keyword {t.text}", t)
        return t.text

    def filter_attr(self) -> Filter:
        field = self.field_name()
        if self.at("op"):
            op = self.advance().text
            m = self.integer()
            interval = {
                ">": Interval.at_least(m + 1),
                ">=": Interval.at_least(m),
                "<": Interval.at_most(m - 1),
                "<=": Interval.at_most(m),
            }[op]
            return Filter(field, interval)
        self.expect("punct", "[", what="a comparison or [lo, hi]")
        if self.at("punct", "]"):
            self.advance()
            return Filter(field, Interval.empty())
        lo = self.bound()
        self.expect("punct", ",")
        hi = self.bound()
        self.expect("punct", "]")
        return Filter(field, Interval(lo, hi))

    def declass_attr(self) -> Declass:
        t = self.expect("ident", what="a declassification mechanism")
        mech = MECHANISM_ALIASES.get(t.text)
        if mech is None:
            self.fail(f"unknown declassification mechanism {t.text!r}", t, UnknownLabel)
        params = []
        while self.at("number"):
            p = self.advance()
            try:
                params.append(float(p.text))
            except ValueError:
                self.fail(f"bad number {p.text!r}", p)
        if mech == ANY_DECLASS:
            if params:
                self.fail("DECLASS Any takes no parameters", t)
            return Declass.any()
        if not 1 <= len(params) <= 2:
            self.fail("DECLASS DP takes epsilon and optional delta", t)
        try:
            return Declass.dp(*params)
        except ValueError as exc:
            self.fail(str(exc), t)

    def redact_attr(self) -> Redact:
        field = self.field_name()
        t = self.expect("ident", what="a redaction mode")
        if t.text == "full":
            return Redact(field, RedactMode.full())
        if t.text == "hash":
            return Redact(field, RedactMode.hash())
        if t.text == "truncate":
            self.expect("punct", "(")
            k = self.integer()
            self.expect("punct", ")")
            if k < 0:
                self.fail("truncate length must be non-negative", t)
            return Redact(field, RedactMode.truncate(k))
        self.fail(f"unknown redaction mode {t.text!r}", t)


def parse_policy(src: str | bytes | SourcePolicy, vocab: Vocabulary | None = None,
                 origin: str | None = None) -> PolicyAST:
    """Parse policy text into a :class:`PolicyAST`.

    Raises :class:`PolicySyntaxError`, :class:`UnknownAttribute` or
    :class:`UnknownLabel` (all :class:`~datacapsule.errors.ParseError`).
    """
    if isinstance(src, SourcePolicy):
        text, origin = src.text, origin or src.origin
    elif isinstance(src, (bytes, bytearray)):
        try:
            text = bytes(src).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PolicySyntaxError(f"not valid UTF-8: {exc.reason}", origin=origin) from None
    else:
        text = src
    parser = _PolicyParser(text, origin or "<inline>", vocab or default_vocabulary())
    try:
        return parser.policy()
    except RecursionError:
        raise PolicySyntaxError("parentheses nested too deeply", origin=origin) from None


def load_policy(path: str | Path, vocab: Vocabulary | None = None) -> PolicyDNF:
    """Read a policy file and normalize it."""
    return to_dnf(parse_policy(SourcePolicy.from_file(path), vocab), vocab)


def _fmt(f: Formula) -> str:
    if isinstance(f, Atom):
        return str(f.attr)
    if isinstance(f, And):
        # right-associated chains print flat; anything else nested is parenthesized
        parts = _operands_right(f, And)
        return " AND ".join(f"({_fmt(g)})" if isinstance(g, (And, Or)) else _fmt(g) for g in parts)
    if isinstance(f, Or):
        parts = _operands_right(f, Or)
        return " OR ".join(f"({_fmt(g)})" if isinstance(g, Or) else _fmt(g) for g in parts)
    raise TypeError(f"cannot print {f!r} inside a clause")


def _operands_right(f: Formula, node: type) -> list:
    """Split ``a op (b op (c ...))`` into ``[a, b, c, ...]``, keeping left-nested parts whole."""
    parts = []
    while isinstance(f, node):
        parts.append(f.left)
        f = f.right
    parts.append(f)
    return parts


def print_policy(p: PolicyAST | PolicyDNF) -> str:
    """Canonical text; re-parses to an equal structure."""
    lines = []
    if isinstance(p, PolicyDNF):
        for clause in p.sorted_clauses():
            lines.append(f"ALLOW {clause}" if len(clause) else "ALLOW")
    else:
        for f in p.clauses:
            lines.append("ALLOW" if isinstance(f, Top) else f"ALLOW {_fmt(f)}")
    return "\n".join(lines) + "\n"
