"""Attribute abstract domains.

Every domain is oriented the same way: a value lower in the order is *more
restrictive*.  A smaller FILTER interval, fewer or lower SCHEMA labels, a
smaller DP epsilon, a more destructive redaction mode all sit lower.  A
program guarantee ``g`` discharges a requirement ``r`` exactly when
``attr_leq(g, r)``.

SCHEMA and PURPOSE use the set-of-labels domain over a finite lattice: values
are kept as antichains of maximal labels and ordered by "every label of the
left side is below some label of the right side".  Meet is the pairwise label
meet; join is the union, both reduced to their maximal elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from .errors import KindMismatch
from .lattice import Lattice, Vocabulary, default_vocabulary

Bound = Union[int, float]  # finite bounds are ints; +/-math.inf for open ends


class AttrKind(str, Enum):
    # declaration order is the canonical print order
    SCHEMA = "SCHEMA"
    FILTER = "FILTER"
    REDACT = "REDACT"
    PURPOSE = "PURPOSE"
    DECLASS = "DECLASS"
    NOTIFICATION_REQUIRED = "NOTIFICATION_REQUIRED"
    CONSENT_REQUIRED = "CONSENT_REQUIRED"
    ROLE = "ROLE"


KIND_ORDER = {k: i for i, k in enumerate(AttrKind)}
FLAG_KINDS = (AttrKind.CONSENT_REQUIRED, AttrKind.NOTIFICATION_REQUIRED)


# --------------------------------------------------------------------------
# Intervals


@dataclass(frozen=True)
class Interval:
    """Closed integer interval; ``-inf``/``inf`` mark unbounded ends.

    Any ``lo > hi`` collapses to the canonical empty interval ``(inf, -inf)``,
    which makes hull and intersection fall out of plain min/max.
    """

    lo: Bound
    hi: Bound

    def __post_init__(self):
        lo, hi = _coerce_bound(self.lo), _coerce_bound(self.hi)
        if lo > hi:
            lo, hi = math.inf, -math.inf
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def empty(cls) -> "Interval":
        return cls(math.inf, -math.inf)

    @classmethod
    def full(cls) -> "Interval":
        return cls(-math.inf, math.inf)

    @classmethod
    def at_least(cls, m: int) -> "Interval":
        return cls(m, math.inf)

    @classmethod
    def at_most(cls, m: int) -> "Interval":
        return cls(-math.inf, m)

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    def __contains__(self, value: object) -> bool:
        return isinstance(value, int) and not isinstance(value, bool) and self.lo <= value <= self.hi

    def join(self, other: "Interval") -> "Interval":
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def meet(self, other: "Interval") -> "Interval":
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))

    def leq(self, other: "Interval") -> bool:
        return self.is_empty or (other.lo <= self.lo and self.hi <= other.hi)

    def __str__(self) -> str:
        if self.is_empty:
            return "[]"
        return f"[{_fmt_bound(self.lo)}, {_fmt_bound(self.hi)}]"


def _coerce_bound(b: Bound) -> Bound:
    if isinstance(b, bool):
        raise TypeError("interval bounds must be integers or infinities")
    if isinstance(b, float):
        if math.isinf(b):
            return b
        if not b.is_integer():
            raise ValueError(f"interval bound {b!r} is not an integer")
        return int(b)
    if isinstance(b, int):
        return b
    raise TypeError(f"bad interval bound {b!r}")


def _fmt_bound(b: Bound) -> str:
    if b == math.inf:
        return "inf"
    if b == -math.inf:
        return "-inf"
    return str(b)


def interval_join(a: Interval, b: Interval) -> Interval:
    return a.join(b)


def interval_meet(a: Interval, b: Interval) -> Interval:
    return a.meet(b)


# --------------------------------------------------------------------------
# Attribute values


class Attribute:
    """Base class of attribute values; subclasses are frozen dataclasses."""

    kind: AttrKind

    @property
    def key(self) -> tuple:
        """Atoms sharing a key are merged by meet inside one clause."""
        return (self.kind,)

    @property
    def keyed(self) -> bool:
        return False

    def sort_key(self) -> tuple:
        return (KIND_ORDER[self.kind], str(self))


def _set_leq(lat: Lattice, a: frozenset[str], b: frozenset[str]) -> bool:
    return all(any(lat.leq(x, y) for y in b) for x in a)


def _set_join(lat: Lattice, a: frozenset[str], b: frozenset[str]) -> frozenset[str]:
    return lat.maximal(a | b)


def _set_meet(lat: Lattice, a: frozenset[str], b: frozenset[str]) -> frozenset[str]:
    return lat.maximal(lat.meet(x, y) for x in a for y in b)


@dataclass(frozen=True)
class Schema(Attribute):
    """Datatype labels a program may touch. Build with :meth:`of` to normalize."""

    labels: frozenset

    kind = AttrKind.SCHEMA

    @classmethod
    def of(cls, labels: Iterable[str], vocab: Vocabulary | None = None) -> "Schema":
        vocab = vocab or default_vocabulary()
        labels = frozenset(labels)
        if not labels:
            raise ValueError("SCHEMA needs at least one label")
        return cls(vocab.datatypes.maximal(labels))

    def __str__(self) -> str:
        return "SCHEMA " + " ".join(sorted(self.labels))


@dataclass(frozen=True)
class Purpose(Attribute):
    labels: frozenset

    kind = AttrKind.PURPOSE

    @classmethod
    def of(cls, labels: Iterable[str], vocab: Vocabulary | None = None) -> "Purpose":
        vocab = vocab or default_vocabulary()
        labels = frozenset(labels)
        if not labels:
            raise ValueError("PURPOSE needs at least one label")
        return cls(vocab.purposes.maximal(labels))

    def __str__(self) -> str:
        return "PURPOSE " + " ".join(sorted(self.labels))


@dataclass(frozen=True)
class Filter(Attribute):
    field: str
    interval: Interval

    kind = AttrKind.FILTER

    @property
    def key(self) -> tuple:
        return (self.kind, self.field)

    @property
    def keyed(self) -> bool:
        return True

    def __str__(self) -> str:
        i = self.interval
        if not i.is_empty and i.hi == math.inf and i.lo != -math.inf:
            return f"FILTER {self.field} >= {i.lo}"
        if not i.is_empty and i.lo == -math.inf and i.hi != math.inf:
            return f"FILTER {self.field} <= {i.hi}"
        return f"FILTER {self.field} {i}"


@dataclass(frozen=True, order=True)
class RedactMode:
    """``full`` < ``hash`` < ``truncate(k)`` < ``truncate(k+1)``; lower destroys more."""

    rank: int
    k: int = 0

    @classmethod
    def full(cls) -> "RedactMode":
        return cls(0)

    @classmethod
    def hash(cls) -> "RedactMode":
        return cls(1)

    @classmethod
    def truncate(cls, k: int) -> "RedactMode":
        if k < 0:
            raise ValueError("truncate length must be non-negative")
        return cls(2, k)

    @property
    def name(self) -> str:
        return ("full", "hash", "truncate")[self.rank]

    def __str__(self) -> str:
        return f"truncate({self.k})" if self.rank == 2 else self.name


@dataclass(frozen=True)
class Redact(Attribute):
    field: str
    mode: RedactMode

    kind = AttrKind.REDACT

    @property
    def key(self) -> tuple:
        return (self.kind, self.field)

    @property
    def keyed(self) -> bool:
        return True

    def __str__(self) -> str:
        return f"REDACT {self.field} {self.mode}"


DP = "DP"
ANY_DECLASS = "Any"
MECHANISM_ALIASES = {"DP": DP, "DifferentialPrivacy": DP, "Any": ANY_DECLASS, "AnyDeclass": ANY_DECLASS}


@dataclass(frozen=True)
class Declass(Attribute):
    """A de-identification requirement or guarantee.

    ``DP(eps, delta)`` is ordered componentwise; every concrete mechanism sits
    below ``Any``.
    """

    mechanism: str
    epsilon: float | None = None
    delta: float | None = None

    kind = AttrKind.DECLASS

    def __post_init__(self):
        if self.mechanism == DP:
            eps, delta = float(self.epsilon), float(0.0 if self.delta is None else self.delta)
            if not (eps > 0 and math.isfinite(eps)):
                raise ValueError(f"DP epsilon must be positive, got {self.epsilon!r}")
            if not 0 <= delta < 1:
                raise ValueError(f"DP delta must lie in [0, 1), got {self.delta!r}")
            object.__setattr__(self, "epsilon", eps)
            object.__setattr__(self, "delta", delta)
        elif self.mechanism == ANY_DECLASS:
            object.__setattr__(self, "epsilon", None)
            object.__setattr__(self, "delta", None)
        else:
            raise ValueError(f"unknown declassification mechanism {self.mechanism!r}")

    @classmethod
    def dp(cls, epsilon: float, delta: float = 0.0) -> "Declass":
        return cls(DP, epsilon, delta)

    @classmethod
    def any(cls) -> "Declass":
        return cls(ANY_DECLASS)

    def __str__(self) -> str:
        if self.mechanism == ANY_DECLASS:
            return "DECLASS Any"
        return f"DECLASS DP {self.epsilon!r} {self.delta!r}"


@dataclass(frozen=True)
class RoleLiteral:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class RoleVar:
    name: str

    def __str__(self) -> str:
        return f"${self.name}"


@dataclass(frozen=True)
class RoleCall:
    """A metafunction of a variable, e.g. ``UserAffiliatedOrganizations($user_id)``."""

    function: str
    arg: RoleVar

    def __str__(self) -> str:
        return f"{self.function}({self.arg})"


RoleExpr = Union[RoleLiteral, RoleVar, RoleCall]


@dataclass(frozen=True)
class Role(Attribute):
    """Who may view the result.

    Variables and metafunction calls are opaque at this layer: each sits
    directly between the bottom and top of the role lattice.
    """

    expr: RoleExpr

    kind = AttrKind.ROLE

    def __str__(self) -> str:
        return f"ROLE {self.expr}"


@dataclass(frozen=True)
class Flag(Attribute):
    flag: AttrKind

    def __post_init__(self):
        if self.flag not in FLAG_KINDS:
            raise ValueError(f"{self.flag} is not a flag attribute")

    @property
    def kind(self) -> AttrKind:  # type: ignore[override]
        return self.flag

    def __str__(self) -> str:
        return self.flag.value


CONSENT_REQUIRED = Flag(AttrKind.CONSENT_REQUIRED)
NOTIFICATION_REQUIRED = Flag(AttrKind.NOTIFICATION_REQUIRED)


# --------------------------------------------------------------------------
# Lattice operations


def _check_compatible(a: Attribute, b: Attribute) -> None:
    if a.key != b.key:
        raise KindMismatch(f"cannot combine {a} with {b}")


def _role_leq(lat: Lattice, a: RoleExpr, b: RoleExpr) -> bool:
    if a == b:
        return True
    if isinstance(a, RoleLiteral) and a.name == lat.bottom:
        return True
    if isinstance(b, RoleLiteral) and b.name == lat.top:
        return True
    if isinstance(a, RoleLiteral) and isinstance(b, RoleLiteral):
        return lat.leq(a.name, b.name)
    return False


def _role_join(lat: Lattice, a: RoleExpr, b: RoleExpr) -> RoleExpr:
    if _role_leq(lat, a, b):
        return b
    if _role_leq(lat, b, a):
        return a
    if isinstance(a, RoleLiteral) and isinstance(b, RoleLiteral):
        return RoleLiteral(lat.join(a.name, b.name))
    return RoleLiteral(lat.top)


def _role_meet(lat: Lattice, a: RoleExpr, b: RoleExpr) -> RoleExpr:
    if _role_leq(lat, a, b):
        return a
    if _role_leq(lat, b, a):
        return b
    if isinstance(a, RoleLiteral) and isinstance(b, RoleLiteral):
        return RoleLiteral(lat.meet(a.name, b.name))
    return RoleLiteral(lat.bottom)


def attr_leq(a: Attribute, b: Attribute, vocab: Vocabulary | None = None) -> bool:
    """True iff ``a`` is at least as restrictive as ``b``."""
    _check_compatible(a, b)
    vocab = vocab or default_vocabulary()
    if isinstance(a, Filter):
        return a.interval.leq(b.interval)
    if isinstance(a, Schema):
        return _set_leq(vocab.datatypes, a.labels, b.labels)
    if isinstance(a, Purpose):
        return _set_leq(vocab.purposes, a.labels, b.labels)
    if isinstance(a, Redact):
        return a.mode <= b.mode
    if isinstance(a, Declass):
        if b.mechanism == ANY_DECLASS:
            return True
        if a.mechanism == ANY_DECLASS:
            return False
        return a.epsilon <= b.epsilon and a.delta <= b.delta
    if isinstance(a, Role):
        return _role_leq(vocab.roles, a.expr, b.expr)
    if isinstance(a, Flag):
        return True
    raise TypeError(f"not an attribute: {a!r}")


def attr_join(a: Attribute, b: Attribute, vocab: Vocabulary | None = None) -> Attribute:
    _check_compatible(a, b)
    vocab = vocab or default_vocabulary()
    if isinstance(a, Filter):
        return Filter(a.field, a.interval.join(b.interval))
    if isinstance(a, Schema):
        return Schema(_set_join(vocab.datatypes, a.labels, b.labels))
    if isinstance(a, Purpose):
        return Purpose(_set_join(vocab.purposes, a.labels, b.labels))
    if isinstance(a, Redact):
        return Redact(a.field, max(a.mode, b.mode))
    if isinstance(a, Declass):
        if ANY_DECLASS in (a.mechanism, b.mechanism):
            return Declass.any()
        return Declass.dp(max(a.epsilon, b.epsilon), max(a.delta, b.delta))
    if isinstance(a, Role):
        return Role(_role_join(vocab.roles, a.expr, b.expr))
    if isinstance(a, Flag):
        return a
    raise TypeError(f"not an attribute: {a!r}")


def attr_meet(a: Attribute, b: Attribute, vocab: Vocabulary | None = None) -> Attribute:
    _check_compatible(a, b)
    vocab = vocab or default_vocabulary()
    if isinstance(a, Filter):
        return Filter(a.field, a.interval.meet(b.interval))
    if isinstance(a, Schema):
        return Schema(_set_meet(vocab.datatypes, a.labels, b.labels))
    if isinstance(a, Purpose):
        return Purpose(_set_meet(vocab.purposes, a.labels, b.labels))
    if isinstance(a, Redact):
        return Redact(a.field, min(a.mode, b.mode))
    if isinstance(a, Declass):
        if a.mechanism == ANY_DECLASS:
            return b
        if b.mechanism == ANY_DECLASS:
            return a
        return Declass.dp(min(a.epsilon, b.epsilon), min(a.delta, b.delta))
    if isinstance(a, Role):
        return Role(_role_meet(vocab.roles, a.expr, b.expr))
    if isinstance(a, Flag):
        return a
    raise TypeError(f"not an attribute: {a!r}")
