"""Exception hierarchy shared by every layer of the package."""

from __future__ import annotations


class DataCapsuleError(Exception):
    """Base class for all domain errors raised by this package."""


class LatticeError(DataCapsuleError):
    """A lattice configuration is malformed (cycle, missing bound, non-lattice)."""


class KindMismatch(DataCapsuleError):
    """Two attribute values of different kinds (or keys) were combined."""


class ParseError(DataCapsuleError):
    """Base for every front-end failure. Carries an optional source position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 origin: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.origin = origin
        super().__init__(self._render())

    def _render(self) -> str:
        where = []
        if self.origin:
            where.append(self.origin)
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.column is not None:
            where.append(f"column {self.column}")
        if where:
            return f"{', '.join(where)}: {self.message}"
        return self.message


class PolicySyntaxError(ParseError):
    pass


class ProgramSyntaxError(ParseError):
    pass


class UnknownAttribute(ParseError):
    pass


class UnknownLabel(ParseError):
    pass


class AnalysisError(DataCapsuleError):
    """Static analysis of a program failed."""


class UnboundCapsule(AnalysisError):
    pass


class PolicyViolation(AnalysisError):
    pass


class SchemaViolation(PolicyViolation):
    pass


class EvaluationError(DataCapsuleError):
    """Concrete evaluation failed (e.g. comparing a text cell with an integer)."""


class UnboundVariable(DataCapsuleError):
    pass


class GraphError(DataCapsuleError):
    pass


class IdCollision(GraphError):
    pass


class UnknownCapsule(GraphError):
    pass


class UnknownSubject(GraphError):
    pass


class UnknownProgram(GraphError):
    pass


class InvalidSchema(GraphError):
    pass


class ProgramNotChecked(GraphError):
    pass


class PolicyNotSatisfied(GraphError):
    """Declassification refused. ``blocking`` lists the atoms left in each clause."""

    def __init__(self, capsule_id: str, blocking: list[list[str]]):
        self.capsule_id = capsule_id
        self.blocking = blocking
        lines = [f"policy of capsule {capsule_id} is not satisfied; remaining clauses:"]
        for atoms in blocking:
            lines.append("  ALLOW " + " AND ".join(atoms) if atoms else "  ALLOW")
        super().__init__("\n".join(lines))
