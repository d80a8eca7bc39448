"""Data capsules: policy-carrying datasets with static residual-policy analysis."""

from .analysis import AbstractCapsule, abstract_interpret
from .attributes import (
    CONSENT_REQUIRED,
    NOTIFICATION_REQUIRED,
    AttrKind,
    Declass,
    Filter,
    Flag,
    Interval,
    Purpose,
    Redact,
    RedactMode,
    Role,
    RoleCall,
    RoleLiteral,
    RoleVar,
    Schema,
    attr_join,
    attr_leq,
    attr_meet,
    interval_join,
    interval_meet,
)
from .errors import *  # noqa: F401,F403
from .graph import CapsuleGraph
from .lattice import Lattice, Vocabulary, default_vocabulary
from .policy import PolicyAST, PolicyClause, PolicyDNF, PolicyEffect, clause_leq, to_dnf
from .policy_syntax import SourcePolicy, load_policy, parse_policy, print_policy
from .program import free_capsules, parse_program, row_preserving
from .residual import (
    Analyst,
    Evidence,
    InputPolicy,
    ResidualPolicy,
    declassifiable,
    ingest,
    metadata_discharge,
    policy_join,
    residual_clause,
    residual_policy,
    satisfies,
)
from .table import Table, evaluate

__version__ = "0.1.0"
