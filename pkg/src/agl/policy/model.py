"""Policy taxonomy: roles, categories, effects, condition trees and the Policy record."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from typing import Union

STANDARD_ROLES = ("student", "parent", "teacher", "institution", "regulator")
# Deployment default, highest authority first.
DEFAULT_ROLE_ORDER = ("regulator", "institution", "teacher", "parent", "student")

_IDENT = re.compile(r"^[a-z][a-z0-9_]*$")
ROLE_PATTERN = _IDENT
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_HHMM = re.compile(r"^([01][0-9]|2[0-3]):[0-5][0-9]$")

MAX_DEPTH = 32


class PolicyError(ValueError):
    """Base class for policy validation and parsing errors."""


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class CategoryEffectMismatch(PolicyError):
    def __init__(self, policy_id: str, detail: str = ""):
        super().__init__(f"policy {policy_id!r}: {detail}" if detail else f"policy {policy_id!r}")
        self.policy_id = policy_id


class UnknownBuiltin(PolicyError):
    def __init__(self, name: str):
        super().__init__(f"unknown built-in {name!r}")
        self.name = name


class DepthLimitExceeded(PolicyError):
    pass


class InvalidPolicy(PolicyError):
    pass


def validate_role(role: str) -> str:
    if not isinstance(role, str) or not _IDENT.match(role):
        raise InvalidPolicy(f"invalid stakeholder role {role!r}")
    return role


class Category(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    TEMPORAL = "temporal"
    HIERARCHICAL = "hierarchical"


# Default ordering of policy classes used when summarizing which class prevailed.
DEFAULT_CATEGORY_ORDER = (Category.HARD, Category.TEMPORAL, Category.SOFT)


# --- condition trees -------------------------------------------------------

ROOTS = ("action", "context", "learner")
COMPARATORS = ("==", "!=", "<", "<=", ">", ">=", "in", "contains")

Scalar = Union[str, int, float, bool, date]
LiteralValue = Union[Scalar, tuple]


@dataclass(frozen=True)
class Path:
    root: str
    keys: tuple[str, ...]

    def __post_init__(self):
        if self.root not in ROOTS:
            raise InvalidPolicy(f"unknown attribute root {self.root!r}")
        if not self.keys or not all(_KEY.match(k) for k in self.keys):
            raise InvalidPolicy(f"invalid attribute path {self}")

    def __str__(self) -> str:
        return ".".join((self.root,) + self.keys)


@dataclass(frozen=True)
class Weekday:
    """``date.weekday()``: Monday is 0."""


@dataclass(frozen=True)
class Compare:
    left: Path | Weekday
    op: str
    value: LiteralValue

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise InvalidPolicy(f"unknown comparator {self.op!r}")
        if self.op == "in" and not isinstance(self.value, tuple):
            raise InvalidPolicy("'in' requires a list literal")
        if self.op != "in" and isinstance(self.value, tuple):
            raise InvalidPolicy(f"{self.op!r} requires a scalar literal")


@dataclass(frozen=True)
class Completed:
    unit: str


@dataclass(frozen=True)
class Within:
    start: str
    end: str

    def __post_init__(self):
        for t in (self.start, self.end):
            if not _HHMM.match(t):
                raise InvalidPolicy(f"invalid time of day {t!r}")


@dataclass(frozen=True)
class Not:
    item: "Condition"


@dataclass(frozen=True)
class And:
    items: tuple["Condition", ...]

    def __post_init__(self):
        if len(self.items) < 2:
            raise InvalidPolicy("'&&' needs at least two operands")


@dataclass(frozen=True)
class Or:
    items: tuple["Condition", ...]

    def __post_init__(self):
        if len(self.items) < 2:
            raise InvalidPolicy("'||' needs at least two operands")


Condition = Union[Compare, Completed, Within, Not, And, Or]


def depth(expr: Condition) -> int:
    if isinstance(expr, Not):
        return 1 + depth(expr.item)
    if isinstance(expr, (And, Or)):
        return 1 + max(depth(e) for e in expr.items)
    return 1


def iter_nodes(expr: Condition):
    yield expr
    if isinstance(expr, Not):
        yield from iter_nodes(expr.item)
    elif isinstance(expr, (And, Or)):
        for e in expr.items:
            yield from iter_nodes(e)


def attribute_paths(expr: Condition | None) -> list[str]:
    """Sorted distinct attribute paths referenced by a condition."""
    if expr is None:
        return []
    return sorted({str(n.left) for n in iter_nodes(expr) if isinstance(n, Compare) and isinstance(n.left, Path)})


def uses_temporal_builtin(expr: Condition | None) -> bool:
    if expr is None:
        return False
    for n in iter_nodes(expr):
        if isinstance(n, (Completed, Within)):
            return True
        if isinstance(n, Compare) and isinstance(n.left, Weekday):
            return True
    return False


# --- effects -----------------------------------------------------------------


@dataclass(frozen=True)
class Reject:
    pass


@dataclass(frozen=True)
class Require:
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels or not all(_KEY.match(lbl) for lbl in self.labels):
            raise InvalidPolicy(f"require() needs identifier labels, got {self.labels!r}")


@dataclass(frozen=True)
class Prefer:
    weight: float

    def __post_init__(self):
        _check_weight(self.weight)


@dataclass(frozen=True)
class Avoid:
    weight: float

    def __post_init__(self):
        _check_weight(self.weight)


def _check_weight(w) -> None:
    if isinstance(w, bool) or not isinstance(w, (int, float)) or not (0 < w <= 1):
        raise InvalidPolicy(f"weight must lie in (0, 1], got {w!r}")


@dataclass(frozen=True)
class PrecItem:
    kind: str  # "role" | "category"
    name: str

    def __post_init__(self):
        if self.kind == "role":
            validate_role(self.name)
        elif self.kind == "category":
            if self.name not in {c.value for c in Category}:
                raise InvalidPolicy(f"unknown category {self.name!r}")
        else:
            raise InvalidPolicy(f"unknown precedence item kind {self.kind!r}")

    def __str__(self) -> str:
        return f"{self.kind}({self.name})"


@dataclass(frozen=True)
class Precedence:
    """Pairs ``(higher, lower)``."""

    ordering: tuple[tuple[PrecItem, PrecItem], ...]

    def __post_init__(self):
        if not self.ordering:
            raise InvalidPolicy("precedence() needs at least one pair")
        for hi, lo in self.ordering:
            if hi.kind != lo.kind:
                raise InvalidPolicy("precedence pairs must compare like with like")
            if hi == lo:
                raise InvalidPolicy(f"self-precedence on {hi}")


Effect = Union[Reject, Require, Prefer, Avoid, Precedence]

_ALLOWED_EFFECTS = {
    Category.HARD: (Reject, Require),
    Category.SOFT: (Prefer, Avoid),
    Category.TEMPORAL: (Reject, Require),
    Category.HIERARCHICAL: (Precedence,),
}


# --- the policy record ---------------------------------------------------------


@dataclass(frozen=True)
class Policy:
    id: str
    owner_role: str
    category: Category
    authority: int
    valid_from: date
    effect: Effect
    condition: Condition | None = None
    valid_until: date | None = None
    owner_id: str = ""
    domains: tuple[str, ...] = ()
    source_text: str = ""
    change_rationale: str = ""
    version: int = 1
    created_at: datetime | None = None

    def __post_init__(self):
        if not self.owner_id:
            object.__setattr__(self, "owner_id", self.owner_role)
        object.__setattr__(self, "category", Category(self.category))
        validate_role(self.owner_role)
        if not self.id:
            raise InvalidPolicy("policy id must be non-empty")
        if isinstance(self.version, bool) or not isinstance(self.version, int) or self.version < 1:
            raise InvalidPolicy(f"policy {self.id!r}: version must be a positive integer")
        if self.version > 1 and not self.change_rationale.strip():
            raise InvalidPolicy(f"policy {self.id!r}: version {self.version} needs a change rationale")
        if isinstance(self.authority, bool) or not isinstance(self.authority, int) or self.authority < 0:
            raise InvalidPolicy(f"policy {self.id!r}: authority must be a non-negative integer")
        if self.valid_until is not None and self.valid_until < self.valid_from:
            raise InvalidPolicy(f"policy {self.id!r}: validity ends before it starts")
        if not isinstance(self.effect, _ALLOWED_EFFECTS[self.category]):
            raise CategoryEffectMismatch(
                self.id, f"{self.category.value} policy cannot carry {type(self.effect).__name__.lower()}"
            )
        if self.category is Category.HIERARCHICAL:
            if self.condition is not None:
                raise CategoryEffectMismatch(self.id, "hierarchical policy cannot have a condition")
        elif self.condition is None:
            raise InvalidPolicy(f"policy {self.id!r}: {self.category.value} policy needs a condition")
        if self.category is Category.TEMPORAL and not uses_temporal_builtin(self.condition):
            raise CategoryEffectMismatch(
                self.id, "temporal policy must use time.within, date.weekday or progress.completed"
            )
        if self.condition is not None and depth(self.condition) > MAX_DEPTH:
            raise DepthLimitExceeded(f"policy {self.id!r}: condition deeper than {MAX_DEPTH}")

    def is_active(self, at: datetime | date) -> bool:
        day = at.date() if isinstance(at, datetime) else at
        if day < self.valid_from:
            return False
        return self.valid_until is None or day <= self.valid_until

    def content_key(self) -> "Policy":
        """The policy with bookkeeping fields blanked; equal keys mean no change."""
        return replace(self, version=1, change_rationale="", created_at=None)
