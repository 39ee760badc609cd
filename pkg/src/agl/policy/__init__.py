from .conditions import INAPPLICABLE, eval_condition
from .language import format_condition, format_policies, format_policy, parse_condition, parse_policy_source
from .model import (
    DEFAULT_CATEGORY_ORDER,
    DEFAULT_ROLE_ORDER,
    STANDARD_ROLES,
    And,
    Avoid,
    Category,
    CategoryEffectMismatch,
    Compare,
    Completed,
    DepthLimitExceeded,
    InvalidPolicy,
    Not,
    Or,
    Path,
    Policy,
    PolicyError,
    PolicySyntaxError,
    Precedence,
    PrecItem,
    Prefer,
    Reject,
    Require,
    UnknownBuiltin,
    Weekday,
    Within,
    attribute_paths,
)
from .repository import EmptyRationale, NoChange, PolicyRepository, PrecedenceCycle

__all__ = [name for name in dir() if not name.startswith("_")]
