"""Three-valued evaluation of condition trees.

``True``/``False`` are the usual truth values and ``None`` stands for
*inapplicable*: a referenced attribute is absent. Connectives follow Kleene's
strong three-valued logic.
"""
from __future__ import annotations

from datetime import date, datetime
from typing import Any, Optional

from .model import And, Compare, Completed, Condition, Not, Or, Path, Weekday, Within

INAPPLICABLE = None
Truth = Optional[bool]

_MISSING = object()


def resolve(path: Path, action, ctx) -> Any:
    """Look up ``path`` against a candidate action and an evaluation context.

    ``action.<key>`` reads the candidate's id/label/content_category or its
    attributes, ``context.<key>`` the session mapping, and ``learner.<key>``
    the learner profile (grade_level, completed_units, group attributes).
    Returns a sentinel when the attribute is absent.
    """
    head, rest = path.keys[0], path.keys[1:]
    if path.root == "action":
        if head in ("id", "label", "content_category") and not rest:
            return getattr(action, head)
        value = action.attributes.get(head, _MISSING)
    elif path.root == "context":
        value = ctx.session.get(head, _MISSING)
    else:
        if head == "grade_level":
            value = ctx.grade_level if ctx.grade_level is not None else _MISSING
        elif head == "completed_units":
            value = sorted(ctx.completed_units)
        else:
            value = ctx.groups.get(head, _MISSING)
    for key in rest:
        if not isinstance(value, dict):
            return _MISSING
        value = value.get(key, _MISSING)
    return value


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(left, right):
    """Bring an attribute value to the literal's type where that is unambiguous."""
    if isinstance(right, date) and not isinstance(right, datetime):
        if isinstance(left, datetime):
            return left.date()
        if isinstance(left, str):
            try:
                return date.fromisoformat(left[:10])
            except ValueError:
                return left
    return left


def _same_kind(a, b) -> bool:
    if _is_number(a) and _is_number(b):
        return True
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool)
    if isinstance(a, str) and isinstance(b, str):
        return True
    return isinstance(a, date) and isinstance(b, date)


def _equal(a, b) -> bool:
    return _same_kind(a, b) and a == b


def compare(left, op: str, right) -> bool:
    if op == "in":
        return any(_equal(_coerce(left, r), r) for r in right)
    if op == "contains":
        if isinstance(left, str) and isinstance(right, str):
            return right in left
        if isinstance(left, (list, tuple, set, frozenset)):
            return any(_equal(item, right) for item in left)
        return False
    left = _coerce(left, right)
    if op == "==":
        return _equal(left, right)
    if op == "!=":
        return not _equal(left, right)
    if not _same_kind(left, right) or isinstance(left, bool):
        return False
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def _minutes(hhmm: str) -> int:
    h, m = hhmm.split(":")
    return int(h) * 60 + int(m)


def within(now: datetime, start: str, end: str) -> bool:
    """Inclusive minute-resolution window; ``start > end`` wraps past midnight."""
    m = now.hour * 60 + now.minute
    lo, hi = _minutes(start), _minutes(end)
    if lo <= hi:
        return lo <= m <= hi
    return m >= lo or m <= hi


def eval_condition(expr: Condition, action, ctx) -> Truth:
    if isinstance(expr, Compare):
        if isinstance(expr.left, Weekday):
            left = ctx.now.weekday()
        else:
            left = resolve(expr.left, action, ctx)
            if left is _MISSING:
                return INAPPLICABLE
        return compare(left, expr.op, expr.value)
    if isinstance(expr, Completed):
        return expr.unit in ctx.completed_units
    if isinstance(expr, Within):
        return within(ctx.now, expr.start, expr.end)
    if isinstance(expr, Not):
        inner = eval_condition(expr.item, action, ctx)
        return None if inner is None else not inner
    if isinstance(expr, And):
        values = [eval_condition(e, action, ctx) for e in expr.items]
        if any(v is False for v in values):
            return False
        return None if any(v is None for v in values) else True
    if isinstance(expr, Or):
        values = [eval_condition(e, action, ctx) for e in expr.items]
        if any(v is True for v in values):
            return True
        return None if any(v is None for v in values) else False
    raise TypeError(f"not a condition: {expr!r}")
