"""Lexer, recursive-descent parser and canonical formatter for the policy language.

A document holds any number of blocks::

    policy no-third-party-sharing {
      stakeholder: regulator / state-board
      category: hard
      authority: 5
      valid: 2025-01-01 .. *
      when: action.shares_third_party == true && context.consent == false
      then: reject
      text: "No student data may be shared with third parties without explicit consent"
    }

Fields end at a newline or ``;``. ``#`` starts a comment.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date, datetime

from .model import (
    COMPARATORS,
    MAX_DEPTH,
    ROOTS,
    And,
    Avoid,
    Category,
    Compare,
    Completed,
    Condition,
    DepthLimitExceeded,
    InvalidPolicy,
    Not,
    Or,
    Path,
    Policy,
    PolicySyntaxError,
    Precedence,
    PrecItem,
    Prefer,
    Reject,
    Require,
    UnknownBuiltin,
    Weekday,
    Within,
    depth,
)

_TOKEN_SPEC = [
    ("WS", r"[ \t\r]+"),
    ("COMMENT", r"#[^\n]*"),
    ("NEWLINE", r"\n"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("DATE", r"\d{4}-\d{2}-\d{2}(?:T\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:[+-]\d{2}:\d{2})?)?"),
    ("NUMBER", r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*(?:[.\-][A-Za-z0-9_]+)*"),
    ("OP", r"\.\.|&&|\|\||==|!=|<=|>=|[<>!{}()\[\],:;/*]"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _TOKEN_SPEC))
_BARE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(?:[.\-][A-Za-z0-9_]+)*$")
_RESERVED = {"true", "false"}

BUILTINS = ("progress.completed", "time.within", "date.weekday")
# Guards Python recursion on pathological nesting; the tree-depth rule is separate.
_NESTING_LIMIT = 4 * MAX_DEPTH


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, nesting = 1, 0, 0
    for m in _TOKEN_RE.finditer(text):
        kind, value = m.lastgroup, m.group()
        col = m.start() - line_start + 1
        if kind == "NEWLINE":
            if nesting == 0:
                tokens.append(Token("NEWLINE", value, line, col))
            line += 1
            line_start = m.end()
            continue
        if kind in ("WS", "COMMENT"):
            continue
        if kind == "MISMATCH":
            raise PolicySyntaxError(f"unexpected character {value!r}", line, col)
        if kind == "OP":
            if value in "([":
                nesting += 1
            elif value in ")]":
                nesting = max(0, nesting - 1)
        tokens.append(Token(kind, value, line, col))
    tokens.append(Token("EOF", "", line, len(text) - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.nesting = 0

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: Token | None = None) -> PolicySyntaxError:
        tok = tok or self.tok
        return PolicySyntaxError(message, tok.line, tok.col)

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_op(self, text: str) -> bool:
        return self.at("OP", text)

    def advance(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> Token:
        if not self.at(kind, text):
            want = text or kind.lower()
            got = self.tok.text or self.tok.kind.lower()
            raise self.error(f"expected {want!r}, found {got!r}")
        return self.advance()

    def skip_separators(self) -> None:
        while self.at("NEWLINE") or self.at_op(";"):
            self.advance()

    # -- document

    def document(self) -> list[Policy]:
        policies = []
        self.skip_separators()
        while not self.at("EOF"):
            policies.append(self.block())
            self.skip_separators()
        return policies

    def block(self) -> Policy:
        kw = self.expect("NAME", "policy")
        pid = self.identifier("policy id")
        self.expect("OP", "{")
        fields: dict[str, tuple[Token, object]] = {}
        self.skip_separators()
        while not self.at_op("}"):
            if self.at("EOF"):
                raise self.error("unterminated policy block", kw)
            name_tok = self.expect("NAME")
            name = name_tok.text
            if name not in _FIELD_PARSERS:
                raise self.error(f"unknown field {name!r}", name_tok)
            if name in fields:
                raise self.error(f"duplicate field {name!r}", name_tok)
            self.expect("OP", ":")
            fields[name] = (name_tok, _FIELD_PARSERS[name](self))
            if not (self.at("NEWLINE") or self.at_op(";") or self.at_op("}")):
                raise self.error(f"unexpected {self.tok.text!r} after field {name!r}")
            self.skip_separators()
        self.expect("OP", "}")
        return self.build(pid, kw, fields)

    def build(self, pid: str, kw: Token, fields: dict) -> Policy:
        for required in ("stakeholder", "category", "authority", "valid", "then"):
            if required not in fields:
                raise self.error(f"policy {pid!r} is missing field {required!r}", kw)
        role, owner = fields["stakeholder"][1]
        valid_from, valid_until = fields["valid"][1]
        kwargs = dict(
            id=pid,
            owner_role=role,
            owner_id=owner or role,
            category=fields["category"][1],
            authority=fields["authority"][1],
            valid_from=valid_from,
            valid_until=valid_until,
            effect=fields["then"][1],
            condition=fields["when"][1] if "when" in fields else None,
            domains=fields["domains"][1] if "domains" in fields else (),
            source_text=fields["text"][1] if "text" in fields else "",
            change_rationale=fields["rationale"][1] if "rationale" in fields else "",
            version=fields["version"][1] if "version" in fields else 1,
            created_at=fields["created"][1] if "created" in fields else None,
        )
        try:
            return Policy(**kwargs)
        except InvalidPolicy as exc:
            raise self.error(str(exc), kw) from exc

    # -- field values

    def identifier(self, what: str) -> str:
        if self.at("NAME"):
            return self.advance().text
        if self.at("STRING"):
            return self.string()
        raise self.error(f"expected {what}")

    def string(self) -> str:
        tok = self.expect("STRING")
        try:
            return json.loads(tok.text)
        except json.JSONDecodeError as exc:
            raise self.error("malformed string literal", tok) from exc

    def integer(self) -> int:
        tok = self.expect("NUMBER")
        if not re.fullmatch(r"\d+", tok.text):
            raise self.error("expected a non-negative integer", tok)
        return int(tok.text)

    def role(self) -> str:
        tok = self.expect("NAME")
        if not re.fullmatch(r"[a-z][a-z0-9_]*", tok.text):
            raise self.error(f"invalid stakeholder role {tok.text!r}", tok)
        return tok.text

    def date_only(self) -> date:
        tok = self.expect("DATE")
        if "T" in tok.text:
            raise self.error("expected a date without time", tok)
        try:
            return date.fromisoformat(tok.text)
        except ValueError as exc:
            raise self.error(f"invalid date {tok.text!r}", tok) from exc

    def f_stakeholder(self):
        role = self.role()
        owner = None
        if self.at_op("/"):
            self.advance()
            owner = self.identifier("owner id")
        return role, owner

    def f_category(self) -> Category:
        tok = self.expect("NAME")
        try:
            return Category(tok.text)
        except ValueError:
            raise self.error(f"unknown category {tok.text!r}", tok) from None

    def f_valid(self):
        start = self.date_only()
        self.expect("OP", "..")
        if self.at_op("*"):
            self.advance()
            return start, None
        return start, self.date_only()

    def f_domains(self) -> tuple[str, ...]:
        self.expect("OP", "[")
        tags = []
        while not self.at_op("]"):
            tags.append(self.identifier("domain tag"))
            if not self.at_op("]"):
                self.expect("OP", ",")
        self.expect("OP", "]")
        return tuple(tags)

    def f_created(self) -> datetime:
        tok = self.expect("DATE")
        try:
            return datetime.fromisoformat(tok.text)
        except ValueError as exc:
            raise self.error(f"invalid timestamp {tok.text!r}", tok) from exc

    def f_then(self):
        tok = self.expect("NAME")
        kind = tok.text
        try:
            if kind == "reject":
                return Reject()
            if kind == "require":
                self.expect("OP", "(")
                labels = [self.expect("NAME").text]
                while self.at_op(","):
                    self.advance()
                    labels.append(self.expect("NAME").text)
                self.expect("OP", ")")
                return Require(tuple(labels))
            if kind in ("prefer", "avoid"):
                wtok = self.expect("NUMBER")
                weight = float(wtok.text)
                return Prefer(weight) if kind == "prefer" else Avoid(weight)
            if kind == "precedence":
                self.expect("OP", "(")
                pairs = self.chain()
                while self.at_op(","):
                    self.advance()
                    pairs.extend(self.chain())
                self.expect("OP", ")")
                return Precedence(tuple(pairs))
        except InvalidPolicy as exc:
            raise self.error(str(exc), tok) from exc
        raise self.error(f"unknown effect {kind!r}", tok)

    def chain(self) -> list[tuple[PrecItem, PrecItem]]:
        items = [self.prec_item()]
        while self.at_op(">"):
            self.advance()
            items.append(self.prec_item())
        if len(items) < 2:
            raise self.error("precedence chain needs at least two items")
        return list(zip(items, items[1:]))

    def prec_item(self) -> PrecItem:
        tok = self.expect("NAME")
        if tok.text not in ("role", "category"):
            raise self.error("expected role(...) or category(...)", tok)
        self.expect("OP", "(")
        name = self.expect("NAME")
        self.expect("OP", ")")
        try:
            return PrecItem(tok.text, name.text)
        except InvalidPolicy as exc:
            raise self.error(str(exc), name) from exc

    # -- condition expressions

    def f_when(self) -> Condition:
        start = self.tok
        expr = self.or_expr()
        if depth(expr) > MAX_DEPTH:
            raise DepthLimitExceeded(f"{start.line}:{start.col}: condition deeper than {MAX_DEPTH}")
        return expr

    def or_expr(self) -> Condition:
        items = [self.and_expr()]
        while self.at_op("||"):
            self.advance()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_expr(self) -> Condition:
        items = [self.unary()]
        while self.at_op("&&"):
            self.advance()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self) -> Condition:
        self.nesting += 1
        if self.nesting > _NESTING_LIMIT:
            raise DepthLimitExceeded(f"{self.tok.line}:{self.tok.col}: expression nested too deeply")
        try:
            if self.at_op("!"):
                self.advance()
                return Not(self.unary())
            return self.primary()
        finally:
            self.nesting -= 1

    def primary(self) -> Condition:
        if self.at_op("("):
            self.advance()
            expr = self.or_expr()
            self.expect("OP", ")")
            return expr
        tok = self.expect("NAME")
        if self.at_op("("):
            return self.builtin(tok)
        return self.comparison(self.path(tok), tok)

    def builtin(self, tok: Token) -> Condition:
        name = tok.text
        if name not in BUILTINS:
            raise UnknownBuiltin(name)
        self.expect("OP", "(")
        if name == "progress.completed":
            unit = self.string()
            self.expect("OP", ")")
            return Completed(unit)
        if name == "time.within":
            start_tok = self.tok
            start = self.string()
            self.expect("OP", "..")
            end = self.string()
            self.expect("OP", ")")
            try:
                return Within(start, end)
            except InvalidPolicy as exc:
                raise self.error(str(exc), start_tok) from exc
        self.expect("OP", ")")
        return self.comparison(Weekday(), tok)

    def path(self, tok: Token) -> Path:
        parts = tok.text.split(".")
        if parts[0] not in ROOTS or len(parts) < 2:
            raise self.error(f"expected an attribute path (action./context./learner.), found {tok.text!r}", tok)
        try:
            return Path(parts[0], tuple(parts[1:]))
        except InvalidPolicy as exc:
            raise self.error(str(exc), tok) from exc

    def comparison(self, left, left_tok: Token) -> Compare:
        op_tok = self.tok
        if op_tok.kind == "OP" and op_tok.text in COMPARATORS:
            op = op_tok.text
        elif op_tok.kind == "NAME" and op_tok.text in ("in", "contains"):
            op = op_tok.text
        else:
            raise self.error(f"expected a comparison after {left_tok.text!r}")
        self.advance()
        if op == "in":
            value = self.list_literal()
        else:
            value = self.scalar()
        return Compare(left, op, value)

    def list_literal(self) -> tuple:
        self.expect("OP", "[")
        items = []
        while not self.at_op("]"):
            items.append(self.scalar())
            if not self.at_op("]"):
                self.expect("OP", ",")
        self.expect("OP", "]")
        return tuple(items)

    def scalar(self):
        tok = self.tok
        if tok.kind == "STRING":
            return self.string()
        if tok.kind == "NUMBER":
            self.advance()
            if re.fullmatch(r"-?\d+", tok.text):
                return int(tok.text)
            return float(tok.text)
        if tok.kind == "NAME" and tok.text in _RESERVED:
            self.advance()
            return tok.text == "true"
        if tok.kind == "DATE":
            return self.date_only()
        raise self.error(f"expected a literal, found {tok.text or tok.kind.lower()!r}")


_FIELD_PARSERS = {
    "stakeholder": _Parser.f_stakeholder,
    "category": _Parser.f_category,
    "authority": _Parser.integer,
    "version": _Parser.integer,
    "valid": _Parser.f_valid,
    "domains": _Parser.f_domains,
    "when": _Parser.f_when,
    "then": _Parser.f_then,
    "text": _Parser.string,
    "rationale": _Parser.string,
    "created": _Parser.f_created,
}


def parse_policy_source(text: str) -> list[Policy]:
    """Parse every policy block in ``text``, in document order."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text).document()


def parse_condition(text: str) -> Condition:
    """Parse a standalone condition expression (used by tests and tooling)."""
    p = _Parser(text)
    while p.at("NEWLINE"):
        p.advance()
    expr = p.f_when()
    while p.at("NEWLINE"):
        p.advance()
    if not p.at("EOF"):
        raise p.error(f"unexpected {p.tok.text!r}")
    return expr


# --- formatting ----------------------------------------------------------------


def _name_or_string(s: str) -> str:
    if _BARE.match(s) and s not in _RESERVED and s != "policy":
        return s
    return _quote(s)


def _quote(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def format_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(value, str):
        return _quote(value)
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, tuple):
        return "[" + ", ".join(format_literal(v) for v in value) + "]"
    raise TypeError(f"cannot format literal {value!r}")


def format_condition(expr: Condition) -> str:
    if isinstance(expr, Compare):
        left = "date.weekday()" if isinstance(expr.left, Weekday) else str(expr.left)
        return f"{left} {expr.op} {format_literal(expr.value)}"
    if isinstance(expr, Completed):
        return f"progress.completed({_quote(expr.unit)})"
    if isinstance(expr, Within):
        return f"time.within({_quote(expr.start)}..{_quote(expr.end)})"
    if isinstance(expr, Not):
        inner = format_condition(expr.item)
        return f"!({inner})" if isinstance(expr.item, (And, Or)) else f"!{inner}"
    if isinstance(expr, And):
        return " && ".join(
            f"({format_condition(e)})" if isinstance(e, (And, Or)) else format_condition(e) for e in expr.items
        )
    if isinstance(expr, Or):
        return " || ".join(f"({format_condition(e)})" if isinstance(e, Or) else format_condition(e) for e in expr.items)
    raise TypeError(f"not a condition: {expr!r}")


def _format_weight(w: float) -> str:
    return format_literal(float(w))


def format_effect(effect) -> str:
    if isinstance(effect, Reject):
        return "reject"
    if isinstance(effect, Require):
        return "require(" + ", ".join(effect.labels) + ")"
    if isinstance(effect, Prefer):
        return f"prefer {_format_weight(effect.weight)}"
    if isinstance(effect, Avoid):
        return f"avoid {_format_weight(effect.weight)}"
    if isinstance(effect, Precedence):
        # Consecutive pairs sharing an endpoint collapse into one chain.
        chains: list[list[PrecItem]] = []
        for hi, lo in effect.ordering:
            if chains and chains[-1][-1] == hi:
                chains[-1].append(lo)
            else:
                chains.append([hi, lo])
        return "precedence(" + ", ".join(" > ".join(str(i) for i in c) for c in chains) + ")"
    raise TypeError(f"not an effect: {effect!r}")


def format_policy(p: Policy) -> str:
    """Canonical source text for one policy; ``parse_policy_source`` inverts it."""
    owner = f" / {_name_or_string(p.owner_id)}" if p.owner_id != p.owner_role else ""
    until = p.valid_until.isoformat() if p.valid_until else "*"
    lines = [
        f"policy {_name_or_string(p.id)} {{",
        f"  stakeholder: {p.owner_role}{owner}",
        f"  category: {p.category.value}",
    ]
    if p.version != 1:
        lines.append(f"  version: {p.version}")
    lines.append(f"  authority: {p.authority}")
    lines.append(f"  valid: {p.valid_from.isoformat()} .. {until}")
    if p.domains:
        lines.append("  domains: [" + ", ".join(_name_or_string(d) for d in p.domains) + "]")
    if p.condition is not None:
        lines.append(f"  when: {format_condition(p.condition)}")
    lines.append(f"  then: {format_effect(p.effect)}")
    lines.append(f"  text: {_quote(p.source_text)}")
    if p.change_rationale:
        lines.append(f"  rationale: {_quote(p.change_rationale)}")
    if p.created_at is not None:
        lines.append(f"  created: {p.created_at.isoformat()}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_policies(policies) -> str:
    return "\n".join(format_policy(p) for p in policies)
