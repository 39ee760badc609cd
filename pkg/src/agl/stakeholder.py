"""Stakeholder agents: local policy evaluation producing privacy-preserving votes."""
from __future__ import annotations

import enum
import hashlib
import threading
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable

from .canonical import canonical_json, digest, keyed_digest
from .policy import Avoid, Category, Policy, PolicyRepository, Prefer, Reject, Require, eval_condition


class DuplicateCandidateId(ValueError):
    pass


@dataclass(frozen=True)
class CandidateAction:
    id: str
    label: str
    content_category: str
    attributes: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "label": self.label,
            "content_category": self.content_category,
            "attributes": {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in self.attributes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CandidateAction":
        return cls(d["id"], d.get("label", d["id"]), d.get("content_category", ""), dict(d.get("attributes", {})))


@dataclass(frozen=True)
class EvaluationContext:
    now: datetime
    completed_units: frozenset[str] = frozenset()
    grade_level: int | None = None
    groups: dict[str, str] = field(default_factory=dict)
    session: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "now": self.now.isoformat(),
            "completed_units": sorted(self.completed_units),
            "grade_level": self.grade_level,
            "groups": dict(self.groups),
            "session": dict(self.session),
        }


class Decision(str, enum.Enum):
    APPROVE = "approve"
    CONDITIONAL = "conditional"
    REJECT = "reject"


@dataclass(frozen=True)
class Vote:
    cycle_id: str
    candidate_id: str
    stakeholder_id: str
    role: str
    authority: int
    decision: Decision
    confidence: float
    justification_ref: str
    conditions: tuple[str, ...] = ()
    triggered_categories: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if (self.decision is Decision.CONDITIONAL) != bool(self.conditions):
            raise ValueError("conditional votes carry labels; other votes carry none")

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle_id": self.cycle_id,
            "candidate_id": self.candidate_id,
            "stakeholder_id": self.stakeholder_id,
            "role": self.role,
            "authority": self.authority,
            "decision": self.decision.value,
            "conditions": list(self.conditions),
            "confidence": self.confidence,
            "justification_ref": self.justification_ref,
            "triggered_categories": dict(self.triggered_categories),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Vote":
        return cls(
            cycle_id=d["cycle_id"],
            candidate_id=d["candidate_id"],
            stakeholder_id=d["stakeholder_id"],
            role=d["role"],
            authority=d["authority"],
            decision=Decision(d["decision"]),
            confidence=d["confidence"],
            justification_ref=d["justification_ref"],
            conditions=tuple(d.get("conditions", ())),
            triggered_categories=tuple(sorted(d.get("triggered_categories", {}).items())),
        )

    def serialize(self) -> bytes:
        return canonical_json(self).encode("ascii")


@dataclass(frozen=True)
class LocalLogEntry:
    cycle_id: str
    candidate_id: str
    matched: tuple[tuple[str, int], ...]
    soft_score: float
    vote: Vote

    def content(self) -> dict[str, Any]:
        return {
            "cycle_id": self.cycle_id,
            "candidate_id": self.candidate_id,
            "matched": [list(m) for m in self.matched],
            "soft_score": self.soft_score,
            "vote": self.vote.to_dict(),
        }

    @property
    def digest(self) -> str:
        return digest(self.content())


def soft_score(policies: Iterable[Policy], action: CandidateAction, ctx: EvaluationContext) -> float:
    """Matched prefer weights minus matched avoid weights, clamped to [-1, 1]."""
    total = 0.0
    for p in policies:
        if eval_condition(p.condition, action, ctx) is True:
            if isinstance(p.effect, Prefer):
                total += p.effect.weight
            elif isinstance(p.effect, Avoid):
                total -= p.effect.weight
    return max(-1.0, min(1.0, total))


class LocalLog:
    """Private append-only log; each line is canonical JSON, a space, then its hex digest."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[LocalLogEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: LocalLogEntry) -> str:
        d = entry.digest
        with self._lock:
            if self.path is not None:
                with self.path.open("a", encoding="ascii") as fh:
                    fh.write(f"{canonical_json(entry.content())} {d}\n")
            self.entries.append(entry)
        return d

    def resolve(self, justification_ref: str) -> LocalLogEntry | None:
        for e in self.entries:
            if e.vote.justification_ref == justification_ref:
                return e
        return None


def verify_local_log_line(line: str) -> bool:
    body, _, d = line.rstrip("\n").rpartition(" ")
    return hashlib.sha256(body.encode("ascii")).hexdigest() == d


class StakeholderAgent:
    """Evaluates candidates against its own repository; exposes only votes."""

    def __init__(
        self,
        stakeholder_id: str,
        role: str,
        authority: int = 0,
        repository: PolicyRepository | None = None,
        key: bytes | None = None,
        log: LocalLog | None = None,
    ):
        self.stakeholder_id = stakeholder_id
        self.role = role
        self.authority = authority
        self.repository = repository if repository is not None else PolicyRepository(stakeholder_id)
        # Key for opaque justification ids; only this agent can map them back.
        self._key = key if key is not None else hashlib.sha256(f"agl-agent:{stakeholder_id}".encode()).digest()
        self.log = log if log is not None else LocalLog()

    def __repr__(self) -> str:
        return f"StakeholderAgent({self.stakeholder_id!r}, role={self.role!r})"

    def assess(self, action: CandidateAction, ctx: EvaluationContext, cycle_id: str = "") -> LocalLogEntry:
        """Pure evaluation: returns the log entry (vote included) without recording it."""
        policies = [p for p in self.repository.active(ctx.now) if p.category is not Category.HIERARCHICAL]
        matched = [p for p in policies if eval_condition(p.condition, action, ctx) is True]
        score = soft_score([p for p in policies if p.category is Category.SOFT], action, ctx)

        def hits(category, effect_type):
            return [p for p in matched if p.category is category and isinstance(p.effect, effect_type)]

        conditions: tuple[str, ...] = ()
        if hits(Category.HARD, Reject):
            decision, confidence = Decision.REJECT, 1.0
        elif hits(Category.HARD, Require) or hits(Category.TEMPORAL, Require):
            labels = {lbl for p in hits(Category.HARD, Require) + hits(Category.TEMPORAL, Require) for lbl in p.effect.labels}
            decision, confidence, conditions = Decision.CONDITIONAL, 1.0, tuple(sorted(labels))
        elif hits(Category.TEMPORAL, Reject):
            decision, confidence = Decision.REJECT, 1.0
        else:
            decision, confidence = Decision.APPROVE, 0.5 + score / 2

        counts = Counter(p.category.value for p in matched)
        matched_ids = tuple(sorted((p.id, p.version) for p in matched))
        ref = "j-" + keyed_digest(self._key, [cycle_id, action.id, [list(m) for m in matched_ids]])[:24]
        vote = Vote(
            cycle_id=cycle_id,
            candidate_id=action.id,
            stakeholder_id=self.stakeholder_id,
            role=self.role,
            authority=self.authority,
            decision=decision,
            confidence=confidence,
            justification_ref=ref,
            conditions=conditions,
            triggered_categories=tuple(sorted(counts.items())),
        )
        return LocalLogEntry(cycle_id, action.id, matched_ids, score, vote)

    def record_local(self, entry: LocalLogEntry) -> str:
        return self.log.append(entry)

    def evaluate_candidate(self, action: CandidateAction, ctx: EvaluationContext, cycle_id: str = "") -> Vote:
        entry = self.assess(action, ctx, cycle_id)
        self.record_local(entry)
        return entry.vote

    def evaluate_candidates(self, actions, ctx: EvaluationContext, cycle_id: str = "") -> list[Vote]:
        return self.respond(actions, ctx, cycle_id)[0]

    def respond(self, actions, ctx: EvaluationContext, cycle_id: str = "") -> tuple[list[Vote], str]:
        """Evaluate a cycle's candidates; returns votes and the digest linking them to the local log."""
        ids = [a.id for a in actions]
        if len(set(ids)) != len(ids):
            raise DuplicateCandidateId(sorted({i for i in ids if ids.count(i) > 1}))
        entries = [self.assess(a, ctx, cycle_id) for a in actions]
        digests = [self.record_local(e) for e in entries]
        return [e.vote for e in entries], cycle_digest(digests)


def cycle_digest(entry_digests: Iterable[str]) -> str:
    """Order-independent digest over one agent's log entries for a cycle."""
    return digest(sorted(entry_digests))
