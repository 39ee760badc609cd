"""Governance hook vocabulary and the event record passed over the bus."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any


class HookCategory(str, enum.Enum):
    DECISION = "decision"
    POLICY = "policy"
    INTERACTION = "interaction"
    EXCEPTION = "exception"
    PERIODIC = "periodic"


VOCABULARY: dict[str, HookCategory] = {
    "onCandidatesProposed": HookCategory.DECISION,
    "onDecisionChosen": HookCategory.DECISION,
    "onPolicyUploaded": HookCategory.POLICY,
    "onPolicyVersioned": HookCategory.POLICY,
    "onPolicyExpired": HookCategory.POLICY,
    "onOverrideRequested": HookCategory.INTERACTION,
    "onAlertAcknowledged": HookCategory.INTERACTION,
    "onFeedbackSubmitted": HookCategory.INTERACTION,
    "onCandidateRejected": HookCategory.EXCEPTION,
    "onOverrideDenied": HookCategory.EXCEPTION,
    "onAcknowledgementMissed": HookCategory.EXCEPTION,
    "onDailyAudit": HookCategory.PERIODIC,
    "onWeeklyFatigueCheck": HookCategory.PERIODIC,
    "onMonthlyDriftScan": HookCategory.PERIODIC,
}

EXTENSION_PREFIX = "x."

# Extensions the runtime itself publishes.
BUILTIN_EXTENSIONS: dict[str, HookCategory] = {
    "x.subscriberOverflow": HookCategory.EXCEPTION,
    "x.emergencyBypass": HookCategory.EXCEPTION,
    "x.degradedMode": HookCategory.EXCEPTION,
    "x.oversightReport": HookCategory.PERIODIC,
    "x.policyFlagged": HookCategory.EXCEPTION,
}


class InvalidEventName(ValueError):
    pass


def category_of(name: str, extensions: dict[str, HookCategory] | None = None) -> HookCategory:
    if name in VOCABULARY:
        return VOCABULARY[name]
    known = dict(BUILTIN_EXTENSIONS)
    if extensions:
        known.update(extensions)
    if name.startswith(EXTENSION_PREFIX) and name in known:
        return known[name]
    raise InvalidEventName(name)


@dataclass(frozen=True)
class HookEvent:
    name: str
    category: HookCategory
    timestamp: datetime
    cycle_id: str | None = None
    payload: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def make(
        cls,
        name: str,
        timestamp: datetime,
        cycle_id: str | None = None,
        payload: dict[str, Any] | None = None,
        extensions: dict[str, HookCategory] | None = None,
    ) -> "HookEvent":
        return cls(name, category_of(name, extensions), timestamp, cycle_id, dict(payload or {}))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "category": self.category.value,
            "timestamp": self.timestamp.isoformat(),
            "cycle_id": self.cycle_id,
            "payload": self.payload,
        }
