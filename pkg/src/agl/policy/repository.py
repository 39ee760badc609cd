"""Append-only, versioned policy store owned by one stakeholder agent."""
from __future__ import annotations

import threading
from dataclasses import replace
from datetime import datetime
from graphlib import CycleError, TopologicalSorter

from ..events import HookEvent
from .model import Category, Policy, PolicyError, Precedence


class NoChange(PolicyError):
    pass


class EmptyRationale(PolicyError):
    pass


class PrecedenceCycle(PolicyError):
    pass


def precedence_pairs(policies) -> list[tuple[str, str]]:
    """Flatten precedence effects into ``("kind:name", "kind:name")`` edges."""
    pairs = []
    for p in policies:
        if isinstance(p.effect, Precedence):
            for hi, lo in p.effect.ordering:
                pairs.append((f"{hi.kind}:{hi.name}", f"{lo.kind}:{lo.name}"))
    return pairs


def check_acyclic(pairs) -> None:
    graph: dict[str, set[str]] = {}
    for hi, lo in pairs:
        graph.setdefault(lo, set()).add(hi)
        graph.setdefault(hi, set())
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise PrecedenceCycle(f"precedence cycle through {exc.args[1]}") from None


class PolicyRepository:
    """Version history per policy id.

    Reads may run concurrently; upserts and expiry sweeps are serialized.
    """

    def __init__(self, owner_id: str | None = None):
        self.owner_id = owner_id
        self._history: dict[str, list[Policy]] = {}
        self._expired_seen: set[tuple[str, int]] = set()
        self._lock = threading.RLock()
        self.revision = 0

    def __len__(self) -> int:
        return len(self._history)

    def __contains__(self, policy_id: str) -> bool:
        return policy_id in self._history

    def history(self, policy_id: str) -> list[Policy]:
        return list(self._history.get(policy_id, ()))

    def head(self, policy_id: str) -> Policy | None:
        history = self._history.get(policy_id)
        return history[-1] if history else None

    def heads(self) -> list[Policy]:
        with self._lock:
            return [self._history[k][-1] for k in sorted(self._history)]

    def upsert(self, policy: Policy, rationale: str, now: datetime) -> tuple[Policy, list[HookEvent]]:
        with self._lock:
            history = self._history.get(policy.id)
            if history:
                head = history[-1]
                if policy.content_key() == head.content_key():
                    raise NoChange(f"policy {policy.id!r} is identical to version {head.version}")
                if not rationale or not rationale.strip():
                    raise EmptyRationale(f"policy {policy.id!r}: version {head.version + 1} needs a rationale")
                version = head.version + 1
            else:
                version = 1
            stored = replace(policy, version=version, change_rationale=rationale or "", created_at=now)
            if stored.category is Category.HIERARCHICAL:
                scope = [
                    p
                    for p in self.heads()
                    if p.id != stored.id
                    and p.category is Category.HIERARCHICAL
                    and p.owner_id == stored.owner_id
                    and p.is_active(now)
                ]
                check_acyclic(precedence_pairs(scope + [stored]))
            self._history.setdefault(policy.id, []).append(stored)
            self.revision += 1
            name = "onPolicyUploaded" if version == 1 else "onPolicyVersioned"
            event = HookEvent.make(
                name,
                now,
                payload={"policy_id": stored.id, "version": version, "owner_id": stored.owner_id},
            )
            return stored, [event]

    def load(self, policies, now: datetime, rationale: str = "initial load") -> list[HookEvent]:
        events = []
        for p in policies:
            events.extend(self.upsert(p, rationale, now)[1])
        return events

    def active(self, at: datetime, role: str | None = None) -> list[Policy]:
        """Head versions whose validity window contains ``at``. No side effects."""
        return [p for p in self.heads() if p.is_active(at) and (role is None or p.owner_role == role)]

    def sweep_expired(self, at: datetime) -> list[HookEvent]:
        """Emit ``onPolicyExpired`` once for each head version that has lapsed."""
        events = []
        with self._lock:
            for p in self.heads():
                key = (p.id, p.version)
                if p.valid_until is not None and at.date() > p.valid_until and key not in self._expired_seen:
                    self._expired_seen.add(key)
                    events.append(
                        HookEvent.make(
                            "onPolicyExpired",
                            at,
                            payload={"policy_id": p.id, "version": p.version, "owner_id": p.owner_id},
                        )
                    )
        return events
