"""Hash-chained audit ledger, post-hoc policy screening and audience explanations."""
from __future__ import annotations

import enum
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .canonical import canonical_json, sha256_hex
from .policy import attribute_paths

GENESIS = "0" * 64


class RecordKind(str, enum.Enum):
    CYCLE_COMPLETED = "CycleCompleted"
    POLICY_CHANGED = "PolicyChanged"
    OVERRIDE = "Override"
    BYPASS = "Bypass"
    FLAG = "Flag"
    EXPLANATION_ISSUED = "ExplanationIssued"
    ACKNOWLEDGED = "Acknowledged"


class StorageFailure(OSError):
    pass


class UnknownAudience(LookupError):
    pass


def record_hash(
    seq: int,
    kind: str,
    cycle_id: str | None,
    payload: Any,
    local_digests: Mapping[str, str],
    prev_hash: str,
) -> str:
    """SHA-256 over the canonical serialization of the record preimage."""
    preimage = {
        "seq": seq,
        "kind": kind,
        "cycle_id": cycle_id,
        "payload": payload,
        "local_digests": dict(local_digests),
        "prev_hash": prev_hash,
    }
    return sha256_hex(canonical_json(preimage))


@dataclass(frozen=True)
class LedgerRecord:
    seq: int
    kind: RecordKind
    cycle_id: str | None
    payload: dict[str, Any]
    local_digests: dict[str, str]
    prev_hash: str
    this_hash: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "cycle_id": self.cycle_id,
            "payload": self.payload,
            "local_digests": self.local_digests,
            "prev_hash": self.prev_hash,
            "this_hash": self.this_hash,
        }

    def line(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LedgerRecord":
        return cls(
            seq=d["seq"],
            kind=RecordKind(d["kind"]),
            cycle_id=d["cycle_id"],
            payload=d["payload"],
            local_digests=d["local_digests"],
            prev_hash=d["prev_hash"],
            this_hash=d["this_hash"],
        )

    def recompute(self) -> str:
        return record_hash(self.seq, self.kind.value, self.cycle_id, self.payload, self.local_digests, self.prev_hash)


@dataclass(frozen=True)
class Verification:
    ok: bool
    broken_seq: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_lines(lines: Iterable[bytes | str]) -> Verification:
    """Check every stored line re-serializes byte-identically, hashes and chains.

    Any malformed line is reported at its position, which equals its seq in an
    intact ledger.
    """
    prev = GENESIS
    for i, raw in enumerate(lines):
        try:
            text = raw.decode("ascii") if isinstance(raw, bytes) else raw
            text = text.rstrip("\n")
            rec = LedgerRecord.from_dict(json.loads(text))
            if (
                rec.seq != i
                or rec.line() != text
                or rec.prev_hash != prev
                or rec.recompute() != rec.this_hash
            ):
                return Verification(False, i)
        except (ValueError, KeyError, TypeError, AttributeError, UnicodeDecodeError):
            return Verification(False, i)
        prev = rec.this_hash
    return Verification(True)


def verify_file(path: str | Path) -> Verification:
    data = Path(path).read_bytes()
    if not data:
        return Verification(True)
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return verify_lines(lines)


class Ledger:
    """Single-writer, append-only ledger, optionally mirrored to a line-delimited file."""

    def __init__(self, path: str | Path | None = None, *, fsync: bool = False):
        self.path = Path(path) if path else None
        self.fsync = fsync
        self._records: list[LedgerRecord] = []
        self._lines: list[str] = []
        self._lock = threading.Lock()
        self._write_hook: Callable[[str], None] | None = None

    @classmethod
    def open(cls, path: str | Path) -> "Ledger":
        """Load an existing ledger file (which must verify) for further appends."""
        ledger = cls(path)
        p = Path(path)
        if p.exists() and p.stat().st_size:
            result = verify_file(p)
            if not result:
                raise ValueError(f"ledger {p} is broken at seq {result.broken_seq}")
            for raw in p.read_text(encoding="ascii").splitlines():
                ledger._records.append(LedgerRecord.from_dict(json.loads(raw)))
                ledger._lines.append(raw)
        return ledger

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[LedgerRecord]:
        return list(self._records)

    def __getitem__(self, seq: int) -> LedgerRecord:
        return self._records[seq]

    def append(
        self,
        kind: RecordKind | str,
        payload: Mapping[str, Any],
        *,
        cycle_id: str | None = None,
        local_digests: Mapping[str, str] | None = None,
    ) -> LedgerRecord:
        kind = RecordKind(kind)
        # Round-trip through canonical JSON so the stored payload is exactly what was hashed.
        plain_payload = json.loads(canonical_json(payload))
        digests = dict(sorted((local_digests or {}).items()))
        with self._lock:
            seq = len(self._records)
            prev = self._records[-1].this_hash if self._records else GENESIS
            rec = LedgerRecord(
                seq=seq,
                kind=kind,
                cycle_id=cycle_id,
                payload=plain_payload,
                local_digests=digests,
                prev_hash=prev,
                this_hash=record_hash(seq, kind.value, cycle_id, plain_payload, digests, prev),
            )
            line = rec.line() + "\n"
            try:
                if self._write_hook is not None:
                    self._write_hook(line)
                if self.path is not None:
                    with self.path.open("a", encoding="ascii") as fh:
                        fh.write(line)
                        if self.fsync:
                            fh.flush()
                            os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            self._records.append(rec)
            self._lines.append(line[:-1])
            return rec

    def verify(self) -> Verification:
        return verify_lines(list(self._lines))

    def query(
        self,
        kind: RecordKind | str | None = None,
        cycle_id: str | None = None,
        predicate: Callable[[LedgerRecord], bool] | None = None,
    ) -> list[LedgerRecord]:
        kind = RecordKind(kind) if kind is not None else None
        return [
            r
            for r in self.records()
            if (kind is None or r.kind is kind)
            and (cycle_id is None or r.cycle_id == cycle_id)
            and (predicate is None or predicate(r))
        ]

    def cycle_record(self, cycle_id: str) -> LedgerRecord | None:
        found = self.query(RecordKind.CYCLE_COMPLETED, cycle_id)
        return found[-1] if found else None


# --- screening ------------------------------------------------------------------------


@dataclass(frozen=True)
class ScreeningRule:
    id: str
    deny_paths: tuple[str, ...]
    review: bool = True

    def matches(self, path: str) -> bool:
        return any(path == d or path.startswith(d + ".") for d in self.deny_paths)


@dataclass(frozen=True)
class PolicyMeta:
    """What the auditor may see about a policy: identity and referenced attribute paths."""

    stakeholder_id: str
    policy_id: str
    version: int
    paths: tuple[str, ...]

    @classmethod
    def of(cls, stakeholder_id: str, policy) -> "PolicyMeta":
        return cls(stakeholder_id, policy.id, policy.version, tuple(attribute_paths(policy.condition)))


def screen_cycle(
    ledger: Ledger,
    record: LedgerRecord,
    rules: Sequence[ScreeningRule],
    policy_view: Mapping[str, Sequence[PolicyMeta]],
) -> list[LedgerRecord]:
    """Flag policies of the cycle's responsive voters that reference deny-listed paths."""
    if record.kind is not RecordKind.CYCLE_COMPLETED:
        raise ValueError("screening applies to CycleCompleted records")
    flags = []
    for sid in sorted(record.local_digests):
        for meta in sorted(policy_view.get(sid, ()), key=lambda m: (m.policy_id, m.version)):
            for rule in rules:
                if any(rule.matches(p) for p in meta.paths):
                    flags.append(
                        ledger.append(
                            RecordKind.FLAG,
                            {
                                "source": "screening",
                                "screened_seq": record.seq,
                                "rule_id": rule.id,
                                "stakeholder_id": sid,
                                "policy_id": meta.policy_id,
                                "policy_version": meta.version,
                                "human_review": rule.review,
                            },
                            cycle_id=record.cycle_id,
                        )
                    )
    return flags


# --- explanations --------------------------------------------------------------------------

DISCLOSABLE = ("final_decision", "own_vote_outcome", "prevailing_rule", "own_concern_status")


@dataclass(frozen=True)
class Explanation:
    cycle_id: str
    audience: str
    text: str
    disclosed_fields: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle_id": self.cycle_id,
            "audience": self.audience,
            "text": self.text,
            "disclosed_fields": list(self.disclosed_fields),
        }


_PHRASE = {"hard": "hard constraint", "temporal": "temporal rule", "soft": "soft preference"}


def _label(candidates: Mapping[str, Mapping[str, Any]], cid: str | None) -> str:
    if cid is None:
        return "none"
    c = candidates.get(cid, {})
    return f"{cid} ({c.get('label', cid)})"


def render_explanation(payload: Mapping[str, Any], cycle_id: str, audience: str) -> Explanation:
    votes = payload.get("votes", [])
    own = [v for v in votes if v["role"] == audience]
    if not own and audience not in payload.get("roles", []):
        raise UnknownAudience(f"role {audience!r} took no part in cycle {cycle_id}")
    candidates = {c["id"]: c for c in payload.get("candidates", [])}
    assessment = payload.get("assessment", {})
    chosen = payload.get("final_choice")
    recommended = assessment.get("recommended")
    lines = [f"Explanation for the {audience} on cycle {cycle_id}."]
    disclosed = ["final_decision"]
    followed_rec = "followed" if chosen == recommended else "did not follow"
    lines.append(
        f"Final decision: the tutoring system selected {_label(candidates, chosen)}; "
        f"it {followed_rec} the governance recommendation ({_label(candidates, recommended)})."
    )

    if own:
        disclosed.append("own_vote_outcome")
        on_chosen = [v for v in own if v["candidate_id"] == chosen]
        if on_chosen:
            decisions = {v["decision"] for v in on_chosen}
            if decisions == {"approve"}:
                lines.append("Your vote on the selected option was followed.")
            elif "reject" in decisions:
                lines.append("Your vote on the selected option was not followed: you had rejected it.")
            else:
                lines.append("Your vote on the selected option was followed with conditions attached.")
        else:
            lines.append("Your vote on the selected option was not received in time.")

    vetoes = [c for c in assessment.get("candidates", []) if c.get("status") == "disqualified"]
    if vetoes:
        disclosed.append("prevailing_rule")
        for c in vetoes:
            cat = _PHRASE.get(c.get("prevailing_category"), "rule")
            lines.append(
                f"Prevailing rule: {c['prevailing_role']} precedence on a {cat} disqualified "
                f"{_label(candidates, c['candidate_id'])}."
            )

    concerns = [v for v in own if v["decision"] != "approve"]
    if concerns:
        disclosed.append("own_concern_status")
        for v in sorted(concerns, key=lambda v: v["candidate_id"]):
            tags = f" [{', '.join(v['conditions'])}]" if v.get("conditions") else ""
            if v["candidate_id"] != chosen:
                lines.append(
                    f"Your concern about {_label(candidates, v['candidate_id'])}{tags} was respected: "
                    "that option was not selected."
                )
            else:
                lines.append(
                    f"Your concern about {_label(candidates, v['candidate_id'])}{tags} was not upheld: "
                    "that option was selected and the concern is recorded for review."
                )
    return Explanation(cycle_id, audience, "\n".join(lines), tuple(disclosed))


def explain(
    ledger: Ledger, record: LedgerRecord, audience: str, *, alert: Mapping[str, Any] | None = None
) -> Explanation:
    """Render an audience-specific explanation and record its issue in the ledger.

    ``alert`` (id, issue time, acknowledgement deadline) is stored alongside when
    the explanation is delivered as an alert awaiting acknowledgement.
    """
    if record.kind is not RecordKind.CYCLE_COMPLETED:
        raise ValueError("explanations are issued for CycleCompleted records")
    exp = render_explanation(record.payload, record.cycle_id or "", audience)
    ledger.append(
        RecordKind.EXPLANATION_ISSUED,
        {"explained_seq": record.seq, **exp.to_dict(), **({"alert": dict(alert)} if alert else {})},
        cycle_id=record.cycle_id,
    )
    return exp
