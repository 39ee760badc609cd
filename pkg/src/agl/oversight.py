"""Longitudinal scans over the recorded decision stream.

The stream is always derived from a verified ledger; scans are pure functions
of (stream, parameters). Thresholds are configuration, not calibrated values.
"""
from __future__ import annotations

import enum
import itertools
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .ledger import Ledger, LedgerRecord, RecordKind, verify_lines

DEFAULTS = {
    "drift_tau": 0.3,
    "drift_n_min": 20,
    "fatigue_tau": 0.5,
    "bias_tau": 0.5,
    "bias_n_min": 20,
    "homogenization_tau": 0.95,
    "homogenization_n_min": 30,
}


class InsufficientData(ValueError):
    pass


class BrokenLedger(ValueError):
    pass


class FindingKind(str, enum.Enum):
    DRIFT = "drift"
    FATIGUE = "fatigue"
    STEERING_BIAS = "steering_bias"
    HOMOGENIZATION = "homogenization"


class Severity(str, enum.Enum):
    INFO = "info"
    WARN = "warn"
    CRITICAL = "critical"


@dataclass(frozen=True)
class Window:
    """Half-open time interval ``[start, end)``."""

    start: datetime
    end: datetime

    def __contains__(self, t: datetime) -> bool:
        return self.start <= t < self.end

    def to_dict(self):
        return {"start": self.start.isoformat(), "end": self.end.isoformat()}


@dataclass(frozen=True)
class OversightFinding:
    kind: FindingKind
    metric: float
    threshold: float
    window: dict[str, Any]
    severity: Severity
    evidence: tuple[str, ...] = ()
    subject: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "metric": self.metric,
            "threshold": self.threshold,
            "window": self.window,
            "severity": self.severity.value,
            "evidence": list(self.evidence),
            "subject": self.subject,
        }


@dataclass(frozen=True)
class CycleSummary:
    cycle_id: str
    timestamp: datetime
    candidate_categories: dict[str, str]
    selected: str | None
    selected_category: str | None
    groups: dict[str, str] = field(default_factory=dict)
    votes: tuple[tuple[str, str, str], ...] = ()  # (stakeholder_id, candidate_id, decision)


@dataclass(frozen=True)
class Alert:
    alert_id: str
    cycle_id: str | None
    audience: str
    issued_at: datetime
    deadline: datetime


@dataclass(frozen=True)
class DecisionStream:
    cycles: tuple[CycleSummary, ...]
    alerts: tuple[Alert, ...] = ()
    acks: tuple[tuple[str, datetime], ...] = ()

    def in_window(self, w: Window) -> list[CycleSummary]:
        return [c for c in self.cycles if c.timestamp in w]

    def span(self) -> Window | None:
        stamps = [c.timestamp for c in self.cycles] + [a.issued_at for a in self.alerts] + [t for _, t in self.acks]
        if not stamps:
            return None
        return Window(min(stamps), max(stamps) + timedelta(microseconds=1))


def summarize(records: Iterable[LedgerRecord]) -> DecisionStream:
    cycles, alerts, acks = [], [], []
    for r in records:
        p = r.payload
        if r.kind is RecordKind.CYCLE_COMPLETED:
            cats = {c["id"]: c.get("content_category", "") for c in p.get("candidates", [])}
            chosen = p.get("final_choice")
            cycles.append(
                CycleSummary(
                    cycle_id=r.cycle_id or "",
                    timestamp=datetime.fromisoformat(p["timestamp"]),
                    candidate_categories=cats,
                    selected=chosen,
                    selected_category=cats.get(chosen) if chosen else None,
                    groups=dict(p.get("context", {}).get("groups", {})),
                    votes=tuple(
                        sorted((v["stakeholder_id"], v["candidate_id"], v["decision"]) for v in p.get("votes", []))
                    ),
                )
            )
        elif r.kind is RecordKind.EXPLANATION_ISSUED and "alert" in p:
            a = p["alert"]
            alerts.append(
                Alert(
                    a["alert_id"],
                    r.cycle_id,
                    p.get("audience", ""),
                    datetime.fromisoformat(a["issued_at"]),
                    datetime.fromisoformat(a["deadline"]),
                )
            )
        elif r.kind is RecordKind.ACKNOWLEDGED:
            acks.append((p["alert_id"], datetime.fromisoformat(p["at"])))
    cycles.sort(key=lambda c: (c.timestamp, c.cycle_id))
    return DecisionStream(tuple(cycles), tuple(alerts), tuple(acks))


def stream_from_ledger(ledger: Ledger | Sequence[LedgerRecord]) -> DecisionStream:
    """Verify the ledger, then derive the read-only decision stream from it."""
    records = ledger.records() if isinstance(ledger, Ledger) else list(ledger)
    result = verify_lines(r.line() for r in records)
    if not result:
        raise BrokenLedger(f"ledger broken at seq {result.broken_seq}")
    return summarize(records)


def stream_from_file(path) -> DecisionStream:
    from pathlib import Path

    lines = Path(path).read_text(encoding="ascii").splitlines()
    result = verify_lines(lines)
    if not result:
        raise BrokenLedger(f"ledger broken at seq {result.broken_seq}")
    return summarize(LedgerRecord.from_dict(json.loads(line)) for line in lines)


# --- drift ---------------------------------------------------------------------------


def _distribution(cycles: Sequence[CycleSummary]) -> dict[str, Fraction]:
    counts = Counter(c.selected_category for c in cycles if c.selected_category is not None)
    total = sum(counts.values())
    return {k: Fraction(n, total) for k, n in counts.items()} if total else {}


def drift_metric(a: Sequence[CycleSummary], b: Sequence[CycleSummary]) -> float:
    """L1 distance between selected-category distributions, in [0, 2]."""
    pa, pb = _distribution(a), _distribution(b)
    return float(sum(abs(pa.get(k, Fraction(0)) - pb.get(k, Fraction(0))) for k in set(pa) | set(pb)))


def scan_drift(
    stream: DecisionStream,
    window_a: Window,
    window_b: Window,
    tau: float = DEFAULTS["drift_tau"],
    n_min: int = DEFAULTS["drift_n_min"],
) -> OversightFinding | None:
    a, b = stream.in_window(window_a), stream.in_window(window_b)
    a = [c for c in a if c.selected_category is not None]
    b = [c for c in b if c.selected_category is not None]
    if len(a) < n_min or len(b) < n_min:
        raise InsufficientData(f"drift needs {n_min} decisions per window, got {len(a)} and {len(b)}")
    metric = drift_metric(a, b)
    if metric <= tau:
        return None
    return OversightFinding(
        FindingKind.DRIFT,
        metric,
        tau,
        {"a": window_a.to_dict(), "b": window_b.to_dict()},
        Severity.CRITICAL if metric > 2 * tau else Severity.WARN,
        evidence=tuple(c.cycle_id for c in b),
    )


# --- alert fatigue -----------------------------------------------------------------------


def _first_acks(stream: DecisionStream) -> dict[str, datetime]:
    first: dict[str, datetime] = {}
    for alert_id, at in stream.acks:
        if alert_id not in first or at < first[alert_id]:
            first[alert_id] = at
    return first


def fatigue_metric(stream: DecisionStream, window: Window) -> float:
    alerts = [a for a in stream.alerts if a.issued_at in window]
    if not alerts:
        raise InsufficientData("no alerts issued in the window")
    acked = _first_acks(stream)
    n_ack = sum(1 for a in alerts if a.alert_id in acked and acked[a.alert_id] < window.end)
    return float(1 - Fraction(n_ack, len(alerts)))


def scan_fatigue(
    stream: DecisionStream, window: Window, tau: float = DEFAULTS["fatigue_tau"]
) -> OversightFinding | None:
    """Share of alerts issued in ``window`` that were not acknowledged within it."""
    metric = fatigue_metric(stream, window)
    if metric <= tau:
        return None
    acked = _first_acks(stream)
    unacked = [a.alert_id for a in stream.alerts if a.issued_at in window and not (a.alert_id in acked and acked[a.alert_id] < window.end)]
    return OversightFinding(
        FindingKind.FATIGUE,
        metric,
        tau,
        window.to_dict(),
        Severity.CRITICAL if metric > (1 + tau) / 2 else Severity.WARN,
        evidence=tuple(sorted(unacked)),
    )


def missed_acknowledgements(stream: DecisionStream, at: datetime) -> list[Alert]:
    """Alerts whose deadline passed before ``at`` without an acknowledgement by the deadline."""
    acked = _first_acks(stream)
    return [
        a
        for a in stream.alerts
        if a.deadline < at and not (a.alert_id in acked and acked[a.alert_id] <= a.deadline)
    ]


# --- steering bias ------------------------------------------------------------------------


def selection_rates(stream: DecisionStream, group_key: str, category: str) -> dict[str, tuple[int, Fraction, Fraction | None]]:
    """Per group value: (decisions, rate of ``category``, baseline over all other cycles)."""
    cycles = [c for c in stream.cycles if c.selected_category is not None]
    out = {}
    values = sorted({c.groups[group_key] for c in cycles if group_key in c.groups})
    for g in values:
        mine = [c for c in cycles if c.groups.get(group_key) == g]
        rest = [c for c in cycles if c.groups.get(group_key) != g]
        rate = Fraction(sum(c.selected_category == category for c in mine), len(mine))
        base = Fraction(sum(c.selected_category == category for c in rest), len(rest)) if rest else None
        out[g] = (len(mine), rate, base)
    return out


def scan_steering_bias(
    stream: DecisionStream,
    group_key: str,
    category: str,
    tau: float = DEFAULTS["bias_tau"],
    n_min: int = DEFAULTS["bias_n_min"],
) -> list[OversightFinding]:
    """Groups whose selection rate of ``category`` falls strictly below ``tau`` x baseline."""
    rates = selection_rates(stream, group_key, category)
    eligible = {g: r for g, r in rates.items() if r[0] >= n_min and r[2] is not None}
    if not eligible:
        raise InsufficientData(f"no value of {group_key!r} has {n_min} decisions and a comparison baseline")
    findings = []
    t = Fraction(tau)
    for g, (n, rate, base) in eligible.items():
        if base > 0 and rate < t * base:
            ratio = rate / base
            findings.append(
                OversightFinding(
                    FindingKind.STEERING_BIAS,
                    float(ratio),
                    tau,
                    {"group_key": group_key, "category": category, "decisions": n,
                     "rate": float(rate), "baseline": float(base)},
                    Severity.CRITICAL if ratio < t / 2 else Severity.WARN,
                    evidence=tuple(c.cycle_id for c in stream.cycles if c.groups.get(group_key) == g),
                    subject=f"{group_key}={g}",
                )
            )
    return findings


# --- homogenization -----------------------------------------------------------------------


def pairwise_agreement(stream: DecisionStream) -> dict[tuple[str, str], tuple[int, int, Fraction]]:
    """For each agent pair: (shared cycles, shared votes, agreement fraction)."""
    by_agent: dict[str, dict[tuple[str, str], str]] = defaultdict(dict)
    for c in stream.cycles:
        for sid, cid, decision in c.votes:
            by_agent[sid][(c.cycle_id, cid)] = decision
    out = {}
    for a, b in itertools.combinations(sorted(by_agent), 2):
        shared = by_agent[a].keys() & by_agent[b].keys()
        if not shared:
            continue
        agree = sum(by_agent[a][k] == by_agent[b][k] for k in shared)
        out[(a, b)] = (len({k[0] for k in shared}), len(shared), Fraction(agree, len(shared)))
    return out


def scan_homogenization(
    stream: DecisionStream,
    tau: float = DEFAULTS["homogenization_tau"],
    n_min: int = DEFAULTS["homogenization_n_min"],
) -> list[OversightFinding]:
    pairs = {k: v for k, v in pairwise_agreement(stream).items() if v[0] >= n_min}
    if not pairs:
        raise InsufficientData(f"no agent pair shares {n_min} cycles")
    findings = []
    for (a, b), (n_cycles, n_votes, agreement) in sorted(pairs.items()):
        if agreement > Fraction(tau):
            findings.append(
                OversightFinding(
                    FindingKind.HOMOGENIZATION,
                    float(agreement),
                    tau,
                    {"shared_cycles": n_cycles, "shared_votes": n_votes},
                    Severity.CRITICAL if agreement == 1 else Severity.WARN,
                    evidence=(a, b),
                    subject=f"{a}~{b}",
                )
            )
    return findings


# --- reports ---------------------------------------------------------------------------------


def render_text(findings: Sequence[OversightFinding], title: str = "Oversight report") -> str:
    lines = [title, "=" * len(title)]
    if not findings:
        lines.append("No findings.")
    for f in findings:
        subject = f" [{f.subject}]" if f.subject else ""
        lines.append(
            f"- {f.severity.value.upper()} {f.kind.value}{subject}: metric {f.metric:.4f} vs threshold {f.threshold:g}"
            f" ({len(f.evidence)} evidence items); for human review."
        )
    return "\n".join(lines) + "\n"
