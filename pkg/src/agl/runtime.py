"""Cycle orchestration: fan-out with adaptive deadlines, negotiation, audit and hooks.

The host integrates through three calls: ``propose`` (candidates in,
advisory assessment out), ``notify_choice`` (the host's final, autonomous
decision) and ``query_audit``. ``run_cycle`` chains them around an ITS
callback. Nothing here can veto or replace the host's choice.
"""
from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import OrderedDict, deque
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import oversight as so
from .bus import EventBus
from .canonical import digest
from .events import HookCategory, HookEvent, InvalidEventName, category_of
from .ledger import (
    Ledger,
    LedgerRecord,
    PolicyMeta,
    RecordKind,
    ScreeningRule,
    StorageFailure,
    explain,
    screen_cycle,
)
from .negotiation import (
    EmptyCycle,
    GovernanceAssessment,
    Hierarchical,
    IncomparableRoles,
    PrecedenceMap,
    Protocol,
    Status,
    negotiate,
)
from .policy import Category, Policy
from .stakeholder import CandidateAction, DuplicateCandidateId, EvaluationContext, StakeholderAgent, Vote, cycle_digest

log = logging.getLogger(__name__)

PROCEED_PARTIAL = "proceed-partial"
FAIL_CLOSED = "fail-closed"


class RuntimeErrorBase(Exception):
    pass


class NoAgents(RuntimeErrorBase):
    pass


class BudgetExceeded(RuntimeErrorBase):
    pass


class UnknownCycle(LookupError):
    pass


@dataclass
class CycleConfig:
    """Timeout and degradation settings. Durations are in seconds."""

    factor: float = 3.0
    min_deadline: float = 0.05
    max_deadline: float = 2.0
    budget: float = 5.0
    mode: str = PROCEED_PARTIAL
    ewma_alpha: float = 0.3
    cache_size: int = 4096
    ack_deadline_hours: float = 48.0

    def __post_init__(self):
        if not 0 < self.min_deadline <= self.max_deadline <= self.budget:
            raise ValueError("need 0 < min_deadline <= max_deadline <= budget")
        if self.mode not in (PROCEED_PARTIAL, FAIL_CLOSED):
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if not 0 < self.ewma_alpha <= 1:
            raise ValueError("ewma_alpha must lie in (0, 1]")


class AdaptiveDeadlines:
    """Per-agent deadline = clamp(EWMA(latency) * factor, min, max)."""

    def __init__(self, cfg: CycleConfig):
        self.cfg = cfg
        self.ewma: dict[str, float] = {}

    def deadline(self, agent_id: str) -> float:
        if agent_id not in self.ewma:
            return self.cfg.max_deadline
        return min(self.cfg.max_deadline, max(self.cfg.min_deadline, self.ewma[agent_id] * self.cfg.factor))

    def observe(self, agent_id: str, latency: float) -> None:
        prev = self.ewma.get(agent_id)
        a = self.cfg.ewma_alpha
        self.ewma[agent_id] = latency if prev is None else a * latency + (1 - a) * prev


class VoteCache:
    """Bounded LRU of votes keyed by a digest of (agent, policy revision, cycle, candidate, context)."""

    def __init__(self, size: int = 4096):
        self.size = size
        self._data: OrderedDict[str, tuple[Vote, str]] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = self.misses = 0

    def get(self, key: str):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return None

    def put(self, key: str, value) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.size:
                self._data.popitem(last=False)


@dataclass
class FanOut:
    responses: dict[str, tuple[list[Vote], str]]
    latencies: dict[str, float]
    missing: list[str]
    elapsed: float


AgentCall = Callable[[StakeholderAgent], tuple[list[Vote], str]]


class ThreadedDispatcher:
    """Runs agents concurrently on daemon threads, joining each against its wall-clock deadline."""

    def dispatch(self, call: AgentCall, agents, deadlines: Mapping[str, float], budget: float) -> FanOut:
        start = time.perf_counter()
        futures: dict[str, Future] = {}
        finished: dict[str, float] = {}

        def work(agent, fut):
            try:
                result = call(agent)
                finished[agent.stakeholder_id] = time.perf_counter()
                fut.set_result(result)
            except BaseException as exc:  # surfaced as a missing voter
                fut.set_exception(exc)

        for agent in agents:
            fut: Future = Future()
            futures[agent.stakeholder_id] = fut
            threading.Thread(target=work, args=(agent, fut), daemon=True, name=f"agent-{agent.stakeholder_id}").start()

        responses, latencies, missing = {}, {}, []
        for sid in sorted(futures):
            limit = start + min(deadlines[sid], budget)
            try:
                responses[sid] = futures[sid].result(timeout=max(0.0, limit - time.perf_counter()))
                latencies[sid] = finished[sid] - start
            except FutureTimeout:
                missing.append(sid)
                latencies[sid] = min(deadlines[sid], budget)
            except Exception:
                log.exception("agent %s failed; proceeding without its vote", sid)
                missing.append(sid)
        return FanOut(responses, latencies, missing, time.perf_counter() - start)


class VirtualDispatcher:
    """Deterministic fan-out on simulated latencies (``None`` = unresponsive).

    ``latency_of(agent_id)`` is consulted per cycle; agents finishing after their
    deadline still evaluate (and log locally) but their votes are discarded.
    """

    def __init__(self, latency_of: Callable[[str], float | None] | None = None):
        self.latency_of = latency_of or (lambda _sid: 0.0)

    def dispatch(self, call: AgentCall, agents, deadlines: Mapping[str, float], budget: float) -> FanOut:
        responses, latencies, missing = {}, {}, []
        elapsed = 0.0
        for agent in sorted(agents, key=lambda a: a.stakeholder_id):
            sid = agent.stakeholder_id
            limit = min(deadlines[sid], budget)
            latency = self.latency_of(sid)
            if latency is None:
                missing.append(sid)
                latencies[sid] = limit
                elapsed = max(elapsed, limit)
                continue
            result = call(agent)
            if latency <= limit:
                responses[sid] = result
                latencies[sid] = latency
                elapsed = max(elapsed, latency)
            else:
                missing.append(sid)
                latencies[sid] = limit
                elapsed = max(elapsed, limit)
        return FanOut(responses, latencies, missing, elapsed)


@dataclass
class OversightConfig:
    drift_tau: float = so.DEFAULTS["drift_tau"]
    drift_n_min: int = so.DEFAULTS["drift_n_min"]
    drift_window_days: int = 30
    fatigue_tau: float = so.DEFAULTS["fatigue_tau"]
    fatigue_window_days: int = 7
    bias_tau: float = so.DEFAULTS["bias_tau"]
    bias_n_min: int = so.DEFAULTS["bias_n_min"]
    bias_group_key: str | None = None
    bias_category: str | None = None
    homogenization_tau: float = so.DEFAULTS["homogenization_tau"]
    homogenization_n_min: int = so.DEFAULTS["homogenization_n_min"]


@dataclass
class OversightReport:
    trigger: str
    at: datetime
    findings: list[so.OversightFinding] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "trigger": self.trigger,
            "at": self.at.isoformat(),
            "findings": [f.to_dict() for f in self.findings],
            "notes": list(self.notes),
        }


@dataclass
class Schedule:
    id: int
    name: str
    interval: timedelta
    next_tick: datetime
    fired: int = 0
    active: bool = True

    def cancel(self) -> None:
        self.active = False


@dataclass(frozen=True)
class OverrideOutcome:
    granted: bool
    record: LedgerRecord
    prevailing_role: str | None


@dataclass(frozen=True)
class BypassAck:
    bypass_id: str
    seq: int | None
    pending: bool


@dataclass(frozen=True)
class TraceEntry:
    seq: int
    label: str
    cycle_id: str | None
    wall_ns: int


@dataclass
class _Pending:
    candidates: list[CandidateAction]
    ctx: EvaluationContext
    votes: list[Vote]
    digests: dict[str, str]
    assessment: GovernanceAssessment
    missing: list[str]
    elapsed: float


class GovernanceRuntime:
    def __init__(
        self,
        agents: Sequence[StakeholderAgent],
        ledger: Ledger | None = None,
        *,
        protocol: Protocol | None = None,
        precedence_overrides: Iterable[tuple[str, str]] = (),
        config: CycleConfig | None = None,
        bus: EventBus | None = None,
        dispatcher=None,
        screening_rules: Sequence[ScreeningRule] = (),
        oversight: OversightConfig | None = None,
        issue_explanations: bool = True,
    ):
        ids = [a.stakeholder_id for a in agents]
        if len(set(ids)) != len(ids):
            raise ValueError("stakeholder ids must be unique")
        self.agents = {a.stakeholder_id: a for a in agents}
        self.ledger = ledger if ledger is not None else Ledger()
        self.protocol = protocol or Hierarchical()
        self.precedence_overrides = tuple(precedence_overrides)
        self.config = config or CycleConfig()
        self.bus = bus or EventBus()
        self.dispatcher = dispatcher or ThreadedDispatcher()
        self.screening_rules = list(screening_rules)
        self.oversight = oversight or OversightConfig()
        self.issue_explanations = issue_explanations
        self.deadlines = AdaptiveDeadlines(self.config)
        self.cache = VoteCache(self.config.cache_size)
        self.clock: datetime | None = None
        self.trace: list[TraceEntry] = []
        self.reports: list[OversightReport] = []
        self.cycle_stats: dict[str, dict[str, Any]] = {}
        self._trace_seq = itertools.count()
        self._cycle_seq = itertools.count(1)
        self._alert_seq = itertools.count(1)
        self._bypass_seq = itertools.count(1)
        self._schedule_seq = itertools.count(1)
        self._pending: dict[str, _Pending] = {}
        self._posthoc: deque[Callable[[], None]] = deque()
        self._unwritten: deque[tuple[RecordKind, dict, str | None]] = deque()
        self._missed_notified: set[str] = set()
        self._schedules: list[Schedule] = []
        self._state_lock = threading.RLock()

    # -- bookkeeping

    def _mark(self, label: str, cycle_id: str | None = None) -> None:
        self.trace.append(TraceEntry(next(self._trace_seq), label, cycle_id, time.perf_counter_ns()))

    def _tick(self, at: datetime | None) -> datetime:
        if at is not None and (self.clock is None or at > self.clock):
            self.clock = at
        if self.clock is None:
            self.clock = datetime(1970, 1, 1)
        return self.clock

    def _emit(self, name: str, at: datetime, cycle_id: str | None = None, payload=None) -> HookEvent:
        self._mark(f"hook:{name}", cycle_id)
        return self.bus.emit(name, at, cycle_id, payload)

    def _append(self, kind: RecordKind, payload: dict, cycle_id: str | None = None, local_digests=None):
        self._flush_unwritten()
        return self.ledger.append(kind, payload, cycle_id=cycle_id, local_digests=local_digests)

    def _flush_unwritten(self) -> None:
        while self._unwritten:
            kind, payload, cycle_id = self._unwritten[0]
            self.ledger.append(kind, payload, cycle_id=cycle_id)
            self._unwritten.popleft()

    # -- policies

    def precedence(self, at: datetime) -> PrecedenceMap:
        hierarchical = [
            p
            for a in self.agents.values()
            for p in a.repository.active(at)
            if p.category is Category.HIERARCHICAL
        ]
        return PrecedenceMap.compile(hierarchical, overrides=self.precedence_overrides)

    def upsert_policy(self, stakeholder_id: str, policy: Policy, rationale: str, at: datetime) -> Policy:
        at = self._tick(at)
        stored, events = self.agents[stakeholder_id].repository.upsert(policy, rationale, at)
        for ev in events:
            self._mark(f"hook:{ev.name}")
            self.bus.publish(ev)
        self._append(
            RecordKind.POLICY_CHANGED,
            {
                "event": events[0].name,
                "stakeholder_id": stakeholder_id,
                "policy_id": stored.id,
                "version": stored.version,
                "category": stored.category.value,
                "rationale": stored.change_rationale,
                "at": at.isoformat(),
            },
        )
        return stored

    def sweep_policies(self, at: datetime) -> list[HookEvent]:
        events = []
        for sid in sorted(self.agents):
            for ev in self.agents[sid].repository.sweep_expired(at):
                self._mark(f"hook:{ev.name}")
                self.bus.publish(ev)
                self._append(RecordKind.POLICY_CHANGED, {"event": ev.name, "stakeholder_id": sid, **ev.payload, "at": at.isoformat()})
                events.append(ev)
        return events

    # -- phases 1 and 2

    def _agent_call(self, actions: Sequence[CandidateAction], ctx: EvaluationContext, cycle_id: str) -> Callable:
        ctx_key = ctx.to_dict()

        def call(agent: StakeholderAgent):
            votes, digests = [], []
            for action in actions:
                key = digest(
                    [agent.stakeholder_id, agent.repository.revision, cycle_id, action.to_dict(), ctx_key]
                )
                hit = self.cache.get(key)
                if hit is None:
                    entry = agent.assess(action, ctx, cycle_id)
                    hit = (entry.vote, agent.record_local(entry))
                    self.cache.put(key, hit)
                votes.append(hit[0])
                digests.append(hit[1])
            return votes, cycle_digest(digests)

        return call

    def propose(
        self, candidates: Sequence[CandidateAction], ctx: EvaluationContext, cycle_id: str | None = None
    ) -> GovernanceAssessment:
        """Phases 1-2: broadcast candidates, collect votes under deadlines, negotiate."""
        if not self.agents:
            raise NoAgents("no stakeholder agents registered")
        if not candidates:
            raise EmptyCycle("no candidates proposed")
        ids = [c.id for c in candidates]
        if len(set(ids)) != len(ids):
            raise DuplicateCandidateId(sorted({i for i in ids if ids.count(i) > 1}))
        cycle_id = cycle_id or f"cycle-{next(self._cycle_seq):06d}"
        at = self._tick(ctx.now)
        self._emit(
            "onCandidatesProposed", at, cycle_id, {"candidates": [c.to_dict() for c in candidates]}
        )
        agents = [self.agents[s] for s in sorted(self.agents)]
        deadlines = {a.stakeholder_id: self.deadlines.deadline(a.stakeholder_id) for a in agents}
        fan = self.dispatcher.dispatch(self._agent_call(candidates, ctx, cycle_id), agents, deadlines, self.config.budget)
        for sid, latency in sorted(fan.latencies.items()):
            self.deadlines.observe(sid, latency)
        if fan.missing and self.config.mode == FAIL_CLOSED:
            self._emit("x.degradedMode", at, cycle_id, {"missing": fan.missing, "mode": FAIL_CLOSED})
            raise BudgetExceeded(f"cycle {cycle_id}: no response from {', '.join(fan.missing)}")
        if fan.missing:
            self._emit("x.degradedMode", at, cycle_id, {"missing": fan.missing, "mode": PROCEED_PARTIAL})
        votes = sorted(
            (v for sid in sorted(fan.responses) for v in fan.responses[sid][0]),
            key=lambda v: (v.candidate_id, v.stakeholder_id),
        )
        assessment = negotiate(
            votes,
            self.protocol,
            self.precedence(at),
            candidates=ids,
            expected_voters=sorted(self.agents),
            cycle_id=cycle_id,
            produced_at=at,
        )
        for c in assessment.candidates:
            if c.status is Status.DISQUALIFIED:
                self._emit(
                    "onCandidateRejected",
                    at,
                    cycle_id,
                    {"candidate_id": c.candidate_id, "prevailing_role": c.prevailing_role},
                )
        with self._state_lock:
            self._pending[cycle_id] = _Pending(
                list(candidates),
                ctx,
                votes,
                {sid: fan.responses[sid][1] for sid in sorted(fan.responses)},
                assessment,
                sorted(fan.missing),
                fan.elapsed,
            )
        self.cycle_stats[cycle_id] = {"elapsed": fan.elapsed, "missing": sorted(fan.missing)}
        return assessment

    # -- phase 3

    def notify_choice(self, cycle_id: str, candidate_id: str | None) -> LedgerRecord:
        """Record the host's final choice; audit and oversight follow off the critical path."""
        with self._state_lock:
            if cycle_id not in self._pending:
                raise UnknownCycle(cycle_id)
            pending = self._pending.pop(cycle_id)
        at = pending.ctx.now
        a = pending.assessment
        self._emit(
            "onDecisionChosen",
            at,
            cycle_id,
            {"candidate_id": candidate_id, "recommended": a.recommended},
        )
        payload = {
            "timestamp": at.isoformat(),
            "candidates": [c.to_dict() for c in pending.candidates],
            "context": pending.ctx.to_dict(),
            "votes": [v.to_dict() for v in pending.votes],
            "assessment": a.to_dict(),
            "final_choice": candidate_id,
            "followed_recommendation": candidate_id == a.recommended,
            "missing_voters": pending.missing,
            "roles": sorted({self.agents[s].role for s in self.agents}),
        }
        record = self._append(RecordKind.CYCLE_COMPLETED, payload, cycle_id=cycle_id, local_digests=pending.digests)
        self._posthoc.append(lambda: self._audit_cycle(record, pending))
        self.process_posthoc()
        return record

    def run_cycle(
        self,
        candidates: Sequence[CandidateAction],
        ctx: EvaluationContext,
        its_callback: Callable[[GovernanceAssessment], str | None],
        cycle_id: str | None = None,
    ) -> GovernanceAssessment:
        assessment = self.propose(candidates, ctx, cycle_id)
        choice = its_callback(assessment)
        self._mark("its:return", assessment.cycle_id)
        self.notify_choice(assessment.cycle_id, choice)
        return assessment

    def process_posthoc(self) -> None:
        while self._posthoc:
            self._posthoc.popleft()()

    def _policy_view(self, at: datetime) -> dict[str, list[PolicyMeta]]:
        return {
            sid: [PolicyMeta.of(sid, p) for p in agent.repository.active(at)]
            for sid, agent in sorted(self.agents.items())
        }

    def _audit_cycle(self, record: LedgerRecord, pending: _Pending) -> None:
        cycle_id = record.cycle_id
        at = pending.ctx.now
        self._mark("ag:screen", cycle_id)
        flags = screen_cycle(self.ledger, record, self.screening_rules, self._policy_view(at))
        for f in flags:
            self._emit("x.policyFlagged", at, cycle_id, {"flag_seq": f.seq, "rule_id": f.payload["rule_id"]})
        if self.issue_explanations:
            deadline = at + timedelta(hours=self.config.ack_deadline_hours)
            for role in record.payload["roles"]:
                self._mark("ag:explain", cycle_id)
                alert = {
                    "alert_id": f"alert-{next(self._alert_seq):06d}",
                    "issued_at": at.isoformat(),
                    "deadline": deadline.isoformat(),
                }
                explain(self.ledger, record, role, alert=alert)
        self._mark("so:ingest", cycle_id)

    # -- human-in-the-loop and exceptions

    def acknowledge_alert(self, alert_id: str, at: datetime) -> LedgerRecord:
        at = self._tick(at)
        self._emit("onAlertAcknowledged", at, None, {"alert_id": alert_id})
        return self._append(RecordKind.ACKNOWLEDGED, {"alert_id": alert_id, "at": at.isoformat()})

    def submit_feedback(self, stakeholder_id: str, cycle_id: str | None, rating: int, at: datetime) -> HookEvent:
        return self._emit("onFeedbackSubmitted", self._tick(at), cycle_id, {"stakeholder_id": stakeholder_id, "rating": rating})

    def request_override(
        self,
        actor: str,
        cycle_id: str,
        requested_candidate: str,
        reason: str = "",
        at: datetime | None = None,
    ) -> OverrideOutcome:
        """Grant iff the actor's role ranks at or above the cycle's prevailing role."""
        record = self.ledger.cycle_record(cycle_id)
        if record is None:
            raise UnknownCycle(cycle_id)
        at = self._tick(at)
        self._emit("onOverrideRequested", at, cycle_id, {"actor": actor, "requested": requested_candidate})
        prevailing = record.payload["assessment"].get("prevailing_role")
        prec = self.precedence(at)
        if prevailing is None:
            granted = True
        else:
            try:
                granted = prec.compare_roles(actor, prevailing) >= 0
            except IncomparableRoles:
                granted = False
        payload = {
            "actor": actor,
            "requested_candidate": requested_candidate,
            "reason": reason,
            "granted": granted,
            "prevailing_role": prevailing,
            "at": at.isoformat(),
        }
        if not granted:
            self._emit("onOverrideDenied", at, cycle_id, {"actor": actor, "prevailing_role": prevailing})
        rec = self._append(RecordKind.OVERRIDE, payload, cycle_id=cycle_id)
        return OverrideOutcome(granted, rec, prevailing)

    def emergency_bypass(self, action: Mapping[str, Any], reason: str, at: datetime | None = None) -> BypassAck:
        """Acknowledge immediately; the bypass is logged for post-hoc review."""
        at = at or self.clock or datetime(1970, 1, 1)
        bypass_id = f"bypass-{next(self._bypass_seq):06d}"
        payload = {"bypass_id": bypass_id, "action": dict(action), "reason": reason, "at": at.isoformat()}
        try:
            rec = self.ledger.append(RecordKind.BYPASS, payload)
            seq, pending = rec.seq, False
        except StorageFailure:
            log.warning("bypass %s could not be written; queued for retry", bypass_id)
            self._unwritten.append((RecordKind.BYPASS, payload, None))
            seq, pending = None, True
            self.bus.emit("x.degradedMode", at, None, {"bypass_id": bypass_id, "storage": "failed"})
        self.bus.emit("x.emergencyBypass", at, None, {"bypass_id": bypass_id, "reason": reason})
        return BypassAck(bypass_id, seq, pending)

    def retry_unwritten(self) -> int:
        n = len(self._unwritten)
        self._flush_unwritten()
        return n

    def query_audit(self, kind: str | None = None, cycle_id: str | None = None) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.ledger.query(kind, cycle_id)]

    # -- periodic hooks on the virtual clock

    def schedule_periodic(self, name: str, interval: timedelta, start: datetime | None = None) -> Schedule:
        if category_of(name, self.bus.extensions) is not HookCategory.PERIODIC:
            raise InvalidEventName(f"{name} is not a periodic hook")
        if interval <= timedelta(0):
            raise ValueError("interval must be positive")
        start = start or self.clock
        if start is None:
            raise ValueError("no start time and the clock has not started")
        sched = Schedule(next(self._schedule_seq), name, interval, start + interval)
        self._schedules.append(sched)
        return sched

    def advance_clock(self, to: datetime) -> list[HookEvent]:
        """Fire every periodic tick due at or before ``to``, oldest first."""
        fired = []
        while True:
            due = [s for s in self._schedules if s.active and s.next_tick <= to]
            if not due:
                break
            s = min(due, key=lambda s: (s.next_tick, s.id))
            tick = s.next_tick
            s.next_tick = tick + s.interval
            s.fired += 1
            self._tick(tick)
            fired.append(self._emit(s.name, tick, None, {"schedule": s.id, "tick": s.fired}))
            self.sweep_policies(tick)
        self._tick(to)
        return fired

    def bind_oversight(self) -> None:
        """Attach the default scans: daily verify, weekly fatigue, monthly drift/bias/homogenization."""
        self.bus.subscribe(lambda ev: self.run_scans(ev.name, ev.timestamp), name="onDailyAudit")
        self.bus.subscribe(lambda ev: self.run_scans(ev.name, ev.timestamp), name="onWeeklyFatigueCheck")
        self.bus.subscribe(lambda ev: self.run_scans(ev.name, ev.timestamp), name="onMonthlyDriftScan")

    def run_scans(self, trigger: str, at: datetime, kinds: Iterable[str] | None = None) -> OversightReport:
        """Run oversight scans over the stream recorded so far and append a report."""
        cfg = self.oversight
        if kinds is None:
            kinds = {
                "onDailyAudit": ("verify",),
                "onWeeklyFatigueCheck": ("fatigue",),
                "onMonthlyDriftScan": ("drift", "bias", "homogenization"),
            }.get(trigger, ("verify", "drift", "fatigue", "bias", "homogenization"))
        report = OversightReport(trigger, at)
        self._mark(f"so:scan:{trigger}")
        result = self.ledger.verify()
        if not result:
            report.notes.append(f"ledger broken at seq {result.broken_seq}; scans skipped")
            self.reports.append(report)
            return report
        stream = so.summarize(r for r in self.ledger.records())
        for kind in kinds:
            try:
                if kind == "verify":
                    report.notes.append(f"ledger verified: {len(self.ledger)} records")
                elif kind == "drift":
                    w = timedelta(days=cfg.drift_window_days)
                    f = so.scan_drift(
                        stream, so.Window(at - 2 * w, at - w), so.Window(at - w, at), cfg.drift_tau, cfg.drift_n_min
                    )
                    report.findings.extend([f] if f else [])
                elif kind == "fatigue":
                    window = so.Window(at - timedelta(days=cfg.fatigue_window_days), at)
                    f = so.scan_fatigue(stream, window, cfg.fatigue_tau)
                    report.findings.extend([f] if f else [])
                elif kind == "bias":
                    if cfg.bias_group_key and cfg.bias_category:
                        report.findings.extend(
                            so.scan_steering_bias(stream, cfg.bias_group_key, cfg.bias_category, cfg.bias_tau, cfg.bias_n_min)
                        )
                    else:
                        report.notes.append("bias: no group key/category configured")
                elif kind == "homogenization":
                    report.findings.extend(so.scan_homogenization(stream, cfg.homogenization_tau, cfg.homogenization_n_min))
            except so.InsufficientData as exc:
                report.notes.append(f"{kind}: insufficient data ({exc})")
            if kind == "fatigue":
                for alert in so.missed_acknowledgements(stream, at):
                    if alert.alert_id not in self._missed_notified:
                        self._missed_notified.add(alert.alert_id)
                        self._emit(
                            "onAcknowledgementMissed",
                            at,
                            alert.cycle_id,
                            {"alert_id": alert.alert_id, "audience": alert.audience},
                        )
        for f in report.findings:
            self._append(RecordKind.FLAG, {"source": "oversight", "trigger": trigger, "at": at.isoformat(), **f.to_dict()})
        self._emit("x.oversightReport", at, None, {"trigger": trigger, "findings": len(report.findings)})
        self.reports.append(report)
        return report
