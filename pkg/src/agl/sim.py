"""Scenario-driven stand-in for a tutoring system, run on a virtual clock.

A scenario is a JSON document (see ``docs/scenario-format.md``). Everything
stochastic draws from one ``random.Random`` seeded with ``"<name>:<seed>"``,
so a (scenario, seed) pair always yields byte-identical ledgers and reports.
"""
from __future__ import annotations

import heapq
import json
import random
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Mapping

from .canonical import canonical_json
from .events import HookCategory, InvalidEventName, category_of
from .ledger import Ledger, RecordKind, ScreeningRule, verify_file
from .negotiation import protocol_from_dict
from .oversight import render_text
from .policy import STANDARD_ROLES, Policy, PolicyError, parse_policy_source
from .policy.model import ROLE_PATTERN
from .runtime import CycleConfig, GovernanceRuntime, OversightConfig, VirtualDispatcher
from .stakeholder import CandidateAction, EvaluationContext, LocalLog, StakeholderAgent

CHOICE_POLICIES = ("follow", "fixed", "ignore")
DEFAULT_WEIGHTS = {"student": 1.0, "parent": 2.0, "teacher": 3.0, "institution": 4.0, "regulator": 5.0}


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class TurnError(RuntimeError):
    def __init__(self, turn: int, cause: Exception):
        super().__init__(f"turn {turn}: {type(cause).__name__}: {cause}")
        self.turn = turn
        self.cause = cause


@dataclass(frozen=True)
class StakeholderSpec:
    id: str
    role: str
    authority: int
    policy_files: tuple[str, ...] = ()
    policy_source: str = ""

    def to_dict(self):
        d: dict[str, Any] = {"id": self.id, "role": self.role, "authority": self.authority}
        if self.policy_files:
            d["policy_files"] = list(self.policy_files)
        if self.policy_source:
            d["policy_source"] = self.policy_source
        return d


@dataclass(frozen=True)
class Fault:
    latency_ms: float | None = None
    unresponsive: bool = False

    def to_dict(self):
        d: dict[str, Any] = {}
        if self.latency_ms is not None:
            d["latency_ms"] = self.latency_ms
        if self.unresponsive:
            d["unresponsive"] = True
        return d


@dataclass(frozen=True)
class Choice:
    policy: str = "follow"
    candidate: str | None = None
    p: float = 0.0

    def to_dict(self):
        d: dict[str, Any] = {"policy": self.policy}
        if self.candidate is not None:
            d["candidate"] = self.candidate
        if self.policy == "ignore":
            d["p"] = self.p
        return d


@dataclass(frozen=True)
class AckPolicy:
    p: float = 1.0
    delay_hours: float = 1.0

    def to_dict(self):
        return {"p": self.p, "delay_hours": self.delay_hours}


@dataclass(frozen=True)
class Turn:
    candidates: tuple[CandidateAction, ...]
    context: Mapping[str, Any] = field(default_factory=dict)
    faults: Mapping[str, Fault] = field(default_factory=dict)
    choice: Choice = Choice()
    acks: AckPolicy | None = None
    at: datetime | None = None

    def to_dict(self):
        d: dict[str, Any] = {"candidates": [c.to_dict() for c in self.candidates]}
        if self.context:
            d["context"] = dict(self.context)
        if self.faults:
            d["faults"] = {k: f.to_dict() for k, f in sorted(self.faults.items())}
        d["choice"] = self.choice.to_dict()
        if self.acks is not None:
            d["acks"] = self.acks.to_dict()
        if self.at is not None:
            d["at"] = self.at.isoformat()
        return d


@dataclass(frozen=True)
class Periodic:
    name: str
    interval_hours: float

    def to_dict(self):
        return {"name": self.name, "interval_hours": self.interval_hours}


@dataclass
class Scenario:
    name: str
    start: datetime
    stakeholders: tuple[StakeholderSpec, ...]
    turns: tuple[Turn, ...]
    seed: int = 0
    turn_interval_hours: float = 24.0
    protocol: Mapping[str, Any] = field(default_factory=lambda: {"kind": "hierarchical"})
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    quorum: float = 0.75
    precedence: tuple[str, ...] = ()
    learner: Mapping[str, Any] = field(default_factory=dict)
    session: Mapping[str, Any] = field(default_factory=dict)
    latency: Mapping[str, float] = field(default_factory=lambda: {"mean_ms": 20.0, "jitter_ms": 10.0})
    acks: AckPolicy = AckPolicy()
    schedule: tuple[Periodic, ...] = ()
    screening: tuple[ScreeningRule, ...] = ()
    oversight: Mapping[str, Any] = field(default_factory=dict)
    config: Mapping[str, Any] = field(default_factory=dict)
    final_scan: bool = True
    # Resolved at load time; not part of the scenario's identity.
    base_dir: Path = field(default=Path("."), compare=False, repr=False)
    policies: dict[str, list[Policy]] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "start": self.start.isoformat(),
            "turn_interval_hours": self.turn_interval_hours,
            "protocol": dict(self.protocol),
            "weights": dict(self.weights),
            "quorum": self.quorum,
            "precedence": list(self.precedence),
            "stakeholders": [s.to_dict() for s in self.stakeholders],
            "learner": dict(self.learner),
            "session": dict(self.session),
            "latency": dict(self.latency),
            "acks": self.acks.to_dict(),
            "schedule": [p.to_dict() for p in self.schedule],
            "screening": [{"id": r.id, "deny_paths": list(r.deny_paths), "review": r.review} for r in self.screening],
            "oversight": dict(self.oversight),
            "config": dict(self.config),
            "final_scan": self.final_scan,
            "turns": [t.to_dict() for t in self.turns],
        }


def format_scenario(s: Scenario) -> str:
    return json.dumps(s.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _need(d: Mapping, key: str, where: str):
    if key not in d:
        raise ValidationError(f"{where}: missing {key!r}")
    return d[key]


def _prob(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not 0 <= x <= 1:
        raise ValidationError(f"{where}: probability must lie in [0, 1], got {x!r}")
    return float(x)


def _acks(d: Mapping | None, where: str) -> AckPolicy | None:
    if d is None:
        return None
    delay = d.get("delay_hours", 1.0)
    if not isinstance(delay, (int, float)) or delay < 0:
        raise ValidationError(f"{where}: delay_hours must be >= 0")
    return AckPolicy(_prob(d.get("p", 1.0), f"{where}.p"), float(delay))


def _turn(d: Mapping, i: int, agent_ids: set[str]) -> Turn:
    where = f"turns[{i}]"
    raw = _need(d, "candidates", where)
    if not raw:
        raise ValidationError(f"{where}: no candidates")
    try:
        cands = tuple(CandidateAction.from_dict(c) for c in raw)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{where}: bad candidate ({exc})") from exc
    ids = [c.id for c in cands]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{where}: candidate ids must be unique")
    faults = {}
    for sid, f in d.get("faults", {}).items():
        if sid not in agent_ids:
            raise ValidationError(f"{where}: fault for unknown stakeholder {sid!r}")
        lat = f.get("latency_ms")
        if lat is not None and (not isinstance(lat, (int, float)) or lat < 0):
            raise ValidationError(f"{where}: latency_ms must be >= 0")
        faults[sid] = Fault(None if lat is None else float(lat), bool(f.get("unresponsive", False)))
    c = d.get("choice", {"policy": "follow"})
    policy = c.get("policy", "follow")
    if policy not in CHOICE_POLICIES:
        raise ValidationError(f"{where}: unknown choice policy {policy!r}")
    cand = c.get("candidate")
    if policy == "fixed" and cand not in ids:
        raise ValidationError(f"{where}: fixed choice {cand!r} is not a candidate")
    choice = Choice(policy, cand, _prob(c.get("p", 0.0), f"{where}.choice.p"))
    at = datetime.fromisoformat(d["at"]) if "at" in d else None
    return Turn(cands, dict(d.get("context", {})), faults, choice, _acks(d.get("acks"), f"{where}.acks"), at)


def scenario_from_dict(d: Mapping[str, Any], base_dir: str | Path = ".") -> Scenario:
    base = Path(base_dir)
    try:
        specs = []
        for i, s in enumerate(_need(d, "stakeholders", "scenario")):
            role = _need(s, "role", f"stakeholders[{i}]")
            if not ROLE_PATTERN.match(role):
                raise ValidationError(f"stakeholders[{i}]: invalid role {role!r}")
            auth = s.get("authority", 0)
            if isinstance(auth, bool) or not isinstance(auth, int) or auth < 0:
                raise ValidationError(f"stakeholders[{i}]: authority must be a non-negative integer")
            specs.append(
                StakeholderSpec(
                    _need(s, "id", f"stakeholders[{i}]"),
                    role,
                    auth,
                    tuple(s.get("policy_files", ())),
                    s.get("policy_source", ""),
                )
            )
        if not specs:
            raise ValidationError("scenario: at least one stakeholder is required")
        agent_ids = {s.id for s in specs}
        if len(agent_ids) != len(specs):
            raise ValidationError("scenario: stakeholder ids must be unique")
        turns = tuple(_turn(t, i, agent_ids) for i, t in enumerate(_need(d, "turns", "scenario")))
        schedule = []
        for p in d.get("schedule", ()):
            try:
                if category_of(p["name"]) is not HookCategory.PERIODIC:
                    raise ValidationError(f"schedule: {p['name']} is not a periodic hook")
            except InvalidEventName as exc:
                raise ValidationError(f"schedule: {exc}") from exc
            if not p.get("interval_hours", 0) > 0:
                raise ValidationError("schedule: interval_hours must be positive")
            schedule.append(Periodic(p["name"], float(p["interval_hours"])))
        scenario = Scenario(
            name=_need(d, "name", "scenario"),
            seed=int(d.get("seed", 0)),
            start=datetime.fromisoformat(_need(d, "start", "scenario")),
            turn_interval_hours=float(d.get("turn_interval_hours", 24.0)),
            protocol=dict(d.get("protocol", {"kind": "hierarchical"})),
            weights=dict(d.get("weights", DEFAULT_WEIGHTS)),
            quorum=float(d.get("quorum", 0.75)),
            precedence=tuple(d.get("precedence", ())),
            stakeholders=tuple(specs),
            learner=dict(d.get("learner", {})),
            session=dict(d.get("session", {})),
            latency=dict(d.get("latency", {"mean_ms": 20.0, "jitter_ms": 10.0})),
            acks=_acks(d.get("acks", {}), "acks"),
            schedule=tuple(schedule),
            screening=tuple(
                ScreeningRule(r["id"], tuple(r["deny_paths"]), bool(r.get("review", True))) for r in d.get("screening", ())
            ),
            oversight=dict(d.get("oversight", {})),
            config=dict(d.get("config", {})),
            final_scan=bool(d.get("final_scan", True)),
            turns=turns,
            base_dir=base,
        )
        protocol_from_dict(scenario.protocol)
        CycleConfig(**scenario.config)
        OversightConfig(**scenario.oversight)
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    scenario.policies = {s.id: _load_policies(s, base) for s in specs}
    return scenario


def _load_policies(spec: StakeholderSpec, base: Path) -> list[Policy]:
    out: list[Policy] = []
    sources = []
    for rel in spec.policy_files:
        path = base / rel
        try:
            sources.append((str(path), path.read_text(encoding="utf-8")))
        except OSError as exc:
            raise ValidationError(f"stakeholder {spec.id}: cannot read {path}: {exc}") from exc
    if spec.policy_source:
        sources.append((f"{spec.id}:inline", spec.policy_source))
    for name, text in sources:
        try:
            out.extend(parse_policy_source(text))
        except PolicyError as exc:
            raise ValidationError(f"{name}: {exc}") from exc
    for p in out:
        if p.owner_role != spec.role:
            raise ValidationError(f"stakeholder {spec.id}: policy {p.id} belongs to role {p.owner_role}")
    return out


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return scenario_from_dict(data, path.parent)


@dataclass
class TurnResult:
    turn: int
    cycle_id: str
    at: datetime
    assessment: dict[str, Any]
    recommended: str | None
    choice: str | None
    followed: bool
    missing_voters: list[str]
    elapsed_ms: float

    def to_dict(self):
        return {
            "turn": self.turn,
            "cycle_id": self.cycle_id,
            "at": self.at.isoformat(),
            "recommended": self.recommended,
            "choice": self.choice,
            "followed": self.followed,
            "missing_voters": self.missing_voters,
            "elapsed_ms": self.elapsed_ms,
            "assessment": self.assessment,
        }


@dataclass
class RunReport:
    scenario: str
    seed: int
    protocol: dict[str, Any]
    turns: list[TurnResult]
    ledger_path: str
    ledger_records: int
    verified: bool
    broken_seq: int | None
    findings: list[dict[str, Any]]
    oversight_reports: list[dict[str, Any]]
    timing: dict[str, float]
    runtime: GovernanceRuntime | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "protocol": self.protocol,
            "ledger": {
                "path": self.ledger_path,
                "records": self.ledger_records,
                "verified": self.verified,
                "broken_seq": self.broken_seq,
            },
            "turns": [t.to_dict() for t in self.turns],
            "findings": self.findings,
            "oversight_reports": self.oversight_reports,
            "timing": self.timing,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=True) + "\n"

    def to_text(self) -> str:
        lines = [f"Scenario {self.scenario} (seed {self.seed}, protocol {self.protocol['kind']})", ""]
        for t in self.turns:
            missing = f", missing {', '.join(t.missing_voters)}" if t.missing_voters else ""
            lines.append(
                f"turn {t.turn} [{t.cycle_id}] recommended {t.recommended or '-'}; chose {t.choice or '-'}"
                f"{' (followed)' if t.followed else ''}{missing}"
            )
        lines.append("")
        lines.append(
            f"Ledger: {self.ledger_records} records, " + ("verified" if self.verified else f"BROKEN at seq {self.broken_seq}")
        )
        lines.append(
            f"Virtual fan-out time: mean {self.timing['mean_ms']:.3f} ms, max {self.timing['max_ms']:.3f} ms"
        )
        lines.append("")
        from .oversight import FindingKind, OversightFinding, Severity

        findings = [
            OversightFinding(
                FindingKind(f["kind"]), f["metric"], f["threshold"], f["window"], Severity(f["severity"]),
                tuple(f["evidence"]), f["subject"],
            )
            for f in self.findings
        ]
        lines.append(render_text(findings).rstrip("\n"))
        return "\n".join(lines) + "\n"


class _Clock:
    """Discrete-event queue keyed by virtual time, ties broken by insertion order."""

    def __init__(self):
        self._heap: list[tuple[datetime, int, Any]] = []
        self._n = 0

    def at(self, when: datetime, fn) -> None:
        heapq.heappush(self._heap, (when, self._n, fn))
        self._n += 1

    def run_until(self, when: datetime) -> None:
        while self._heap and self._heap[0][0] <= when:
            _, _, fn = heapq.heappop(self._heap)
            fn()


def _context(scenario: Scenario, state: dict[str, Any], now: datetime) -> EvaluationContext:
    return EvaluationContext(
        now=now,
        completed_units=frozenset(state["completed_units"]),
        grade_level=state["grade_level"],
        groups=dict(state["groups"]),
        session=dict(state["session"]),
    )


def _apply_delta(state: dict[str, Any], delta: Mapping[str, Any]) -> None:
    if "grade_level" in delta:
        state["grade_level"] = delta["grade_level"]
    state["completed_units"] |= set(delta.get("completed_units", ()))
    state["groups"].update(delta.get("groups", {}))
    state["session"].update(delta.get("session", {}))


def build_runtime(
    scenario: Scenario,
    ledger: Ledger,
    rng: random.Random,
    *,
    protocol: Mapping[str, Any] | None = None,
    log_dir: Path | None = None,
    fault_of=None,
) -> GovernanceRuntime:
    agents = []
    for spec in scenario.stakeholders:
        log = LocalLog(log_dir / f"{spec.id}.jsonl" if log_dir else None)
        agent = StakeholderAgent(spec.id, spec.role, spec.authority, log=log)
        agent.repository.load(scenario.policies.get(spec.id, []), scenario.start, "initial load")
        agents.append(agent)

    mean = float(scenario.latency.get("mean_ms", 20.0))
    jitter = float(scenario.latency.get("jitter_ms", 10.0))

    def latency_of(sid: str) -> float | None:
        fault = fault_of(sid) if fault_of else None
        if fault is not None and fault.unresponsive:
            return None
        if fault is not None and fault.latency_ms is not None:
            return fault.latency_ms / 1000
        return max(0.0, rng.uniform(mean - jitter, mean + jitter)) / 1000

    pairs = []
    for chain in scenario.precedence:
        names = [n.strip() for n in chain.split(">")]
        pairs.extend(zip(names, names[1:]))
    proto = dict(protocol or scenario.protocol)
    return GovernanceRuntime(
        agents,
        ledger,
        protocol=protocol_from_dict(proto),
        precedence_overrides=pairs,
        config=CycleConfig(**scenario.config),
        dispatcher=VirtualDispatcher(latency_of),
        screening_rules=scenario.screening,
        oversight=OversightConfig(**scenario.oversight),
    )


def resolve_protocol(scenario: Scenario, kind: str | None) -> dict[str, Any]:
    if kind is None:
        return dict(scenario.protocol)
    if kind == "hierarchical":
        return {"kind": "hierarchical"}
    if kind == "weighted":
        return {"kind": "weighted", "weights": dict(scenario.weights)}
    if kind == "consensus":
        return {"kind": "consensus", "quorum": scenario.quorum}
    raise ValidationError(f"unknown protocol {kind!r}")


def run(
    scenario: Scenario,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    *,
    protocol: str | None = None,
) -> RunReport:
    """Execute every turn through the runtime on a virtual clock."""
    seed = scenario.seed if seed is None else seed
    rng = random.Random(f"{scenario.name}:{seed}")
    out = Path(out_dir) if out_dir is not None else None
    log_dir = None
    ledger_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ledger_path = out / "ledger.jsonl"
        ledger_path.unlink(missing_ok=True)
        log_dir = out / "locallogs"
        shutil.rmtree(log_dir, ignore_errors=True)
        log_dir.mkdir()
    ledger = Ledger(ledger_path)
    current_faults: dict[str, Fault] = {}
    proto = resolve_protocol(scenario, protocol)
    rt = build_runtime(scenario, ledger, rng, protocol=proto, log_dir=log_dir, fault_of=current_faults.get)
    rt.bind_oversight()
    for p in scenario.schedule:
        rt.schedule_periodic(p.name, timedelta(hours=p.interval_hours), scenario.start)

    clock = _Clock()
    state = {
        "grade_level": scenario.learner.get("grade_level"),
        "completed_units": set(scenario.learner.get("completed_units", ())),
        "groups": dict(scenario.learner.get("groups", {})),
        "session": dict(scenario.session),
    }
    results: list[TurnResult] = []
    step = timedelta(hours=scenario.turn_interval_hours)
    now = scenario.start
    for i, turn in enumerate(scenario.turns):
        now = turn.at or (scenario.start + i * step)
        clock.run_until(now)
        rt.advance_clock(now)
        _apply_delta(state, turn.context)
        ctx = _context(scenario, state, now)
        current_faults.clear()
        current_faults.update(turn.faults)
        cycle_id = f"{scenario.name}-t{i:04d}"

        def its(assessment, turn=turn):
            ids = [c.id for c in turn.candidates]
            if turn.choice.policy == "fixed":
                return turn.choice.candidate
            if turn.choice.policy == "ignore" and rng.random() < turn.choice.p:
                return rng.choice(ids)
            return assessment.recommended

        try:
            assessment = rt.run_cycle(turn.candidates, ctx, its, cycle_id)
        except Exception as exc:
            raise TurnError(i, exc) from exc
        record = ledger.cycle_record(cycle_id)
        stats = rt.cycle_stats[cycle_id]
        results.append(
            TurnResult(
                turn=i,
                cycle_id=cycle_id,
                at=now,
                assessment=assessment.to_dict(),
                recommended=assessment.recommended,
                choice=record.payload["final_choice"],
                followed=record.payload["followed_recommendation"],
                missing_voters=stats["missing"],
                elapsed_ms=round(stats["elapsed"] * 1000, 6),
            )
        )
        acks = turn.acks or scenario.acks
        for exp in ledger.query(RecordKind.EXPLANATION_ISSUED, cycle_id):
            alert = exp.payload.get("alert")
            if alert and rng.random() < acks.p:
                when = now + timedelta(hours=acks.delay_hours)
                clock.at(when, lambda a=alert["alert_id"], w=when: rt.acknowledge_alert(a, w))

    end = now + step
    clock.run_until(end)
    rt.advance_clock(end)
    if scenario.final_scan:
        rt.run_scans("final", end, ("verify", "drift", "fatigue", "bias", "homogenization"))

    result = ledger.verify()
    if ledger_path is not None:
        result = verify_file(ledger_path)
    elapsed = [t.elapsed_ms for t in results] or [0.0]
    report = RunReport(
        scenario=scenario.name,
        seed=seed,
        protocol=proto,
        turns=results,
        ledger_path="ledger.jsonl",
        ledger_records=len(ledger),
        verified=bool(result),
        broken_seq=result.broken_seq,
        findings=[f.to_dict() for r in rt.reports for f in r.findings],
        oversight_reports=[r.to_dict() for r in rt.reports],
        timing={"mean_ms": round(sum(elapsed) / len(elapsed), 6), "max_ms": max(elapsed)},
        runtime=rt,
    )
    if out is not None:
        (out / "report.json").write_text(report.to_json(), encoding="ascii")
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report


def shipped(name: str) -> Path:
    """Path of a scenario shipped with the package (``vignette``, ``bias``, ...)."""
    return Path(__file__).parent / "data" / "scenarios" / f"{name}.json"
