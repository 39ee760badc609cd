"""One test per acceptance criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that is repeated in the terminal summary.
"""
import dataclasses
import itertools
import json
import random
import threading
import time
from datetime import datetime, timedelta
from importlib import resources

from hypothesis import given, settings

import oracles
from agl.generators import null_stream_ledger
from agl.ledger import Ledger, RecordKind, explain, verify_lines
from agl.negotiation import Consensus, Hierarchical, PrecedenceMap, Status, Weighted, negotiate
from agl.oversight import (
    Alert,
    CycleSummary,
    DecisionStream,
    FindingKind,
    InsufficientData,
    Window,
    scan_drift,
    scan_fatigue,
    scan_steering_bias,
    stream_from_ledger,
)
from agl.policy import Category, format_condition, format_policy, parse_policy_source
from agl.policy.language import parse_condition
from agl.runtime import CycleConfig, GovernanceRuntime, VirtualDispatcher
from agl.sim import load_scenario, run, shipped
from agl.stakeholder import CandidateAction, Decision, EvaluationContext, StakeholderAgent, Vote
from helpers import NOW, block, vignette
from strategies import policies

SHIPPED = ("vignette", "bias", "bias60", "faults")
DECISIONS = ("approve", "conditional", "reject")
WEIGHTS = {"student": 1, "parent": 2, "teacher": 3, "institution": 4, "regulator": 5}
PREC = PrecedenceMap()


def vote(cid, sid, role, decision, conf=1.0, cycle="k"):
    labels = ("review",) if decision == "conditional" else ()
    return Vote(cycle, cid, sid, role, 1, Decision(decision), conf, "j-" + sid, labels, ())


# 1 ------------------------------------------------------------------------------------------------


def test_c01_vignette_reproduction(criterion):
    t = time.perf_counter()
    rep = run(load_scenario(shipped("vignette")))
    elapsed = time.perf_counter() - t
    (turn,) = rep.turns
    c2 = next(c for c in turn.assessment["candidates"] if c["candidate_id"] == "c2")
    parent = next(
        r.payload["text"]
        for r in rep.runtime.ledger.query(RecordKind.EXPLANATION_ISSUED)
        if r.payload["audience"] == "parent"
    )
    ok = (
        turn.recommended == "c3"
        and turn.choice == "c3"
        and c2["status"] == "disqualified"
        and c2["prevailing_role"] == "regulator"
        and c2["prevailing_category"] == "hard"
        and "Prevailing rule: regulator precedence on a hard constraint disqualified c2 "
        "(Construction and trade applications)." in parent.splitlines()
        and elapsed < 1.0
    )
    criterion(1, "vignette reproduction", ok, f"recommended {turn.recommended}, c2 {c2['status']} by {c2['prevailing_role']}, {elapsed:.3f}s")


# 2 ------------------------------------------------------------------------------------------------


def test_c02_veto_dominance(criterion):
    rng = random.Random("veto")
    violations = checked = 0
    for i in range(10_000):
        n_agents, n_cands = rng.randint(1, 6), rng.randint(1, 4)
        roles = [rng.choice(oracles.ORDER) for _ in range(n_agents)]
        votes = [
            vote(f"c{j}", f"a{k}", r, rng.choice(DECISIONS), rng.choice([1.0, rng.random()]), f"k{i}")
            for j in range(n_cands)
            for k, r in enumerate(roles)
        ]
        a = negotiate(votes, Hierarchical(), PREC)
        top = max(PREC.rank(r) for r in roles)
        strict = [k for k, r in enumerate(roles) if PREC.rank(r) == top]
        if len(strict) != 1:
            continue
        boss = f"a{strict[0]}"
        for v in votes:
            if v.stakeholder_id == boss and v.decision is Decision.REJECT:
                checked += 1
                violations += a.recommended == v.candidate_id
    criterion(2, "veto dominance", violations == 0 and checked > 1000, f"{violations} violations over {checked} vetoes in 10000 vote sets")


# 3 ------------------------------------------------------------------------------------------------


def _same(a, expected):
    status, rec, score, risk = expected
    if a.recommended != rec:
        return False
    return all(
        c.status.value == status[c.candidate_id]
        and c.score == float(score[c.candidate_id])
        and c.risk == float(risk[c.candidate_id])
        for c in a.candidates
    )


def test_c03_oracle_equivalence(criterion):
    t = time.perf_counter()
    mismatches = grids = 0
    for roleset in (("student", "teacher", "regulator"), ("parent", "parent", "institution")):
        for n_agents in (1, 2, 3):
            roles = roleset[:n_agents]
            for n_cands in (1, 2, 3):
                cids = [f"c{j}" for j in range(n_cands)]
                for cells in itertools.product(DECISIONS, repeat=n_agents * n_cands):
                    grid = {cid: cells[j * n_agents : (j + 1) * n_agents] for j, cid in enumerate(cids)}
                    votes = [vote(cid, f"a{k}", roles[k], d) for cid, ds in grid.items() for k, d in enumerate(ds)]
                    ref = {cid: [(roles[k], d, 1) for k, d in enumerate(ds)] for cid, ds in grid.items()}
                    grids += 1
                    mismatches += not _same(negotiate(votes, Hierarchical(), PREC), oracles.hierarchical(ref))
                    mismatches += not _same(negotiate(votes, Weighted(WEIGHTS), PREC), oracles.weighted(ref, WEIGHTS))
                    mismatches += not _same(negotiate(votes, Consensus(0.75), PREC), oracles.consensus(ref, 0.75))
    elapsed = time.perf_counter() - t
    criterion(3, "oracle equivalence", mismatches == 0 and elapsed < 60, f"{mismatches} mismatches over {grids} grids x 3 protocols, {elapsed:.1f}s")


# 4 ------------------------------------------------------------------------------------------------

WORDS = ("students", "should", "never", "receive", "content", "before", "review", "because", "our", "family",
         "believes", "strongly", "that", "learning", "must", "remain", "balanced", "outdoors", "weekly")


def _random_corpus(rng, sid, role):
    out = []
    for k in range(rng.randint(1, 4)):
        cat = rng.choice(["hard", "soft", "temporal"])
        attr = rng.choice("abcde")
        when = f"action.{attr} == {rng.randint(0, 2)}"
        if cat == "temporal":
            when = f"date.weekday() < {rng.randint(1, 6)} && {when}"
        then = {
            "hard": rng.choice(["reject", f"require({sid}_ok)"]),
            "soft": rng.choice(["prefer", "avoid"]) + f" {rng.randint(1, 9) / 10}",
            "temporal": "reject",
        }[cat]
        text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(4, 9)))
        out.append(block(f"{sid}-p{k}", role, cat, when, then, text))
    return "".join(out)


def _secrets(agent):

    return [p.source_text + (format_condition(p.condition) if p.condition else "") for p in agent.repository.active(NOW)]


def _fragments(s, n=12):
    return {s[i : i + n] for i in range(len(s) - n + 1)}


def _mutate(p):
    repl = parse_condition("action.zzz == 42") if p.condition is not None else None
    return dataclasses.replace(p, source_text="MUTATED " + p.source_text[::-1], condition=repl)


def test_c04_privacy_purity(criterion):
    # Part A: assessments depend only on votes and precedence, never on policy text or conditions.
    agents, cands, ctx = vignette()
    catalog = parse_policy_source(resources.files("agl").joinpath("data/policies/catalog.agl").read_text())
    hier = [p for p in catalog if p.category is Category.HIERARCHICAL]
    votes = sorted(
        (v for a in agents for v in a.evaluate_candidates(cands, ctx, "k")), key=lambda v: (v.candidate_id, v.stakeholder_id)
    )
    before = negotiate(votes, Hierarchical(), PrecedenceMap.compile(hier), cycle_id="k", produced_at=NOW).serialize()
    after = negotiate(
        votes, Hierarchical(), PrecedenceMap.compile([_mutate(p) for p in hier]), cycle_id="k", produced_at=NOW
    ).serialize()
    replay_ok = before == after

    # Part B: no Vote or Explanation carries another agent's policy text.
    violations = 0
    roles = ["student", "parent", "teacher", "regulator"]
    for seed in range(100):
        rng = random.Random(f"corpus:{seed}")
        ags = []
        for sid, role in zip(("s", "p", "t", "r"), roles):
            a = StakeholderAgent(sid, role, 1)
            a.repository.load(parse_policy_source(_random_corpus(rng, sid, role)), datetime(2025, 1, 1), "load")
            ags.append(a)
        rt = GovernanceRuntime(ags, dispatcher=VirtualDispatcher())
        cs = [CandidateAction(f"c{j}", f"Option {j}", "x", {k: rng.randint(0, 2) for k in "abcde"}) for j in range(3)]
        ectx = EvaluationContext(now=NOW, completed_units=frozenset(), grade_level=9, groups={}, session={})
        rt.run_cycle(cs, ectx, lambda a: a.recommended, f"k{seed}")
        secrets = {a.stakeholder_id: set().union(*(_fragments(s) for s in _secrets(a))) for a in ags}
        for rec in rt.ledger.query(RecordKind.CYCLE_COMPLETED):
            for v in rec.payload["votes"]:
                blob = json.dumps(v, sort_keys=True)
                others = set().union(*(f for sid, f in secrets.items() if sid != v["stakeholder_id"]))
                violations += any(f in blob for f in others)
        everything = set().union(*secrets.values())
        for rec in rt.ledger.query(RecordKind.EXPLANATION_ISSUED):
            violations += any(f in rec.payload["text"] for f in everything)
    criterion(4, "privacy purity", replay_ok and violations == 0, f"replay identical={replay_ok}, {violations} leaks over 100 corpora")


# 5 ------------------------------------------------------------------------------------------------


def test_c05_ledger_integrity(criterion, tmp_path):
    led = Ledger(tmp_path / "ledger.jsonl")
    for i in range(1000):
        led.append(RecordKind.CYCLE_COMPLETED, {"i": i, "note": f"decision {i}"}, cycle_id=f"k{i}")
    lines = (tmp_path / "ledger.jsonl").read_bytes().split(b"\n")[:-1]
    ok = bool(verify_lines(lines))
    rng = random.Random("flips")
    detected = 0
    for _ in range(100):
        seq = rng.randrange(1000)
        bad = bytearray(lines[seq])
        bit = rng.randrange(len(bad) * 8)
        bad[bit // 8] ^= 1 << (bit % 8)
        detected += verify_lines(lines[:seq] + [bytes(bad)] + lines[seq + 1 :]).broken_seq == seq
    criterion(5, "ledger integrity", ok and detected == 100, f"clean verify {ok}, {detected}/100 flips located")


# 6 ------------------------------------------------------------------------------------------------


class _Hung:
    """Wraps an agent so that every evaluation blocks until released."""

    def __init__(self, inner, release):
        self._inner, self._release = inner, release

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def assess(self, *a, **k):
        self._release.wait()
        return self._inner.assess(*a, **k)


def test_c06_graceful_degradation(criterion):
    release = threading.Event()
    agents, cands, ctx = vignette()
    agents = [_Hung(a, release) if a.stakeholder_id == "parent" else a for a in agents]
    cfg = CycleConfig(min_deadline=0.05, max_deadline=0.1, budget=0.1)
    rt = GovernanceRuntime(agents, config=cfg)
    late = wrong = 0
    worst = 0.0
    try:
        for i in range(100):
            c = ctx if i == 0 else dataclasses.replace(ctx, now=ctx.now + timedelta(hours=i))
            # the budget bounds assessment delivery; host choice and post-hoc audit follow it
            t = time.perf_counter()
            a = rt.propose(cands, c, f"k{i}")
            took = time.perf_counter() - t
            rt.notify_choice(f"k{i}", a.recommended)
            worst = max(worst, took)
            late += took > cfg.budget * 1.1
            rec = rt.ledger.cycle_record(f"k{i}")
            wrong += a.missing_voters != ("parent",) or rec.payload["missing_voters"] != ["parent"]
    finally:
        release.set()
    criterion(6, "graceful degradation", late == 0 and wrong == 0, f"{late} over budget, {wrong} wrong missing lists, worst {worst * 1000:.1f} ms")


# 7 ------------------------------------------------------------------------------------------------


def test_c07_determinism(criterion, tmp_path):
    differing = []
    for name in SHIPPED:
        sc = load_scenario(shipped(name))
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        run(sc, 5, a)
        run(sc, 5, b)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        if files != sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file()):
            differing.append(f"{name}:file set")
        differing += [f"{name}:{f}" for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    criterion(7, "determinism", not differing, ", ".join(differing) or f"{len(SHIPPED)} scenarios byte-identical")


# 8 ------------------------------------------------------------------------------------------------

CATALOG = [
    ("no-third-party-sharing", "regulator", "hard", 5, "Reject", "action.shares_third_party == true && context.consent == false"),
    ("common-core-alignment", "institution", "hard", 4, "Reject", 'action.subject == "mathematics" && action.common_core_aligned == false'),
    ("under-13-no-social", "regulator", "hard", 5, "Reject", "context.learner_age < 13 && action.social_features == true"),
    ("prefer-project-based", "teacher", "soft", 3, "Prefer", 'action.format == "project"'),
    ("screen-time-before-6pm", "parent", "soft", 2, "Avoid", 'action.screen_based == true && !time.within("18:00".."23:59")'),
    ("collaborative-assignments", "teacher", "soft", 3, "Prefer", 'action.mode == "collaborative"'),
    ("algebra-before-calculus", "institution", "temporal", 4, "Reject", 'action.topic == "calculus" && !progress.completed("algebra_fundamentals")'),
    ("no-late-weekday-homework", "parent", "temporal", 2, "Reject", 'action.kind == "homework" && time.within("20:00".."23:59") && date.weekday() < 5'),
    ("reading-support-first", "teacher", "temporal", 3, "Require", 'action.advances_level == true && context.below_grade_level == true && !progress.completed("reading_support")'),
    ("safety-over-parent-content", "institution", "hierarchical", 4, "Precedence", None),
    ("accessibility-over-efficiency", "regulator", "hierarchical", 5, "Precedence", None),
    ("teacher-over-student", "teacher", "hierarchical", 3, "Precedence", None),
]

_ROUND_TRIP = {"n": 0, "fail": 0}


@settings(max_examples=1000, derandomize=True, database=None)
@given(policies())
def _round_trip(p):
    _ROUND_TRIP["n"] += 1
    try:
        ok = parse_policy_source(format_policy(p)) == [p]
    except Exception:
        ok = False
    _ROUND_TRIP["fail"] += not ok


def test_c08_parser_round_trip(criterion):

    _ROUND_TRIP.update(n=0, fail=0)
    _round_trip()
    ps = parse_policy_source(resources.files("agl").joinpath("data/policies/catalog.agl").read_text())
    got = [
        (p.id, p.owner_role, p.category.value, p.authority, type(p.effect).__name__,
         format_condition(p.condition) if p.condition else None)
        for p in ps
    ]
    corpus_ok = got == CATALOG
    ok = _ROUND_TRIP["n"] >= 1000 and _ROUND_TRIP["fail"] == 0 and corpus_ok
    criterion(8, "parser round trip", ok, f"{_ROUND_TRIP['fail']} failures over {_ROUND_TRIP['n']} policies, corpus exact={corpus_ok}")


# 9 ------------------------------------------------------------------------------------------------

T0 = datetime(2025, 1, 6)


def _cyc(i, cat, start):
    return CycleSummary(f"k{i}", start + timedelta(hours=i), {"c": cat}, "c", cat)


def test_c09_oversight(criterion):
    rep = run(load_scenario(shipped("bias60")))
    stream = stream_from_ledger(rep.runtime.ledger)
    bias = scan_steering_bias(stream, "ses", "abstract")
    detected = len(stream.cycles) >= 50 and [f.subject for f in bias] == ["ses=low_income"]
    in_report = any(f["kind"] == FindingKind.STEERING_BIAS.value for f in rep.findings)

    hits = 0
    for seed in range(100):
        s = stream_from_ledger(null_stream_ledger(seed, n=100))
        try:
            hits += bool(scan_steering_bias(s, "ses", "abstract"))
        except InsufficientData:
            pass
    fp_ok = hits < 5

    a, b = Window(T0, T0 + timedelta(days=30)), Window(T0 + timedelta(days=30), T0 + timedelta(days=60))
    cyc = [_cyc(i, c, a.start) for i, c in enumerate(["abstract"] * 12 + ["applied"] * 8)]
    cyc += [_cyc(i, c, b.start) for i, c in enumerate(["abstract"] * 6 + ["applied"] * 14)]
    drift = scan_drift(DecisionStream(tuple(cyc)), a, b)
    alerts = tuple(Alert(f"a{i}", None, "parent", T0 + timedelta(hours=i), T0 + timedelta(hours=i + 48)) for i in range(10))
    acks = ((a_.alert_id, a_.issued_at + timedelta(hours=1)) for a_ in alerts[:2])
    fatigue = scan_fatigue(DecisionStream((), alerts, tuple(acks)), a)
    metrics_ok = abs(drift.metric - 0.6) <= 1e-12 and abs(fatigue.metric - 0.8) <= 1e-12
    criterion(
        9,
        "oversight detection and false positives",
        detected and in_report and fp_ok and metrics_ok,
        f"bias found={detected and in_report}, null false positives {hits}/100, drift {drift.metric!r}, fatigue {fatigue.metric!r}",
    )


# 10 -----------------------------------------------------------------------------------------------


def test_c10_critical_path_isolation(criterion):
    violations = cycles = 0
    for name in SHIPPED:
        rt = run(load_scenario(shipped(name))).runtime
        open_cycle = None
        last_ns = 0
        for entry in rt.trace:
            violations += entry.wall_ns < last_ns
            last_ns = entry.wall_ns
            if entry.label == "hook:onCandidatesProposed":
                open_cycle = entry.cycle_id
                cycles += 1
            elif entry.label == "its:return":
                open_cycle = None
            elif open_cycle is not None and entry.label.startswith(("ag:", "so:")):
                violations += 1
    criterion(10, "critical-path isolation", violations == 0 and cycles > 0, f"{violations} violations over {cycles} cycles")
