import hashlib
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agl.canonical import canonical_json
from agl.policy import format_condition
from agl.stakeholder import Decision, DuplicateCandidateId, LocalLog, Vote, soft_score, verify_local_log_line
from helpers import agent, block, cand, context
from strategies import policies

STUDENT = block("practical", "student", "soft", "action.practical == true", "prefer 0.6") + block(
    "abstract", "student", "soft", "action.abstract == true", "avoid 0.3"
)
REGULATOR = block("no-tracking", "regulator", "hard", "action.tracking_risk == true", "reject", "no tracking")


def vignette_candidates():
    return [
        cand("c1", "abstract", abstract=True, practical=False, tracking_risk=False),
        cand("c2", "applied", abstract=False, practical=True, tracking_risk=True),
        cand("c3", "art_integrated", abstract=False, practical=True, tracking_risk=False),
    ]


def test_regulator_rejects_tracking_option():
    votes = agent("reg", "regulator", REGULATOR, 5).evaluate_candidates(vignette_candidates(), context(), "k")
    assert [v.decision for v in votes] == [Decision.APPROVE, Decision.REJECT, Decision.APPROVE]
    assert votes[1].confidence == 1.0 and votes[1].triggered_categories == (("hard", 1),)


def test_student_favors_practical_options():
    votes = agent("s", "student", STUDENT).evaluate_candidates(vignette_candidates(), context(), "k")
    assert all(v.decision is Decision.APPROVE for v in votes)
    assert votes[1].confidence == votes[2].confidence > votes[0].confidence
    assert votes[1].confidence == pytest.approx(0.8) and votes[0].confidence == pytest.approx(0.35)


def test_no_policies_is_neutral_approve():
    v = agent("n", "parent").evaluate_candidate(cand("c1"), context(), "k")
    assert (v.decision, v.confidence, v.triggered_categories) == (Decision.APPROVE, 0.5, ())


def test_prefer_and_avoid_confidence():
    src = block("a", "teacher", "soft", "action.x == 1", "prefer 0.6") + block("b", "teacher", "soft", "action.y == 1", "avoid 0.2")
    v = agent("t", "teacher", src).evaluate_candidate(cand("c", x=1, y=1), context(), "k")
    assert v.confidence == pytest.approx(0.70, abs=1e-12)


def test_soft_score_examples():
    a = agent("t", "teacher", block("a", "teacher", "soft", "action.x == 1", "prefer 0.6") + block("b", "teacher", "soft", "action.x == 1", "prefer 0.7"))
    assert soft_score(a.repository.active(context().now), cand("c", x=1), context()) == 1.0
    assert soft_score(a.repository.active(context().now), cand("c", x=2), context()) == 0.0
    b = agent("t", "teacher", block("b", "teacher", "soft", "action.x == 1", "avoid 0.4"))
    assert soft_score(b.repository.active(context().now), cand("c", x=1), context()) == pytest.approx(-0.4)
    # Inapplicable conditions contribute nothing.
    assert soft_score(b.repository.active(context().now), cand("c"), context()) == 0.0


def test_pipeline_order():
    src = (
        block("r", "teacher", "hard", "action.x == 1", "reject")
        + block("q", "teacher", "hard", "action.y == 1", "require(rigor)")
        + block("t", "teacher", "temporal", 'action.z == 1 && !progress.completed("u1")', "reject")
        + block("tq", "teacher", "temporal", 'action.w == 1 && !progress.completed("u1")', "require(review)")
        + block("s", "teacher", "soft", "action.x == 1", "prefer 1")
    )
    a = agent("t", "teacher", src)
    ctx = context()
    assert a.evaluate_candidate(cand("c", x=1, y=1, z=1), ctx).decision is Decision.REJECT
    v = a.evaluate_candidate(cand("c", y=1, z=1, w=1), ctx)
    assert v.decision is Decision.CONDITIONAL and v.conditions == ("review", "rigor")
    assert a.evaluate_candidate(cand("c", z=1), ctx).decision is Decision.REJECT
    assert a.evaluate_candidate(cand("c", z=1), context(completed_units=frozenset({"u1"}))).decision is Decision.APPROVE


def test_duplicate_candidates():
    with pytest.raises(DuplicateCandidateId):
        agent("s", "student", STUDENT).respond([cand("a"), cand("a")], context())


def test_permutation_invariance():
    a = agent("s", "student", STUDENT)
    cands = vignette_candidates()
    base = {v.candidate_id: v for v in a.evaluate_candidates(cands, context(), "k")}
    for perm in itertools.permutations(cands):
        assert {v.candidate_id: v for v in a.evaluate_candidates(list(perm), context(), "k")} == base


def test_local_log_digest_and_lines(tmp_path):
    log = LocalLog(tmp_path / "s.jsonl")
    a = agent("s", "student", STUDENT, log=log)
    entry = a.assess(cand("c1", practical=True), context(), "k")
    d = a.record_local(entry)
    assert d == hashlib.sha256(canonical_json(entry.content()).encode()).hexdigest()
    assert d == a.record_local(a.assess(cand("c1", practical=True), context(), "k"))
    assert d != a.assess(cand("c1", practical=False), context(), "k").digest
    lines = (tmp_path / "s.jsonl").read_text().splitlines()
    assert len(lines) == 2 and all(verify_local_log_line(x) for x in lines)
    assert not verify_local_log_line(lines[0].replace("c1", "c9"))
    assert log.resolve(entry.vote.justification_ref) == entry


def test_vote_round_trip_and_shape():
    v = agent("reg", "regulator", REGULATOR, 5).evaluate_candidate(vignette_candidates()[1], context(), "k")
    assert Vote.from_dict(v.to_dict()) == v
    assert set(v.to_dict()) == {
        "cycle_id", "candidate_id", "stakeholder_id", "role", "authority", "decision",
        "confidence", "justification_ref", "conditions", "triggered_categories",
    }
    assert v.justification_ref.startswith("j-") and len(v.justification_ref) == 26


def _fragments(s, n=12):
    return {s[i : i + n] for i in range(len(s) - n + 1)}


@settings(max_examples=100)
@given(st.lists(policies(), min_size=1, max_size=6, unique_by=lambda p: p.id), st.dictionaries(st.sampled_from("abcdxyz"), st.integers(0, 3)))
def test_vote_bytes_carry_no_policy_text(ps, attrs):
    a = agent("p", "parent")
    for i, p in enumerate(ps):
        try:
            a.repository.upsert(p, "r", context().now)
        except Exception:
            pass
    v = a.evaluate_candidate(cand("c", **attrs), context(), "cyc")
    blob = v.serialize().decode()
    for p in ps:
        secret = p.source_text + (format_condition(p.condition) if p.condition else "")
        assert not any(f in blob for f in _fragments(secret))
