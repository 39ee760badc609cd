"""Small builders shared by tests."""
from datetime import datetime

from agl.policy import parse_policy_source
from agl.stakeholder import CandidateAction, EvaluationContext, StakeholderAgent

NOW = datetime(2025, 9, 8, 10, 0)


def agent(sid, role, source="", authority=1, **kw):
    a = StakeholderAgent(sid, role, authority, **kw)
    a.repository.load(parse_policy_source(source), NOW, "initial load")
    return a


def cand(cid, category="abstract", **attrs):
    return CandidateAction(cid, cid.upper(), category, attrs)


def context(**kw):
    base = dict(now=NOW, completed_units=frozenset(), grade_level=9, groups={}, session={})
    base.update(kw)
    return EvaluationContext(**base)


def block(pid, role, category, when, then, text="", authority=1):
    when_line = f"  when: {when}\n" if when else ""
    return (
        f"policy {pid} {{\n  stakeholder: {role}\n  category: {category}\n  authority: {authority}\n"
        f"  valid: 2025-01-01 .. *\n{when_line}  then: {then}\n  text: \"{text}\"\n}}\n"
    )


def vignette(**agent_kw):
    """Fresh vignette agents, the single turn's candidates and its context."""
    from agl.sim import load_scenario, shipped

    sc = load_scenario(shipped("vignette"))
    agents = []
    for spec in sc.stakeholders:
        a = StakeholderAgent(spec.id, spec.role, spec.authority, **agent_kw)
        a.repository.load(sc.policies[spec.id], sc.start, "initial load")
        agents.append(a)
    ctx = EvaluationContext(
        now=sc.start,
        completed_units=frozenset(sc.learner.get("completed_units", ())),
        grade_level=sc.learner.get("grade_level"),
        groups=dict(sc.learner.get("groups", {})),
        session=dict(sc.session),
    )
    return agents, list(sc.turns[0].candidates), ctx
