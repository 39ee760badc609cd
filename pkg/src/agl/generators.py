"""Seeded generators for synthetic scenarios and decision streams."""
from __future__ import annotations

import random
from datetime import datetime, timedelta
from typing import Any

from .ledger import Ledger, RecordKind

_VIGNETTE_AGENTS = [
    {"id": "student", "role": "student", "authority": 1, "policy_files": ["../policies/vignette/student.agl"]},
    {"id": "teacher", "role": "teacher", "authority": 3, "policy_files": ["../policies/vignette/teacher.agl"]},
    {"id": "parent", "role": "parent", "authority": 2, "policy_files": ["../policies/vignette/parent.agl"]},
    {"id": "regulator", "role": "regulator", "authority": 5, "policy_files": ["../policies/vignette/regulator.agl"]},
]

_LESSONS = [
    {"id": "c1", "label": "Abstract proofs", "content_category": "abstract",
     "attributes": {"abstract": True, "hands_on": False, "practical": False, "tracking_risk": False, "track": "academic"}},
    {"id": "c2", "label": "Applied measurement project", "content_category": "applied",
     "attributes": {"abstract": False, "hands_on": True, "practical": True, "tracking_risk": False, "track": "academic"}},
    {"id": "c3", "label": "Art-integrated design", "content_category": "art_integrated",
     "attributes": {"abstract": False, "hands_on": True, "practical": True, "tracking_risk": False, "track": "academic"}},
]


def _choices(rng: random.Random, n: int, rate: float) -> list[str]:
    k = round(n * rate)
    picks = ["c1"] * k + [rng.choice(["c2", "c3"]) for _ in range(n - k)]
    rng.shuffle(picks)
    return picks


def make_bias_scenario(
    name: str = "bias",
    n_group: int = 20,
    n_other: int = 10,
    group_rate: float = 0.1,
    other_rate: float = 0.6,
    seed: int = 7,
    group_key: str = "ses",
    group_value: str = "low_income",
    other_value: str = "other",
) -> dict[str, Any]:
    """A scenario where one learner group is steered away from abstract lessons.

    The host ignores the advisory output and picks the abstract lesson for
    exactly ``round(n * rate)`` turns of each group; the order is shuffled.
    """
    rng = random.Random(f"{name}:{seed}")
    group = [(group_value, c) for c in _choices(rng, n_group, group_rate)]
    other = [(other_value, c) for c in _choices(rng, n_other, other_rate)]
    plan = group + other
    rng.shuffle(plan)
    turns = [
        {
            "candidates": _LESSONS,
            "context": {"groups": {group_key: g}},
            "choice": {"policy": "fixed", "candidate": c},
        }
        for g, c in plan
    ]
    return {
        "name": name,
        "seed": seed,
        "start": "2025-09-01T09:00:00",
        "turn_interval_hours": 24,
        "protocol": {"kind": "hierarchical"},
        "stakeholders": _VIGNETTE_AGENTS,
        "learner": {"grade_level": 9, "completed_units": [], "groups": {}},
        "session": {"subject": "geometry"},
        "acks": {"p": 0.9, "delay_hours": 2},
        "schedule": [
            {"name": "onDailyAudit", "interval_hours": 24},
            {"name": "onWeeklyFatigueCheck", "interval_hours": 168},
            {"name": "onMonthlyDriftScan", "interval_hours": 720},
        ],
        "oversight": {"bias_group_key": group_key, "bias_category": "abstract", "drift_n_min": 10},
        "turns": turns,
    }


def make_fault_scenario(name: str = "faults", turns: int = 12, seed: int = 3) -> dict[str, Any]:
    """Vignette agents under injected faults: one agent drops out on alternate turns."""
    out = []
    for i in range(turns):
        turn: dict[str, Any] = {"candidates": _LESSONS, "choice": {"policy": "ignore", "p": 0.25}}
        if i % 2:
            turn["faults"] = {"parent": {"unresponsive": True}}
        if i % 3 == 2:
            turn.setdefault("faults", {})["teacher"] = {"latency_ms": 5000}
        out.append(turn)
    return {
        "name": name,
        "seed": seed,
        "start": "2025-10-06T08:00:00",
        "turn_interval_hours": 12,
        "protocol": {"kind": "hierarchical"},
        "stakeholders": _VIGNETTE_AGENTS,
        "learner": {"grade_level": 9, "completed_units": [], "groups": {"ses": "low_income"}},
        "config": {"budget": 2.0, "max_deadline": 1.0},
        "acks": {"p": 0.3, "delay_hours": 60},
        "schedule": [
            {"name": "onDailyAudit", "interval_hours": 24},
            {"name": "onWeeklyFatigueCheck", "interval_hours": 72},
        ],
        "turns": out,
    }


def null_stream_ledger(
    seed: int,
    n: int = 60,
    categories: tuple[str, ...] = ("abstract", "applied", "art_integrated"),
    group_key: str = "ses",
    groups: tuple[str, ...] = ("low_income", "other"),
    agents: tuple[str, ...] = ("a1", "a2", "a3", "a4"),
) -> Ledger:
    """A ledger of ``n`` cycles where choices, groups and votes are independent draws."""
    rng = random.Random(f"null:{seed}")
    ledger = Ledger()
    t0 = datetime(2025, 1, 1, 9)
    decisions = ("approve", "conditional", "reject")
    for i in range(n):
        cands = [{"id": f"c{j}", "content_category": c} for j, c in enumerate(categories)]
        chosen = rng.choice(cands)["id"]
        votes = [
            {"stakeholder_id": a, "candidate_id": c["id"], "decision": rng.choice(decisions)}
            for a in agents
            for c in cands
        ]
        ledger.append(
            RecordKind.CYCLE_COMPLETED,
            {
                "timestamp": (t0 + timedelta(hours=i)).isoformat(),
                "candidates": cands,
                "final_choice": chosen,
                "context": {"groups": {group_key: rng.choice(groups)}},
                "votes": votes,
            },
            cycle_id=f"n{i:04d}",
        )
    return ledger
