import hashlib
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agl.ledger import (
    DISCLOSABLE,
    GENESIS,
    Ledger,
    LedgerRecord,
    PolicyMeta,
    RecordKind,
    ScreeningRule,
    StorageFailure,
    UnknownAudience,
    explain,
    screen_cycle,
    verify_file,
    verify_lines,
)
from agl.policy import parse_policy_source
from helpers import block


def fill(ledger, n):
    for i in range(n):
        ledger.append(RecordKind.CYCLE_COMPLETED, {"i": i, "text": f"cycle {i}"}, cycle_id=f"c{i}", local_digests={"a": "0" * 64})


def test_genesis_and_recompute():
    led = Ledger()
    r0 = led.append(RecordKind.FLAG, {"x": 1})
    assert r0.seq == 0 and r0.prev_hash == GENESIS
    r1 = led.append(RecordKind.FLAG, {"x": 1})
    assert r1.this_hash != r0.this_hash and r1.prev_hash == r0.this_hash
    pre = {"seq": 1, "kind": "Flag", "cycle_id": None, "payload": {"x": 1}, "local_digests": {}, "prev_hash": r0.this_hash}
    expected = hashlib.sha256(json.dumps(pre, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    assert r1.this_hash == expected


def test_empty_ledger_verifies(tmp_path):
    assert Ledger().verify()
    (tmp_path / "l.jsonl").write_text("")
    assert verify_file(tmp_path / "l.jsonl")


def test_file_round_trip_and_tamper(tmp_path):
    path = tmp_path / "l.jsonl"
    led = Ledger(path)
    fill(led, 20)
    assert verify_file(path) and Ledger.open(path).records() == led.records()
    lines = path.read_bytes().split(b"\n")
    lines[7] = lines[7].replace(b"cycle 7", b"cycle 8")
    path.write_bytes(b"\n".join(lines))
    assert verify_file(path).broken_seq == 7


def test_truncation_and_reorder():
    led = Ledger()
    fill(led, 5)
    lines = [r.line() for r in led.records()]
    assert verify_lines(lines[:3])
    assert verify_lines(lines[:2] + lines[3:]).broken_seq == 2
    assert verify_lines([lines[1], lines[0]] + lines[2:]).broken_seq == 0


@settings(max_examples=30)
@given(st.integers(0, 29), st.data())
def test_single_bit_flip_detected_at_seq(target, data):
    led = Ledger()
    fill(led, 30)
    lines = [bytearray(r.line().encode()) for r in led.records()]
    pos = data.draw(st.integers(0, len(lines[target]) * 8 - 1))
    lines[target][pos // 8] ^= 1 << (pos % 8)
    assert verify_lines(bytes(x) for x in lines).broken_seq == target


def test_storage_failure_leaves_ledger_unchanged():
    led = Ledger()
    fill(led, 2)

    def boom(_line):
        raise OSError("disk full")

    led._write_hook = boom
    with pytest.raises(StorageFailure):
        led.append(RecordKind.BYPASS, {"x": 1})
    assert len(led) == 2 and led.verify()
    led._write_hook = None
    assert led.append(RecordKind.BYPASS, {"x": 1}).seq == 2


def test_query():
    led = Ledger()
    fill(led, 3)
    led.append(RecordKind.FLAG, {"y": 1}, cycle_id="c1")
    assert [r.seq for r in led.query(RecordKind.FLAG)] == [3]
    assert [r.seq for r in led.query(cycle_id="c1")] == [1, 3]
    assert led.cycle_record("c2").seq == 2 and led.cycle_record("zz") is None


def _cycle(led, roles=("parent", "regulator")):
    payload = {
        "candidates": [{"id": "c1", "label": "Proofs"}, {"id": "c2", "label": "Trades"}],
        "votes": [
            {"stakeholder_id": "p", "role": "parent", "candidate_id": "c1", "decision": "approve", "conditions": []},
            {"stakeholder_id": "p", "role": "parent", "candidate_id": "c2", "decision": "conditional", "conditions": ["equity_review"]},
            {"stakeholder_id": "r", "role": "regulator", "candidate_id": "c1", "decision": "approve", "conditions": []},
            {"stakeholder_id": "r", "role": "regulator", "candidate_id": "c2", "decision": "reject", "conditions": []},
        ],
        "roles": list(roles),
        "assessment": {
            "recommended": "c1",
            "candidates": [
                {"candidate_id": "c1", "status": "recommended", "prevailing_role": None, "prevailing_category": None},
                {"candidate_id": "c2", "status": "disqualified", "prevailing_role": "regulator", "prevailing_category": "hard"},
            ],
        },
        "final_choice": "c1",
    }
    return led.append(RecordKind.CYCLE_COMPLETED, payload, cycle_id="k1", local_digests={"p": "1" * 64, "r": "2" * 64})


def test_explanations():
    led = Ledger()
    rec = _cycle(led)
    e = explain(led, rec, "parent")
    assert "Your vote on the selected option was followed." in e.text
    assert "Prevailing rule: regulator precedence on a hard constraint disqualified c2 (Trades)." in e.text
    assert "equity_review" in e.text and "was respected" in e.text
    assert set(e.disclosed_fields) <= set(DISCLOSABLE)
    assert led.records()[-1].kind is RecordKind.EXPLANATION_ISSUED
    with pytest.raises(UnknownAudience):
        explain(led, rec, "student")


def test_screening_flags_deny_listed_paths():
    led = Ledger()
    rec = _cycle(led)
    src = block("income", "parent", "hard", "learner.household_income < 30000 && action.x == 1", "reject") + block(
        "fine", "parent", "hard", "action.y == 1", "reject"
    )
    view = {"p": [PolicyMeta.of("p", p) for p in parse_policy_source(src)], "r": []}
    rule = ScreeningRule("protected", ("learner.household_income",))
    flags = screen_cycle(led, rec, [rule], view)
    assert len(flags) == 1
    assert flags[0].payload["policy_id"] == "income" and flags[0].payload["rule_id"] == "protected"
    assert screen_cycle(led, rec, [], view) == []


paths = st.sampled_from(["learner.ses", "learner.ses.band", "learner.sesame", "action.a", "context.b", "learner.race"])


@given(st.lists(st.lists(paths, max_size=4), max_size=5), st.lists(st.lists(paths, min_size=1, max_size=2), max_size=3))
def test_screening_matches_brute_force(policy_paths, deny_lists):
    led = Ledger()
    rec = _cycle(led)
    view = {"p": [PolicyMeta("p", f"q{i}", 1, tuple(sorted(set(ps)))) for i, ps in enumerate(policy_paths)]}
    rules = [ScreeningRule(f"r{j}", tuple(d)) for j, d in enumerate(deny_lists)]
    got = {(f.payload["policy_id"], f.payload["rule_id"]) for f in screen_cycle(led, rec, rules, view)}
    want = {
        (f"q{i}", f"r{j}")
        for i, ps in enumerate(policy_paths)
        for j, d in enumerate(deny_lists)
        if any(p == x or p.split(".")[: len(x.split("."))] == x.split(".") for p in ps for x in d)
    }
    assert got == want


def test_thousand_records_and_random_flips(tmp_path):
    led = Ledger()
    fill(led, 1000)
    lines = [r.line().encode() for r in led.records()]
    assert verify_lines(lines)
    rng = random.Random(5)
    for _ in range(20):
        seq = rng.randrange(1000)
        bad = bytearray(lines[seq])
        bit = rng.randrange(len(bad) * 8)
        bad[bit // 8] ^= 1 << (bit % 8)
        assert verify_lines(lines[:seq] + [bytes(bad)] + lines[seq + 1 :]).broken_seq == seq


def test_record_round_trip():
    led = Ledger()
    r = led.append(RecordKind.OVERRIDE, {"a": [1, 2]}, cycle_id="x")
    assert LedgerRecord.from_dict(json.loads(r.line())) == r
