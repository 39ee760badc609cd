import json
import shutil

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agl.cli import main
from agl.generators import make_fault_scenario
from agl.sim import ParseError, ValidationError, format_scenario, load_scenario, run, scenario_from_dict, shipped

VIGNETTE = shipped("vignette")


def raw(name="vignette"):
    return json.loads(shipped(name).read_text())


def test_load_vignette():
    sc = load_scenario(VIGNETTE)
    assert len(sc.stakeholders) == 4 and len(sc.turns) == 1 and len(sc.turns[0].candidates) == 3
    assert {s.role for s in sc.stakeholders} == {"student", "teacher", "parent", "regulator"}


def test_invalid_probability_rejected():
    d = raw()
    d["turns"][0]["choice"] = {"policy": "ignore", "p": 1.5}
    with pytest.raises(ValidationError):
        scenario_from_dict(d, VIGNETTE.parent)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("stakeholders"),
        lambda d: d["stakeholders"][0].update(role="teacher"),
        lambda d: d["turns"][0]["candidates"].append(d["turns"][0]["candidates"][0]),
        lambda d: d["turns"][0].update(faults={"nobody": {"unresponsive": True}}),
        lambda d: d.update(protocol={"kind": "plurality"}),
    ],
)
def test_validation_errors(mutate):
    d = raw()
    mutate(d)
    with pytest.raises(ValidationError):
        scenario_from_dict(d, VIGNETTE.parent)


def test_unparseable_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_scenario(p)


@pytest.mark.parametrize("name", ["vignette", "bias", "faults"])
def test_format_round_trip(name, tmp_path):
    sc = load_scenario(shipped(name))
    d = json.loads(format_scenario(sc))
    again = scenario_from_dict(d, shipped(name).parent)
    assert again == sc and format_scenario(again) == format_scenario(sc)


def test_vignette_run(tmp_path):
    rep = run(load_scenario(VIGNETTE), out_dir=tmp_path)
    (t,) = rep.turns
    assert t.recommended == "c3" and t.choice == "c3" and rep.verified
    for f in ("ledger.jsonl", "report.json", "report.txt"):
        assert (tmp_path / f).exists()
    assert sorted(p.name for p in (tmp_path / "locallogs").iterdir()) == [
        "parent.jsonl", "regulator.jsonl", "student.jsonl", "teacher.jsonl"]


def test_same_seed_is_byte_identical(tmp_path):
    sc = load_scenario(shipped("faults"))
    run(sc, 7, tmp_path / "a")
    run(sc, 7, tmp_path / "b")
    for f in ("ledger.jsonl", "report.json", "report.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seeds_differ():
    sc = load_scenario(shipped("faults"))
    a, b = run(sc, 1), run(sc, 2)
    assert [t.choice for t in a.turns] != [t.choice for t in b.turns]


def test_fault_scenario_reports_missing_voters():
    sc = load_scenario(shipped("faults"))
    rep = run(sc)
    for i, t in enumerate(rep.turns):
        faults = sc.turns[i].faults
        expect = sorted(
            sid for sid, f in faults.items()
            if f.unresponsive or (f.latency_ms is not None and f.latency_ms / 1000 > sc.config.get("max_deadline", 2.0))
        )
        assert t.missing_voters == expect
        assert t.elapsed_ms / 1000 <= sc.config["budget"]


@settings(max_examples=10)
@given(st.integers(3, 15), st.integers(0, 1000))
def test_generated_fault_scenarios_are_sound(turns, seed):
    sc = scenario_from_dict(make_fault_scenario(turns=turns, seed=seed), shipped("faults").parent)
    rep = run(sc)
    assert rep.verified and len(rep.turns) == turns
    assert all("parent" in t.missing_voters for t in rep.turns[1::2])


# --- CLI ---------------------------------------------------------------------------------------


def test_cli_run_verify_explain(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["run", str(VIGNETTE), "--out", str(out)]) == 0
    assert main(["verify", str(out / "ledger.jsonl")]) == 0
    capsys.readouterr()
    assert main(["explain", str(out / "ledger.jsonl"), "--cycle", "vignette-t0000", "--audience", "parent"]) == 0
    assert "regulator precedence on a hard constraint" in capsys.readouterr().out
    assert main(["explain", str(out / "ledger.jsonl"), "--cycle", "vignette-t0000", "--audience", "auditor"]) == 2


def test_cli_verify_tampered(tmp_path, capsys):
    out = tmp_path / "v"
    main(["run", str(VIGNETTE), "--out", str(out)])
    led = out / "ledger.jsonl"
    lines = led.read_text().splitlines()
    rec = json.loads(lines[2])
    rec["payload"]["tampered"] = True
    lines[2] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
    led.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify", str(led)]) == 1
    assert "seq 2" in capsys.readouterr().err


def test_cli_policy_check(tmp_path, capsys):
    assert main(["policy", "check", str(shipped("vignette").parent.parent / "policies" / "catalog.agl")]) == 0
    bad = tmp_path / "bad.agl"
    bad.write_text("policy x {\n  stakeholder: teacher\n}\n")
    assert main(["policy", "check", str(bad)]) == 2


def test_cli_usage_errors(tmp_path):
    assert main(["run", str(VIGNETTE), "--frobnicate"]) == 2
    assert main([]) == 2
    assert main(["scan", "missing.jsonl", "--kind", "drift"]) == 2


def test_cli_scan(tmp_path):
    out = tmp_path / "b"
    assert main(["run", str(shipped("bias60")), "--out", str(out)]) == 0
    led = str(out / "ledger.jsonl")
    assert main(["scan", led, "--kind", "bias", "--param", "group_key=ses", "--param", "category=abstract"]) == 1
    assert main(["scan", led, "--kind", "bias", "--param", "group_key=nothing", "--param", "category=abstract"]) == 2
    assert main(["scan", led, "--kind", "drift", "--param", "bogus"]) == 2
