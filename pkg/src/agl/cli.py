"""Command-line entry point: ``agl run | verify | scan | explain | policy check``.

Exit codes: 0 success, 1 governance finding or broken chain, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime
from pathlib import Path

from . import oversight as so
from .ledger import LedgerRecord, RecordKind, UnknownAudience, render_explanation, verify_file
from .policy import Category, PolicyError, parse_policy_source
from .policy.repository import PrecedenceCycle, check_acyclic, precedence_pairs
from .sim import ParseError, TurnError, ValidationError, load_scenario, run

SCAN_KINDS = ("drift", "fatigue", "bias", "collusion")


class UsageError(Exception):
    pass


def _params(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects k=v, got {item!r}")
        out[key] = value
    return out


def _float(params, key, default):
    try:
        return float(params.pop(key)) if key in params else default
    except ValueError:
        raise UsageError(f"{key} must be a number") from None


def _int(params, key, default):
    try:
        return int(params.pop(key)) if key in params else default
    except ValueError:
        raise UsageError(f"{key} must be an integer") from None


def _time(params, key, default):
    try:
        return datetime.fromisoformat(params.pop(key)) if key in params else default
    except ValueError:
        raise UsageError(f"{key} must be an ISO-8601 timestamp") from None


def _read_records(path: str) -> list[LedgerRecord]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such ledger: {path}")
    result = verify_file(p)
    if not result:
        raise so.BrokenLedger(f"ledger broken at seq {result.broken_seq}")
    return [LedgerRecord.from_dict(json.loads(line)) for line in p.read_text(encoding="ascii").splitlines()]


def scan(stream: so.DecisionStream, kind: str, params: dict[str, str]) -> list[so.OversightFinding]:
    span = stream.span()
    if span is None:
        raise so.InsufficientData("the ledger holds no decisions")
    if kind == "drift":
        mid = span.start + (span.end - span.start) / 2
        a = so.Window(_time(params, "a_start", span.start), _time(params, "a_end", mid))
        b = so.Window(_time(params, "b_start", mid), _time(params, "b_end", span.end))
        tau = _float(params, "tau", so.DEFAULTS["drift_tau"])
        n_min = _int(params, "n_min", so.DEFAULTS["drift_n_min"])
        _no_extra(params)
        f = so.scan_drift(stream, a, b, tau, n_min)
        return [f] if f else []
    if kind == "fatigue":
        w = so.Window(_time(params, "start", span.start), _time(params, "end", span.end))
        tau = _float(params, "tau", so.DEFAULTS["fatigue_tau"])
        _no_extra(params)
        f = so.scan_fatigue(stream, w, tau)
        return [f] if f else []
    if kind == "bias":
        if "group_key" not in params or "category" not in params:
            raise UsageError("bias scan needs --param group_key=K --param category=C")
        key, cat = params.pop("group_key"), params.pop("category")
        tau = _float(params, "tau", so.DEFAULTS["bias_tau"])
        n_min = _int(params, "n_min", so.DEFAULTS["bias_n_min"])
        _no_extra(params)
        return so.scan_steering_bias(stream, key, cat, tau, n_min)
    tau = _float(params, "tau", so.DEFAULTS["homogenization_tau"])
    n_min = _int(params, "n_min", so.DEFAULTS["homogenization_n_min"])
    _no_extra(params)
    return so.scan_homogenization(stream, tau, n_min)


def _no_extra(params):
    if params:
        raise UsageError(f"unknown parameters: {', '.join(sorted(params))}")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out) if args.out else Path("runs") / scenario.name
    report = run(scenario, args.seed, out, protocol=args.protocol)
    sys.stdout.write(report.to_text())
    print(f"\nwrote {out}/ledger.jsonl, {out}/report.json, {out}/report.txt")
    return 0


def cmd_verify(args) -> int:
    if not Path(args.ledger).exists():
        raise UsageError(f"no such ledger: {args.ledger}")
    result = verify_file(args.ledger)
    if result:
        print(f"ok: {args.ledger} verifies")
        return 0
    print(f"broken: chain fails at seq {result.broken_seq}", file=sys.stderr)
    print(result.broken_seq)
    return 1


def cmd_scan(args) -> int:
    try:
        records = _read_records(args.ledger)
    except so.BrokenLedger as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    findings = scan(so.summarize(records), args.kind, _params(args.param))
    sys.stdout.write(so.render_text(findings, f"{args.kind} scan"))
    return 1 if findings else 0


def cmd_explain(args) -> int:
    try:
        records = _read_records(args.ledger)
    except so.BrokenLedger as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    found = [r for r in records if r.kind is RecordKind.CYCLE_COMPLETED and r.cycle_id == args.cycle]
    if not found:
        raise UsageError(f"no completed cycle {args.cycle!r} in {args.ledger}")
    print(render_explanation(found[-1].payload, args.cycle, args.audience).text)
    return 0


def cmd_policy_check(args) -> int:
    path = Path(args.file)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    policies = parse_policy_source(text)
    by_owner: dict[str, list] = {}
    for p in policies:
        if p.category is Category.HIERARCHICAL:
            by_owner.setdefault(p.owner_id, []).append(p)
    for group in by_owner.values():
        check_acyclic(precedence_pairs(group))
    for p in policies:
        print(f"{p.id} v{p.version}: {p.category.value} {p.owner_role}/{p.owner_id} authority {p.authority}")
    print(f"ok: {len(policies)} policies in {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agl", description="Advisory governance layer simulator and audit tools.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write ledger and report")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--protocol", choices=("hierarchical", "weighted", "consensus"))
    p.add_argument("--out", help="output directory (default runs/<scenario name>)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="verify a ledger's hash chain")
    p.add_argument("ledger")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("scan", help="run one oversight scan over a ledger")
    p.add_argument("ledger")
    p.add_argument("--kind", required=True, choices=SCAN_KINDS)
    p.add_argument("--param", action="append", default=[], metavar="K=V")
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("explain", help="render an audience explanation for a cycle")
    p.add_argument("ledger")
    p.add_argument("--cycle", required=True)
    p.add_argument("--audience", required=True)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("policy", help="policy file tools")
    psub = p.add_subparsers(dest="policy_command", required=True)
    c = psub.add_parser("check", help="parse and validate a policy file")
    c.add_argument("file")
    c.set_defaults(fn=cmd_policy_check)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (UsageError, ParseError, ValidationError, PolicyError, PrecedenceCycle, UnknownAudience, so.InsufficientData) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TurnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
