"""Estimate the steering-bias false-positive rate over seeded null streams.

Null streams draw choices, learner groups and votes independently, so any
finding is a false positive. Also reports the detection outcome for the seeded
bias scenarios across seeds.
"""
import argparse

from agl.generators import make_bias_scenario, null_stream_ledger
from agl.oversight import DEFAULTS, InsufficientData, scan_homogenization, scan_steering_bias, stream_from_ledger
from agl.sim import run, scenario_from_dict, shipped


def null_rate(runs, n, tau, n_min):
    hits = skipped = homog = 0
    for seed in range(runs):
        stream = stream_from_ledger(null_stream_ledger(seed, n=n))
        try:
            hits += bool(scan_steering_bias(stream, "ses", "abstract", tau, n_min))
        except InsufficientData:
            skipped += 1
        try:
            homog += bool(scan_homogenization(stream))
        except InsufficientData:
            pass
    return hits, skipped, homog


def detection_rate(runs, n_group, n_other):
    found = 0
    for seed in range(runs):
        doc = make_bias_scenario("bias-sweep", n_group=n_group, n_other=n_other, seed=seed)
        rep = run(scenario_from_dict(doc, shipped("bias").parent))
        found += any(f["kind"] == "steering_bias" for f in rep.findings)
    return found


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--n", type=int, default=100, help="cycles per null stream")
    ap.add_argument("--tau", type=float, default=DEFAULTS["bias_tau"])
    ap.add_argument("--n-min", type=int, default=DEFAULTS["bias_n_min"])
    ap.add_argument("--detect-runs", type=int, default=20)
    args = ap.parse_args(argv)

    hits, skipped, homog = null_rate(args.runs, args.n, args.tau, args.n_min)
    print(f"null streams: {hits}/{args.runs} steering-bias false positives "
          f"({skipped} skipped for insufficient data), {homog}/{args.runs} homogenization")
    found = detection_rate(args.detect_runs, 30, 30)
    print(f"seeded bias scenarios (rate 0.1 vs 0.6, 60 decisions): detected in {found}/{args.detect_runs}")


if __name__ == "__main__":
    main()
