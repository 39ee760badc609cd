"""Run the shipped vignette and print the assessment plus every audience explanation."""
import argparse
from pathlib import Path

from agl.ledger import RecordKind
from agl.sim import load_scenario, run, shipped


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--protocol", choices=("hierarchical", "weighted", "consensus"))
    ap.add_argument("--out", type=Path, default=None, help="optional output directory for ledger and report")
    args = ap.parse_args(argv)

    rep = run(load_scenario(shipped("vignette")), out_dir=args.out, protocol=args.protocol)
    (turn,) = rep.turns
    print(turn.assessment["justification"])
    print()
    for rec in rep.runtime.ledger.query(RecordKind.EXPLANATION_ISSUED):
        print(f"--- {rec.payload['audience']}")
        print(rec.payload["text"])
    print()
    print(f"ledger: {rep.ledger_records} records, verified={rep.verified}")


if __name__ == "__main__":
    main()
