"""Regenerate the synthetic scenarios shipped under src/agl/data/scenarios."""
import argparse
import json
from pathlib import Path

from agl.generators import make_bias_scenario, make_fault_scenario

OUT = Path(__file__).resolve().parents[1] / "src" / "agl" / "data" / "scenarios"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args(argv)
    docs = {
        "bias": make_bias_scenario("bias", n_group=20, n_other=10),
        "bias60": make_bias_scenario("bias60", n_group=30, n_other=30),
        "faults": make_fault_scenario(),
    }
    for name, doc in docs.items():
        path = args.out / f"{name}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {path} ({len(doc['turns'])} turns)")


if __name__ == "__main__":
    main()
