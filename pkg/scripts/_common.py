import argparse
import json
import sys
from pathlib import Path

from qcbound.experiments import run_suite

ROOT = Path(__file__).resolve().parents[1]


def main(suite: str) -> int:
    parser = argparse.ArgumentParser(description=f"Run the {suite} experiment suite.")
    parser.add_argument("--config", default=str(ROOT / "configs" / f"{suite}.json"))
    parser.add_argument("--out-dir", default=str(ROOT / "results" / suite))
    parser.add_argument("--seeds", type=int, help="override: use seeds 0..N-1")
    parser.add_argument("--workers", type=int, help="override: worker processes")
    args = parser.parse_args()

    config = json.loads(Path(args.config).read_text())
    if args.seeds is not None:
        config["seeds"] = list(range(args.seeds))
    if args.workers is not None:
        config["workers"] = args.workers
    report = run_suite(suite, config)
    paths = report.write(args.out_dir)
    for row in report.summary:
        print(json.dumps(row))
    print(f"{suite}: {report.runtime_s:.1f} s, outputs in {Path(args.out_dir)}", file=sys.stderr)
    return 0 if paths else 1
