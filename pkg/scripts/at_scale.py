"""Full-size run on two Amazon rating CSVs (user,item,rating,timestamp).

    python3 scripts/at_scale.py Toys_and_Games.csv Automotive.csv --out at_scale

Ingests both files, keeps users with >= 5 ratings in each domain, trains
I-DARec with 90% of the ratings for training and checks target RMSE against
the reference value 2.0723 (+- 0.15). Expect several hours on one core.
"""

import argparse
import sys
from pathlib import Path

from darec.config import read_config_file, resolve
from darec.harness import format_report, run_experiment
from darec.ratings import align_domains, ingest_csv, save_aligned

REFERENCE, TOLERANCE = 2.0723, 0.15


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--config", help="INI file with tuned hyperparameters")
    p.add_argument("--out", default="at_scale")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = align_domains(ingest_csv(args.source), ingest_csv(args.target), min_ratings=5)
    save_aligned(data, out / "aligned.txt")

    cfg, _ = resolve(read_config_file(args.config) if args.config else {},
                     {"variant": "I", "train_frac": "0.9", "val_frac": "0.1"})
    report = run_experiment(cfg, data)
    text = format_report(report)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    ok = abs(report.rmse_target - REFERENCE) <= TOLERANCE
    print(f"target RMSE {report.rmse_target:.4f} vs {REFERENCE} +- {TOLERANCE}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
