"""Grading table on a seeded imbalanced phantom set: ROI vs RAW and cascaded vs direct.

    python3 scripts/pipeline_table.py --seed 0 --out results/
"""
import argparse
import logging
from pathlib import Path

from collateral.experiments import run_pipeline
from collateral.pipeline import report_csv, report_emit


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-class", default="20,5,5")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--scheme", default="HOG", help="feature scheme for the cascaded comparison")
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    n = tuple(int(v) for v in args.n_per_class.split(","))
    res = run_pipeline(args.seed, n, args.folds, args.scheme)
    print(report_csv(res.reports()), end="")
    csv_path, svg_path = report_emit(res.reports(), args.out)
    print(f"# wrote {csv_path} and {svg_path} in {res.seconds:.0f} s")


if __name__ == "__main__":
    main()
