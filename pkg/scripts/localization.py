"""Train the cube-search agent on seeded phantoms and report held-out IoU per grade.

    python3 scripts/localization.py --seed 0 --episodes 900
"""
import argparse
import logging

import numpy as np

from collateral.experiments import run_localization


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=900)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--n-train", type=int, default=10, help="training phantoms per grade")
    p.add_argument("--n-test", type=int, default=10, help="held-out phantoms per grade")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    res = run_localization(args.seed, (args.n_train,) * 3, (args.n_test,) * 3, args.episodes, args.lr)
    print("grade,n,mean_iou,std_iou")
    for g, vals in res.ious.items():
        print(f"{g},{len(vals)},{np.mean(vals):.3f},{np.std(vals):.3f}")
    print(f"all,{sum(len(v) for v in res.ious.values())},{res.mean:.3f},")
    print(f"# training {res.train_seconds:.0f} s, total {res.total_seconds:.0f} s, "
          f"final training success rate {res.success_rate:.2f}")


if __name__ == "__main__":
    main()
