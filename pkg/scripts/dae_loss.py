"""Train the denoising auto-encoder on ROI cubes of seeded phantoms and print the loss curve.

    python3 scripts/dae_loss.py --cubes 20 --epochs 10
"""
import argparse
import logging

from collateral.experiments import run_dae


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cubes", type=int, default=20)
    p.add_argument("--epochs", type=int, default=10)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    _, losses = run_dae(args.seed, args.cubes, args.epochs)
    print("epoch,mse")
    for i, v in enumerate(losses, 1):
        print(f"{i},{v:.6f}")


if __name__ == "__main__":
    main()
