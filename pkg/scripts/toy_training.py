"""Contrastive training of the linear toy encoder, before/after detection AUROC.

Class A trains the encoder and the detector; class B is scored as OOD.
"""

import argparse

from ssd.experiments import toy_training


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=6)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--lr", type=float, default=1.0)
    parser.add_argument("--tau", type=float, default=0.1)
    parser.add_argument("--trace", help="write the first seed's loss trace as CSV")
    args = parser.parse_args()

    print("seed\tauroc_random\tauroc_trained\tloss_first\tloss_last")
    for seed in range(args.seeds):
        run = toy_training(seed, args.steps, args.lr, args.tau)
        print(f"{seed}\t{run.auroc_random:.4f}\t{run.auroc_trained:.4f}"
              f"\t{run.losses[0]:.4f}\t{run.losses[-1]:.4f}")
        if seed == 0 and args.trace:
            with open(args.trace, "w") as fh:
                fh.write("step,loss\n")
                fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(run.losses))


if __name__ == "__main__":
    main()
