"""AUROC as a function of the number of k-means clusters.

In-distribution data is a well-separated Gaussian mixture; OOD sits at
the mixture's overall mean, an empty region between the components that
a single Gaussian considers typical.
"""

import argparse

from ssd.data import SynthSpec, generate
from ssd.experiments import sweep_clusters


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--components", type=int, default=4)
    parser.add_argument("--d", type=int, default=16)
    parser.add_argument("--spread", type=float, default=8.0)
    parser.add_argument("--clusters", default="1,2,4,8,16")
    args = parser.parse_args()

    common = dict(d=args.d, components=args.components, spread=args.spread)
    train = generate(SynthSpec("gmm", n=4000, seed=args.seed * 1000 + 1, **common))[0]
    test = generate(SynthSpec("gmm", n=2000, seed=args.seed * 1000 + 2, **common))[0]
    center = [train.mean(axis=0).tolist()]
    ood = generate(SynthSpec("gmm", d=args.d, n=2000, seed=args.seed * 1000 + 3, means=center))[0]

    print("clusters\tauroc\taupr\tfpr95")
    counts = [int(v) for v in args.clusters.split(",")]
    for m, rep in sweep_clusters(train, test, ood, counts, args.seed, normalize=False):
        print(f"{m}\t{rep.auroc:.4f}\t{rep.aupr:.4f}\t{rep.fpr_at_tpr:.4f}")


if __name__ == "__main__":
    main()
