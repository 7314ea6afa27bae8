"""Per-eigenvector discrimination on the anisotropic construction.

Prints, for each seed, the Mahalanobis and Euclidean AUROC, then the
per-component table for the first seed.
"""

import argparse

from ssd.experiments import mahalanobis_vs_euclid


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    print("seed\tauroc_mahalanobis\tauroc_euclid\tfpr95_mahalanobis\tfpr95_euclid")
    first = None
    for seed in range(args.seeds):
        res = mahalanobis_vs_euclid(seed)
        first = first or res
        print(f"{seed}\t{res.mahalanobis.auroc:.4f}\t{res.euclid.auroc:.4f}"
              f"\t{res.mahalanobis.fpr_at_tpr:.4f}\t{res.euclid.fpr_at_tpr:.4f}")
    print()
    print(first.report.to_tsv(), end="")


if __name__ == "__main__":
    main()
