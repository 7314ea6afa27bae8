"""Desk-scale experiments on synthetic features.

Each function builds a seeded construction, runs the detectors and
returns plain numbers, so the CLI, the scripts in ``scripts/`` and the
acceptance tests all exercise the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import detector as det
from .data import SynthSpec, generate
from .losses import JitterSpec, ToyEncoder, train_toy
from .metrics import EvalReport, evaluate_scores


# -- Mahalanobis vs euclidean -------------------------------------------------


def anisotropic_specs(seed: int = 0, n_train: int = 2000, n_test: int = 2000):
    """One high-variance direction; OOD shifted along three low-variance ones.

    d=16, covariance diag(100, 1, ..., 1), OOD mean displaced by 5 along
    each of the three smallest-eigenvalue directions.
    """
    var = [100.0] + [1.0] * 15
    train = SynthSpec("gmm", d=16, n=n_train, seed=seed * 1000 + 1, variances=var)
    test = SynthSpec("gmm", d=16, n=n_test, seed=seed * 1000 + 2, variances=var)
    ood = SynthSpec(
        "shifted-gmm", d=16, n=n_test, seed=seed * 1000 + 3, variances=var,
        shift=5.0, shift_dims=[13, 14, 15],
    )
    return train, test, ood


@dataclass
class MahalanobisVsEuclid:
    mahalanobis: EvalReport
    euclid: EvalReport
    report: det.EigenReport


def mahalanobis_vs_euclid(seed: int = 0) -> MahalanobisVsEuclid:
    # raw features: the construction is centred at the origin, where
    # row normalization would discard the radial structure being tested
    train, test, ood = (generate(s)[0] for s in anisotropic_specs(seed))
    model = det.fit(train, 1, seed, normalize=False)
    return MahalanobisVsEuclid(
        mahalanobis=evaluate_scores(det.ssd_scores(model, test), det.ssd_scores(model, ood)),
        euclid=evaluate_scores(det.euclid_scores(model, test), det.euclid_scores(model, ood)),
        report=det.eigen_discrimination_report(model, test, ood),
    )


# -- few-shot -----------------------------------------------------------------


def near_ood_specs(seed: int = 0, d: int = 64, n: int = 2000, k: int = 5, shift: float = 2.0):
    """In-distribution Gaussian plus a tighter, displaced OOD Gaussian.

    The in-distribution mean sits at ``(1, ..., 1)`` with variances falling
    linearly from 3 to 0.5. The OOD component has half those variances and
    is shifted by ``shift`` along the eight lowest-variance eigendirections.
    Returns specs for (train, in-test, ood-test, shots).
    """
    var = np.linspace(3.0, 0.5, d).tolist()
    mean = [[1.0] * d]
    base = dict(d=d, means=mean)
    ood = dict(d=d, means=mean, variances=[0.5 * v for v in var], shift=shift,
               shift_dims=list(range(d - 8, d)))
    return (
        SynthSpec("gmm", n=n, seed=seed * 1000 + 11, variances=var, **base),
        SynthSpec("gmm", n=n, seed=seed * 1000 + 12, variances=var, **base),
        SynthSpec("shifted-gmm", n=n, seed=seed * 1000 + 13, **ood),
        SynthSpec("shifted-gmm", n=k, seed=seed * 1000 + 14, **ood),
    )


@dataclass
class FewShotComparison:
    ssd: EvalReport
    ssd_k: EvalReport
    ssd_k_no_shrinkage: EvalReport
    shrinkage: float


def fewshot_comparison(
    seed: int = 0, k: int = 5, n_augment: int = 10, jitter_scale: float = 0.1, shift: float = 2.0
) -> FewShotComparison:
    train, test, ood, shots = (generate(s)[0] for s in near_ood_specs(seed, k=k, shift=shift))
    base = det.fit(train, 1, seed)
    shrunk = det.fewshot_fit(train, shots, n_augment, jitter_scale, seed, in_model=base)
    plain = det.fewshot_fit(
        train, shots, n_augment, jitter_scale, seed, in_model=base, shrinkage=False
    )
    return FewShotComparison(
        ssd=evaluate_scores(det.ssd_scores(base, test), det.ssd_scores(base, ood)),
        ssd_k=evaluate_scores(det.ssd_k_scores(shrunk, test), det.ssd_k_scores(shrunk, ood)),
        ssd_k_no_shrinkage=evaluate_scores(
            det.ssd_k_scores(plain, test), det.ssd_k_scores(plain, ood)
        ),
        shrinkage=shrunk.shrinkage,
    )


def sweep_augment(
    in_features, shots, in_test, ood_test, augments, jitter_scale=0.1, seed=0, tpr=0.95,
    normalize=True,
) -> list[tuple[int, EvalReport]]:
    base = det.fit(in_features, 1, seed, normalize=normalize)
    rows = []
    for n_aug in augments:
        fs = det.fewshot_fit(in_features, shots, n_aug, jitter_scale, seed, in_model=base)
        rows.append(
            (n_aug, evaluate_scores(det.ssd_k_scores(fs, in_test), det.ssd_k_scores(fs, ood_test), tpr))
        )
    return rows


def sweep_clusters(
    in_features, in_test, ood_test, cluster_counts, seed=0, tpr=0.95, normalize=True
) -> list[tuple[int, EvalReport]]:
    rows = []
    for m in cluster_counts:
        model = det.fit(in_features, m, seed, normalize=normalize)
        rows.append(
            (m, evaluate_scores(det.ssd_scores(model, in_test), det.ssd_scores(model, ood_test), tpr))
        )
    return rows


# -- toy contrastive training -------------------------------------------------


TOY_D = 8
TOY_P = 2
# first two dims carry the class signal and barely move between views;
# the other six are pure nuisance that the views scramble
TOY_JITTER = np.array([0.05, 0.05] + [3.0] * 6)


def toy_blobs(seed: int = 0, n_train: int = 128, n_test: int = 1000, separation: float = 2.0):
    """Two classes in d=8 that differ only along the first axis."""
    rng = np.random.default_rng(seed)

    def draw(n, center):
        z = rng.normal(size=(n, TOY_D))
        z[:, 0] += center
        return z

    return draw(n_train, separation), draw(n_test, separation), draw(n_test, -separation)


@dataclass
class ToyRun:
    losses: list[float]
    auroc_random: float
    auroc_trained: float
    encoder: ToyEncoder
    initial: ToyEncoder


def toy_training(
    seed: int = 0, steps: int = 300, lr: float = 1.0, temperature: float = 0.1
) -> ToyRun:
    """Train the toy encoder on class A and detect class B as OOD.

    SSD is fitted on encoded class-A training points and evaluated on
    held-out class A versus class B, before and after training.
    """
    train_a, test_a, test_b = toy_blobs(seed)
    initial = ToyEncoder.random(TOY_D, TOY_P, seed)
    result = train_toy(train_a, JitterSpec(TOY_JITTER), initial, steps, lr, seed,
                       temperature=temperature)

    def detection_auroc(enc: ToyEncoder) -> float:
        model = det.fit(enc.encode(train_a), 1, seed)
        return evaluate_scores(
            det.ssd_scores(model, enc.encode(test_a)), det.ssd_scores(model, enc.encode(test_b))
        ).auroc

    return ToyRun(
        losses=result.losses,
        auroc_random=detection_auroc(initial),
        auroc_trained=detection_auroc(result.encoder),
        encoder=result.encoder,
        initial=initial,
    )
