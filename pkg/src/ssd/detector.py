"""Cluster-conditioned Mahalanobis outlier detection.

A :class:`DetectorModel` holds one Gaussian per k-means cluster of the
in-distribution features; the outlier score of a point is its smallest
squared Mahalanobis distance to any cluster. :class:`FewShotModel` adds a
shrunk Gaussian fitted on a handful of known outliers and subtracts the
distance to it.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .clustering import kmeans_fit
from .metrics import LabeledScores, auroc


@dataclass(frozen=True)
class ClusterGaussian:
    mu: np.ndarray
    chol: np.ndarray
    eigen: nx.SymmetricEigen
    weight: float

    @classmethod
    def from_moments(cls, mu, cov, weight: float = 1.0) -> "ClusterGaussian":
        """Build from a mean and covariance, regularizing the latter if needed."""
        sigma = nx.regularize_spd(np.asarray(cov, dtype=np.float64))
        return cls(
            mu=np.asarray(mu, dtype=np.float64).copy(),
            chol=nx.cholesky(sigma),
            eigen=nx.eig_sym(sigma),
            weight=float(weight),
        )

    @property
    def covariance(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def mahalanobis(self, z: np.ndarray) -> np.ndarray:
        return nx.mahalanobis_sq(self.chol, z - self.mu)


@dataclass(frozen=True)
class DetectorModel:
    clusters: list[ClusterGaussian]
    d: int
    normalization: bool = True
    fit_seed: int = 0
    source_hash: str = ""

    def __post_init__(self):
        if not self.clusters:
            raise ValueError("a detector needs at least one cluster")
        for c in self.clusters:
            if c.mu.shape != (self.d,):
                raise ValueError(f"cluster mean has shape {c.mu.shape}, expected ({self.d},)")

    @property
    def m(self) -> int:
        return len(self.clusters)

    def prepare(self, z) -> np.ndarray:
        """Validate dimension and apply the model's feature normalization."""
        x = np.asarray(z, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.d:
            got = x.shape[-1] if x.ndim else 0
            raise ValueError(f"dimension mismatch: model expects d={self.d}, got d={got}")
        if self.normalization:
            x, _ = nx.l2_normalize_rows(x)
        return x


def features_digest(x: np.ndarray) -> str:
    x = np.ascontiguousarray(x, dtype="<f8")
    h = hashlib.sha256()
    h.update(np.asarray(x.shape, dtype="<u8").tobytes())
    h.update(x.tobytes())
    return h.hexdigest()


def fit(features, m: int = 1, seed: int = 0, *, normalize: bool = True) -> DetectorModel:
    """Fit one Gaussian per k-means cluster of the training features."""
    x = nx.as_matrix(features, "features")
    if x.shape[0] == 0:
        raise ValueError("no samples")
    digest = features_digest(x)
    if normalize:
        x, _ = nx.l2_normalize_rows(x)
    if m == 1:
        labels = np.zeros(x.shape[0], dtype=np.int64)
    else:
        labels = kmeans_fit(x, m, seed).assignments
    clusters = []
    for j in range(m):
        members = x[labels == j]
        est = nx.sample_mean_cov(members)
        clusters.append(
            ClusterGaussian.from_moments(est.mean, est.covariance, members.shape[0] / x.shape[0])
        )
    return DetectorModel(clusters, x.shape[1], normalize, seed, digest)


def _thread_cap() -> int:
    raw = os.environ.get("SSD_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_rows(fn, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    # chunks are scored independently, so the result does not depend on thread count
    pieces = [x[i : i + chunk] for i in range(0, x.shape[0], chunk)] or [x]
    threads = _thread_cap()
    if threads == 1 or len(pieces) == 1:
        return np.concatenate([fn(p) for p in pieces])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(fn, pieces)))


def cluster_distances(model: DetectorModel, z) -> np.ndarray:
    """``n x m`` matrix of squared Mahalanobis distances to each cluster."""
    x = model.prepare(z)
    return _map_rows(lambda b: np.stack([c.mahalanobis(b) for c in model.clusters], axis=1), x)


def ssd_scores(model: DetectorModel, z) -> np.ndarray:
    return cluster_distances(model, z).min(axis=1)


def ssd_score(model: DetectorModel, z, *, return_cluster: bool = False):
    """Outlier score of a single point: min over clusters of Mahalanobis distance.

    With ``return_cluster`` the index of the closest cluster is returned
    too (lowest index on ties).
    """
    dists = cluster_distances(model, np.asarray(z, dtype=np.float64).reshape(1, -1))[0]
    j = int(np.argmin(dists))
    return (float(dists[j]), j) if return_cluster else float(dists[j])


def euclid_scores(model: DetectorModel, z) -> np.ndarray:
    x = model.prepare(z)

    def block(b):
        # same reduction order as mahalanobis_sq, so Sigma = I agrees bit for bit
        per = []
        for c in model.clusters:
            diff = (b - c.mu).T
            per.append(np.sum(diff * diff, axis=0))
        return np.stack(per, axis=1).min(axis=1)

    return _map_rows(block, x)


def euclid_score(model: DetectorModel, z) -> float:
    return float(euclid_scores(model, np.asarray(z, dtype=np.float64).reshape(1, -1))[0])


def eigen_scores(model: DetectorModel, z) -> np.ndarray:
    """Same quantity as :func:`ssd_scores`, computed in each covariance eigenbasis."""
    x = model.prepare(z)
    per_cluster = []
    for c in model.clusters:
        proj = (x - c.mu) @ c.eigen.eigenvectors
        per_cluster.append(np.sum(proj**2 / c.eigen.eigenvalues, axis=1))
    return np.min(np.stack(per_cluster, axis=1), axis=1)


# -- few-shot -----------------------------------------------------------------


@dataclass(frozen=True)
class FewShotModel:
    in_model: DetectorModel
    ood_mean: np.ndarray
    ood_chol: np.ndarray
    k: int
    n_augment: int
    shrinkage: float = 0.0

    def __post_init__(self):
        if self.in_model.m != 1:
            raise ValueError("few-shot in-distribution model must have a single cluster")


def amplify_shots(shots: np.ndarray, n_augment: int, jitter_std: np.ndarray, rng) -> np.ndarray:
    """Each shot followed by ``n_augment - 1`` Gaussian-jittered copies."""
    k, d = shots.shape
    out = np.repeat(shots, n_augment, axis=0)
    if n_augment > 1:
        noise = rng.normal(size=(k, n_augment - 1, d)) * jitter_std
        out.reshape(k, n_augment, d)[:, 1:, :] += noise
    return out


def fewshot_fit(
    in_features,
    ood_shots,
    n_augment: int = 10,
    jitter_scale: float = 0.1,
    seed: int = 0,
    *,
    normalize: bool = True,
    shrinkage: bool = True,
    in_model: DetectorModel | None = None,
) -> FewShotModel:
    """Fit in-distribution and few-shot OOD statistics.

    The ``k`` OOD shots are amplified to ``k * n_augment`` rows by feature
    jitter whose per-dimension std is ``jitter_scale`` times that of the
    in-distribution features. The OOD covariance is the Ledoit-Wolf
    estimate of the amplified set, or the plain sample covariance when
    ``shrinkage`` is off; both get the usual positive-definite floor.
    A pre-fitted single-cluster ``in_model`` may be passed to skip refitting.
    """
    x_in = nx.as_matrix(in_features, "in_features")
    shots = nx.as_matrix(ood_shots, "ood_shots")
    if shots.shape[0] == 0:
        raise ValueError("few-shot detection needs at least one OOD shot (k >= 1)")
    if n_augment < 1:
        raise ValueError(f"n_augment must be >= 1, got {n_augment}")
    if shots.shape[1] != x_in.shape[1]:
        raise ValueError(
            f"dimension mismatch: in-features d={x_in.shape[1]}, shots d={shots.shape[1]}"
        )
    if in_model is None:
        in_model = fit(x_in, 1, seed, normalize=normalize)
    normalize = in_model.normalization
    if normalize:
        x_in, _ = nx.l2_normalize_rows(x_in)
        shots, _ = nx.l2_normalize_rows(shots)
    rng = np.random.default_rng(seed)
    u = amplify_shots(shots, n_augment, jitter_scale * x_in.std(axis=0), rng)
    if normalize and n_augment > 1:
        u, _ = nx.l2_normalize_rows(u)
    est = nx.ledoit_wolf(u) if shrinkage else nx.sample_mean_cov(u)
    s_u = nx.regularize_spd(est.covariance)
    return FewShotModel(
        in_model=in_model,
        ood_mean=est.mean,
        ood_chol=nx.cholesky(s_u),
        k=shots.shape[0],
        n_augment=n_augment,
        shrinkage=est.shrinkage_intensity,
    )


def ssd_k_scores(model: FewShotModel, z) -> np.ndarray:
    x = model.in_model.prepare(z)
    g = model.in_model.clusters[0]
    return _map_rows(
        lambda b: g.mahalanobis(b) - nx.mahalanobis_sq(model.ood_chol, b - model.ood_mean), x
    )


def ssd_k_score(model: FewShotModel, z) -> float:
    return float(ssd_k_scores(model, np.asarray(z, dtype=np.float64).reshape(1, -1))[0])


# -- calibration --------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    threshold: float
    target_tpr: float
    cal_count: int


def calibrate(cal_scores, target_tpr: float = 0.95) -> Calibration:
    """Threshold = the ceil(T * n)-th smallest calibration score.

    Combined with the strict ``score > threshold`` rule in :func:`classify`
    this accepts at least a fraction ``T`` of the calibration set.
    """
    s = np.sort(np.asarray(cal_scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("no calibration scores")
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError(f"target_tpr must be in (0, 1], got {target_tpr}")
    # rounding guards products like 0.95 * 20 landing a hair above 19
    k = max(1, math.ceil(round(target_tpr * s.size, 9)))
    return Calibration(float(s[k - 1]), float(target_tpr), int(s.size))


def classify(scores, cal: Calibration) -> np.ndarray:
    return np.asarray(scores, dtype=np.float64) > cal.threshold


# -- eigen analysis -----------------------------------------------------------


@dataclass
class EigenReport:
    eigenvalues: np.ndarray
    component_auroc: np.ndarray
    euclid_auroc: float
    mahalanobis_auroc: float
    max_identity_error: float = field(default=0.0)

    def to_tsv(self) -> str:
        lines = ["component\teigenvalue\tauroc"]
        for j, (lam, a) in enumerate(zip(self.eigenvalues, self.component_auroc)):
            lines.append(f"{j}\t{float(lam)!r}\t{float(a)!r}")
        lines.append(f"euclidean\t\t{float(self.euclid_auroc)!r}")
        lines.append(f"mahalanobis\t\t{float(self.mahalanobis_auroc)!r}")
        return "\n".join(lines) + "\n"


IDENTITY_RTOL = 1e-8


def _components(model: DetectorModel, z) -> np.ndarray:
    g = model.clusters[0]
    return ((model.prepare(z) - g.mu) @ g.eigen.eigenvectors) ** 2


def eigen_discrimination_report(model: DetectorModel, in_test, ood_test) -> EigenReport:
    """Per-eigenvector AUROC of in vs OOD, plus unscaled and scaled aggregates.

    Component ``j`` of a point is its squared projection on eigenvector
    ``q_j`` of the cluster covariance. Summing components gives squared
    euclidean distance; dividing each by its eigenvalue first gives the
    Mahalanobis score, which is checked against :func:`ssd_scores`.
    """
    if model.m != 1:
        raise ValueError(f"eigen report needs a single-cluster model, got m={model.m}")
    lam = model.clusters[0].eigen.eigenvalues
    c_in, c_ood = _components(model, in_test), _components(model, ood_test)
    per = np.array(
        [auroc(LabeledScores.from_split(c_in[:, j], c_ood[:, j])) for j in range(model.d)]
    )
    scaled_in, scaled_ood = (c_in / lam).sum(axis=1), (c_ood / lam).sum(axis=1)
    ref = np.concatenate([ssd_scores(model, in_test), ssd_scores(model, ood_test)])
    got = np.concatenate([scaled_in, scaled_ood])
    err = float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300), initial=0.0))
    if err > IDENTITY_RTOL:
        raise ArithmeticError(f"eigen-route and Cholesky-route scores disagree (rel {err:.2e})")
    return EigenReport(
        eigenvalues=lam.copy(),
        component_auroc=per,
        euclid_auroc=auroc(LabeledScores.from_split(c_in.sum(axis=1), c_ood.sum(axis=1))),
        mahalanobis_auroc=auroc(LabeledScores.from_split(scaled_in, scaled_ood)),
        max_identity_error=err,
    )
