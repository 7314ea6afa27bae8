"""Detection metrics. OOD samples are the positive class throughout."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class LabeledScores:
    scores: np.ndarray
    is_ood: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.is_ood, dtype=bool).ravel()
        if s.shape != y.shape:
            raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "is_ood", y)

    @classmethod
    def from_split(cls, in_scores, ood_scores) -> "LabeledScores":
        s_in = np.asarray(in_scores, dtype=np.float64).ravel()
        s_ood = np.asarray(ood_scores, dtype=np.float64).ravel()
        return cls(
            np.concatenate([s_in, s_ood]),
            np.concatenate([np.zeros(s_in.size, bool), np.ones(s_ood.size, bool)]),
        )

    @property
    def n_ood(self) -> int:
        return int(self.is_ood.sum())

    @property
    def n_in(self) -> int:
        return int(self.is_ood.size - self.is_ood.sum())


def _require_both(data: LabeledScores) -> None:
    if data.n_ood == 0 or data.n_in == 0:
        raise ValueError("need at least one in-distribution and one OOD sample")


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], sorted_vals.size]
    avg = (starts + ends + 1) / 2.0  # 1-based average rank of each run
    ranks = np.empty(values.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auroc(data: LabeledScores) -> float:
    """Mann-Whitney estimate; each tied (ood, in) pair counts one half."""
    _require_both(data)
    ranks = _midranks(data.scores)
    n_pos, n_neg = data.n_ood, data.n_in
    u = ranks[data.is_ood].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(data: LabeledScores) -> float:
    """Step-wise area under precision-recall, sweeping scores downward.

    Tied scores enter the sweep together. Equivalent to average precision.
    """
    if data.n_ood == 0:
        raise ValueError("AUPR needs at least one OOD sample")
    order = np.argsort(-data.scores, kind="mergesort")
    s = data.scores[order]
    y = data.is_ood[order]
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(~y)[last_of_run]
    precision = tp / (tp + fp)
    recall = tp / data.n_ood
    gain = np.diff(np.r_[0.0, recall])
    return float(np.sum(gain * precision))


def fpr_at_tpr(data: LabeledScores, tpr: float = 0.95) -> float:
    """False-positive rate at the highest threshold reaching ``tpr``.

    A sample is flagged when its score is strictly above the threshold.
    The threshold sits just below the ceil(tpr * n_ood)-th largest OOD
    score, so every in-distribution score at or above that value counts
    as a false positive.
    """
    _require_both(data)
    if not 0.0 < tpr <= 1.0:
        raise ValueError(f"tpr must be in (0, 1], got {tpr}")
    ood = np.sort(data.scores[data.is_ood])[::-1]
    k = math.ceil(round(tpr * ood.size, 9))
    cut = ood[k - 1]
    in_scores = data.scores[~data.is_ood]
    return float(np.sum(in_scores >= cut) / in_scores.size)


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    aupr: float
    fpr_at_tpr: float
    tpr_target: float
    n_in: int
    n_ood: int

    def to_json(self) -> str:
        return json.dumps({"schema": "ssd-eval/1", **asdict(self)}, indent=2)

    TSV_HEADER = "auroc\taupr\tfpr_at_tpr\ttpr_target\tn_in\tn_ood"

    def to_tsv(self) -> str:
        return "\t".join(
            repr(float(v)) if isinstance(v, float) else str(v)
            for v in (self.auroc, self.aupr, self.fpr_at_tpr, self.tpr_target, self.n_in, self.n_ood)
        )


def evaluate_scores(in_scores, ood_scores, tpr: float = 0.95) -> EvalReport:
    data = LabeledScores.from_split(in_scores, ood_scores)
    return EvalReport(
        auroc=auroc(data),
        aupr=aupr(data),
        fpr_at_tpr=fpr_at_tpr(data, tpr),
        tpr_target=tpr,
        n_in=data.n_in,
        n_ood=data.n_ood,
    )
