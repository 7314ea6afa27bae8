"""Contrastive losses with analytic gradients, and a small linear encoder.

Batch layout: rows ``2t`` and ``2t + 1`` are the two views of item ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix


@dataclass(frozen=True)
class ContrastiveBatch:
    """``2N x p`` projected embeddings plus optional per-row labels.

    Rows are expected to be unit norm but this is not enforced, so the
    loss can be probed off the sphere (finite differences do exactly that).
    """

    embeddings: np.ndarray
    temperature: float = 0.5
    labels: np.ndarray | None = None

    def __post_init__(self):
        u = as_matrix(self.embeddings, "embeddings")
        object.__setattr__(self, "embeddings", u)
        if u.shape[0] % 2:
            raise ValueError(f"need an even number of rows (pairs of views), got {u.shape[0]}")
        if u.shape[0] < 4:
            raise ValueError(f"need at least 4 rows (2 pairs), got {u.shape[0]}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.labels is not None:
            y = np.asarray(self.labels).ravel()
            if y.size != u.shape[0]:
                raise ValueError(f"{y.size} labels for {u.shape[0]} rows")
            if np.any(y[0::2] != y[1::2]):
                raise ValueError("both views of an item must share its label")
            object.__setattr__(self, "labels", y)

    @classmethod
    def from_views(cls, view_a, view_b, temperature=0.5, labels=None, *, normalize=True):
        """Interleave two ``N x p`` view matrices into pair layout."""
        a, b = as_matrix(view_a), as_matrix(view_b)
        u = np.empty((2 * a.shape[0], a.shape[1]))
        u[0::2], u[1::2] = a, b
        if normalize:
            u = u / np.linalg.norm(u, axis=1, keepdims=True)
        y = None if labels is None else np.repeat(np.asarray(labels), 2)
        return cls(u, temperature, y)


def _partner(n2: int) -> np.ndarray:
    return np.arange(n2) ^ 1


def _logits(batch: ContrastiveBatch) -> np.ndarray:
    u = batch.embeddings
    z = u @ u.T / batch.temperature
    np.fill_diagonal(z, -np.inf)
    return z


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=1, keepdims=True)
    return z - zmax - np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))


def _positive_mask(batch: ContrastiveBatch) -> np.ndarray:
    if batch.labels is None:
        raise ValueError("supervised contrastive loss needs labels")
    y = batch.labels
    mask = y[:, None] == y[None, :]
    np.fill_diagonal(mask, False)
    if np.any(mask.sum(axis=1) == 0):
        raise ValueError("a label appears only once in the batch; it has no positive")
    return mask


def nt_xent_loss(batch: ContrastiveBatch) -> float:
    """Normalized temperature-scaled cross-entropy over paired views."""
    logp = _log_softmax(_logits(batch))
    n2 = logp.shape[0]
    return float(-np.mean(logp[np.arange(n2), _partner(n2)]))


def nt_xent_grad(batch: ContrastiveBatch) -> np.ndarray:
    """Gradient of :func:`nt_xent_loss` with respect to each embedding row."""
    logits = _logits(batch)
    n2 = logits.shape[0]
    p = np.exp(_log_softmax(logits))
    p[np.arange(n2), _partner(n2)] -= 1.0
    # d loss / d sim_ik = (P - Y)_ik / (2N tau); sim is symmetric in (i, k)
    coef = (p + p.T) / (n2 * batch.temperature)
    return coef @ batch.embeddings


def supcon_loss(batch: ContrastiveBatch) -> float:
    """Supervised contrastive loss: every same-label row is a positive.

    Per row, the numerator averages ``exp(sim / tau)`` over the
    ``2 N_y - 1`` other rows sharing the label.
    """
    mask = _positive_mask(batch)
    logp = _log_softmax(_logits(batch))
    n_pos = mask.sum(axis=1)
    masked = np.where(mask, logp, -np.inf)
    top = np.max(masked, axis=1, keepdims=True)
    log_num = top[:, 0] + np.log(np.sum(np.exp(masked - top), axis=1)) - np.log(n_pos)
    return float(-np.mean(log_num))


def supcon_grad(batch: ContrastiveBatch) -> np.ndarray:
    mask = _positive_mask(batch)
    logits = _logits(batch)
    n2 = logits.shape[0]
    p = np.exp(_log_softmax(logits))
    q = np.exp(_log_softmax(np.where(mask, logits, -np.inf)))
    g = p - q
    coef = (g + g.T) / (n2 * batch.temperature)
    return coef @ batch.embeddings


# -- toy encoder --------------------------------------------------------------


@dataclass
class ToyEncoder:
    """Linear map followed by row-wise l2 normalization: ``u = Wz / ||Wz||``."""

    weights: np.ndarray
    seed: int = 0

    @classmethod
    def random(cls, input_dim: int, output_dim: int, seed: int = 0) -> "ToyEncoder":
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(output_dim, input_dim)) / np.sqrt(input_dim)
        return cls(w, seed)

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    def project(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.weights.T

    def encode(self, z) -> np.ndarray:
        v = self.project(z)
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "schema": "ssd-toy-encoder/1",
            "seed": self.seed,
            "output_dim": self.output_dim,
            "input_dim": self.input_dim,
            "weights": self.weights.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ToyEncoder":
        if doc.get("schema") != "ssd-toy-encoder/1":
            raise ValueError(f"unsupported encoder schema {doc.get('schema')!r}")
        w = np.array(doc["weights"], dtype=np.float64).reshape(doc["output_dim"], doc["input_dim"])
        return cls(w, int(doc["seed"]))


@dataclass(frozen=True)
class JitterSpec:
    """Per-dimension Gaussian noise used to draw two views of each point."""

    std: float | np.ndarray = 0.1
    resample_every: int = 0  # 0: draw views once per run

    def draw(self, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        std = np.broadcast_to(np.asarray(self.std, dtype=np.float64), x.shape[1:])
        return x + rng.normal(size=x.shape) * std, x + rng.normal(size=x.shape) * std


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainResult:
    encoder: ToyEncoder
    losses: list[float] = field(default_factory=list)

    def trace_csv(self) -> str:
        return "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(self.losses))


def train_toy(
    data,
    jitter: JitterSpec,
    encoder: ToyEncoder,
    steps: int,
    lr: float,
    seed: int = 0,
    labels=None,
    temperature: float = 0.5,
    backtrack: int = 20,
) -> TrainResult:
    """Gradient descent on the encoder weights under a contrastive loss.

    NT-Xent is used when ``labels`` is None, SupCon otherwise. ``lr`` caps
    the step size. Each step starts from twice the previous accepted step;
    when that fails to lower the loss on the current views it is halved,
    at most ``backtrack`` times, and the update is skipped if none helps.
    ``backtrack=0`` gives plain fixed-step descent. The loss recorded for step ``i`` is the batch loss before
    that step's update; one extra entry after the final update closes the
    trace. The input encoder is not modified.
    """
    x = as_matrix(data, "data")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    w = encoder.weights.copy()
    y = None if labels is None else np.repeat(np.asarray(labels), 2)
    loss_fn, grad_fn = (nt_xent_loss, nt_xent_grad) if y is None else (supcon_loss, supcon_grad)

    def interleave(a, b):
        z = np.empty((2 * a.shape[0], a.shape[1]))
        z[0::2], z[1::2] = a, b
        return z

    def evaluate(weights):
        v = inputs @ weights.T
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = v / norms
        if not np.all(np.isfinite(u)):
            return float("nan"), None, u, norms
        batch = ContrastiveBatch(u, temperature, y)
        return loss_fn(batch), batch, u, norms

    inputs = interleave(*jitter.draw(x, rng))
    losses = []
    eta = lr
    for step in range(steps + 1):
        if step and jitter.resample_every and step % jitter.resample_every == 0 and step < steps:
            inputs = interleave(*jitter.draw(x, rng))
        loss, batch, u, norms = evaluate(w)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        losses.append(loss)
        if step == steps:
            break
        g_u = grad_fn(batch)
        # back through u = v / ||v||
        g_v = (g_u - np.sum(g_u * u, axis=1, keepdims=True) * u) / norms
        g_w = g_v.T @ inputs
        eta = min(lr, 2.0 * eta) if backtrack else lr
        candidate = w - eta * g_w
        for _ in range(backtrack):
            trial = evaluate(candidate)[0]
            if np.isfinite(trial) and trial < loss:
                break
            eta *= 0.5
            candidate = w - eta * g_w
        else:
            if backtrack:
                candidate, eta = w, lr
        w = candidate
    return TrainResult(ToyEncoder(w, encoder.seed), losses)
