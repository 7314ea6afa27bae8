"""Dense linear algebra and covariance kernels.

Matrices are plain 2-D float64 numpy arrays. Everything here is a pure
function of its inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class ZeroNormRowWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SymmetricEigen:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


@dataclass(frozen=True)
class CovarianceEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    shrinkage_intensity: float
    sample_count: int


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _check_symmetric(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1.0)
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")


def sample_mean_cov(samples) -> CovarianceEstimate:
    """Column mean and population (1/n) covariance of ``samples``."""
    x = as_matrix(samples, "samples")
    n = x.shape[0]
    if n == 0:
        raise ValueError("no samples")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / n
    cov = 0.5 * (cov + cov.T)
    return CovarianceEstimate(mu, cov, 0.0, n)


def ledoit_wolf(samples) -> CovarianceEstimate:
    """Ledoit-Wolf shrinkage towards a scaled identity.

    Returns ``(1 - rho) * S + rho * nu * I`` with ``S`` the population
    sample covariance, ``nu = trace(S) / d`` and ``rho`` the estimated
    optimal intensity, clamped to [0, 1]. No positive-definite floor is
    applied here; see :func:`regularize_spd`.
    """
    x = as_matrix(samples, "samples")
    n, d = x.shape
    if n == 0:
        raise ValueError("no samples")
    mu = x.mean(axis=0)
    xc = x - mu
    s = xc.T @ xc / n
    s = 0.5 * (s + s.T)
    nu = np.trace(s) / d
    target_gap = s.copy()
    target_gap[np.diag_indices(d)] -= nu
    # squared norms below use the dimension-normalized Frobenius norm
    delta2 = np.sum(target_gap**2) / d
    row_sq = np.sum(xc**2, axis=1)
    beta_bar2 = (np.sum(row_sq**2) - n * np.sum(s**2)) / (n**2 * d)
    beta_bar2 = max(beta_bar2, 0.0)
    if delta2 <= 0.0:
        # S already equals its target (includes n == 1, where S == 0)
        rho = 1.0
    else:
        rho = min(beta_bar2, delta2) / delta2
    cov = (1.0 - rho) * s
    cov[np.diag_indices(d)] += rho * nu
    return CovarianceEstimate(mu, cov, float(rho), n)


def regularize_spd(cov) -> np.ndarray:
    """Add ``eps * I`` only if ``cov`` fails Cholesky.

    ``eps = 1e-6 * max(trace / d, 1e-12)``. If the first floor is not
    enough (indefinite input) it is grown tenfold until Cholesky passes.
    """
    a = np.asarray(cov, dtype=np.float64)
    _check_symmetric(a)
    try:
        cholesky(a)
        return a
    except NotPositiveDefiniteError:
        pass
    d = a.shape[0]
    eps = 1e-6 * max(np.trace(a) / d, 1e-12)
    while np.isfinite(eps):
        out = a + eps * np.eye(d)
        try:
            cholesky(out)
            return out
        except NotPositiveDefiniteError:
            eps *= 10.0
    raise NotPositiveDefiniteError("regularization floor overflowed")


def cholesky(spd) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == spd``.

    Pivots at or below ``d * machine-eps * max(diag)`` count as a failure:
    a numerically singular factor is useless for Mahalanobis solves.
    """
    a = np.asarray(spd, dtype=np.float64)
    _check_symmetric(a)
    d = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("not positive definite: non-finite entries")
    tiny = d * np.finfo(np.float64).eps * max(float(np.max(np.diag(a), initial=0.0)), 0.0)
    L = np.zeros_like(a)
    for j in range(d):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tiny:
            raise NotPositiveDefiniteError(
                f"not positive definite (pivot {pivot:.3e} at column {j})"
            )
        ljj = np.sqrt(pivot)
        L[j, j] = ljj
        if j + 1 < d:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / ljj
    return L


def forward_substitution(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.array(b, dtype=np.float64, copy=True)
    for i in range(L.shape[0]):
        y[i] = (y[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def back_substitution(U: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.array(y, dtype=np.float64, copy=True)
    for i in range(U.shape[0] - 1, -1, -1):
        x[i] = (x[i] - U[i, i + 1 :] @ x[i + 1 :]) / U[i, i]
    return x


def solve_spd(chol, rhs) -> np.ndarray:
    """Solve ``Sigma x = rhs`` given ``chol = cholesky(Sigma)``.

    ``rhs`` may be a vector or a ``d x k`` block of right-hand sides.
    """
    L = np.asarray(chol, dtype=np.float64)
    b = np.asarray(rhs, dtype=np.float64)
    if b.shape[0] != L.shape[0]:
        raise ValueError(f"dimension mismatch: factor is {L.shape[0]}, rhs is {b.shape[0]}")
    return back_substitution(L.T, forward_substitution(L, b))


def mahalanobis_sq(chol: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    """Row-wise ``diff^T Sigma^{-1} diff`` via one triangular solve.

    With ``Sigma = L L^T`` the quadratic form is ``||L^{-1} diff||^2``.
    """
    y = forward_substitution(np.asarray(chol), np.asarray(diffs, dtype=np.float64).T)
    return np.sum(y * y, axis=0)


def _round_robin(d: int) -> list[list[tuple[int, int]]]:
    # chess-tournament ordering: each round is a set of disjoint pairs
    players = list(range(d)) + ([-1] if d % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = []
        for i in range(k // 2):
            p, q = players[i], players[k - 1 - i]
            if p >= 0 and q >= 0:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def eig_sym(cov) -> SymmetricEigen:
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Sweeps use a round-robin ordering so that each round applies a set of
    disjoint rotations at once. Iterates until the off-diagonal Frobenius
    norm is at most ``JACOBI_TOL`` times the matrix norm. Eigenvalues come
    back in descending order; each eigenvector's largest-magnitude entry
    is made positive.
    """
    a = np.array(cov, dtype=np.float64, copy=True)
    _check_symmetric(a)
    a = 0.5 * (a + a.T)
    d = a.shape[0]
    v = np.eye(d)
    total = np.sqrt(np.sum(a * a))
    offdiag = ~np.eye(d, dtype=bool)
    rounds = _round_robin(d) if d > 1 else []
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(a[offdiag] ** 2))
        if off <= JACOBI_TOL * total:
            break
        for pairs in rounds:
            p = np.array([pq[0] for pq in pairs])
            q = np.array([pq[1] for pq in pairs])
            apq = a[p, q]
            live = np.abs(apq) > 0.0
            if not np.any(live):
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    lam, v = lam[order], v[:, order]
    if d:
        lead = np.argmax(np.abs(v), axis=0)
        signs = np.sign(v[lead, np.arange(d)])
        signs[signs == 0] = 1.0
        v = v * signs
    return SymmetricEigen(lam, v)


def l2_normalize_rows(features) -> tuple[np.ndarray, bool]:
    """Scale every nonzero row to unit norm.

    Returns ``(normalized, had_zero_rows)``. All-zero rows pass through
    unchanged and trigger a :class:`ZeroNormRowWarning`.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    norms = np.sqrt(np.sum(x * x, axis=1))
    zero = norms == 0.0
    out = x / np.where(zero, 1.0, norms)[:, None]
    flagged = bool(np.any(zero))
    if flagged:
        warnings.warn(
            f"{int(zero.sum())} all-zero feature row(s) left unnormalized",
            ZeroNormRowWarning,
            stacklevel=2,
        )
    return out, flagged
