"""Feature files, synthetic feature generators and train/calibration splits."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import eig_sym

MAGIC = b"SSDF"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


class FeatureFormatError(ValueError):
    pass


def atomic_write(path, payload: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def detect_format(path) -> str:
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "csv"


def load_features(path, fmt: str | None = None) -> np.ndarray:
    """Read an ``n x d`` float64 matrix from CSV or the SSDF binary format."""
    fmt = fmt or detect_format(path)
    if fmt == "binary":
        return _load_binary(Path(path).read_bytes())
    if fmt == "csv":
        return _load_csv(Path(path).read_text())
    raise ValueError(f"unknown feature format {fmt!r}")


def _load_csv(text: str) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise FeatureFormatError(f"line {lineno}: unparseable value ({exc})") from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise FeatureFormatError(
                f"line {lineno}: ragged row with {len(values)} values, expected {width}"
            )
        if not all(np.isfinite(values)):
            raise FeatureFormatError(f"line {lineno}: non-finite value (NaN or Inf)")
        rows.append(values)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def _load_binary(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FeatureFormatError(f"truncated header: {len(blob)} bytes, need {_HEADER.size}")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FeatureFormatError(f"unsupported version {version} at offset 4")
    need = _HEADER.size + 8 * n * d
    if len(blob) < need:
        raise FeatureFormatError(
            f"truncated payload: expected {need} bytes, file ends at offset {len(blob)}"
        )
    if len(blob) > need:
        raise FeatureFormatError(f"trailing data after offset {need}")
    x = np.frombuffer(blob, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
    bad = np.argwhere(~np.isfinite(x))
    if bad.size:
        r, c = bad[0]
        raise FeatureFormatError(
            f"non-finite value at row {r}, column {c} (offset {_HEADER.size + 8 * (r * d + c)})"
        )
    return x.astype(np.float64)


def dump_features(x, fmt: str = "csv") -> bytes:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if fmt == "binary":
        return _HEADER.pack(MAGIC, VERSION, *x.shape) + np.ascontiguousarray(x, "<f8").tobytes()
    if fmt == "csv":
        # repr gives the shortest decimal that round-trips
        return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in x).encode()
    raise ValueError(f"unknown feature format {fmt!r}")


def save_features(x, path, fmt: str | None = None) -> None:
    if fmt is None:
        fmt = "binary" if str(path).endswith((".ssdf", ".bin")) else "csv"
    atomic_write(path, dump_features(x, fmt))


# -- synthetic data -------------------------------------------------------------


@dataclass
class SynthSpec:
    """Recipe for a seeded Gaussian-mixture feature set.

    ``kind`` is one of:

    * ``gmm``: ``components`` Gaussians in ``d`` dims.
    * ``shifted-gmm``: the same mixture displaced by ``shift`` along
      eigendirections ``shift_dims`` of each component covariance
      (indexed by descending eigenvalue). Used as an OOD set.
    * ``blobs2d``: isotropic blobs placed on a circle of radius ``spread``.

    Means default to zero for one component and otherwise to points
    ``spread`` apart along successive axes. ``variances`` is either a
    scalar or a per-dimension diagonal shared by all components;
    ``covariance`` (a full ``d x d`` matrix) overrides it.
    """

    kind: str = "gmm"
    d: int = 2
    n: int = 100
    components: int = 1
    seed: int = 0
    means: list | None = None
    variances: float | list = 1.0
    covariance: list | None = None
    weights: list | None = None
    spread: float = 4.0
    shift: float = 0.0
    shift_dims: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls(**json.loads(text))


def _component_means(spec: SynthSpec) -> np.ndarray:
    if spec.means is not None:
        mu = np.asarray(spec.means, dtype=np.float64).reshape(spec.components, spec.d)
        return mu
    if spec.kind == "blobs2d":
        angles = 2 * np.pi * np.arange(spec.components) / spec.components
        return spec.spread * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    mu = np.zeros((spec.components, spec.d))
    for j in range(1, spec.components):
        mu[j, (j - 1) % spec.d] = spec.spread * (1 + (j - 1) // spec.d)
    return mu


def _component_cov(spec: SynthSpec) -> np.ndarray:
    if spec.covariance is not None:
        cov = np.asarray(spec.covariance, dtype=np.float64)
        if cov.shape != (spec.d, spec.d) or not np.allclose(cov, cov.T):
            raise ValueError("covariance descriptor must be a symmetric d x d matrix")
    else:
        var = np.broadcast_to(np.asarray(spec.variances, dtype=np.float64), (spec.d,))
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        cov = np.diag(var)
    if np.min(np.linalg.eigvalsh(cov)) <= 0:
        raise ValueError("covariance descriptor is not positive definite")
    return cov


def generate(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``spec.n`` rows; returns ``(features, component_labels)``."""
    if spec.kind not in ("gmm", "shifted-gmm", "blobs2d"):
        raise ValueError(f"unknown synthetic kind {spec.kind!r}")
    if spec.kind == "blobs2d" and spec.d != 2:
        raise ValueError("blobs2d requires d == 2")
    if spec.components < 1:
        raise ValueError("components must be >= 1")
    if spec.n < 0:
        raise ValueError("n must be >= 0")
    mu = _component_means(spec)
    cov = _component_cov(spec)
    if spec.kind == "shifted-gmm" and spec.shift_dims:
        q = eig_sym(cov).eigenvectors
        direction = q[:, list(spec.shift_dims)].sum(axis=1)
        mu = mu + spec.shift * direction
    w = np.ones(spec.components) if spec.weights is None else np.asarray(spec.weights, float)
    w = w / w.sum()
    rng = np.random.default_rng(spec.seed)
    labels = rng.choice(spec.components, size=spec.n, p=w)
    factor = np.linalg.cholesky(cov)
    x = mu[labels] + rng.standard_normal((spec.n, spec.d)) @ factor.T
    return x, labels


# -- partition ----------------------------------------------------------------


def partition(features, split: float = 0.9, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first ``floor(split * n)`` rows train."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 rows to partition, got {n}")
    if not 0.0 < split < 1.0:
        raise ValueError(f"split must be in (0, 1), got {split}")
    perm = np.random.default_rng(seed).permutation(n)
    cut = min(max(int(np.floor(split * n)), 1), n - 1)
    return x[perm[:cut]], x[perm[cut:]]
