"""JSON documents for fitted models and calibrations.

Floats are written by ``json`` via ``repr``, the shortest decimal that
round-trips, so a save/load cycle reproduces every array bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from .data import atomic_write
from .detector import Calibration, ClusterGaussian, DetectorModel, FewShotModel
from .numerics import SymmetricEigen

MODEL_SCHEMA = "ssd-model/1"
FEWSHOT_SCHEMA = "ssd-fewshot/1"
CALIBRATION_SCHEMA = "ssd-calibration/1"


class SchemaError(ValueError):
    pass


def _flat(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a).ravel()]


def model_to_dict(model: DetectorModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "m": model.m,
        "d": model.d,
        "normalization": model.normalization,
        "fit_seed": model.fit_seed,
        "source_hash": model.source_hash,
        "clusters": [
            {
                "mu": _flat(c.mu),
                "chol": _flat(c.chol),
                "eigenvalues": _flat(c.eigen.eigenvalues),
                "eigenvectors": _flat(c.eigen.eigenvectors),
                "weight": c.weight,
            }
            for c in model.clusters
        ],
    }


def _expect(doc: dict, schema: str) -> None:
    got = doc.get("schema")
    if got != schema:
        raise SchemaError(f"schema mismatch: expected {schema!r}, found {got!r}")


def model_from_dict(doc: dict) -> DetectorModel:
    _expect(doc, MODEL_SCHEMA)
    d = int(doc["d"])
    clusters = []
    for c in doc["clusters"]:
        clusters.append(
            ClusterGaussian(
                mu=np.array(c["mu"], dtype=np.float64),
                chol=np.array(c["chol"], dtype=np.float64).reshape(d, d),
                eigen=SymmetricEigen(
                    np.array(c["eigenvalues"], dtype=np.float64),
                    np.array(c["eigenvectors"], dtype=np.float64).reshape(d, d),
                ),
                weight=float(c["weight"]),
            )
        )
    if len(clusters) != int(doc["m"]):
        raise SchemaError(f"model declares m={doc['m']} but stores {len(clusters)} clusters")
    return DetectorModel(
        clusters, d, bool(doc["normalization"]), int(doc["fit_seed"]), doc.get("source_hash", "")
    )


def fewshot_to_dict(model: FewShotModel) -> dict:
    return {
        "schema": FEWSHOT_SCHEMA,
        "in_model": model_to_dict(model.in_model),
        "ood_mean": _flat(model.ood_mean),
        "ood_chol": _flat(model.ood_chol),
        "k": model.k,
        "n_augment": model.n_augment,
        "shrinkage": model.shrinkage,
    }


def fewshot_from_dict(doc: dict) -> FewShotModel:
    _expect(doc, FEWSHOT_SCHEMA)
    in_model = model_from_dict(doc["in_model"])
    d = in_model.d
    return FewShotModel(
        in_model=in_model,
        ood_mean=np.array(doc["ood_mean"], dtype=np.float64),
        ood_chol=np.array(doc["ood_chol"], dtype=np.float64).reshape(d, d),
        k=int(doc["k"]),
        n_augment=int(doc["n_augment"]),
        shrinkage=float(doc.get("shrinkage", 0.0)),
    )


def calibration_to_dict(cal: Calibration) -> dict:
    return {
        "schema": CALIBRATION_SCHEMA,
        "threshold": cal.threshold,
        "target_tpr": cal.target_tpr,
        "cal_count": cal.cal_count,
    }


def calibration_from_dict(doc: dict) -> Calibration:
    _expect(doc, CALIBRATION_SCHEMA)
    return Calibration(float(doc["threshold"]), float(doc["target_tpr"]), int(doc["cal_count"]))


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def save(obj, path) -> None:
    if isinstance(obj, DetectorModel):
        doc = model_to_dict(obj)
    elif isinstance(obj, FewShotModel):
        doc = fewshot_to_dict(obj)
    elif isinstance(obj, Calibration):
        doc = calibration_to_dict(obj)
    else:
        raise TypeError(f"cannot persist {type(obj).__name__}")
    atomic_write(path, dumps(doc))


def load(path):
    """Load whichever model or calibration document ``path`` holds."""
    with open(path) as fh:
        doc = json.load(fh)
    readers = {
        MODEL_SCHEMA: model_from_dict,
        FEWSHOT_SCHEMA: fewshot_from_dict,
        CALIBRATION_SCHEMA: calibration_from_dict,
    }
    schema = doc.get("schema") if isinstance(doc, dict) else None
    if schema not in readers:
        raise SchemaError(f"unsupported schema {schema!r} in {path}")
    return readers[schema](doc)


def load_model(path) -> DetectorModel:
    obj = load(path)
    if not isinstance(obj, DetectorModel):
        raise SchemaError(f"{path} holds a {type(obj).__name__}, expected schema {MODEL_SCHEMA!r}")
    return obj
