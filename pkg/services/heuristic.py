"""
Non-learned contact baseline.

A proximity score over the hand proxy, extended 1 cm beyond the surface and
linearly calibrated against ground-truth contact.

Key Features:
- psi ramp: 0 beyond the cutoff, 1 on the proxy surface, growing with penetration
- Least-squares calibration on a random point sample (corpus-wide or per grasp)
- Clamped linear prediction into [0, 1]

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from services.contact import ContactMap
from services.errors import CalibrationError
from services.geom import PointCloud
from services.handmodel import HandProxy, proxy_signed_distance

logger = logging.getLogger(__name__)

PSI_CUTOFF = 0.01
CALIBRATION_SAMPLES = 4700


@dataclass(frozen=True, eq=False)
class PsiField:
    values: np.ndarray
    cutoff: float = PSI_CUTOFF

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise CalibrationError("psi values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Calibration:
    slope: float
    intercept: float
    samples: int
    seed: int = 0

    def to_dict(self) -> dict:
        return {"a": self.slope, "b": self.intercept, "n": self.samples, "seed": self.seed}

    @classmethod
    def from_dict(cls, payload: dict) -> "Calibration":
        try:
            return cls(float(payload["a"]), float(payload["b"]), int(payload["n"]), int(payload.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise CalibrationError(f"malformed calibration record: {e}")


PsiLike = Union[PsiField, np.ndarray, Sequence[float]]


def psi_from_distance(signed, cutoff: float = PSI_CUTOFF) -> np.ndarray:
    """Ramp (cutoff - s)/cutoff on [0, cutoff], 1 + |s|/cutoff inside, 0 beyond."""
    signed = np.asarray(signed, dtype=np.float64)
    if cutoff <= 0:
        raise CalibrationError("psi cutoff must be positive")
    # one expression covers both the ramp and the penetration branch
    return np.where(signed > cutoff, 0.0, (cutoff - signed) / cutoff)


def psi(points: Union[PointCloud, np.ndarray], proxy: HandProxy, cutoff: float = PSI_CUTOFF) -> PsiField:
    coordinates = points.points if isinstance(points, PointCloud) else np.atleast_2d(points)
    signed = np.atleast_1d(proxy_signed_distance(proxy, coordinates))
    return PsiField(psi_from_distance(signed, cutoff), cutoff)


def hands_psi(points: Union[PointCloud, np.ndarray], proxies: Sequence[HandProxy],
              cutoff: float = PSI_CUTOFF) -> PsiField:
    """Pointwise maximum of psi over every hand in the grasp."""
    if not proxies:
        raise CalibrationError("psi needs at least one hand proxy")
    return PsiField(np.max([psi(points, p, cutoff).values for p in proxies], axis=0), cutoff)


def _values(field: PsiLike) -> np.ndarray:
    return field.values if isinstance(field, PsiField) else np.asarray(field, dtype=np.float64).reshape(-1)


def _contact_values(gt) -> np.ndarray:
    return gt.values if isinstance(gt, ContactMap) else np.asarray(gt, dtype=np.float64).reshape(-1)


def _fit(x: np.ndarray, y: np.ndarray, seed: int) -> Calibration:
    if len(np.unique(x)) < 2:
        raise CalibrationError("calibration needs at least two distinct psi values")
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    return Calibration(float(slope), float(intercept), len(x), seed)


def calibrate(psi_samples: PsiLike, gt, n: int = CALIBRATION_SAMPLES, seed: int = 0) -> Calibration:
    """
    Ordinary least squares of ground truth on psi over n random points.

    When n exceeds the point count every point is used.

    Raises:
        CalibrationError: mismatched lengths or constant psi
    """
    x = _values(psi_samples)
    y = _contact_values(gt)
    if len(x) != len(y):
        raise CalibrationError(f"psi has {len(x)} points, ground truth has {len(y)}")
    take = min(n, len(x))
    index = np.sort(np.random.default_rng(seed).choice(len(x), size=take, replace=False))
    calibration = _fit(x[index], y[index], seed)
    logger.info(f"calibrate: a={calibration.slope:.6f} b={calibration.intercept:.6f} on {take} points")
    return calibration


def calibrate_corpus(psi_fields: Sequence[PsiLike], gts: Sequence, n: int = CALIBRATION_SAMPLES, seed: int = 0,
                     mode: str = "corpus") -> Union[Calibration, List[Calibration]]:
    """Calibrate once across all grasps (corpus) or once per grasp (per-grasp)."""
    if len(psi_fields) != len(gts) or not psi_fields:
        raise CalibrationError("need one ground-truth map per psi field")
    if mode == "per-grasp":
        return [calibrate(f, g, n, seed) for f, g in zip(psi_fields, gts)]
    if mode != "corpus":
        raise CalibrationError(f"unknown calibration mode {mode!r}")
    x = np.concatenate([_values(f) for f in psi_fields])
    y = np.concatenate([_contact_values(g) for g in gts])
    return calibrate(x, y, n, seed)


def predict(psi_field: PsiLike, calibration: Calibration) -> ContactMap:
    return ContactMap(np.clip(calibration.slope * _values(psi_field) + calibration.intercept, 0.0, 1.0))


def uncalibrated(psi_field: PsiLike) -> ContactMap:
    """Raw psi clamped to [0, 1]."""
    return ContactMap(np.clip(_values(psi_field), 0.0, 1.0))
