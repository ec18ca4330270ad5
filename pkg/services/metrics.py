"""
Evaluation metrics for contact prediction, joint reconstruction and
hand-object penetration.

Key Features:
- rebalanced_auc(): accuracy vs. contact-difference threshold, reweighted by ground-truth bin
- joint_accuracy(): mean 3D error and PCK area up to 5 cm
- penetration_stats(): depth and frequency of hand surface samples inside the object
- mean_auc() / contact_agreement(): corpus-level summaries

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from services.contact import ContactMap, binarize, class_weights, discretize
from services.errors import MetricsError
from services.geom import TriMesh, nearest_on_mesh, points_inside
from services.handmodel import HandProxy, HandSkeleton, proxy_surface_points

logger = logging.getLogger(__name__)

AUC_GRID = np.linspace(0.0, 1.0, 101)
PCK_MAX_THRESHOLD = 0.05
PCK_STEPS = 100
THRESHOLD_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class AucReport:
    thresholds: np.ndarray
    accuracy: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {"auc": self.auc, "thresholds": self.thresholds.tolist(), "accuracy": self.accuracy.tolist()}


@dataclass(frozen=True)
class PenetrationReport:
    mean_mm: float
    median_mm: float
    frequency: float
    max_mm: float
    samples: int

    def to_dict(self) -> dict:
        return {"mean_mm": self.mean_mm, "median_mm": self.median_mm, "frequency": self.frequency,
                "max_mm": self.max_mm, "samples": self.samples}


def _values(contact) -> np.ndarray:
    return contact.values if isinstance(contact, ContactMap) else np.asarray(contact, dtype=np.float64).reshape(-1)


def rebalanced_auc(pred, gt, lam: float = 0.0, thresholds: np.ndarray = AUC_GRID) -> AucReport:
    """
    Area (percent) under the rebalanced accuracy vs. |pred - gt| threshold curve.

    Each point is weighted by the class weight of its ground-truth bin; with
    the default lam = 0 every non-empty bin contributes equally.
    """
    p, g = _values(pred), _values(gt)
    if len(p) == 0 or len(g) == 0:
        raise MetricsError("rebalanced AuC needs non-empty contact maps")
    if len(p) != len(g):
        raise MetricsError(f"prediction has {len(p)} points, ground truth has {len(g)}")
    bins = discretize(g)
    weights = class_weights(bins, lam)[bins]
    error = np.abs(p - g)
    hits = error[None, :] <= thresholds[:, None] + THRESHOLD_TOLERANCE
    accuracy = (hits * weights[None, :]).sum(axis=1) / weights.sum()
    span = thresholds[-1] - thresholds[0]
    auc = float(trapezoid(accuracy, thresholds) / span * 100.0)
    return AucReport(np.asarray(thresholds, dtype=np.float64), accuracy, auc)


def mean_auc(pairs: Sequence[Tuple[object, object]], pooled: bool = False, lam: float = 0.0) -> float:
    """Rebalanced AuC averaged over grasps, or over all points pooled together."""
    if not pairs:
        raise MetricsError("no prediction/ground-truth pairs")
    if pooled:
        pred = np.concatenate([_values(p) for p, _ in pairs])
        gt = np.concatenate([_values(g) for _, g in pairs])
        return rebalanced_auc(pred, gt, lam).auc
    return float(np.mean([rebalanced_auc(p, g, lam).auc for p, g in pairs]))


def contact_agreement(contact, reference_mask, thresholds: Optional[Sequence[float]] = None) -> Dict[float, float]:
    """Fraction of points where the thresholded map agrees with a reference mask, per threshold."""
    values = _values(contact)
    mask = np.asarray(reference_mask, dtype=bool).reshape(-1)
    if len(values) != len(mask):
        raise MetricsError("contact map and reference mask differ in length")
    if thresholds is None:
        thresholds = np.round(np.linspace(0.0, 1.0, 11), 10)
    return {float(t): float(np.mean(binarize(ContactMap(values), t) == mask)) for t in thresholds}


def _joints(value) -> np.ndarray:
    joints = value.joints if isinstance(value, HandSkeleton) else np.asarray(value, dtype=np.float64)
    if joints.shape != (21, 3):
        raise MetricsError(f"expected 21x3 joints, got shape {joints.shape}")
    if not np.all(np.isfinite(joints)):
        raise MetricsError("joints contain NaN or infinite values")
    return joints


def joint_accuracy(pred, gt, max_threshold: float = PCK_MAX_THRESHOLD, steps: int = PCK_STEPS) -> Tuple[float, float]:
    """
    Mean joint error in millimetres and PCK area in percent.

    PCK(t) is the fraction of joints within t; the area is integrated on a
    uniform grid of `steps` intervals over [0, max_threshold].
    """
    error = np.linalg.norm(_joints(pred) - _joints(gt), axis=1)
    thresholds = np.linspace(0.0, max_threshold, steps + 1)
    pck = np.mean(error[None, :] <= thresholds[:, None] + THRESHOLD_TOLERANCE, axis=1)
    auc = float(trapezoid(pck, thresholds) / max_threshold * 100.0)
    return float(error.mean() * 1000.0), auc


def penetration_stats(proxies: Sequence[HandProxy], mesh: TriMesh,
                      samples: Optional[np.ndarray] = None) -> PenetrationReport:
    """
    Surface penetration of the hand proxies into a closed object.

    Depth is the distance from a penetrating sample to the object surface.
    Samples default to the outer proxy surface of every hand.

    Raises:
        MetricsError: object mesh is not watertight
    """
    if not mesh.is_watertight:
        raise MetricsError("penetration needs a watertight object mesh")
    if samples is None:
        samples = np.vstack([proxy_surface_points(p, union_only=True)[0] for p in proxies])
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(samples) == 0:
        raise MetricsError("no hand surface samples")
    inside = points_inside(mesh, samples)
    if not np.any(inside):
        return PenetrationReport(0.0, 0.0, 0.0, 0.0, len(samples))
    _, depth, _ = nearest_on_mesh(mesh, samples[inside])
    depth_mm = depth * 1000.0
    report = PenetrationReport(float(depth_mm.mean()), float(np.median(depth_mm)),
                               float(inside.mean() * 100.0), float(depth_mm.max()), len(samples))
    logger.info(f"penetration_stats: {int(inside.sum())}/{len(samples)} samples inside, mean {report.mean_mm:.3f} mm")
    return report
