"""
Contact-map value processing.

Thermal values are squashed with a logistic curve pinned at 0.05 and 0.95,
binarized at 0.4, and discretized into ten equal bins for classification.
Class weights rebalance the bins; the annealed mean turns a bin distribution
back into a contact value.

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from services.errors import ContactError

logger = logging.getLogger(__name__)

NUM_BINS = 10
BIN_EDGES = np.linspace(0.0, 1.0, NUM_BINS + 1)
BIN_CENTERS = (np.arange(NUM_BINS) + 0.5) / NUM_BINS
CONTACT_THRESHOLD = 0.4
REBALANCE_LAMBDA = 0.4
ANNEAL_TEMPERATURE = 0.1

SIGMOID_LOW = 0.05
SIGMOID_HIGH = 0.95


@dataclass(frozen=True, eq=False)
class ContactMap:
    """Per-vertex (or per-point) contact values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
            raise ContactError("contact values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ContactDistribution:
    """Per-point probabilities over the ten contact bins."""

    probabilities: np.ndarray

    def __post_init__(self):
        probabilities = np.array(self.probabilities, dtype=np.float64)
        if probabilities.ndim != 2 or probabilities.shape[1] != NUM_BINS:
            raise ContactError(f"expected an (n, {NUM_BINS}) probability array")
        if np.any(probabilities < 0) or np.any(np.abs(probabilities.sum(axis=1) - 1.0) > 1e-6):
            raise ContactError("bin probabilities must be non-negative and sum to 1")
        probabilities.setflags(write=False)
        object.__setattr__(self, "probabilities", probabilities)

    def __len__(self) -> int:
        return len(self.probabilities)


def normalize_thermal(raw) -> ContactMap:
    """
    Logistic map taking min(raw) to 0.05 and max(raw) to 0.95.

    Raises:
        ContactError: constant or non-finite input
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if len(raw) == 0 or not np.all(np.isfinite(raw)):
        raise ContactError("thermal values must be finite and non-empty")
    lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        raise ContactError("thermal values are constant, no sigmoid fit")
    midpoint = 0.5 * (hi + lo)
    # logit(0.95) = ln 19 reached at half the range above the midpoint
    slope = 2.0 * np.log(SIGMOID_HIGH / SIGMOID_LOW) / (hi - lo)
    values = 1.0 / (1.0 + np.exp(-slope * (raw - midpoint)))
    values[raw == hi] = SIGMOID_HIGH
    values[raw == lo] = SIGMOID_LOW
    return ContactMap(values)


def binarize(contact: ContactMap, tau: float = CONTACT_THRESHOLD) -> np.ndarray:
    """Contacted mask; a value equal to tau counts as contact."""
    return contact.values >= tau


def discretize(contact) -> np.ndarray:
    """Bin label min(floor(10 v), 9) per point."""
    values = contact.values if isinstance(contact, ContactMap) else np.asarray(contact, dtype=np.float64)
    return np.minimum(np.floor(values * NUM_BINS).astype(np.int64), NUM_BINS - 1)


def one_hot(labels) -> ContactDistribution:
    labels = np.asarray(labels, dtype=np.int64)
    return ContactDistribution(np.eye(NUM_BINS)[labels])


def class_weights(labels, lam: float = REBALANCE_LAMBDA) -> np.ndarray:
    """
    Rebalancing weights for the ten bins.

    w_b is proportional to ((1 - lam) p_b + lam / 10)^-1 where p_b is the
    empirical bin frequency, normalized so that sum_b p_b w_b = 1. With
    lam = 0 empty bins get weight 0.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) == 0:
        raise ContactError("cannot weight an empty label set")
    if labels.min() < 0 or labels.max() >= NUM_BINS:
        raise ContactError("labels must lie in 0..9")
    frequency = np.bincount(labels, minlength=NUM_BINS) / len(labels)
    mixed = (1.0 - lam) * frequency + lam / NUM_BINS
    with np.errstate(divide="ignore"):
        weights = np.where(mixed > 0, 1.0 / np.where(mixed > 0, mixed, 1.0), 0.0)
    return weights / float(frequency @ weights)


def decode_annealed_mean(distribution: ContactDistribution, temperature: float = ANNEAL_TEMPERATURE) -> ContactMap:
    """
    Point estimate from bin probabilities: q_b ~ p_b^(1/T), value = sum q_b c_b.

    Zero-probability bins are excluded rather than floored.
    """
    if temperature <= 0:
        raise ContactError("annealing temperature must be positive")
    p = distribution.probabilities
    if np.any(p.sum(axis=1) <= 0):
        raise ContactError("all-zero probability vector")
    with np.errstate(divide="ignore"):
        log_p = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    scaled = log_p / temperature
    q = np.exp(scaled - logsumexp(scaled, axis=1, keepdims=True))
    return ContactMap(np.clip(q @ BIN_CENTERS, 0.0, 1.0))
