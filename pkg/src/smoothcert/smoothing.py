"""Gaussian-smoothed classifier: Monte-Carlo prediction and certification.

The base classifier is any callable mapping a batch of images (B, C, H, W)
to integer class indices. Noise for an example comes from that example's own
:class:`~smoothcert.numerics.RngStream`, drawn contiguously, so results do not
depend on the batch size used to query the base classifier.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import (ConfidenceParams, RngStream, binom_two_sided_pvalue, clopper_pearson_lower,
                       gaussian_sample, std_normal_cdf, std_normal_quantile)

ABSTAIN = -1

BaseClassifier = Callable[[np.ndarray], np.ndarray]


class CertificationError(RuntimeError):
    pass


@dataclass
class SmoothedClassifier:
    base: BaseClassifier
    sigma: float
    num_classes: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"smoothing needs sigma > 0, got {self.sigma}")


@dataclass
class CertResult:
    example_id: int
    label: int
    prediction: int
    radius: float
    correct: bool
    seconds: float = 0.0
    p_lower: float = 0.0
    count: int = 0  # hits of the selected class among the n estimation draws
    error: str | None = None

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN


def certified_radius_two_sided(p_a: float, p_b: float, sigma: float) -> float:
    """``sigma / 2 * (Phi^-1(p_a) - Phi^-1(p_b))`` for top-class and runner-up probabilities."""
    if not 0.0 < p_b <= p_a < 1.0:
        raise ValueError(f"need 0 < p_b <= p_a < 1, got p_a={p_a}, p_b={p_b}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return max(0.0, 0.5 * sigma * (std_normal_quantile(p_a) - std_normal_quantile(p_b)))


def certified_radius_lower(p_a_lower: float, sigma: float) -> float:
    """``sigma * Phi^-1(p_a_lower)``; negative below 1/2, where callers abstain."""
    return sigma * std_normal_quantile(p_a_lower)


def true_smoothed_prob_linear(w: np.ndarray, b: float, x: np.ndarray, sigma: float) -> float:
    """Probability that ``w . (x + eta) + b > 0`` for eta ~ N(0, sigma^2 I)."""
    w = np.asarray(w, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(w))
    if norm == 0:
        raise ValueError("w must be nonzero")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    margin = float(w @ np.asarray(x, dtype=np.float64).ravel()) + b
    return std_normal_cdf(margin / (sigma * norm))


def sample_counts(sc: SmoothedClassifier, x: np.ndarray, num: int, batch: int,
                  rng: RngStream) -> np.ndarray:
    """Vote counts of the base classifier over ``num`` noisy copies of ``x``."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    x = np.asarray(x, dtype=np.float64)
    counts = np.zeros(sc.num_classes, dtype=np.int64)
    remaining = num
    while remaining > 0:
        b = min(batch, remaining)
        noise = gaussian_sample(rng, b * x.size, sc.sigma).reshape((b,) + x.shape)
        preds = np.asarray(sc.base(x[None] + noise)).astype(np.int64).ravel()
        if preds.shape != (b,) or (preds.size and (preds.min() < 0 or preds.max() >= sc.num_classes)):
            raise CertificationError(
                f"base classifier returned invalid classes (shape {preds.shape}) for a batch of {b}")
        counts += np.bincount(preds, minlength=sc.num_classes)
        remaining -= b
    return counts


def certify(sc: SmoothedClassifier, x: np.ndarray, cp: ConfidenceParams, batch: int, rng: RngStream,
            label: int = -1, example_id: int = 0) -> CertResult:
    """Select a class with ``n0`` votes, then lower-bound its probability with ``n`` fresh votes.

    Abstains when the Clopper-Pearson lower bound is at most 1/2; otherwise
    the radius is ``sigma * Phi^-1(p_lower)``. Ties in the selection vote go
    to the smallest class index.
    """
    start = time.perf_counter()
    try:
        counts0 = sample_counts(sc, x, cp.n0, batch, rng)
        c_hat = int(np.argmax(counts0))
        counts = sample_counts(sc, x, cp.n, batch, rng)
    except Exception as exc:
        raise CertificationError(f"example {example_id}: {exc}") from exc
    k = int(counts[c_hat])
    p_low = clopper_pearson_lower(k, cp.n, cp.alpha)
    elapsed = time.perf_counter() - start
    if p_low <= 0.5:
        return CertResult(example_id, label, ABSTAIN, 0.0, False, elapsed, p_low, k)
    radius = certified_radius_lower(p_low, sc.sigma)
    return CertResult(example_id, label, c_hat, radius, c_hat == label, elapsed, p_low, k)


def predict(sc: SmoothedClassifier, x: np.ndarray, n: int, alpha: float, rng: RngStream,
            batch: int = 1000) -> int:
    """Majority vote over ``n`` noisy copies, abstaining unless the top two
    classes differ significantly under an exact binomial test."""
    if n < 2:
        raise ValueError(f"predict needs n >= 2, got {n}")
    counts = sample_counts(sc, x, n, batch, rng)
    order = np.argsort(-counts, kind="stable")
    c1 = int(order[0])
    k1 = int(counts[c1])
    k2 = int(counts[order[1]]) if len(order) > 1 else 0
    if binom_two_sided_pvalue(k1, k1 + k2) <= alpha:
        return c1
    return ABSTAIN


def max_certifiable_radius(cp: ConfidenceParams, sigma: float) -> float:
    """Radius reached when every estimation draw votes for the selected class."""
    return certified_radius_lower(cp.alpha ** (1.0 / cp.n), sigma)


def linear_base_classifier(w: np.ndarray, b: float) -> BaseClassifier:
    """Class 0 where ``w . x + b > 0``, class 1 otherwise."""
    w = np.asarray(w, dtype=np.float64).ravel()

    def base(batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1)
        return np.where(flat @ w + b > 0, 0, 1)

    return base


def constant_base_classifier(cls: int = 0) -> BaseClassifier:
    def base(batch: np.ndarray) -> np.ndarray:
        return np.full(batch.shape[0], cls, dtype=np.int64)

    return base


def linear_true_radius(w, b, x, sigma) -> float:
    """Exact one-sided radius ``sigma * Phi^-1(pA)`` of the smoothed linear classifier for class 0."""
    p = true_smoothed_prob_linear(w, b, x, sigma)
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return certified_radius_lower(p, sigma)
