"""Training objectives: all-patch reconstruction MSE, noisy cross-entropy and
the cross-entropy + KL-consistency + entropy objective for robust fine-tuning.

Losses are batched: images are (B, C, H, W) tensors and every term is averaged
over the batch. Probabilities are floored at ``PROB_FLOOR`` before any log.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .corruption import PatchSequence
from .numerics import RngStream, gaussian_sample

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ConsistencyHparams:
    lam: float = 2.0
    mu: float = 0.5
    m: int = 2
    sigma: float | tuple[float, float] = 0.25

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError(f"lam and mu must be >= 0, got {self.lam}, {self.mu}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if isinstance(self.sigma, (tuple, list)):
            lo, hi = self.sigma
            if not 0 <= lo <= hi:
                raise ValueError(f"sigma interval must satisfy 0 <= lo <= hi, got {self.sigma}")
        elif self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @classmethod
    def recommended(cls, sigma: float, m: int = 2) -> "ConsistencyHparams":
        """lam=2 with mu=0.5 for sigma <= 0.5 and mu=0.1 above."""
        return cls(lam=2.0, mu=0.5 if sigma <= 0.5 else 0.1, m=m, sigma=sigma)


@dataclass
class LossValue:
    total: torch.Tensor
    components: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.total.detach())


def reconstruction_loss(pred, target) -> LossValue:
    """Mean squared error over every patch and every pixel coordinate."""
    if isinstance(pred, PatchSequence):
        pred = torch.as_tensor(pred.values)
    if isinstance(target, PatchSequence):
        target = torch.as_tensor(target.values)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    loss = ((pred - target.to(pred.dtype)) ** 2).mean()
    return LossValue(loss, {"mse": float(loss.detach())})


def _log(p):
    return torch.log(p.clamp_min(PROB_FLOOR))


def kl_divergence(p, q) -> torch.Tensor:
    """KL(p || q) along the last axis, with 0 * log 0 = 0."""
    p, q = torch.as_tensor(p), torch.as_tensor(q)
    terms = torch.where(p > 0, p * (_log(p) - _log(q)), torch.zeros_like(p))
    return terms.sum(-1)


def entropy(p) -> torch.Tensor:
    p = torch.as_tensor(p)
    return -torch.where(p > 0, p * _log(p), torch.zeros_like(p)).sum(-1)


def cross_entropy(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-example ``-log p[label]``."""
    return -_log(probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1))


def sample_sigma(h: ConsistencyHparams, rng: RngStream, count: int | None = None):
    """Noise level for a step: the fixed value, or uniform draws from the interval."""
    if not isinstance(h.sigma, (tuple, list)):
        return h.sigma if count is None else np.full(count, float(h.sigma))
    lo, hi = h.sigma
    u = rng.uniform(1 if count is None else count)
    s = lo + (hi - lo) * u
    return float(s[0]) if count is None else s


def draw_noise(rng: RngStream, shape: tuple, sigma, dtype=torch.float32) -> torch.Tensor:
    """Gaussian noise of ``shape`` = (m, B, C, H, W); ``sigma`` scalar or per-example (B,)."""
    z = gaussian_sample(rng, int(np.prod(shape)), 1.0).reshape(shape)
    sig = np.asarray(sigma, dtype=np.float64)
    if sig.ndim == 1:
        sig = sig.reshape((1, -1) + (1,) * (len(shape) - 2))
    return torch.as_tensor(z * sig, dtype=dtype)


def _check_labels(labels: torch.Tensor, num_classes: int):
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")


def _noisy_probs(model, images, labels, m, sigma, rng, noise):
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_labels(labels, model.cfg.num_classes)
    if noise is None:
        noise = draw_noise(rng, (m,) + tuple(images.shape), sigma, dtype=images.dtype)
    if noise.shape[0] != m or noise.shape[1:] != images.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match {m} copies of {tuple(images.shape)}")
    noisy = (images.unsqueeze(0) + noise.to(images.dtype)).reshape((-1,) + tuple(images.shape[1:]))
    probs = torch.softmax(model.logits(noisy), dim=-1)
    return probs.reshape(m, images.shape[0], -1), labels


def rs_loss(model, images, labels, sigma, rng: RngStream | None = None, noise=None) -> LossValue:
    """Cross-entropy of the classifier on one Gaussian-noised copy of each image."""
    probs, labels = _noisy_probs(model, images, labels, 1, sigma, rng,
                                 None if noise is None else noise.reshape((1,) + tuple(images.shape)))
    ce = cross_entropy(probs[0], labels).mean()
    return LossValue(ce, {"ce": float(ce.detach())})


def consistency_loss(model, images, labels, h: ConsistencyHparams, rng: RngStream | None = None,
                     noise=None, sigma=None) -> LossValue:
    """Average CE over ``h.m`` noisy copies + lam * mean KL(avg || F_j) + mu * H(avg).

    The averaged distribution is detached inside the KL term only; the
    entropy term keeps its gradient. ``sigma`` overrides ``h.sigma`` (used
    when the caller has already drawn per-example levels).
    """
    if sigma is None:
        sigma = sample_sigma(h, rng, images.shape[0]) if noise is None else 0.0
    probs, labels = _noisy_probs(model, images, labels, h.m, sigma, rng, noise)
    avg = probs.mean(0)
    ce = cross_entropy(probs, labels.expand(h.m, -1)).mean()
    kl = kl_divergence(avg.detach().expand_as(probs), probs).mean()
    ent = entropy(avg).mean()
    total = ce + h.lam * kl + h.mu * ent
    return LossValue(total, {"ce": float(ce.detach()), "kl": float(kl.detach()), "entropy": float(ent.detach())})
