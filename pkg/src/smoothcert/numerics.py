"""Scalar statistics and seeded randomness used by certification and training.

Gaussian CDF / quantile, one-sided Clopper-Pearson lower bounds, the exact
two-sided binomial test at p = 1/2, and a counter-based Gaussian sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_MASK64 = (1 << 64) - 1


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF.

    Computed as ``erfc(-z / sqrt(2)) / 2`` with the C library erfc, which is
    accurate to a few ulp in relative terms, so the lower tail keeps full
    relative precision and the absolute error is well under 1e-15 on [-8, 8].
    """
    return 0.5 * math.erfc(-z / _SQRT2)


def _std_normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / _SQRT2PI


# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def std_normal_quantile(p: float) -> float:
    """Inverse of :func:`std_normal_cdf` on (0, 1).

    Rational initial guess, then Halley steps on the CDF. Upper-half inputs
    are reflected through ``1 - p`` (exact in floating point for p >= 0.5)
    so the refinement always runs in the well-conditioned lower tail.
    """
    if not 0.0 < p < 1.0 or math.isnan(p):
        raise ValueError(f"quantile requires 0 < p < 1, got {p!r}")
    if p > 0.5:
        return -std_normal_quantile(1.0 - p)
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    for _ in range(3):
        err = std_normal_cdf(x) - p
        u = err / _std_normal_pdf(x)
        step = u / (1.0 + 0.5 * x * u)
        x -= step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def _check_counts(k: int, n: int) -> None:
    if n < 1 or k < 0 or k > n:
        raise ValueError(f"invalid binomial counts k={k}, n={n}")


def clopper_pearson_lower(k: int, n: int, alpha: float, tol: float = 1e-12) -> float:
    """One-sided (1 - alpha) Clopper-Pearson lower bound on a binomial proportion.

    Solves ``P[Binomial(n, p) >= k] = alpha`` for p, i.e. the alpha-quantile
    of Beta(k, n - k + 1), by bisection on the regularized incomplete beta
    function. k = 0 gives 0 and k = n the closed form ``alpha ** (1 / n)``.
    """
    _check_counts(k, n)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if k == 0:
        return 0.0
    if k == n:
        return alpha ** (1.0 / n)
    a, b = float(k), float(n - k + 1)
    lo, hi = 0.0, k / n
    # I_p(a, b) is increasing in p; I_{k/n}(a, b) >= alpha for any alpha < 1/2
    # is not guaranteed, so widen if needed.
    if special.betainc(a, b, hi) < alpha:
        hi = 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if special.betainc(a, b, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return lo


def binom_two_sided_pvalue(k: int, n: int) -> float:
    """Exact two-sided binomial test p-value against success probability 1/2."""
    if n == 0:
        return 1.0
    _check_counts(k, n)
    if 2 * k == n:
        return 1.0
    hi = max(k, n - k)
    # P[X >= hi] = I_{1/2}(hi, n - hi + 1); symmetric so the two tails are equal.
    tail = float(special.betainc(hi, n - hi + 1, 0.5))
    return min(1.0, 2.0 * tail)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by Philox with the pair used directly as its 128-bit key, so any
    stream can be re-derived from its ids alone. ``position`` counts the
    uniform doubles consumed so far; draws are sequential, so splitting a
    request into chunks yields the same values as one large request.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.position = 0

    def child(self, *ids: int) -> "RngStream":
        """Independent stream for a sub-task, e.g. ``rng.child(example, batch)``."""
        sid = self.stream_id
        for i in ids:
            sid = _splitmix64(sid ^ _splitmix64(int(i) & _MASK64))
        return RngStream(self.seed, sid)

    def uniform(self, count: int) -> np.ndarray:
        """``count`` doubles uniform on [0, 1)."""
        out = self._gen.random(int(count))
        self.position += int(count)
        return out

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, position={self.position})"


def gaussian_sample(rng: RngStream, count: int, sigma: float) -> np.ndarray:
    """``count`` i.i.d. draws from N(0, sigma^2) via Box-Muller.

    Each output uses exactly two consecutive uniforms (cosine branch only),
    which keeps the stream-to-sample mapping independent of how a caller
    chunks its requests.
    """
    if sigma < 0 or math.isnan(sigma):
        raise ValueError(f"sigma must be >= 0, got {sigma!r}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    u = rng.uniform(2 * count).reshape(count, 2)
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
    z = radius * np.cos(2.0 * math.pi * u[:, 1])
    if sigma == 0:
        return np.zeros(count)
    return sigma * z


@dataclass(frozen=True)
class ConfidenceParams:
    alpha: float = 0.001
    n0: int = 100
    n: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n0 < 1 or self.n < self.n0:
            raise ValueError(f"need n >= n0 >= 1, got n={self.n}, n0={self.n0}")
