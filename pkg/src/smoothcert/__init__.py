"""Denoising masked autoencoder pre-training and Gaussian randomized-smoothing certification."""

from .numerics import (ConfidenceParams, RngStream, binom_two_sided_pvalue, clopper_pearson_lower,
                       gaussian_sample, std_normal_cdf, std_normal_quantile)
from .smoothing import ABSTAIN, CertResult, SmoothedClassifier, certify, predict

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN", "CertResult", "ConfidenceParams", "RngStream", "SmoothedClassifier", "binom_two_sided_pvalue",
    "certify", "clopper_pearson_lower", "gaussian_sample", "predict", "std_normal_cdf", "std_normal_quantile",
]
