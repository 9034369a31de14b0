"""Gaussian-kernel estimators of information potential, second-order Renyi
entropy, cross-entropy, and Cauchy-Schwarz divergence.

Density evaluation uses the configured bandwidth sigma directly; every
entropy-level estimator widens it to sqrt(2)*sigma, so pairwise terms are
exp(-||x - y||^2 / (4 sigma^2)). Logs are natural (entropies in nats) and
kernel sums are floored at 1e-300 before the log so widely separated data
stays finite. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datasets import FeatureDataset

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel bandwidth; assumes features roughly in [0, 1] per dim."""

    sigma: float = 0.01

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def entropy_bandwidth(self) -> float:
        return math.sqrt(2.0) * self.sigma


def _features(x) -> np.ndarray:
    feats = x.features if isinstance(x, FeatureDataset) else np.asarray(x)
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError(f"need a nonempty (n, d) feature matrix, got shape {feats.shape}")
    return feats


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between all rows of a and b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def kernel_matrix(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gram matrix exp(-||a_i - b_j||^2 / (2 bandwidth^2))."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return np.exp(pairwise_sq_dists(a, b) / (-2.0 * bandwidth * bandwidth))


def gaussian_kernel(x, y, bandwidth: float) -> float:
    """Kernel value exp(-||x - y||^2 / (2 bandwidth^2)) for two vectors."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(diff @ diff / (-2.0 * bandwidth * bandwidth)))


def _safe_log(v: float) -> float:
    return math.log(max(v, LOG_FLOOR))


def information_potential(X, cfg: KernelConfig) -> float:
    """Mean pairwise kernel value of a dataset; in (0, 1]."""
    feats = _features(X)
    return float(kernel_matrix(feats, feats, cfg.entropy_bandwidth).mean())


def renyi_entropy(X, cfg: KernelConfig) -> float:
    """Second-order Renyi entropy -log(information potential); >= 0."""
    return -_safe_log(information_potential(X, cfg)) + 0.0


def cross_information_potential(X, Xs, cfg: KernelConfig) -> float:
    """Mean kernel value across two datasets; symmetric in its arguments."""
    return float(kernel_matrix(_features(X), _features(Xs), cfg.entropy_bandwidth).mean())


def cross_renyi_entropy(X, Xs, cfg: KernelConfig) -> float:
    return -_safe_log(cross_information_potential(X, Xs, cfg)) + 0.0


def cs_divergence(X, Xs, cfg: KernelConfig) -> float:
    """Cauchy-Schwarz divergence 2*H2(X,Xs) - H2(X) - H2(Xs), clamped at 0."""
    d = (
        2.0 * cross_renyi_entropy(X, Xs, cfg)
        - renyi_entropy(X, cfg)
        - renyi_entropy(Xs, cfg)
    )
    return max(d, 0.0)


def _check_weights(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.shape != (n,):
        raise ValueError(f"weight vector has length {w.size}, expected {n}")
    if w.min() < 0.0 or w.max() > 1.0:
        raise ValueError("weights must lie in [0, 1]")
    if w.sum() <= 0.0:
        raise ValueError("weights sum to zero")
    return w


def _binary_support(w: np.ndarray) -> np.ndarray | None:
    """Indices of the selected subset when w is exactly 0/1, else None."""
    if np.all((w == 0.0) | (w == 1.0)):
        return np.flatnonzero(w == 1.0)
    return None


def weighted_information_potential(X, w, cfg: KernelConfig) -> float:
    """Self-normalized weighted potential (w^T K w) / (sum w)^2.

    Exactly equals the plain information potential of the selected subset
    whenever w is binary.
    """
    feats = _features(X)
    w = _check_weights(w, feats.shape[0])
    support = _binary_support(w)
    if support is not None:
        return information_potential(feats[support], cfg)
    K = kernel_matrix(feats, feats, cfg.entropy_bandwidth)
    s = w.sum()
    return float(w @ K @ w / (s * s))


def weighted_cross_ip(X, w, cfg: KernelConfig) -> float:
    """Cross potential between a dataset and its weighted self, (1^T K w)/(n sum w)."""
    feats = _features(X)
    w = _check_weights(w, feats.shape[0])
    support = _binary_support(w)
    if support is not None:
        return cross_information_potential(feats, feats[support], cfg)
    K = kernel_matrix(feats, feats, cfg.entropy_bandwidth)
    return float(K.sum(axis=0) @ w / (feats.shape[0] * w.sum()))


def weighted_renyi_entropy(X, w, cfg: KernelConfig) -> float:
    return -_safe_log(weighted_information_potential(X, w, cfg)) + 0.0


def weighted_cs_divergence(X, w, cfg: KernelConfig) -> float:
    """Divergence between a dataset and its weighted self, clamped at 0."""
    d = (
        2.0 * (-_safe_log(weighted_cross_ip(X, w, cfg)))
        - renyi_entropy(X, cfg)
        - weighted_renyi_entropy(X, w, cfg)
    )
    return max(d, 0.0)
