"""Gradient-based optimization of sample-selection weights.

A relaxed weight in (0, 1) per sample is optimized by descent on an
information cost: a (negatively weighted) entropy term rewards diverse
subsets, a divergence term pulls the weighted subset toward the full
distribution, and a regularizer (k-sparse + L1 + binary-entropy) drives the
total mass to the target subset size and the individual weights to {0, 1}.
Discrete draws are relaxed through a temperature-controlled logistic
(concrete) transform so gradients flow; the noise is held fixed per step
(reparameterization) and redrawn each epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .datasets import FeatureDataset
from .kernels import LOG_FLOOR, KernelConfig, kernel_matrix, renyi_entropy, cs_divergence

WEIGHT_EPS = 1e-6  # relaxation clamp, keeps logits finite


class NonFiniteLossError(RuntimeError):
    """Raised when the selection loss becomes non-finite; carries the step."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SelectionConfig:
    """Hyperparameters of one selection run."""

    sample_count: int
    lambda_h2: float = -1.0
    lambda_cs: float = 1.0
    lambda_ksp: float = 5.0
    lambda_l1: float = 1.0
    lambda_h: float = 1.0
    learning_rate: float = 0.03
    epochs: int = 1500
    temperature: float = 1.0
    weight_init: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.lambda_h2 > 0:
            raise ValueError("lambda_h2 must be <= 0 (entropy is rewarded, not penalized)")
        if self.lambda_cs < 0 or self.lambda_ksp < 0 or self.lambda_l1 < 0 or self.lambda_h < 0:
            raise ValueError("lambda_cs, lambda_ksp, lambda_l1, lambda_h must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.weight_init < 1.0:
            raise ValueError("weight_init must lie in (0, 1)")


class TraceRecord(NamedTuple):
    step: int
    sum_w: float
    h2_term: float
    cs_term: float
    reg_term: float


@dataclass
class SelectionState:
    """Optimizer state: the relaxation, the last stochastic draw, and the trace."""

    relaxed_weights: np.ndarray
    last_sampled_weights: np.ndarray
    step_count: int
    trace: list[TraceRecord] = field(default_factory=list)


@dataclass
class SelectionResult:
    chosen_indices: np.ndarray  # sorted, distinct
    final_weights: np.ndarray
    diagnostics: dict | None = None


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def concrete_sample(w_hat, temperature: float, u):
    """Relaxed Bernoulli draw sigmoid((logit(w_hat) + logit(u)) / temperature).

    Differentiable in w_hat for fixed noise u. Scalar or vector arguments;
    all values must lie strictly inside (0, 1).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    w_hat_arr = np.asarray(w_hat, dtype=np.float64)
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(w_hat_arr <= 0) or np.any(w_hat_arr >= 1):
        raise ValueError("w_hat must lie strictly in (0, 1); clamp before sampling")
    if np.any(u_arr <= 0) or np.any(u_arr >= 1):
        raise ValueError("u must lie strictly in (0, 1)")
    out = _sigmoid((_logit(w_hat_arr) + _logit(u_arr)) / temperature)
    if np.isscalar(w_hat) and np.isscalar(u):
        return float(out)
    return out


def regularizer(w, cfg: SelectionConfig) -> float:
    """k-sparse + L1 + binary-entropy penalty, with 0*log 0 = 0."""
    w = np.asarray(w, dtype=np.float64).ravel()
    ksp = cfg.lambda_ksp * abs(cfg.sample_count - w.sum())
    l1 = cfg.lambda_l1 * np.abs(w).sum()
    wlogw = np.where(w > 0.0, w * np.log(np.where(w > 0.0, w, 1.0)), 0.0)
    vlogv = np.where(w < 1.0, (1.0 - w) * np.log(np.where(w < 1.0, 1.0 - w, 1.0)), 0.0)
    ent = -cfg.lambda_h * float(np.sum(wlogw + vlogv))
    return float(ksp + l1 + ent)


def info_loss(X, w, cfg: SelectionConfig, kcfg: KernelConfig) -> float:
    """Weighted entropy + divergence + regularizer evaluated at weights w."""
    from .kernels import weighted_renyi_entropy, weighted_cs_divergence

    h2 = weighted_renyi_entropy(X, w, kcfg)
    dcs = weighted_cs_divergence(X, w, kcfg)
    return cfg.lambda_h2 * h2 + cfg.lambda_cs * dcs + regularizer(w, cfg)


class _KernelCache:
    """Precomputed Gram pieces reused across optimization steps."""

    def __init__(self, X, kcfg: KernelConfig):
        feats = X.features if isinstance(X, FeatureDataset) else np.asarray(X)
        feats = np.asarray(feats, dtype=np.float64)
        self.n = feats.shape[0]
        self.K = kernel_matrix(feats, feats, kcfg.entropy_bandwidth)
        self.colsums = self.K.sum(axis=0)
        self.log_vx = float(np.log(max(self.K.mean(), LOG_FLOOR)))


def _loss_terms_and_grad(cache: _KernelCache, w_hat, u, cfg: SelectionConfig):
    """Loss pieces at w = concrete(w_hat, u) and the exact gradient in w_hat."""
    n = cache.n
    w = np.clip(
        _sigmoid((_logit(w_hat) + _logit(u)) / cfg.temperature), WEIGHT_EPS, 1.0 - WEIGHT_EPS
    )
    s = w.sum()
    kw = cache.K @ w
    q = float(w @ kw)        # w^T K w
    r = float(cache.colsums @ w)  # 1^T K w

    h2w = -np.log(max(q / (s * s), LOG_FLOOR))
    cross_h = -np.log(max(r / (n * s), LOG_FLOOR))
    dcs = 2.0 * cross_h + cache.log_vx - h2w

    logit_w = _logit(w)
    reg = (
        cfg.lambda_ksp * abs(cfg.sample_count - s)
        + cfg.lambda_l1 * s
        - cfg.lambda_h * float(np.sum(w * np.log(w) + (1.0 - w) * np.log1p(-w)))
    )

    # dL/dw for each term, then the chain factor through the concrete draw
    g_h2 = cfg.lambda_h2 * (-2.0 * kw / q + 2.0 / s)
    g_cs = cfg.lambda_cs * (-2.0 * cache.colsums / r + 2.0 * kw / q)
    g_reg = -cfg.lambda_ksp * np.sign(cfg.sample_count - s) + cfg.lambda_l1 - cfg.lambda_h * logit_w
    dw_dwhat = w * (1.0 - w) / (cfg.temperature * w_hat * (1.0 - w_hat))
    grad = (g_h2 + g_cs + g_reg) * dw_dwhat

    terms = TraceRecord(
        step=-1,
        sum_w=float(s),
        h2_term=float(cfg.lambda_h2 * h2w),
        cs_term=float(cfg.lambda_cs * max(dcs, 0.0)),
        reg_term=float(reg),
    )
    return w, grad, terms


def info_loss_gradient(X, w_hat, cfg: SelectionConfig, kcfg: KernelConfig, u) -> np.ndarray:
    """Exact gradient of info_loss(concrete_sample(w_hat, u)) in w_hat, u fixed."""
    cache = _KernelCache(X, kcfg)
    w_hat = np.clip(np.asarray(w_hat, dtype=np.float64), WEIGHT_EPS, 1.0 - WEIGHT_EPS)
    u = np.asarray(u, dtype=np.float64)
    _, grad, _ = _loss_terms_and_grad(cache, w_hat, u, cfg)
    return grad


def optimize_weights(X, cfg: SelectionConfig, kcfg: KernelConfig) -> SelectionState:
    """Descend the information cost for cfg.epochs steps with fresh noise each step."""
    cache = _KernelCache(X, kcfg)
    if cfg.sample_count > cache.n:
        raise ValueError(f"sample_count {cfg.sample_count} exceeds dataset size {cache.n}")
    rng = np.random.default_rng(cfg.seed)
    w_hat = np.full(cache.n, float(cfg.weight_init))
    w = w_hat.copy()
    trace: list[TraceRecord] = []
    for step in range(cfg.epochs):
        u = np.clip(rng.uniform(size=cache.n), WEIGHT_EPS, 1.0 - WEIGHT_EPS)
        w, grad, terms = _loss_terms_and_grad(cache, w_hat, u, cfg)
        loss = terms.h2_term + terms.cs_term + terms.reg_term
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NonFiniteLossError(step, f"non-finite selection loss at step {step}")
        w_hat = np.clip(w_hat - cfg.learning_rate * grad, WEIGHT_EPS, 1.0 - WEIGHT_EPS)
        trace.append(terms._replace(step=step))
    return SelectionState(
        relaxed_weights=w_hat, last_sampled_weights=w, step_count=cfg.epochs, trace=trace
    )


def top_indices(weights: np.ndarray, sn: int) -> np.ndarray:
    """Indices of the sn largest weights; ties broken by lower index."""
    order = np.argsort(-np.asarray(weights, dtype=np.float64), kind="stable")
    return np.sort(order[:sn])


def balanced_quotas(class_sizes: dict[int, int], sn: int) -> dict[int, int]:
    """Equal per-class targets totalling sn, remainder to ascending class ids,
    each capped by class size; shortfall redistributes while capacity remains."""
    classes = sorted(c for c, size in class_sizes.items() if size > 0)
    if not classes:
        raise ValueError("no nonempty classes to allocate over")
    base = sn // len(classes)
    quotas = {c: min(base, class_sizes[c]) for c in classes}
    leftover = sn - sum(quotas.values())
    while leftover > 0:
        progressed = False
        for c in classes:
            if leftover == 0:
                break
            if quotas[c] < class_sizes[c]:
                quotas[c] += 1
                leftover -= 1
                progressed = True
        if not progressed:
            break
    return quotas


def top_indices_per_class(weights, labels, quotas: dict[int, int]) -> np.ndarray:
    """Per class, the quota largest weights (ties to lower index); sorted union."""
    weights = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels)
    chosen = []
    for c, quota in sorted(quotas.items()):
        if quota <= 0:
            continue
        members = np.flatnonzero(labels == c)
        order = np.argsort(-weights[members], kind="stable")
        chosen.append(members[order[:quota]])
    if not chosen:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen))


def select_subset(
    state: SelectionState,
    sn: int,
    mode: str = "global",
    labels=None,
    dataset: FeatureDataset | None = None,
    kernel_config: KernelConfig | None = None,
) -> SelectionResult:
    """Discretize the optimized weights into a subset of sn indices.

    Global mode takes the top-sn weights outright; balanced mode splits the
    budget evenly across the classes present in `labels`. When the dataset and
    kernel config are given, the result carries (subset entropy, divergence to
    the full set) diagnostics.
    """
    weights = np.asarray(state.relaxed_weights, dtype=np.float64)
    if sn > weights.size:
        raise ValueError(f"sn {sn} exceeds number of weights {weights.size}")
    if mode == "global":
        chosen = top_indices(weights, sn)
    elif mode == "balanced":
        if labels is None:
            raise ValueError("balanced mode needs labels")
        labels = np.asarray(labels)
        sizes = {int(c): int(np.sum(labels == c)) for c in np.unique(labels)}
        chosen = top_indices_per_class(weights, labels, balanced_quotas(sizes, sn))
    else:
        raise ValueError(f"mode must be 'global' or 'balanced', got {mode!r}")

    diagnostics = None
    if dataset is not None and kernel_config is not None:
        sub = dataset.subset(chosen)
        diagnostics = {
            "subset_entropy": renyi_entropy(sub, kernel_config),
            "divergence_to_full": cs_divergence(dataset, sub, kernel_config),
        }
    return SelectionResult(chosen_indices=chosen, final_weights=weights, diagnostics=diagnostics)


def write_trace_csv(state: SelectionState, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "sum_w", "h2_term", "cs_term", "reg_term"])
        for rec in state.trace:
            writer.writerow([rec.step, rec.sum_w, rec.h2_term, rec.cs_term, rec.reg_term])
