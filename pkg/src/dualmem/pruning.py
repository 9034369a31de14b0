"""Balanced pruning of the slow buffer.

Each class is reduced to a per-class quota: the class centre (smallest mean
cosine distance to its classmates) is always kept, then members with the
highest diversity (cosine distance to the centre) fill the remaining slots.
Scores depend only on feature directions, so positive rescaling never changes
the outcome.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .buffers import DualMemory


def cosine_distance(x, y) -> float:
    """1 - cos(x, y); in [0, 2]. Zero vectors are rejected."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("cosine distance undefined for zero vectors")
    return float(1.0 - (x @ y) / (nx * ny))


def _cosine_distance_matrix(features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine distance undefined for zero vectors")
    sims = (feats / norms[:, None]) @ (feats / norms[:, None]).T
    return 1.0 - sims


def central_sample(features: np.ndarray) -> int:
    """Index of the member minimizing mean cosine distance to the others."""
    feats = np.asarray(features, dtype=np.float64)
    m = feats.shape[0]
    if m == 0:
        raise ValueError("empty class partition")
    if m == 1:
        return 0
    dist = _cosine_distance_matrix(feats)
    mean_others = (dist.sum(axis=1) - np.diag(dist)) / (m - 1)
    return int(np.argmin(mean_others))  # argmin takes the lowest index on ties


def diversity_scores(features: np.ndarray, central_idx: int | None = None) -> np.ndarray:
    """Cosine distance of every member to the class centre (centre scores 0)."""
    feats = np.asarray(features, dtype=np.float64)
    if central_idx is None:
        central_idx = central_sample(feats)
    centre = feats[central_idx]
    return np.asarray([cosine_distance(f, centre) for f in feats])


def removal_scores(diversities: np.ndarray) -> np.ndarray:
    """1 - d_j / sum of the other diversities; low score = keep.

    Degenerate denominators: a member whose classmates are all at the centre
    scores 0 if it is diverse itself, and 1 when every diversity is zero.
    """
    d = np.asarray(diversities, dtype=np.float64)
    if d.size < 2:
        raise ValueError("removal scores need at least two members")
    total = d.sum()
    denom = total - d
    out = np.empty_like(d)
    pos = denom > 0.0
    out[pos] = 1.0 - d[pos] / denom[pos]
    out[~pos] = np.where(d[~pos] == 0.0, 1.0, 0.0)
    return out


def _plan_retention(features: np.ndarray, quota: int) -> np.ndarray:
    """Local indices to keep: the centre first, then highest diversity."""
    m = features.shape[0]
    if quota <= 0:
        return np.empty(0, dtype=np.int64)
    if m <= quota:
        return np.arange(m)
    centre = central_sample(features)
    div = diversity_scores(features, centre)
    others = np.asarray([j for j in range(m) if j != centre])
    order = others[np.argsort(-div[others], kind="stable")]
    return np.sort(np.concatenate([[centre], order[: quota - 1]]))


@dataclass
class DiversityRow:
    class_id: int
    index: int  # position within the slow buffer
    diversity: float
    removal_score: float
    retained: bool


def diversity_table(mem: DualMemory, quota: int) -> list[DiversityRow]:
    """Per-record diversity and removal scores plus the retention verdict."""
    rows: list[DiversityRow] = []
    labels = np.asarray([rec.label for rec in mem.slow])
    for c in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == c)
        feats = np.stack([mem.slow[i].features for i in members])
        centre = central_sample(feats)
        div = diversity_scores(feats, centre)
        if members.size >= 2:
            rem = removal_scores(div)
        else:
            rem = np.zeros(1)
        keep = set(_plan_retention(feats, quota).tolist())
        for local, buf_idx in enumerate(members):
            rows.append(
                DiversityRow(
                    class_id=int(c),
                    index=int(buf_idx),
                    diversity=float(div[local]),
                    removal_score=float(rem[local]),
                    retained=local in keep,
                )
            )
    return rows


def write_diversity_csv(rows: list[DiversityRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "index", "diversity", "removal_score", "retained_flag"])
        for r in rows:
            writer.writerow([r.class_id, r.index, r.diversity, r.removal_score, int(r.retained)])


def balanced_remove(mem: DualMemory, quota: int) -> DualMemory:
    """Prune every slow-buffer class to at most `quota` members in place.

    If the floor-of-one quota still exceeds the slow capacity, the largest
    classes (ties: highest class id) lose their least diverse remaining
    member until the buffer fits.
    """
    if quota < 0:
        raise ValueError("quota must be nonnegative")
    if not mem.slow:
        return mem
    labels = np.asarray([rec.label for rec in mem.slow])
    keep_mask = np.zeros(len(mem.slow), dtype=bool)
    for c in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == c)
        feats = np.stack([mem.slow[i].features for i in members])
        keep_mask[members[_plan_retention(feats, quota)]] = True

    kept = [rec for rec, keep in zip(mem.slow, keep_mask) if keep]
    # joint capacity still governs when quota*classes exceeds the slow buffer
    while len(kept) > mem.slow_capacity:
        counts: dict[int, int] = {}
        for rec in kept:
            counts[rec.label] = counts.get(rec.label, 0) + 1
        victim_class = max(counts, key=lambda c: (counts[c], c))
        members = [i for i, rec in enumerate(kept) if rec.label == victim_class]
        feats = np.stack([kept[i].features for i in members])
        if len(members) == 1:
            drop = members[0]
        else:
            centre = central_sample(feats)
            div = diversity_scores(feats, centre)
            non_centre = [j for j in range(len(members)) if j != centre]
            drop = members[min(non_centre, key=lambda j: (div[j], j))]
        kept.pop(drop)
    mem.slow = kept
    return mem
