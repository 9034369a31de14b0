"""Dual replay memory: a fast reservoir-sampled buffer plus a slow curated
buffer, with joint capacity accounting and replay-batch sampling.

A DualMemory is a single-owner mutable structure; callers needing concurrency
must serialize access. The fast buffer only ever changes through reservoir
updates or resets; the slow buffer only through explicit insertion, balanced
pruning, or the reservoir ablation path.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


@dataclass
class MemoryRecord:
    """One stored sample: features, class label, and logits at capture time."""

    features: np.ndarray
    label: int
    logits: np.ndarray


@dataclass
class ReplayBatch:
    records: list[MemoryRecord]
    provenance: list[str]  # "slow" or "fast" per record

    def features_matrix(self) -> np.ndarray:
        return np.stack([r.features for r in self.records])

    def labels_vector(self) -> np.ndarray:
        return np.asarray([r.label for r in self.records], dtype=np.int64)

    def logits_matrix(self) -> np.ndarray:
        return np.stack([r.logits for r in self.records])


class DualMemory:
    """Fast + slow buffers with a joint cap on total stored records."""

    def __init__(self, fast_capacity: int, slow_capacity: int,
                 max_capacity: int | None = None,
                 seed: int | np.random.Generator = 0):
        if fast_capacity < 0 or slow_capacity < 0:
            raise ValueError("capacities must be nonnegative")
        if max_capacity is None:
            max_capacity = fast_capacity + slow_capacity
        if fast_capacity + slow_capacity > max_capacity:
            raise ValueError(
                f"fast {fast_capacity} + slow {slow_capacity} exceed max {max_capacity}"
            )
        self.fast_capacity = fast_capacity
        self.slow_capacity = slow_capacity
        self.max_capacity = max_capacity
        self.fast: list[MemoryRecord] = []
        self.slow: list[MemoryRecord] = []
        self.seen_count = 0        # streamed into fast since last reset
        self.slow_seen_count = 0   # streamed into slow (reservoir ablation only)
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.fast) + len(self.slow)

    def reservoir_update(self, record: MemoryRecord) -> "DualMemory":
        """Classic streaming reservoir insert into the fast buffer."""
        if self.fast_capacity == 0:
            return self
        self.seen_count += 1
        if len(self.fast) < self.fast_capacity:
            self.fast.append(record)
        else:
            slot = int(self._rng.integers(0, self.seen_count))
            if slot < self.fast_capacity:
                self.fast[slot] = record
        return self

    def reservoir_update_into_slow(self, record: MemoryRecord) -> "DualMemory":
        """Reservoir insert into the slow buffer (ablation baseline only)."""
        if self.slow_capacity == 0:
            return self
        self.slow_seen_count += 1
        if len(self.slow) < self.slow_capacity:
            self.slow.append(record)
        else:
            slot = int(self._rng.integers(0, self.slow_seen_count))
            if slot < self.slow_capacity:
                self.slow[slot] = record
        return self

    def reset_fast(self) -> "DualMemory":
        self.fast = []
        self.seen_count = 0
        return self

    def insert_slow(self, records: list[MemoryRecord]) -> "DualMemory":
        if len(self.slow) + len(records) > self.slow_capacity:
            raise ValueError(
                f"inserting {len(records)} records would exceed slow capacity "
                f"{self.slow_capacity} (currently {len(self.slow)})"
            )
        if len(self) + len(records) > self.max_capacity:
            raise ValueError("insertion would exceed joint memory capacity")
        self.slow.extend(records)
        return self

    def slow_class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for rec in self.slow:
            counts[rec.label] = counts.get(rec.label, 0) + 1
        return counts

    def sample_replay(self, batch_size: int, frac_slow: float, frac_fast: float,
                      rng: np.random.Generator | None = None) -> ReplayBatch:
        """Draw a replay batch, slow records first, uniformly with replacement.

        Shares are round(frac * batch_size) half-up, then trimmed or padded on
        the slow side so exactly batch_size records come back. An empty source
        hands its share to the other; each nonzero share is one rng.integers
        call of that size, slow share first.
        """
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.slow and not self.fast:
            raise ValueError("cannot sample replay from two empty buffers")
        if rng is None:
            rng = self._rng
        n_slow = int(np.floor(frac_slow * batch_size + 0.5))
        n_fast = int(np.floor(frac_fast * batch_size + 0.5))
        n_slow = max(0, n_slow + (batch_size - n_slow - n_fast))
        n_fast = batch_size - n_slow
        if not self.slow:
            n_fast += n_slow
            n_slow = 0
        elif not self.fast:
            n_slow += n_fast
            n_fast = 0
        records: list[MemoryRecord] = []
        provenance: list[str] = []
        if n_slow > 0:
            for i in rng.integers(0, len(self.slow), size=n_slow):
                records.append(self.slow[int(i)])
                provenance.append("slow")
        if n_fast > 0:
            for i in rng.integers(0, len(self.fast), size=n_fast):
                records.append(self.fast[int(i)])
                provenance.append("fast")
        return ReplayBatch(records=records, provenance=provenance)


def slow_capacity_for_task(m_max: int, k_next: int, k_prev: int = 0) -> tuple[int, int]:
    """Per-class quota floor((m_max/2)/k_next) and the slots that frees.

    The quota never drops below one record per class, so every observed
    category keeps at least a prototype; the joint capacity cap still governs
    overall occupancy. Free slots are (m_max/2) - quota*k_prev, floored at 0.
    """
    if k_next < 1:
        raise ValueError("k_next must be >= 1")
    if k_prev < 0:
        raise ValueError("k_prev must be >= 0")
    half = m_max // 2
    quota = half // k_next
    if quota == 0:
        quota = 1
    return quota, max(0, half - quota * k_prev)


# ---------------------------------------------------------------------------
# Buffer snapshots: CSV sidecar of per-record metadata plus a binary feature
# blob headed by one JSON line.

def save_snapshot(mem: DualMemory, path_stem) -> None:
    records = [("fast", r) for r in mem.fast] + [("slow", r) for r in mem.slow]
    logit_dim = len(records[0][1].logits) if records else 0
    feat_dim = len(records[0][1].features) if records else 0
    with open(f"{path_stem}.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["slot", "buffer", "label"] + [f"logit_{j}" for j in range(logit_dim)])
        for slot, (buf, rec) in enumerate(records):
            writer.writerow([slot, buf, rec.label] + [repr(float(v)) for v in rec.logits])
    header = {
        "n": len(records),
        "d": feat_dim,
        "dtype": "<f8",
        "fast_capacity": mem.fast_capacity,
        "slow_capacity": mem.slow_capacity,
        "max_capacity": mem.max_capacity,
        "seen_count": mem.seen_count,
        "slow_seen_count": mem.slow_seen_count,
    }
    with open(f"{path_stem}.bin", "wb") as f:
        f.write(json.dumps(header).encode("ascii") + b"\n")
        if records:
            feats = np.stack([rec.features for _, rec in records]).astype("<f8")
            f.write(np.ascontiguousarray(feats).tobytes())


def load_snapshot(path_stem, seed: int = 0) -> DualMemory:
    with open(f"{path_stem}.bin", "rb") as f:
        header = json.loads(f.readline().decode("ascii"))
        n, d = header["n"], header["d"]
        raw = f.read(n * d * 8)
        if len(raw) != n * d * 8:
            raise ValueError(f"{path_stem}.bin: truncated feature blob")
        feats = np.frombuffer(raw, dtype="<f8").reshape(n, d) if n else np.empty((0, d))
    mem = DualMemory(
        fast_capacity=header["fast_capacity"],
        slow_capacity=header["slow_capacity"],
        max_capacity=header["max_capacity"],
        seed=seed,
    )
    mem.seen_count = header["seen_count"]
    mem.slow_seen_count = header.get("slow_seen_count", 0)
    with open(f"{path_stem}.csv", newline="") as f:
        reader = csv.reader(f)
        head = next(reader)
        logit_cols = len(head) - 3
        for slot, row in enumerate(reader):
            rec = MemoryRecord(
                features=feats[slot].copy(),
                label=int(row[2]),
                logits=np.asarray([float(v) for v in row[3 : 3 + logit_cols]]),
            )
            (mem.fast if row[1] == "fast" else mem.slow).append(rec)
    if len(mem.fast) > mem.fast_capacity or len(mem.slow) > mem.slow_capacity:
        raise ValueError(f"{path_stem}.csv: snapshot exceeds recorded capacities")
    return mem
