"""Sequential-task training loop over the dual memory system.

One run trains an MLP task by task. Every step optimizes current-batch cross
entropy plus two replay terms drawn independently from the buffers: a
logit-matching penalty (alpha) against stored logits and a label cross
entropy (beta). At each non-final task boundary the slow buffer is pruned to
a per-class quota and refilled with samples selected from the task just
completed; their logits are captured by a forward pass at insertion time.

Methods:
  itdms            dual buffers, balanced pruning + information-driven refill
  itdms-reservoir  dual buffers, both maintained by reservoir sampling
  der++-single     a single reservoir buffer (fast = full capacity, slow = 0)
  sgd-none         no buffers, plain sequential training
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .buffers import DualMemory, MemoryRecord, slow_capacity_for_task
from .datasets import FeatureDataset, TaskStream
from .kernels import KernelConfig
from .mlp import (
    MlpNet,
    add_scaled,
    backward,
    cross_entropy,
    forward,
    grad_cross_entropy,
    grad_mse_logits,
    mse_logits,
    predict,
    sgd_step,
)
from .pruning import balanced_remove
from .selection import SelectionConfig, optimize_weights, top_indices_per_class

log = logging.getLogger("dualmem.harness")

METHODS = ("itdms", "itdms-reservoir", "der++-single", "sgd-none")


@dataclass(frozen=True)
class SelectionSettings:
    """Selection hyperparameters shared by every task boundary of a run."""

    lambda_h2: float = -1.0
    lambda_cs: float = 1.0
    lambda_ksp: float = 5.0
    lambda_l1: float = 1.0
    lambda_h: float = 1.0
    learning_rate: float = 0.03
    epochs: int = 500
    temperature: float = 1.0
    weight_init: float = 0.1

    def to_config(self, sample_count: int, seed: int) -> SelectionConfig:
        return SelectionConfig(sample_count=sample_count, seed=seed, **asdict(self))


@dataclass(frozen=True)
class HarnessConfig:
    method: str = "itdms"
    epochs_per_task: int = 1
    batch_size: int = 32
    replay_batch_size: int = 32
    learning_rate: float = 0.05
    alpha: float = 0.1   # logit-matching replay weight
    beta: float = 0.5    # label-replay weight
    hidden_size: int = 100
    max_memory: int = 200
    fast_capacity: int | None = None  # None: method-dependent split of max_memory
    slow_capacity: int | None = None
    frac_slow: float = 0.5
    frac_fast: float = 0.5
    reset_fast: bool = False
    bss_enabled: bool = True
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    kernel_sigma: float = 0.01
    seed: int = 0
    record_losses: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not (0 <= self.frac_slow <= 1 and 0 <= self.frac_fast <= 1):
            raise ValueError("replay fractions must lie in [0, 1]")
        if self.batch_size < 1 or self.replay_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")

    def buffer_split(self) -> tuple[int, int]:
        if self.method == "sgd-none":
            return 0, 0
        if self.method == "der++-single":
            return self.max_memory, 0
        fast = self.max_memory // 2 if self.fast_capacity is None else self.fast_capacity
        slow = self.max_memory - self.max_memory // 2 if self.slow_capacity is None else self.slow_capacity
        return fast, slow


@dataclass
class LossBreakdown:
    ce: float
    replay_mse: float
    replay_ce: float

    @property
    def total(self) -> float:
        return self.ce + self.replay_mse + self.replay_ce


@dataclass
class RunMetrics:
    """Lower-triangular accuracy matrix plus the derived summary numbers."""

    accuracy_matrix: np.ndarray            # [trained task, eval task], nan above diagonal
    average_accuracy: float                # mean of the final row
    forgetting: np.ndarray                 # per task: peak accuracy minus final
    per_class_accuracy: dict[int, float]   # after the final task
    method: str
    seed: int
    losses: list[LossBreakdown] | None = None

    def summary_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "average_accuracy": self.average_accuracy,
            "forgetting": [float(v) for v in self.forgetting],
            "per_class_accuracy": {str(k): float(v) for k, v in sorted(self.per_class_accuracy.items())},
        }


def write_metrics_csv(metrics: RunMetrics, path) -> None:
    n = metrics.accuracy_matrix.shape[0]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["train_task", "eval_task", "accuracy"])
        for i in range(n):
            for j in range(i + 1):
                writer.writerow([i, j, repr(float(metrics.accuracy_matrix[i, j]))])


def write_summary_json(metrics: RunMetrics, path, config_echo: dict | None = None) -> None:
    payload = metrics.summary_dict()
    if config_echo is not None:
        payload["config"] = config_echo
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def train_step(
    net: MlpNet,
    features: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    beta: float,
    lr: float,
    replay_for_logits=None,
    replay_for_labels=None,
) -> LossBreakdown:
    """One SGD step on CE(batch) + alpha*logit-match + beta*replay-CE.

    The two replay batches are independent draws (or None on the first task);
    a zero coefficient skips its term entirely, so alpha = beta = 0 is
    bit-identical to a plain cross-entropy step.
    """
    logits, trace = forward(net, features)
    ce = cross_entropy(logits, labels)
    grads = backward(net, trace, grad_cross_entropy(logits, labels))

    replay_mse = 0.0
    if alpha > 0 and replay_for_logits is not None and replay_for_logits.records:
        stored = replay_for_logits.logits_matrix()
        r_logits, r_trace = forward(net, replay_for_logits.features_matrix())
        replay_mse = alpha * mse_logits(stored, r_logits)
        grads = add_scaled(grads, backward(net, r_trace, grad_mse_logits(r_logits, stored)), alpha)

    replay_ce = 0.0
    if beta > 0 and replay_for_labels is not None and replay_for_labels.records:
        r_labels = replay_for_labels.labels_vector()
        r_logits, r_trace = forward(net, replay_for_labels.features_matrix())
        replay_ce = beta * cross_entropy(r_logits, r_labels)
        grads = add_scaled(grads, backward(net, r_trace, grad_cross_entropy(r_logits, r_labels)), beta)

    sgd_step(net, grads, lr)
    return LossBreakdown(ce=ce, replay_mse=replay_mse, replay_ce=replay_ce)


def capture_records(net: MlpNet, ds: FeatureDataset, indices) -> list[MemoryRecord]:
    """Build memory records with logits from a fresh forward pass."""
    idx = np.asarray(indices)
    logits, _ = forward(net, ds.features[idx])
    logits = np.atleast_2d(logits)
    return [
        MemoryRecord(features=ds.features[i].copy(), label=int(ds.labels[i]), logits=logits[k].copy())
        for k, i in enumerate(idx)
    ]


def end_of_task(
    mem: DualMemory,
    net: MlpNet,
    task_data: FeatureDataset,
    cfg: HarnessConfig,
    selection_seed: int,
) -> DualMemory:
    """Slow-buffer maintenance after a completed task.

    Prunes every class to the quota implied by the classes seen so far, then
    fills per-class headroom with samples selected from the completed task's
    training set (balanced across its classes), logits captured now. The fast
    buffer is reset afterwards iff the config says so.
    """
    slow_counts = mem.slow_class_counts()
    task_classes = {int(c) for c in np.unique(task_data.labels)}
    k_prev = len(slow_counts)
    k_seen = len(set(slow_counts) | task_classes)
    quota, _ = slow_capacity_for_task(cfg.max_memory, k_seen, k_prev)

    if cfg.bss_enabled and mem.slow:
        balanced_remove(mem, quota)
        slow_counts = mem.slow_class_counts()

    free = mem.slow_capacity - len(mem.slow)
    if free > 0:
        class_sizes = {c: int(np.sum(task_data.labels == c)) for c in sorted(task_classes)}
        targets = {
            c: min(max(0, quota - slow_counts.get(c, 0)), class_sizes[c])
            for c in sorted(task_classes)
        }
        while sum(targets.values()) > free:
            victim = max(targets, key=lambda c: (targets[c], c))
            targets[victim] -= 1
        sn = sum(targets.values())
        if sn > 0:
            sel_cfg = cfg.selection.to_config(sample_count=sn, seed=selection_seed)
            state = optimize_weights(task_data, sel_cfg, KernelConfig(cfg.kernel_sigma))
            chosen = top_indices_per_class(state.relaxed_weights, task_data.labels, targets)
            mem.insert_slow(capture_records(net, task_data, chosen))
            log.debug("slow buffer refilled with %d records (quota %d)", sn, quota)

    if cfg.reset_fast:
        mem.reset_fast()
    return mem


def evaluate(net: MlpNet, stream: TaskStream, after_task_index: int) -> np.ndarray:
    """Accuracy on every seen task's test set; masked argmax under task-il."""
    if after_task_index >= stream.n_tasks:
        raise ValueError("after_task_index past the end of the stream")
    accs = np.empty(after_task_index + 1)
    for t in range(after_task_index + 1):
        task = stream.tasks[t]
        allowed = np.asarray(task.label_space) if stream.scenario == "task-il" else None
        preds = predict(net, task.test.features, allowed=allowed)
        accs[t] = float(np.mean(preds == task.test.labels))
    return accs


def _run_rngs(seed: int):
    """Independent per-concern generators; order is part of the run contract."""
    children = np.random.SeedSequence(seed).spawn(5)
    return {
        "net": np.random.default_rng(children[0]),
        "batches": np.random.default_rng(children[1]),
        "memory": np.random.default_rng(children[2]),
        "replay": np.random.default_rng(children[3]),
        "selection": np.random.default_rng(children[4]),
    }


def run(stream: TaskStream, cfg: HarnessConfig, on_task_end=None) -> RunMetrics:
    """Train tasks in order, evaluating on all seen test sets after each.

    `on_task_end(task_index, net, mem)` fires after each task's evaluation and
    before boundary maintenance, e.g. to snapshot the buffers.
    """
    rngs = _run_rngs(cfg.seed)
    n_tasks = stream.n_tasks
    all_classes = stream.all_classes()
    n_classes = int(all_classes.max()) + 1
    d = stream.tasks[0].train.d

    net = MlpNet([d, cfg.hidden_size, cfg.hidden_size, n_classes], seed=rngs["net"])
    fast_cap, slow_cap = cfg.buffer_split()
    mem = None
    if cfg.method != "sgd-none":
        mem = DualMemory(fast_cap, slow_cap, max_capacity=cfg.max_memory, seed=rngs["memory"])

    losses: list[LossBreakdown] | None = [] if cfg.record_losses else None
    matrix = np.full((n_tasks, n_tasks), np.nan)

    for t, task in enumerate(stream.tasks):
        n = task.train.n
        for _ in range(cfg.epochs_per_task):
            order = rngs["batches"].permutation(n)
            for start in range(0, n, cfg.batch_size):
                chunk = order[start : start + cfg.batch_size]
                feats = task.train.features[chunk]
                labels = task.train.labels[chunk]

                replay_logits = replay_labels = None
                if mem is not None and len(mem) > 0:
                    if cfg.alpha > 0:
                        replay_logits = mem.sample_replay(
                            cfg.replay_batch_size, cfg.frac_slow, cfg.frac_fast, rngs["replay"]
                        )
                    if cfg.beta > 0:
                        replay_labels = mem.sample_replay(
                            cfg.replay_batch_size, cfg.frac_slow, cfg.frac_fast, rngs["replay"]
                        )

                logits_cur, _ = forward(net, feats)
                step_loss = train_step(
                    net, feats, labels, cfg.alpha, cfg.beta, cfg.learning_rate,
                    replay_for_logits=replay_logits, replay_for_labels=replay_labels,
                )
                if losses is not None:
                    losses.append(step_loss)

                if mem is not None:
                    for k, i in enumerate(chunk):
                        rec = MemoryRecord(
                            features=task.train.features[i].copy(),
                            label=int(task.train.labels[i]),
                            logits=np.atleast_2d(logits_cur)[k].copy(),
                        )
                        mem.reservoir_update(rec)
                        if cfg.method == "itdms-reservoir":
                            mem.reservoir_update_into_slow(rec)

        matrix[t, : t + 1] = evaluate(net, stream, t)
        log.info("task %d/%d done, seen-task accuracies %s", t + 1, n_tasks, matrix[t, : t + 1])
        if on_task_end is not None:
            on_task_end(t, net, mem)

        if t < n_tasks - 1 and mem is not None:
            if cfg.method == "itdms" and mem.slow_capacity > 0:
                selection_seed = int(rngs["selection"].integers(2**63))
                end_of_task(mem, net, task.train, cfg, selection_seed)
            elif cfg.method == "itdms-reservoir" and cfg.reset_fast:
                mem.reset_fast()

    final = matrix[n_tasks - 1, :]
    forgetting = np.array([np.nanmax(matrix[:, j]) - final[j] for j in range(n_tasks)])

    hits: dict[int, int] = {}
    totals: dict[int, int] = {}
    for task in stream.tasks:
        allowed = np.asarray(task.label_space) if stream.scenario == "task-il" else None
        preds = predict(net, task.test.features, allowed=allowed)
        correct = preds == task.test.labels
        for c in np.unique(task.test.labels):
            mask = task.test.labels == c
            key = int(c)
            hits[key] = hits.get(key, 0) + int(correct[mask].sum())
            totals[key] = totals.get(key, 0) + int(mask.sum())
    per_class = {c: hits[c] / totals[c] for c in totals}

    return RunMetrics(
        accuracy_matrix=matrix,
        average_accuracy=float(final.mean()),
        forgetting=forgetting,
        per_class_accuracy=per_class,
        method=cfg.method,
        seed=cfg.seed,
        losses=losses,
    )
