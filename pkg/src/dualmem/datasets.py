"""Datasets, synthetic generators, IDX ingestion, task streams, and file formats.

Feature matrices are kept as plain numpy arrays wrapped in a small dataclass.
All generators and stream builders are deterministic given their seed. Kernel
bandwidths elsewhere in the package assume features normalized to roughly
[0, 1] per dimension, so stream builders normalize by default.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SCENARIOS = ("class-il", "task-il", "domain-il")


@dataclass
class FeatureDataset:
    """An (n, d) feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match n={self.features.shape[0]}"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError(f"labels must be integers, got dtype {self.labels.dtype}")
        if self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_ids(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, indices) -> "FeatureDataset":
        idx = np.asarray(indices)
        return FeatureDataset(self.features[idx], self.labels[idx])

    def class_indices(self) -> dict[int, np.ndarray]:
        return {int(c): np.flatnonzero(self.labels == c) for c in self.class_ids()}


@dataclass(frozen=True)
class MixtureComponent:
    mean: tuple[float, ...]
    std: float
    class_id: int
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("component count must be >= 1")
        if self.std < 0:
            raise ValueError("component std must be nonnegative")
        if self.class_id < 0:
            raise ValueError("class_id must be nonnegative")


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[MixtureComponent, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        dims = {len(c.mean) for c in self.components}
        if len(dims) != 1:
            raise ValueError("all component means must share one dimension")


def generate_mixture(spec: MixtureSpec) -> FeatureDataset:
    """Draw isotropic Gaussian samples per component, in component order."""
    rng = np.random.default_rng(spec.seed)
    blocks, labels = [], []
    for comp in spec.components:
        mean = np.asarray(comp.mean, dtype=np.float64)
        blocks.append(mean + comp.std * rng.standard_normal((comp.count, mean.size)))
        labels.append(np.full(comp.count, comp.class_id, dtype=np.int64))
    return FeatureDataset(np.vstack(blocks), np.concatenate(labels))


def four_blob_mixture(
    n_per_class: int = 250, std: float = 0.08, seed: int = 0
) -> MixtureSpec:
    """Four 2-D Gaussian blobs on the unit square corners, one class each."""
    corners = [(0.2, 0.2), (0.2, 0.8), (0.8, 0.2), (0.8, 0.8)]
    comps = tuple(
        MixtureComponent(mean=c, std=std, class_id=i, count=n_per_class)
        for i, c in enumerate(corners)
    )
    return MixtureSpec(components=comps, seed=seed)


# ---------------------------------------------------------------------------
# IDX files (big-endian binary image/label format)

def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be32(f, path) -> int:
    data = f.read(4)
    if len(data) != 4:
        raise ValueError(f"{path}: truncated header")
    return struct.unpack(">I", data)[0]


def read_idx(images_path, labels_path) -> FeatureDataset:
    """Read an image/label IDX file pair into a flat [0, 1]-scaled dataset."""
    with _open_maybe_gzip(images_path) as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"{images_path}: bad image magic 0x{magic:08x}")
        n = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = f.read(n * rows * cols + 1)
        if len(raw) != n * rows * cols:
            raise ValueError(f"{images_path}: expected {n * rows * cols} pixel bytes, got {len(raw)}")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)

    with _open_maybe_gzip(labels_path) as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"{labels_path}: bad label magic 0x{magic:08x}")
        n_labels = _read_be32(f, labels_path)
        if n_labels != n:
            raise ValueError(
                f"{labels_path}: {n_labels} labels but {images_path} has {n} images"
            )
        raw = f.read(n_labels + 1)
        if len(raw) != n_labels:
            raise ValueError(f"{labels_path}: expected {n_labels} label bytes, got {len(raw)}")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    return FeatureDataset(pixels.astype(np.float32) / np.float32(255.0), labels)


# ---------------------------------------------------------------------------
# Native dataset file: one JSON header line, then raw little-endian blobs.

def save_dataset(path, ds: FeatureDataset) -> None:
    feat = np.ascontiguousarray(ds.features)
    feat_dtype = feat.dtype.newbyteorder("<")
    feat = feat.astype(feat_dtype, copy=False)
    labels = np.ascontiguousarray(ds.labels.astype("<i8"))
    header = {
        "n": ds.n,
        "d": ds.d,
        "k": int(ds.labels.max()) + 1,
        "feature_dtype": feat_dtype.str,
        "label_dtype": "<i8",
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("ascii") + b"\n")
        f.write(feat.tobytes())
        f.write(labels.tobytes())


def load_dataset(path) -> FeatureDataset:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("ascii"))
        n, d = header["n"], header["d"]
        feat_dtype = np.dtype(header["feature_dtype"])
        label_dtype = np.dtype(header["label_dtype"])
        feat_bytes = n * d * feat_dtype.itemsize
        raw = f.read(feat_bytes)
        if len(raw) != feat_bytes:
            raise ValueError(f"{path}: truncated feature blob")
        features = np.frombuffer(raw, dtype=feat_dtype).reshape(n, d)
        raw = f.read(n * label_dtype.itemsize)
        if len(raw) != n * label_dtype.itemsize:
            raise ValueError(f"{path}: truncated label blob")
        labels = np.frombuffer(raw, dtype=label_dtype)
    return FeatureDataset(features.copy(), labels.astype(np.int64))


# ---------------------------------------------------------------------------
# Min-max normalization fitted on training data only.

@dataclass(frozen=True)
class MinMaxScaler:
    mins: np.ndarray
    ranges: np.ndarray  # zero-range dimensions are mapped to 0

    @staticmethod
    def fit(features: np.ndarray) -> "MinMaxScaler":
        mins = features.min(axis=0)
        ranges = features.max(axis=0) - mins
        return MinMaxScaler(mins=mins, ranges=ranges)

    def transform(self, features: np.ndarray) -> np.ndarray:
        safe = np.where(self.ranges > 0, self.ranges, 1.0)
        return (features - self.mins) / safe


# ---------------------------------------------------------------------------
# Task streams

@dataclass
class Task:
    train: FeatureDataset
    test: FeatureDataset
    label_space: tuple[int, ...]


@dataclass
class TaskStream:
    tasks: list[Task]
    scenario: str

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not self.tasks:
            raise ValueError("stream needs at least one task")
        spaces = [set(t.label_space) for t in self.tasks]
        if self.scenario in ("class-il", "task-il"):
            seen: set[int] = set()
            for s in spaces:
                if seen & s:
                    raise ValueError("class/task incremental streams need disjoint label sets")
                seen |= s
        else:
            if any(s != spaces[0] for s in spaces):
                raise ValueError("domain incremental streams must share one label set")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def all_classes(self) -> np.ndarray:
        return np.unique(np.concatenate([t.train.labels for t in self.tasks]))


@dataclass(frozen=True)
class StreamSpec:
    """How to carve a labelled dataset into an ordered task sequence."""

    n_tasks: int
    classes_per_task: int | None = None
    labels_per_task: tuple[tuple[int, ...], ...] | None = None
    train_counts: tuple[int, ...] | None = None  # per-task totals; None = all available
    test_fraction: float = 0.2  # used only when no separate test data is given
    scenario: str = "class-il"
    normalize: bool = True
    seed: int = 0
    source: str = "mixture"  # metadata echoed into run summaries

    def __post_init__(self):
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")
        if self.scenario not in ("class-il", "task-il"):
            raise ValueError("StreamSpec builds class-split streams; use the domain builders")
        if (self.classes_per_task is None) == (self.labels_per_task is None):
            raise ValueError("give exactly one of classes_per_task / labels_per_task")
        if self.labels_per_task is not None and len(self.labels_per_task) != self.n_tasks:
            raise ValueError("labels_per_task length must equal n_tasks")
        if self.train_counts is not None and len(self.train_counts) != self.n_tasks:
            raise ValueError("train_counts length must equal n_tasks")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")


def imbalanced_counts(n_tasks: int, first_count: int, ratio: int = 10) -> tuple[int, ...]:
    """First task gets first_count samples, the rest first_count/ratio each."""
    rest = max(1, first_count // ratio)
    return (first_count,) + (rest,) * (n_tasks - 1)


def _task_label_sets(data: FeatureDataset, spec: StreamSpec) -> list[list[int]]:
    if spec.labels_per_task is not None:
        return [list(ls) for ls in spec.labels_per_task]
    classes = [int(c) for c in np.unique(data.labels)]
    need = spec.n_tasks * spec.classes_per_task
    if len(classes) < need:
        raise ValueError(f"need {need} classes, dataset has {len(classes)}")
    return [
        classes[t * spec.classes_per_task : (t + 1) * spec.classes_per_task]
        for t in range(spec.n_tasks)
    ]


def build_stream(
    data: FeatureDataset,
    spec: StreamSpec,
    test_data: FeatureDataset | None = None,
) -> TaskStream:
    """Carve a dataset into tasks, deterministically per spec.seed.

    Train indices never repeat across tasks. When no separate test set is
    given, a held-out fraction of each task's samples becomes its test set.
    Normalization is fitted on the concatenated train splits and applied to
    both splits.
    """
    rng = np.random.default_rng(spec.seed)
    label_sets = _task_label_sets(data, spec)

    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for t, label_set in enumerate(label_sets):
        mask = np.isin(data.labels, label_set)
        candidates = np.flatnonzero(mask)
        if candidates.size == 0:
            raise ValueError(f"task {t}: no samples with labels {label_set}")
        candidates = rng.permutation(candidates)
        if test_data is None:
            n_test = int(np.ceil(spec.test_fraction * candidates.size))
            test_idx.append(candidates[candidates.size - n_test :])
            pool = candidates[: candidates.size - n_test]
        else:
            test_idx.append(np.flatnonzero(np.isin(test_data.labels, label_set)))
            pool = candidates
        want = pool.size if spec.train_counts is None else spec.train_counts[t]
        if want > pool.size:
            raise ValueError(f"task {t}: requested {want} train samples, only {pool.size} available")
        train_idx.append(pool[:want])

    scaler = None
    if spec.normalize:
        scaler = MinMaxScaler.fit(
            np.vstack([data.features[idx] for idx in train_idx]).astype(np.float64)
        )

    def _make(features, labels):
        feats = np.asarray(features, dtype=np.float64)
        if scaler is not None:
            feats = scaler.transform(feats)
        return FeatureDataset(feats, np.asarray(labels, dtype=np.int64))

    tasks = []
    for t, label_set in enumerate(label_sets):
        train = _make(data.features[train_idx[t]], data.labels[train_idx[t]])
        src = data if test_data is None else test_data
        test = _make(src.features[test_idx[t]], src.labels[test_idx[t]])
        tasks.append(Task(train=train, test=test, label_space=tuple(sorted(label_set))))
    return TaskStream(tasks=tasks, scenario=spec.scenario)


# ---------------------------------------------------------------------------
# Domain-incremental streams: fixed label set, shifting input distribution.

def permuted_stream(
    train: FeatureDataset,
    test: FeatureDataset,
    n_tasks: int,
    seed: int = 0,
) -> TaskStream:
    """Each task applies a fixed seeded feature permutation; task 0 is identity."""
    rng = np.random.default_rng(seed)
    label_space = tuple(int(c) for c in np.unique(train.labels))
    tasks = []
    for t in range(n_tasks):
        perm = np.arange(train.d) if t == 0 else rng.permutation(train.d)
        tasks.append(
            Task(
                train=FeatureDataset(train.features[:, perm], train.labels),
                test=FeatureDataset(test.features[:, perm], test.labels),
                label_space=label_space,
            )
        )
    return TaskStream(tasks=tasks, scenario="domain-il")


def _rotate_features(features: np.ndarray, angle_rad: float, image_side: int | None):
    if image_side is not None:
        degrees = np.degrees(angle_rad)
        imgs = features.reshape(-1, image_side, image_side)
        out = np.stack(
            [ndimage.rotate(img, degrees, reshape=False, order=1, mode="constant", cval=0.0)
             for img in imgs]
        )
        return np.clip(out.reshape(features.shape), 0.0, 1.0)
    if features.shape[1] == 2:
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        rot = np.array([[c, -s], [s, c]])
        centered = features - 0.5
        return centered @ rot.T + 0.5
    raise ValueError("rotation needs square images (give image_side) or 2-D features")


def rotated_stream(
    train: FeatureDataset,
    test: FeatureDataset,
    n_tasks: int,
    seed: int = 0,
    image_side: int | None = None,
) -> TaskStream:
    """Each task rotates the inputs by a seeded angle drawn from [0, pi)."""
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, np.pi, size=n_tasks)
    label_space = tuple(int(c) for c in np.unique(train.labels))
    tasks = []
    for t in range(n_tasks):
        tr = _rotate_features(np.asarray(train.features, dtype=np.float64), angles[t], image_side)
        te = _rotate_features(np.asarray(test.features, dtype=np.float64), angles[t], image_side)
        tasks.append(
            Task(
                train=FeatureDataset(tr, train.labels),
                test=FeatureDataset(te, test.labels),
                label_space=label_space,
            )
        )
    return TaskStream(tasks=tasks, scenario="domain-il")
