"""Task streams: split datasets, single-pass batch iteration, augmentation.

A stream presents K tasks of disjoint classes, one pass, in task order,
as small unlabeled batches. Labels never ride along with stream samples;
they are reachable only through the Oracle carried by the stream, so
any label a consumer obtains is an explicit, countable act.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .losses import MultiviewIndex
from .memory import Oracle

CIFAR_PIXELS = 3072
CIFAR_SHAPE = (3, 32, 32)


@dataclass(frozen=True, eq=False)
class Sample:
    """One stream element. The label field stays None on the stream side."""

    features: np.ndarray
    source_id: int
    label: int | None = None


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if len(self.features) != len(self.labels):
            raise DataError(
                f"{len(self.features)} feature rows vs {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True, eq=False)
class Task:
    index: int
    class_ids: tuple[int, ...]
    sample_ids: np.ndarray  # into the train dataset, in emission order

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass(frozen=True, eq=False)
class TaskStream:
    """Ordered tasks over one training dataset, iterated exactly once."""

    tasks: tuple[Task, ...]
    data: LabeledDataset
    batch_size: int
    seed: int
    oracle: Oracle
    test_sets: tuple[LabeledDataset, ...] = ()

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        seen: set[int] = set()
        for task in self.tasks:
            if seen & set(task.class_ids):
                raise ConfigError("tasks must have disjoint class sets")
            seen |= set(task.class_ids)
        sizes = {len(t.class_ids) for t in self.tasks}
        if len(sizes) > 1:
            raise ConfigError(f"unequal class counts per task: {sorted(sizes)}")
        if self.test_sets and len(self.test_sets) != len(self.tasks):
            raise ConfigError("need one test set per task (or none)")

    @property
    def n_samples(self) -> int:
        return sum(len(t) for t in self.tasks)

    @property
    def n_batches(self) -> int:
        b = self.batch_size
        return sum((len(t) + b - 1) // b for t in self.tasks)

    def _task_batches(self, task: Task) -> Iterator[list[Sample]]:
        feats = self.data.features
        for start in range(0, len(task), self.batch_size):
            ids = task.sample_ids[start:start + self.batch_size]
            yield [Sample(feats[i], int(i)) for i in ids]

    def iter_tasks(self) -> Iterator[tuple[Task, Iterator[list[Sample]]]]:
        for task in self.tasks:
            yield task, self._task_batches(task)

    def batches(self) -> Iterator[tuple[int, list[Sample]]]:
        """Flat single-pass view: (task index, batch) pairs."""
        for task, gen in self.iter_tasks():
            for batch in gen:
                yield task.index, batch


def split_dataset(
    data: LabeledDataset,
    n_tasks: int,
    seed: int,
    *,
    batch_size: int = 10,
    test_data: LabeledDataset | None = None,
    shuffle_classes: bool = False,
) -> TaskStream:
    """Partition classes into n_tasks disjoint groups of equal size.

    Class groups are ascending by id unless shuffle_classes is set;
    within-task sample order is shuffled by the seed. Train labels are
    reachable only through the stream's oracle.
    """
    if n_tasks < 1:
        raise ConfigError(f"task count must be >= 1, got {n_tasks}")
    classes = data.classes
    if len(classes) % n_tasks:
        raise ConfigError(
            f"{len(classes)} classes do not divide into {n_tasks} tasks"
        )
    seed_seq = np.random.SeedSequence(seed)
    order_rng, shuffle_rng = (
        np.random.default_rng(s) for s in seed_seq.spawn(2)
    )
    if shuffle_classes:
        classes = order_rng.permutation(classes)
    per_task = len(classes) // n_tasks

    tasks = []
    test_sets = []
    for k in range(n_tasks):
        group = np.sort(classes[k * per_task:(k + 1) * per_task])
        ids = np.where(np.isin(data.labels, group))[0]
        tasks.append(Task(k, tuple(int(c) for c in group),
                          shuffle_rng.permutation(ids)))
        if test_data is not None:
            test_sets.append(
                test_data.subset(np.where(np.isin(test_data.labels, group))[0])
            )
    return TaskStream(
        tasks=tuple(tasks),
        data=data,
        batch_size=batch_size,
        seed=seed,
        oracle=Oracle(data.labels),
        test_sets=tuple(test_sets),
    )


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationSpec:
    """Stochastic view transform; every call draws fresh randomness.

    kind "vector": additive Gaussian noise + coordinate dropout.
    kind "image": pad-and-crop, horizontal flip, per-channel brightness
    and contrast jitter, occasional grayscale; value range is not
    re-clipped afterwards. kind "identity": pass-through.
    """

    kind: str = "vector"
    noise_sigma: float = 0.1
    dropout_p: float = 0.1
    pad: int = 4
    flip_p: float = 0.5
    jitter: float = 0.4
    grayscale_p: float = 0.2

    def __post_init__(self):
        if self.kind not in ("vector", "image", "identity"):
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if not 0 <= self.dropout_p <= 1 or not 0 <= self.flip_p <= 1:
            raise ConfigError("probabilities must lie in [0, 1]")
        if not 0 <= self.grayscale_p <= 1:
            raise ConfigError("probabilities must lie in [0, 1]")


def _augment_images(x: np.ndarray, spec: AugmentationSpec,
                    rng: np.random.Generator) -> np.ndarray:
    b, c, h, w = x.shape
    p = spec.pad
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.empty_like(x)
    offsets = rng.integers(0, 2 * p + 1, size=(b, 2))
    for i in range(b):
        dy, dx = offsets[i]
        out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    flips = rng.random(b) < spec.flip_p
    out[flips] = out[flips, :, :, ::-1]
    bright = 1.0 + rng.uniform(-spec.jitter, spec.jitter, size=(b, c, 1, 1))
    out *= bright
    contrast = 1.0 + rng.uniform(-spec.jitter, spec.jitter, size=(b, c, 1, 1))
    means = out.mean(axis=(2, 3), keepdims=True)
    out = (out - means) * contrast + means
    gray = rng.random(b) < spec.grayscale_p
    if gray.any():
        out[gray] = out[gray].mean(axis=1, keepdims=True)
    return out


def augment(x: np.ndarray, spec: AugmentationSpec,
            rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of each row of `x` (independent per row)."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "identity":
        return x.copy()
    if spec.kind == "vector":
        noisy = x + spec.noise_sigma * rng.normal(size=x.shape)
        keep = rng.random(x.shape) >= spec.dropout_p
        return noisy * keep
    if x.ndim != 4:
        raise DataError(
            f"image augmentation expects (batch, C, H, W), got {x.shape}"
        )
    return _augment_images(x, spec, rng)


def make_multiview(
    batch: Sequence[tuple[Sample, int | None]],
    spec: AugmentationSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, MultiviewIndex]:
    """Two independent views per source, stacked [first views; second views].

    `batch` pairs each sample with its label if one is known (memory
    items) or None (stream items); view i pairs with view (i+b) mod 2b.
    """
    if not batch:
        raise DataError("cannot build a multiview batch from no sources")
    feats = np.stack([np.asarray(s.features, dtype=np.float64)
                      for s, _ in batch])
    views = np.concatenate([augment(feats, spec, rng),
                            augment(feats, spec, rng)])
    idx = MultiviewIndex.from_sources([lab for _, lab in batch])
    return views, idx


# ---------------------------------------------------------------------------
# data sources
# ---------------------------------------------------------------------------

def load_cifar_binary(
    path, *, label_bytes: int = 1, standardize: bool = False
) -> LabeledDataset:
    """Read CIFAR-style binary records: label byte(s), then 3072 pixels.

    CIFAR-10 files carry 1 label byte per record; CIFAR-100 carries 2
    (coarse then fine; the fine label is kept). Pixels are scaled to
    [0, 1]; `standardize` further applies per-channel standardization
    with statistics from this file.
    """
    if label_bytes not in (1, 2):
        raise ConfigError(f"label_bytes must be 1 or 2, got {label_bytes}")
    raw = np.fromfile(path, dtype=np.uint8)
    record = label_bytes + CIFAR_PIXELS
    n, extra = divmod(raw.size, record)
    if extra:
        raise DataError(
            f"{path}: truncated record at byte {n * record} "
            f"({extra} trailing bytes, record size {record})"
        )
    if n == 0:
        raise DataError(f"{path}: no records")
    rows = raw.reshape(n, record)
    labels = rows[:, label_bytes - 1].astype(np.int64)
    pixels = rows[:, label_bytes:].astype(np.float64) / 255.0
    images = pixels.reshape(n, *CIFAR_SHAPE)
    if standardize:
        mean = images.mean(axis=(0, 2, 3), keepdims=True)
        std = images.std(axis=(0, 2, 3), keepdims=True)
        images = (images - mean) / np.where(std == 0, 1.0, std)
    return LabeledDataset(images, labels)


def make_synthetic(
    n_classes: int,
    dim: int,
    separation: float,
    per_class: int,
    n_tasks: int,
    seed: int,
    *,
    batch_size: int = 10,
    test_per_class: int = 25,
) -> TaskStream:
    """Gaussian-blob stream: unit-covariance classes at scaled random means.

    Separation 0 collapses every class onto the origin; separations well
    above 1 make classes linearly separable. Train and test splits are
    drawn from the same blobs.
    """
    if n_classes < 1 or per_class < 1 or test_per_class < 1:
        raise ConfigError("class and sample counts must be >= 1")
    seed_seq = np.random.SeedSequence(seed)
    mean_rng, data_rng, split_seed = seed_seq.spawn(3)
    rng = np.random.default_rng(mean_rng)
    dirs = rng.normal(size=(n_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = separation * dirs

    rng = np.random.default_rng(data_rng)
    total = per_class + test_per_class
    feats = np.concatenate([
        means[c] + rng.normal(size=(total, dim)) for c in range(n_classes)
    ])
    labels = np.repeat(np.arange(n_classes), total)
    train_mask = np.tile(
        np.arange(total) < per_class, n_classes
    )
    train = LabeledDataset(feats[train_mask], labels[train_mask])
    test = LabeledDataset(feats[~train_mask], labels[~train_mask])
    return split_dataset(
        train,
        n_tasks,
        int(split_seed.generate_state(1)[0]),
        batch_size=batch_size,
        test_data=test,
    )
