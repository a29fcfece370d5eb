"""Datasets: synthetic generators, IDX ingestion, task partitioning, batching.

Every generator is a pure function of its arguments and seed.  Datasets are
immutable after construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SPLIT_PAIRS = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]


@dataclass
class NormRecord:
    """Per-feature shift/scale applied to a dataset (invertible)."""

    shift: np.ndarray
    scale: np.ndarray


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray | None
    name: str
    norm: NormRecord | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.X):
                raise ContractError("labels length must match sample count")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def normalize(ds: Dataset) -> Dataset:
    """Shift/scale every feature to zero mean, unit std (std floored)."""
    shift = ds.X.mean(axis=0)
    scale = np.maximum(ds.X.std(axis=0), 1e-12)
    return Dataset((ds.X - shift) / scale, ds.labels, ds.name,
                   NormRecord(shift=shift, scale=scale))


def denormalize(x: np.ndarray, record: NormRecord) -> np.ndarray:
    return np.asarray(x) * record.scale + record.shift


def _balanced_counts(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def gen_blobs(k: int, n: int, cluster_std: float = 0.5,
              center_box: tuple[float, float] = (-5.0, 5.0),
              seed: int = 0) -> Dataset:
    """k isotropic Gaussian clusters with balanced labels.

    Centers are drawn uniformly in the box and rejection-sampled until every
    pair is at least ``8 * cluster_std`` apart; draw order is centers first,
    then per-class noise in class order.
    """
    if k < 1 or n < k:
        raise ContractError(f"need k >= 1 and n >= k, got k={k}, n={n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo, hi = center_box
    min_sep = 8.0 * cluster_std
    centers = None
    for _ in range(1000):
        cand = rng.uniform(lo, hi, size=(k, 2))
        if k == 1:
            centers = cand
            break
        dists = np.linalg.norm(cand[:, None, :] - cand[None, :, :], axis=2)
        if dists[np.triu_indices(k, 1)].min() >= min_sep:
            centers = cand
            break
    if centers is None:
        raise ConfigError(
            f"could not place {k} centers {min_sep:g} apart in box {center_box} "
            "after 1000 attempts")
    counts = _balanced_counts(n, k)
    xs, ys = [], []
    for c, cnt in enumerate(counts):
        xs.append(centers[c] + cluster_std * rng.standard_normal((cnt, 2)))
        ys.append(np.full(cnt, c, dtype=np.int64))
    return Dataset(np.vstack(xs), np.concatenate(ys), f"blobs(k={k},n={n})")


def gen_moons(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Two interleaving half-circle arcs with additive Gaussian noise.

    Upper arc (cos t, sin t) and lower arc (1 - cos t, 0.5 - sin t), t drawn
    uniformly on [0, pi]; labels are the arc index.  Draw order: upper t,
    lower t, then the noise matrix.
    """
    if n < 2:
        raise ContractError("moons needs n >= 2")
    if noise < 0:
        raise ContractError("noise must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_up = (n + 1) // 2
    n_lo = n - n_up
    t_up = rng.uniform(0.0, np.pi, n_up)
    t_lo = rng.uniform(0.0, np.pi, n_lo)
    upper = np.column_stack([np.cos(t_up), np.sin(t_up)])
    lower = np.column_stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)])
    x = np.vstack([upper, lower])
    x = x + noise * rng.standard_normal(x.shape)
    labels = np.concatenate([np.zeros(n_up, dtype=np.int64),
                             np.ones(n_lo, dtype=np.int64)])
    return Dataset(x, labels, f"moons(n={n})")


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse big-endian IDX image/label files into a flattened dataset.

    Images: magic 0x00000803, dims N x rows x cols, unsigned bytes scaled to
    [0, 1] and flattened row-major.  Labels: magic 0x00000801, N bytes.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at offset 0 "
            f"(expected 0x{IDX_IMAGE_MAGIC:08x})")
    n = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    expected = 16 + n * rows * cols
    if len(raw) < expected:
        raise FormatError(
            f"{images_path}: truncated pixel data at offset {len(raw)} "
            f"(expected {expected} bytes)")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    x = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        raw_l = f.read()
    magic_l = _read_be32(raw_l, 0, labels_path)
    if magic_l != IDX_LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic 0x{magic_l:08x} at offset 0 "
            f"(expected 0x{IDX_LABEL_MAGIC:08x})")
    n_l = _read_be32(raw_l, 4, labels_path)
    if n_l != n:
        raise FormatError(
            f"label count {n_l} does not match image count {n}")
    if len(raw_l) < 8 + n_l:
        raise FormatError(
            f"{labels_path}: truncated label data at offset {len(raw_l)} "
            f"(expected {8 + n_l} bytes)")
    labels = np.frombuffer(raw_l, dtype=np.uint8, count=n_l, offset=8).astype(np.int64)
    return Dataset(x, labels, "idx")


def stratified_subsample(ds: Dataset, n: int, rng: np.random.Generator) -> Dataset:
    """Class-balanced subsample of ``n`` rows (labels required)."""
    if ds.labels is None:
        raise ContractError("stratified subsampling needs labels")
    if n >= len(ds):
        return ds
    classes = np.unique(ds.labels)
    counts = _balanced_counts(n, len(classes))
    picks = []
    for c, cnt in zip(classes, counts):
        idx = np.flatnonzero(ds.labels == c)
        take = min(cnt, len(idx))
        picks.append(rng.choice(idx, size=take, replace=False))
    sel = np.sort(np.concatenate(picks))
    return Dataset(ds.X[sel], ds.labels[sel], f"{ds.name}[sub{n}]", ds.norm)


@dataclass
class TaskStream:
    """Ordered task datasets with disjoint label groups."""

    tasks: list[Dataset]
    scheme: str

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i: int) -> Dataset:
        return self.tasks[i]


def split_tasks(ds: Dataset, scheme="split-pairs") -> TaskStream:
    """Partition a labeled dataset into an ordered task stream.

    ``split-pairs`` yields the five digit-pair tasks (0/1 .. 8/9); otherwise
    pass an explicit list of label groups.  Sample order inside each task is
    preserved; a label outside every group is a configuration error.
    """
    if ds.labels is None:
        raise ContractError("task splitting needs a labeled dataset")
    if scheme == "split-pairs":
        groups = [list(p) for p in SPLIT_PAIRS]
        name = "split-pairs"
    else:
        groups = [list(g) for g in scheme]
        name = "groups"
    covered = set()
    for g in groups:
        covered.update(int(c) for c in g)
    present = set(int(c) for c in np.unique(ds.labels))
    stray = present - covered
    if stray:
        raise ConfigError(f"labels {sorted(stray)} fall outside every task group")
    tasks = []
    for i, g in enumerate(groups):
        mask = np.isin(ds.labels, g)
        if not mask.any():
            continue
        tasks.append(Dataset(ds.X[mask], ds.labels[mask],
                             f"{ds.name}/task{i}", ds.norm))
    return TaskStream(tasks, name)


def batches(ds: Dataset, batch_size: int, shuffle_seed=0):
    """Seeded-shuffle minibatches of (X, labels); the short tail is kept."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) \
        else np.random.default_rng(np.random.SeedSequence(shuffle_seed))
    order = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.X[idx], (ds.labels[idx] if ds.labels is not None else None)


def save_csv(ds: Dataset, path: str) -> None:
    """Header row then one sample per line, label last when present."""
    cols = [f"f{i}" for i in range(ds.dim)]
    if ds.labels is not None:
        cols.append("label")
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.X[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            f.write(",".join(row) + "\n")


def load_csv(path: str, name: str = "csv") -> Dataset:
    """Inverse of ``save_csv``; a trailing ``label`` column becomes labels."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        labeled = header and header[-1] == "label"
        xs, ys = [], []
        for line in f:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            if labeled:
                xs.append([float(v) for v in parts[:-1]])
                ys.append(int(parts[-1]))
            else:
                xs.append([float(v) for v in parts])
    return Dataset(np.array(xs), np.array(ys) if labeled else None, name)
