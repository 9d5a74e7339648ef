"""Dataset ingestion, synthetic generation, standardization, and the k-fold protocol."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ENCODINGS = ("binary", "one_hot")

STD_FLOOR = 1e-8


class ParseError(ValueError):
    """Raised when a dataset file cannot be parsed; message names the location."""


@dataclass
class Dataset:
    """A fixed design matrix with integer class labels.

    Labels are indices in [0, num_classes). Binary datasets carry the
    signed interpretation: index 1 <-> +1, index 0 <-> -1.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    encoding: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"features must be a nonempty 2-D matrix, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite entries")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match the number of rows")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("label index out of range")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.encoding == "binary" and self.num_classes != 2:
            raise ValueError("binary encoding requires exactly 2 classes")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        """Row subset with the same class set."""
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.encoding)


@dataclass
class StandardizationStats:
    """Train-set per-feature mean and stddev (floored away from zero)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if (self.std <= 0).any():
            raise ValueError("stddev entries must be strictly positive")


@dataclass
class FoldAssignment:
    """fold_of[i] = fold index of sample i; sizes differ by at most one."""

    fold_of: np.ndarray
    k: int


def _encoding_for(c: int) -> str:
    return "binary" if c == 2 else "one_hot"


def _index_labels(raw: list) -> tuple[np.ndarray, int]:
    """Map raw label tokens to 0..c-1 in first-appearance order."""
    order: dict = {}
    for v in raw:
        if v not in order:
            order[v] = len(order)
    idx = np.array([order[v] for v in raw], dtype=np.int64)
    return idx, len(order)


def _load_csv(path: Path, label_column: int | None) -> Dataset:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(f"{path}: file is empty")
    width = len(rows[0])
    lcol = (width - 1) if label_column is None else label_column
    if lcol < 0:
        lcol = width + lcol

    def feature_cells(row):
        return [cell for i, cell in enumerate(row) if i != lcol]

    start = 0
    try:
        [float(c) for c in feature_cells(rows[0])]
    except ValueError:
        start = 1  # header row
    if start >= len(rows):
        raise ParseError(f"{path}: no data rows after header")

    feats, labels_raw = [], []
    for r, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"{path}: row {r} has {len(row)} columns, expected {width}")
        vals = []
        for i, cell in enumerate(row):
            if i == lcol:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {i + 1}: non-numeric feature {cell!r}")
        feats.append(vals)
        labels_raw.append(row[lcol].strip())
    labels, c = _index_labels(labels_raw)
    if c < 2:
        raise ParseError(f"{path}: found a single class; need at least 2")
    return Dataset(np.array(feats), labels, c, _encoding_for(c))


def _load_libsvm(path: Path) -> Dataset:
    rows, labels_raw, max_idx = [], [], 0
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: file is empty")
    for r, line in enumerate(lines, start=1):
        parts = line.split()
        labels_raw.append(parts[0])
        entries = {}
        for tok in parts[1:]:
            try:
                idx_s, val_s = tok.split(":", 1)
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ParseError(f"{path}: row {r}: bad index:value token {tok!r}")
            if idx < 1:
                raise ParseError(f"{path}: row {r}: index must be >= 1, got {idx}")
            entries[idx] = val
            max_idx = max(max_idx, idx)
        rows.append(entries)
    if max_idx == 0:
        raise ParseError(f"{path}: no features found")
    feats = np.zeros((len(rows), max_idx))
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            feats[i, idx - 1] = val
    labels, c = _index_labels(labels_raw)
    if c < 2:
        raise ParseError(f"{path}: found a single class; need at least 2")
    return Dataset(feats, labels, c, _encoding_for(c))


def load_table(path, format: str = "csv", label_column: int | None = None) -> Dataset:
    """Load a delimited dataset file.

    CSV: optional header, label in the last column unless ``label_column``
    says otherwise. LIBSVM: sparse "label idx:val ..." lines densified to
    the maximum feature index.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if format == "csv":
        return _load_csv(path, label_column)
    if format == "libsvm":
        return _load_libsvm(path)
    raise ValueError(f"unknown format {format!r}")


def gen_double_circle(n_per_class: int, noise_sigma: float = 0.1, seed: int = 0) -> Dataset:
    """Two concentric noisy circles in the plane.

    Class +1 (label index 1) at radius 1, class -1 (label index 0) at
    radius 2; each point is (r + eps) (cos phi, sin phi) with
    eps ~ N(0, noise_sigma^2) and phi uniform.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for radius, label in ((1.0, 1), (2.0, 0)):
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n_per_class)
        r = radius + rng.normal(0.0, noise_sigma, size=n_per_class)
        feats.append(np.column_stack([r * np.cos(phi), r * np.sin(phi)]))
        labels.append(np.full(n_per_class, label, dtype=np.int64))
    return Dataset(np.concatenate(feats), np.concatenate(labels), 2, "binary")


def standardize(train: Dataset, others: tuple = ()) -> tuple:
    """Z-score features by train-set statistics; apply the same to held-out sets.

    Returns (train_std, [others_std...], stats). Constant columns map to
    zero through the stddev floor.
    """
    mean = train.features.mean(axis=0)
    std = np.maximum(train.features.std(axis=0), STD_FLOOR)
    stats = StandardizationStats(mean, std)

    def apply(ds: Dataset) -> Dataset:
        return Dataset((ds.features - mean) / std, ds.labels, ds.num_classes, ds.encoding)

    return apply(train), [apply(ds) for ds in others], stats


def apply_standardization(ds: Dataset, stats: StandardizationStats) -> Dataset:
    return Dataset((ds.features - stats.mean) / stats.std, ds.labels, ds.num_classes, ds.encoding)


def unstandardize(ds: Dataset, stats: StandardizationStats) -> Dataset:
    return Dataset(ds.features * stats.std + stats.mean, ds.labels, ds.num_classes, ds.encoding)


def assign_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Seed-deterministic shuffle into k folds of near-equal size."""
    if n < k:
        raise ValueError(f"dataset with {n} rows cannot be split into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k
    return FoldAssignment(fold_of, k)


def kfold_protocol(dataset: Dataset, k: int, run_index: int, seed: int) -> tuple:
    """One run of the rotating k-fold protocol.

    valid = fold ``run_index``, test = fold ``run_index + 1 (mod k)``,
    train = the rest. The fold assignment depends only on (dataset size,
    k, seed), so it is shared across run indices.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    if not 0 <= run_index < k:
        raise ValueError(f"run_index must be in [0, {k})")
    folds = assign_folds(dataset.n_samples, k, seed)
    valid_f, test_f = run_index, (run_index + 1) % k
    valid = dataset.take(folds.fold_of == valid_f)
    test = dataset.take(folds.fold_of == test_f)
    train = dataset.take((folds.fold_of != valid_f) & (folds.fold_of != test_f))
    return train, valid, test


_UCI_LOADERS = {
    "breast-cancer": "load_breast_cancer",
    "wine": "load_wine",
    "iris": "load_iris",
}


def load_builtin(name: str) -> Dataset:
    """Bundled UCI datasets (via scikit-learn's copies); no network needed."""
    if name not in _UCI_LOADERS:
        raise ValueError(f"unknown builtin dataset {name!r}; options: {sorted(_UCI_LOADERS)}")
    import sklearn.datasets as skd

    bunch = getattr(skd, _UCI_LOADERS[name])()
    labels, c = _index_labels([int(t) for t in bunch.target])
    return Dataset(np.asarray(bunch.data, dtype=np.float64), labels, c, _encoding_for(c))


def write_csv(ds: Dataset, path) -> None:
    """Emit features plus a trailing label column, full float64 precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [int(label)])
