"""Dataset ingestion: MNIST IDX files, schema-driven CSV, synthetic pathway tasks."""

from __future__ import annotations

import csv
import gzip
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import Rng

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MISSING_TOKENS = frozenset({"", "?", "NA", "NaN", "nan"})


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    """Feature matrix (n, p) plus labels.

    ``labels`` is a 1-D integer vector of class ids, or a 2-D 0/1 matrix with
    one column per independent binary label.  ``raw_numeric`` keeps the
    unscaled numeric CSV columns so a split can refit the min-max scaling on
    its training part.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    source: str = ""
    numeric_columns: dict[str, int] = field(default_factory=dict)
    raw_numeric: np.ndarray | None = None
    scaling: dict[str, tuple[float, float]] = field(default_factory=dict)
    vocab: dict[str, list[str]] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if len(self.labels) != len(self.features):
            raise ValueError(f"{len(self.features)} rows but {len(self.labels)} labels")
        if np.isnan(self.features).any():
            raise ValueError("features contain NaN")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.features.shape[1])]

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_outputs(self) -> int:
        if self.labels.ndim == 2:
            return self.labels.shape[1]
        return max(len(self.class_names), int(self.labels.max()) + 1 if self.n else 0)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            raw_numeric=None if self.raw_numeric is None else self.raw_numeric[idx],
            stats=dict(self.stats),
        )


# ---------------------------------------------------------------------------
# IDX


def _open(path: Path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_header(path, expected_magic: int, n_dims: int, what: str):
    with _open(path) as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise TruncatedError(f"{path}: header truncated")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: {what} magic {magic:#010x}, expected {expected_magic:#010x}")
    size = 4 + 4 * n_dims
    if len(blob) < size:
        raise TruncatedError(f"{path}: header truncated")
    return blob, struct.unpack(f">{n_dims}I", blob[4:size])


def read_idx_images(path) -> np.ndarray:
    blob, (n, rows, cols) = _read_header(path, IDX_IMAGES_MAGIC, 3, "image")
    need = n * rows * cols
    if len(blob) - 16 < need:
        raise TruncatedError(f"{path}: payload has {len(blob) - 16} bytes, header promises {need}")
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    blob, (n,) = _read_header(path, IDX_LABELS_MAGIC, 1, "label")
    if len(blob) - 8 < n:
        raise TruncatedError(f"{path}: payload has {len(blob) - 8} bytes, header promises {n}")
    return np.frombuffer(blob, dtype=np.uint8, count=n, offset=8).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes(order="C"))


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path) -> Dataset:
    """MNIST-style IDX pair -> features in [0, 1], flattened row-major."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    n, rows, cols = images.shape
    x = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(
        features=x,
        labels=labels.astype(np.int64),
        feature_names=[f"px{r}_{c}" for r in range(rows) for c in range(cols)],
        class_names=[str(i) for i in range(10)],
        source=f"idx:{images_path}",
        stats={"grid": [rows, cols]},
    )


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory) -> dict[str, tuple[Path, Path]] | None:
    """Locate the four canonical MNIST files (plain or .gz) in ``directory``."""
    directory = Path(directory)
    found = {}
    for split_name, names in MNIST_FILES.items():
        pair = []
        for stem in names:
            for cand in (directory / stem, directory / f"{stem}.gz",
                         directory / stem.replace("-idx", ".idx")):
                if cand.exists():
                    pair.append(cand)
                    break
            else:
                return None
        found[split_name] = tuple(pair)
    return found


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    files = find_mnist(directory)
    if files is None:
        raise FileNotFoundError(f"MNIST IDX files not found in {directory}")
    train, test = load_idx(*files["train"]), load_idx(*files["test"])
    if (train.n, test.n) != (60000, 10000):
        log.warning("MNIST sizes %d/%d differ from the official 60000/10000", train.n, test.n)
    return train, test


# ---------------------------------------------------------------------------
# CSV

COLUMN_KINDS = ("numeric", "categorical", "label", "ignore")


def _minmax(col: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(col)
    return np.clip((col - lo) / (hi - lo), 0.0, 1.0)


def load_csv(path, schema: dict[str, str], positive_label: str | None = None,
             reference: Dataset | None = None) -> Dataset:
    """Read a header-first CSV according to ``schema`` (column -> kind).

    Numeric columns are min-max scaled to [0, 1] (constant columns become 0);
    categorical columns are one-hot expanded into ``col=value`` features; the
    single ``label`` column is binarised against ``positive_label`` (or, when
    that is None, mapped to class ids in sorted order).  Rows with a missing
    value or an unparseable number are dropped and counted in ``stats``.

    With ``reference`` (typically the training file's Dataset) the reference's
    categorical vocabulary and numeric ranges are reused; unseen categories
    map to an all-zero one-hot group and are counted.
    """
    path = Path(path)
    for col, kind in schema.items():
        if kind not in COLUMN_KINDS:
            raise ValueError(f"column {col!r}: unknown kind {kind!r}")
    label_cols = [c for c, k in schema.items() if k == "label"]
    if len(label_cols) != 1:
        raise ValueError("schema must declare exactly one label column")
    label_col = label_cols[0]

    with open(path, newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in header if c not in schema]
        if missing:
            raise ValueError(f"schema does not cover columns {missing}")
        absent = [c for c in schema if c not in header]
        if absent:
            raise ValueError(f"schema columns {absent} not in CSV header")
        rows, dropped_missing, dropped_numeric = [], 0, 0
        pos = {c: i for i, c in enumerate(header)}
        for raw in reader:
            if not raw or all(not v.strip() for v in raw):
                continue
            vals = [v.strip() for v in raw]
            if len(vals) != len(header) or any(
                vals[pos[c]] in MISSING_TOKENS for c, k in schema.items() if k != "ignore"
            ):
                dropped_missing += 1
                continue
            try:
                nums = {c: float(vals[pos[c]]) for c, k in schema.items() if k == "numeric"}
            except ValueError:
                dropped_numeric += 1
                continue
            rows.append((vals, nums))

    numeric = [c for c in header if schema[c] == "numeric"]
    categorical = [c for c in header if schema[c] == "categorical"]
    raw_numeric = np.array([[nums[c] for c in numeric] for _, nums in rows], dtype=np.float64).reshape(len(rows), len(numeric))

    if reference is not None:
        vocab = {c: list(reference.vocab[c]) for c in categorical}
        scaling = {c: reference.scaling[c] for c in numeric}
    else:
        vocab = {c: sorted({vals[pos[c]] for vals, _ in rows}) for c in categorical}
        scaling = {c: (float(raw_numeric[:, j].min()), float(raw_numeric[:, j].max())) if len(rows) else (0.0, 0.0)
                   for j, c in enumerate(numeric)}

    blocks, names, numeric_columns = [], [], {}
    unknown = 0
    col = 0
    for c in header:
        kind = schema[c]
        if kind == "numeric":
            j = numeric.index(c)
            blocks.append(_minmax(raw_numeric[:, j], *scaling[c])[:, None])
            names.append(c)
            numeric_columns[c] = col
            col += 1
        elif kind == "categorical":
            index = {v: i for i, v in enumerate(vocab[c])}
            onehot = np.zeros((len(rows), len(vocab[c])))
            for r, (vals, _) in enumerate(rows):
                i = index.get(vals[pos[c]])
                if i is None:
                    unknown += 1
                else:
                    onehot[r, i] = 1.0
            blocks.append(onehot)
            names.extend(f"{c}={v}" for v in vocab[c])
            col += len(vocab[c])

    x = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    tokens = [vals[pos[label_col]].rstrip(".") for vals, _ in rows]
    if positive_label is not None:
        positive = positive_label.rstrip(".")
        labels = np.array([int(t == positive) for t in tokens], dtype=np.int64)
        class_names = [f"not {positive}", positive]
    else:
        class_names = reference.class_names if reference is not None else sorted(set(tokens))
        lookup = {t: i for i, t in enumerate(class_names)}
        labels = np.array([lookup[t] for t in tokens], dtype=np.int64)

    stats = {
        "rows_read": len(rows) + dropped_missing + dropped_numeric,
        "dropped_missing": dropped_missing,
        "dropped_unparseable": dropped_numeric,
        "unknown_categories": unknown,
        "positive_prior": float(labels.mean()) if positive_label is not None and len(labels) else None,
    }
    log.info("loaded %s: %d rows kept, %s", path, len(rows), stats)
    return Dataset(
        features=x, labels=labels, feature_names=names, class_names=class_names,
        source=f"csv:{path}", numeric_columns=numeric_columns, raw_numeric=raw_numeric,
        scaling=scaling, vocab=vocab, stats=stats,
    )


# ---------------------------------------------------------------------------
# synthetic pathway tasks

SCENARIOS = {
    # name: (p, [(input indices of one label's linear rule)])
    "independence": (6, [(0, 1), (2, 3)]),
    "sharing": (5, [(0, 1), (1, 2)]),
    "irrelevance": (4, [(0,)]),
}


@dataclass(frozen=True)
class SyntheticSpec:
    scenario: str = "independence"
    n: int = 2000
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def relevant_inputs(scenario: str) -> list[set[int]]:
    """Zero-based input indices that drive each label."""
    return [set(rule) for rule in SCENARIOS[scenario][1]]


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Uniform(-1, 1) features, labels ``1[sum of rule inputs + noise > 0]``."""
    p, rules = SCENARIOS[spec.scenario]
    rng = Rng(spec.seed).stream(f"synthetic/{spec.scenario}")
    x = rng.uniform((spec.n, p)) * 2.0 - 1.0
    noise = rng.normal((spec.n, len(rules)), scale=spec.noise_std) if spec.noise_std > 0 else 0.0
    margins = np.stack([x[:, list(rule)].sum(axis=1) for rule in rules], axis=1) + noise
    y = (margins > 0).astype(np.int64)
    return Dataset(
        features=x,
        labels=y,
        feature_names=[f"x{i + 1}" for i in range(p)],
        class_names=[f"y{j + 1}" for j in range(len(rules))],
        source=f"synthetic:{spec.scenario}",
        stats={"scenario": spec.scenario},
    )


# ---------------------------------------------------------------------------
# splitting


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle and partition.

    CSV-derived numeric columns are rescaled with min/max taken from the
    training part only (test values clipped to [0, 1]).
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(dataset.n * test_fraction))
    if n_test == 0 or n_test == dataset.n:
        raise ValueError(f"split of {dataset.n} rows at {test_fraction} leaves an empty partition")
    perm = Rng(seed).stream("split").permutation(dataset.n)
    train, test = dataset.subset(perm[n_test:]), dataset.subset(perm[:n_test])
    if dataset.raw_numeric is not None and dataset.numeric_columns:
        scaling = {}
        for j, (name, col) in enumerate(dataset.numeric_columns.items()):
            lo, hi = float(train.raw_numeric[:, j].min()), float(train.raw_numeric[:, j].max())
            scaling[name] = (lo, hi)
            train.features[:, col] = _minmax(train.raw_numeric[:, j], lo, hi)
            test.features[:, col] = _minmax(test.raw_numeric[:, j], lo, hi)
        train.scaling = test.scaling = scaling
    return train, test


def synthetic_csv_rows(ds: Dataset) -> tuple[list[str], np.ndarray]:
    y = ds.labels.reshape(ds.n, -1)
    header = list(ds.feature_names) + [f"y{j + 1}" for j in range(y.shape[1])]
    return header, np.hstack([ds.features, y])
