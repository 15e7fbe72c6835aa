"""Datasets, feature pipelines and CSV plumbing.

Generators are seeded and fully deterministic; the CSV loader reports
exact line/column locations on malformed input and rejects non-finite
values.  All file writes go through a temp-file-plus-rename so readers
never observe a partial file.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "CsvSchema",
    "Dataset",
    "atomic_write_text",
    "gen_blobs",
    "gen_halfmoons",
    "grid_points",
    "load_csv",
    "poly_features",
    "save_csv",
    "standardize",
]

MAX_POLY_COLUMNS = 1000


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus labels; rejects non-finite values on construction."""

    features: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if labels.shape != (features.shape[0],):
            raise DataError("labels must be a vector matching the feature rows")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain NaN or Inf")
        if not np.all(np.isfinite(labels.astype(np.float64))):
            raise DataError("labels contain NaN or Inf")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def with_features(self, features: np.ndarray, **metadata) -> "Dataset":
        return Dataset(features, self.labels, {**self.metadata, **metadata})


def gen_halfmoons(n_samples: int, noise_sd: float, seed: int) -> Dataset:
    """Two interleaved semicircle classes with additive Gaussian noise.

    Class 0 is the upper unit semicircle, class 1 the lower one shifted
    right by 1 and down by 1/2; class 0 gets the extra point on odd N.
    With noise_sd = 0 the points lie exactly on the two arcs.
    """
    if n_samples < 2:
        raise ConfigError("need at least 2 samples")
    if noise_sd < 0:
        raise ConfigError("noise_sd must be nonnegative")
    n_out = n_samples - n_samples // 2
    n_in = n_samples // 2
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    xs = np.concatenate([np.cos(t_out), 1.0 - np.cos(t_in)])
    ys = np.concatenate([np.sin(t_out), 0.5 - np.sin(t_in)])
    features = np.column_stack([xs, ys])
    if noise_sd > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        features = features + rng.normal(scale=noise_sd, size=features.shape)
    labels = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    return Dataset(features, labels, {"generator": "halfmoons", "seed": seed})


def gen_blobs(
    n_samples: int, centers, sd: float, seed: int
) -> Dataset:
    """Isotropic Gaussian clusters labelled by their center index.

    Sample counts are split as evenly as possible, earlier clusters
    taking the remainder.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise ConfigError("need at least 2 cluster centers")
    if n_samples < centers.shape[0]:
        raise ConfigError("need at least one sample per center")
    if sd < 0:
        raise ConfigError("sd must be nonnegative")
    n_centers = centers.shape[0]
    counts = [
        n_samples // n_centers + (1 if c < n_samples % n_centers else 0)
        for c in range(n_centers)
    ]
    rng = np.random.Generator(np.random.PCG64(seed))
    parts = []
    labels = []
    for c, count in enumerate(counts):
        pts = np.broadcast_to(centers[c], (count, centers.shape[1])).copy()
        if sd > 0:
            pts += rng.normal(scale=sd, size=pts.shape)
        parts.append(pts)
        labels.append(np.full(count, c, dtype=np.int64))
    return Dataset(
        np.vstack(parts), np.concatenate(labels), {"generator": "blobs", "seed": seed}
    )


def poly_features(x: np.ndarray, degree: int) -> np.ndarray:
    """All monomials up to total degree, constant excluded, graded-lex order.

    For 2-d input and degree 3 the 9 columns are
    x0, x1, x0^2, x0 x1, x1^2, x0^3, x0^2 x1, x0 x1^2, x1^3.
    """
    x = np.asarray(x, dtype=np.float64)
    if degree < 1:
        raise ConfigError("polynomial degree must be at least 1")
    if x.ndim != 2:
        raise DataError("expected an N x d feature matrix")
    d = x.shape[1]
    n_columns = math.comb(d + degree, degree) - 1
    if n_columns > MAX_POLY_COLUMNS:
        raise ConfigError(
            f"degree-{degree} expansion of {d}-d input needs {n_columns} columns"
        )
    columns = []
    for grade in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), grade):
            col = np.ones(x.shape[0])
            for idx in combo:
                col = col * x[:, idx]
            columns.append(col)
    return np.column_stack(columns)


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise (x - mean) / sd; constant columns keep sd 1."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    return (x - mean) / sd, mean, sd


def grid_points(
    features: np.ndarray,
    resolution: tuple[int, int] = (100, 100),
    inflate: float = 0.2,
) -> np.ndarray:
    """Row-major 2-d grid over the data bounding box, inflated per side."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != 2:
        raise ConfigError("grids are only defined over 2-d feature spaces")
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ConfigError("grid resolution must be at least 2 per axis")
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    span = hi - lo
    lo = lo - inflate * span
    hi = hi + inflate * span
    gx = np.linspace(lo[0], hi[0], nx)
    gy = np.linspace(lo[1], hi[1], ny)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


# ---------------------------------------------------------------------------
# CSV in / out


@dataclass(frozen=True)
class CsvSchema:
    """Expected CSV layout: named label column, optional feature subset.

    When ``feature_columns`` is None every non-label column is a feature,
    in header order.
    """

    label_column: str = "label"
    feature_columns: tuple[str, ...] | None = None


def load_csv(path: str, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Parse a CSV dataset, reporting exact error locations.

    Line numbers are 1-based and include the header line; columns are
    reported by name.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if not rows:
        raise DataError(f"{path}: line 1: empty file, expected a header row")
    header = rows[0]
    if schema.label_column not in header:
        raise DataError(
            f"{path}: line 1: missing label column {schema.label_column!r}"
        )
    label_idx = header.index(schema.label_column)
    if schema.feature_columns is None:
        feature_names = [h for h in header if h != schema.label_column]
    else:
        for name in schema.feature_columns:
            if name not in header:
                raise DataError(f"{path}: line 1: missing feature column {name!r}")
        feature_names = list(schema.feature_columns)
    feature_idx = [header.index(name) for name in feature_names]

    def parse(lineno, colname, text):
        try:
            value = float(text)
        except ValueError:
            raise DataError(
                f"{path}: line {lineno}: column {colname!r}: not a number: {text!r}"
            ) from None
        if not math.isfinite(value):
            raise DataError(
                f"{path}: line {lineno}: column {colname!r}: non-finite value"
            )
        return value

    features = []
    labels = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        features.append(
            [parse(lineno, name, row[i]) for name, i in zip(feature_names, feature_idx)]
        )
        raw = parse(lineno, schema.label_column, row[label_idx])
        label = int(raw)
        if label != raw:
            raise DataError(
                f"{path}: line {lineno}: column {schema.label_column!r}: "
                f"label must be an integer, got {raw!r}"
            )
        labels.append(label)
    if not features:
        raise DataError(f"{path}: line 2: no data rows")
    return Dataset(
        np.asarray(features, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        {"source": path, "feature_names": tuple(feature_names)},
    )


def atomic_write_text(path: str, text: str):
    """Write via temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_csv(dataset: Dataset, path: str, schema: CsvSchema = CsvSchema()):
    """Write a dataset; floats use repr so a reload is exact."""
    names = dataset.metadata.get(
        "feature_names",
        tuple(f"x{j}" for j in range(dataset.n_features)),
    )
    lines = [",".join([*names, schema.label_column])]
    for i in range(dataset.n_samples):
        cells = [repr(float(v)) for v in dataset.features[i]]
        cells.append(str(int(dataset.labels[i])))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
