"""Domain datasets, reproducible random streams, and CSV ingestion.

A run manipulates one target domain (domain_id 0) and K source domains
(domain_id 1..K), all sharing the feature dimension d. Random state is
passed by value: an RngStream names a (seed, stream_id) pair of a
counter-based Philox generator, so handing the same stream to a function
twice replays the same draws. Substreams derived from distinct indices
are statistically independent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, ParseError, SchemaError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One splitmix64 round, a cheap bijective 64-bit mixer."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Value-semantics handle on one reproducible random stream."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator; calling twice replays the identical sequence."""
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        """Derive a child stream; distinct indices give independent streams."""
        mixed = _splitmix64(_splitmix64(self.stream_id & _MASK64) + (index & _MASK64))
        return RngStream(self.seed, mixed)


@dataclass(frozen=True)
class DomainDataset:
    """One domain's observations.

    features is (n, d), responses is (n,), domain_id is 0 for the target
    domain and 1..K for sources. Arrays are copied and frozen so datasets
    can be shared across concurrent tasks.
    """

    features: np.ndarray
    responses: np.ndarray
    domain_id: int = 0

    def __post_init__(self):
        feats = np.array(self.features, dtype=float, copy=True)
        resp = np.array(self.responses, dtype=float, copy=True).ravel()
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got ndim={feats.ndim}")
        if feats.shape[0] != resp.shape[0]:
            raise ValueError(
                f"row mismatch: {feats.shape[0]} feature rows vs "
                f"{resp.shape[0]} responses")
        if not np.isfinite(feats).all() or not np.isfinite(resp).all():
            raise ValueError("features and responses must be finite")
        if int(self.domain_id) < 0:
            raise ValueError(f"domain_id must be nonnegative, got {self.domain_id}")
        feats.flags.writeable = False
        resp.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "responses", resp)
        object.__setattr__(self, "domain_id", int(self.domain_id))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _parse_cell(raw: str, row: int, column: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(
            f"non-numeric value {raw!r} in column {column!r} at row {row}",
            row=row, column=column) from None


def load_csv(path, response_column: str,
             domain_column: str | None = None) -> list[DomainDataset]:
    """Load a comma-delimited UTF-8 file into one dataset per domain.

    Every column other than the response and the optional domain column
    is a feature, in header order. Rows keep file order inside each
    domain. Without a domain column a single dataset with domain_id 0 is
    returned; otherwise domain values must be nonnegative integers and
    the result is sorted by domain id.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyInputError(f"{path}: file is empty")
    header = [name.strip() for name in rows[0]]
    data_rows = rows[1:]
    if not data_rows:
        raise EmptyInputError(f"{path}: no data rows after the header")
    if response_column not in header:
        raise SchemaError(f"{path}: missing response column {response_column!r}")
    if domain_column is not None and domain_column not in header:
        raise SchemaError(f"{path}: missing domain column {domain_column!r}")
    excluded = {response_column}
    if domain_column is not None:
        excluded.add(domain_column)
    feature_names = [name for name in header if name not in excluded]
    if not feature_names:
        raise SchemaError(f"{path}: no feature columns besides {sorted(excluded)}")
    col_index = {name: header.index(name) for name in header}

    features, responses, domains = [], [], []
    for i, row in enumerate(data_rows, start=1):
        if len(row) != len(header):
            raise ParseError(
                f"row {i} has {len(row)} cells, expected {len(header)}",
                row=i, column="")
        features.append([_parse_cell(row[col_index[c]], i, c) for c in feature_names])
        responses.append(_parse_cell(row[col_index[response_column]], i,
                                     response_column))
        if domain_column is None:
            domains.append(0)
        else:
            value = _parse_cell(row[col_index[domain_column]], i, domain_column)
            if value != int(value) or value < 0:
                raise ParseError(
                    f"domain value {value!r} at row {i} is not a nonnegative integer",
                    row=i, column=domain_column)
            domains.append(int(value))

    features = np.asarray(features, dtype=float)
    responses = np.asarray(responses, dtype=float)
    domains = np.asarray(domains, dtype=int)
    datasets = []
    for dom in sorted(set(domains.tolist())):
        mask = domains == dom
        datasets.append(DomainDataset(features[mask], responses[mask], dom))
    return datasets


def save_csv(datasets: list[DomainDataset], path,
             response_column: str = "y",
             domain_column: str | None = "domain") -> None:
    """Write datasets to CSV with canonical x1..xd feature headers.

    Floats are written with repr so that load_csv(save_csv(...)) returns
    numerically identical datasets. domain_column=None omits the domain
    column, which suits single-domain files; it is an error for more
    than one dataset.
    """
    if not datasets:
        raise EmptyInputError("no datasets to save")
    if domain_column is None and len(datasets) > 1:
        raise ValueError("multiple datasets need a domain column")
    d = datasets[0].d
    if any(ds.d != d for ds in datasets):
        raise ValueError("datasets disagree on feature dimension")
    header = [f"x{j + 1}" for j in range(d)] + [response_column]
    if domain_column is not None:
        header.append(domain_column)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ds in datasets:
            for xi, yi in zip(ds.features, ds.responses):
                row = [repr(float(v)) for v in xi] + [repr(float(yi))]
                if domain_column is not None:
                    row.append(str(ds.domain_id))
                writer.writerow(row)


@dataclass(frozen=True)
class Scaler:
    """Per-feature affine transform x -> (x - mean) / scale.

    Constant features carry mean 0 and scale 1 so they pass through
    untouched and the inverse is exact.
    """

    mean: np.ndarray
    scale: np.ndarray
    feature_names: tuple = field(default=())

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        scale = np.asarray(self.scale, dtype=float).ravel()
        if mean.shape != scale.shape:
            raise ValueError("mean and scale must have equal length")
        if np.any(scale <= 0):
            raise ValueError("scales must be positive")
        names = tuple(self.feature_names) or tuple(
            f"x{j + 1}" for j in range(mean.size))
        if len(names) != mean.size:
            raise ValueError("feature_names length does not match")
        mean.flags.writeable = False
        scale.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "feature_names", names)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.scale

    def inverse_transform(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float) * self.scale + self.mean

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "mean", "scale"])
            for name, mu, sc in zip(self.feature_names, self.mean, self.scale):
                writer.writerow([name, repr(float(mu)), repr(float(sc))])

    @classmethod
    def load(cls, path) -> "Scaler":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or rows[0] != ["feature", "mean", "scale"]:
            raise SchemaError(f"{path}: not a scaler sidecar file")
        names = tuple(r[0] for r in rows[1:])
        mean = np.array([float(r[1]) for r in rows[1:]])
        scale = np.array([float(r[2]) for r in rows[1:]])
        return cls(mean, scale, names)


def standardize(datasets: list[DomainDataset]) -> tuple[list[DomainDataset], Scaler]:
    """Center and scale features by statistics pooled over all domains.

    Pooling preserves cross-domain covariate shift that per-domain
    scaling would erase. Uses the population standard deviation.
    Responses are untouched. Constant features pass through with scale 1.
    """
    if not datasets:
        raise EmptyInputError("standardize needs at least one dataset")
    d = datasets[0].d
    if any(ds.d != d for ds in datasets):
        raise ValueError("datasets disagree on feature dimension")
    pooled = np.vstack([ds.features for ds in datasets])
    mean = pooled.mean(axis=0)
    scale = pooled.std(axis=0)
    constant = scale == 0.0
    mean[constant] = 0.0
    scale[constant] = 1.0
    scaler = Scaler(mean, scale)
    out = [DomainDataset(scaler.transform(ds.features), ds.responses, ds.domain_id)
           for ds in datasets]
    return out, scaler
