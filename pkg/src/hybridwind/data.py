"""SCADA record types, delimited-text ingestion and dataset utilities.

A :class:`Dataset` is stored column-wise (one float array per feature) so
that filters and models work on vectors; individual :class:`TurbineRecord`
objects are materialized on demand.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

#: Model input features, in the order of the extended residual input tuple.
FEATURES = ("v", "theta", "omega", "t_out", "t_nac", "t_rot", "alpha_v", "alpha_w")
#: Inputs of the physics submodel; always the first three of ``FEATURES``.
PHYS_FEATURES = FEATURES[:3]
NUMERIC_FIELDS = FEATURES + ("p",)
ALL_FIELDS = ("timestamp", "turbine_id") + NUMERIC_FIELDS

#: Identity mapping: every field is read from a column of the same name.
DEFAULT_SCHEMA = {name: name for name in ALL_FIELDS}


class DataError(ValueError):
    """Raised for unreadable, malformed or degenerate input data."""


@dataclass(frozen=True)
class TurbineRecord:
    """One 10-minute SCADA sample.

    Angles are radians, temperatures degrees Celsius, power kW.
    """

    timestamp: datetime
    turbine_id: str
    v: float
    theta: float
    omega: float
    t_out: float
    t_nac: float
    t_rot: float
    alpha_v: float
    alpha_w: float
    p: float

    @property
    def x_phys(self) -> tuple[float, float, float]:
        return (self.v, self.theta, self.omega)

    @property
    def x_full(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURES)


@dataclass(frozen=True)
class FeatureVector:
    """Inputs of both submodels for one instance.

    ``x_full`` is the authoritative tuple; ``x_phys`` is its first three
    entries, so the duplicated variables always carry identical values.
    """

    x_full: tuple[float, ...]

    def __post_init__(self):
        if len(self.x_full) != len(FEATURES):
            raise ValueError(f"expected {len(FEATURES)} features, got {len(self.x_full)}")
        object.__setattr__(self, "x_full", tuple(float(x) for x in self.x_full))

    @property
    def x_phys(self) -> tuple[float, float, float]:
        return self.x_full[:3]

    @classmethod
    def from_record(cls, record: TurbineRecord) -> "FeatureVector":
        return cls(record.x_full)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.x_full, dtype=float)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered, immutable collection of turbine records.

    Parameters
    ----------
    columns : mapping of str to ndarray
        One float64 array per entry of ``NUMERIC_FIELDS``.
    timestamps : ndarray of datetime64[s]
        UTC timestamps.
    turbine_ids : ndarray of str
    provenance : str
        Free-text description of where the records came from.
    dropped_count : int
        Rows discarded during ingestion.
    """

    columns: Mapping[str, np.ndarray]
    timestamps: np.ndarray
    turbine_ids: np.ndarray
    provenance: str = ""
    dropped_count: int = 0
    _n: int = field(init=False, repr=False)

    def __post_init__(self):
        missing = [name for name in NUMERIC_FIELDS if name not in self.columns]
        if missing:
            raise DataError(f"dataset is missing columns {missing}")
        n = len(self.timestamps)
        cols = {}
        for name in NUMERIC_FIELDS:
            col = np.asarray(self.columns[name], dtype=float)
            if col.shape != (n,):
                raise DataError(f"column {name!r} has shape {col.shape}, expected ({n},)")
            cols[name] = _frozen(col)
        if len(self.turbine_ids) != n:
            raise DataError("turbine_ids length does not match timestamps")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype="datetime64[s]")))
        object.__setattr__(self, "turbine_ids", _frozen(np.asarray(self.turbine_ids, dtype=str)))
        object.__setattr__(self, "_n", n)

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> TurbineRecord:
        ts = self.timestamps[i].astype(datetime).replace(tzinfo=timezone.utc)
        return TurbineRecord(
            timestamp=ts,
            turbine_id=str(self.turbine_ids[i]),
            **{name: float(self.columns[name][i]) for name in NUMERIC_FIELDS},
        )

    def __iter__(self) -> Iterator[TurbineRecord]:
        for i in range(self._n):
            yield self[i]

    @property
    def records(self) -> list[TurbineRecord]:
        return list(self)

    def __getattr__(self, name):
        # column access as attributes: data.v, data.p, ...
        if name in NUMERIC_FIELDS and "columns" in self.__dict__:
            return self.__dict__["columns"][name]
        raise AttributeError(name)

    def x_phys(self) -> np.ndarray:
        return np.column_stack([self.columns[name] for name in PHYS_FEATURES])

    def x_full(self) -> np.ndarray:
        return np.column_stack([self.columns[name] for name in FEATURES])

    def subset(self, index, provenance: str | None = None) -> "Dataset":
        """Records selected by an integer index array or boolean mask, in order."""
        index = np.asarray(index)
        return Dataset(
            columns={name: col[index] for name, col in self.columns.items()},
            timestamps=self.timestamps[index],
            turbine_ids=self.turbine_ids[index],
            provenance=self.provenance if provenance is None else provenance,
        )

    @classmethod
    def from_records(cls, records: Sequence[TurbineRecord], provenance: str = "") -> "Dataset":
        timestamps = np.array(
            [_to_utc_naive(r.timestamp) for r in records], dtype="datetime64[s]"
        ).reshape(len(records))
        return cls(
            columns={name: np.array([getattr(r, name) for r in records], dtype=float) for name in NUMERIC_FIELDS},
            timestamps=timestamps,
            turbine_ids=np.array([r.turbine_id for r in records], dtype=str),
            provenance=provenance,
        )

    def to_csv(self, path, delimiter: str = ",") -> None:
        """Write the records using the default schema column names."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(ALL_FIELDS)
            for i in range(self._n):
                ts = np.datetime_as_string(self.timestamps[i], unit="s") + "+00:00"
                writer.writerow(
                    [ts, self.turbine_ids[i]] + [repr(float(self.columns[name][i])) for name in NUMERIC_FIELDS]
                )


def _to_utc_naive(ts: datetime) -> datetime:
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _sniff_delimiter(header_line: str) -> str:
    return ";" if header_line.count(";") > header_line.count(",") else ","


def load_csv(path, schema: Mapping[str, str] | None = None) -> Dataset:
    """Read SCADA records from a comma- or semicolon-delimited file.

    ``schema`` maps each field of :class:`TurbineRecord` to a column name in
    the header. Rows with a missing, unparseable or non-finite mapped value
    are dropped; the number dropped is stored on the returned dataset.
    Unmapped columns are ignored.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    unknown = set(schema) - set(ALL_FIELDS)
    if unknown:
        raise DataError(f"schema has unknown fields {sorted(unknown)}")
    absent = [f for f in ALL_FIELDS if f not in schema]
    if absent:
        raise DataError(f"schema does not map fields {absent}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")

    with open(path, newline="", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise DataError(f"{path} has no header row")
        delimiter = _sniff_delimiter(header_line)
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delimiter)
        header = [h.strip() for h in next(reader)]
        positions = {}
        for fld in ALL_FIELDS:
            col = schema[fld]
            if col not in header:
                raise DataError(f"column {col!r} (field {fld!r}) not found in header of {path}")
            positions[fld] = header.index(col)

        values = {name: [] for name in NUMERIC_FIELDS}
        timestamps, ids = [], []
        dropped = 0
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                parsed = {}
                for name in NUMERIC_FIELDS:
                    x = float(row[positions[name]])
                    if not math.isfinite(x):
                        raise ValueError(name)
                    parsed[name] = x
                ts = parse_timestamp(row[positions["timestamp"]])
                tid = row[positions["turbine_id"]].strip()
                if not tid:
                    raise ValueError("turbine_id")
            except (ValueError, IndexError):
                dropped += 1
                continue
            for name in NUMERIC_FIELDS:
                values[name].append(parsed[name])
            timestamps.append(ts.replace(tzinfo=None))
            ids.append(tid)

    if not timestamps:
        raise DataError(f"no valid rows in {path} ({dropped} dropped)")
    if dropped:
        logger.info("dropped %d malformed rows from %s", dropped, path)
    return Dataset(
        columns={name: np.array(vals, dtype=float) for name, vals in values.items()},
        timestamps=np.array(timestamps, dtype="datetime64[s]"),
        turbine_ids=np.array(ids, dtype=str),
        provenance=str(path),
        dropped_count=dropped,
    )


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature mean and (population) standard deviation."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=float).reshape(-1)))
        object.__setattr__(self, "std", _frozen(np.asarray(self.std, dtype=float).reshape(-1)))
        if not (len(self.names) == self.mean.size == self.std.size):
            raise ValueError("names, mean and std must have equal length")
        bad = [n for n, s in zip(self.names, self.std) if not s > 0]
        if bad:
            raise DataError(f"non-positive standard deviation for {bad}")

    @classmethod
    def fit(cls, values: np.ndarray, names: Sequence[str]) -> "NormalizationStats":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] < 2:
            raise DataError("need at least 2 samples to fit normalization")
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        flat = [n for n, s in zip(names, std) if not s > 0]
        if flat:
            raise DataError(f"zero-variance feature(s): {', '.join(flat)}")
        return cls(tuple(names), mean, std)

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def destandardize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationStats":
        return cls(tuple(d["names"]), np.array(d["mean"]), np.array(d["std"]))


def fit_normalization(data: Dataset, features: Sequence[str] = FEATURES) -> NormalizationStats:
    """Fit standardization statistics on ``data`` (pass the training split only)."""
    features = tuple(features)
    if len(data) < 2:
        raise DataError("need at least 2 records to fit normalization")
    return NormalizationStats.fit(np.column_stack([data.columns[f] for f in features]), features)


def split(data: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random partition into ``(first, second)`` with ``round(fraction * n)`` records first.

    Each side keeps the original record order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(data)
    n_first = int(round(fraction * n))
    if n_first == 0 or n_first == n:
        raise DataError(f"cannot split {n} records with fraction {fraction}: one side would be empty")
    perm = np.random.default_rng(seed).permutation(n)
    first = np.sort(perm[:n_first])
    second = np.sort(perm[n_first:])
    return data.subset(first), data.subset(second)
