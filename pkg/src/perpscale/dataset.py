"""Point matrices, their on-disk formats, and seeded subsampling.

Ids are the identity of a point everywhere in the package; labels ride along
and are only ever read by plotting and evaluation code.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError

BINARY_MAGIC = b"PSC1"
_HEADER = struct.Struct("<4sIII")
_FLAG_LABELS = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x d`` matrix of finite points with stable integer ids.

    Parameters
    ----------
    points : array_like, shape (n, d)
    ids : array_like of int, optional
        Unique non-negative ids; defaults to ``0..n-1``.
    labels : array_like of int, optional
    name : str
    """

    points: np.ndarray
    ids: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.ndim != 2:
            raise DataError(f"points must be a 2-D matrix, got shape {points.shape}")
        n, d = points.shape
        if n < 2 or d < 1:
            raise DataError(f"need n >= 2 points with d >= 1 dimensions, got {n}x{d}")
        bad = np.argwhere(~np.isfinite(points))
        if len(bad):
            r, c = bad[0]
            raise DataError(f"non-finite value at row {r}, column {c}")

        if self.ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.array(self.ids, dtype=np.int64, copy=True).reshape(-1)
            if ids.shape != (n,):
                raise DataError(f"expected {n} ids, got {ids.size}")
            if (ids < 0).any():
                raise DataError("ids must be non-negative")
            if np.unique(ids).size != n:
                raise DataError("ids must be unique")

        labels = None
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if labels.shape != (n,):
                raise DataError(f"expected {n} labels, got {labels.size}")

        for arr in (points, ids, labels):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def checksum(self) -> str:
        """SHA-256 over points, ids and labels (native little-endian bytes)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.ids, dtype="<i8").tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def positions(self, ids) -> np.ndarray:
        """Row positions of ``ids``; raises if any id is unknown."""
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.ids, kind="stable")
        sorted_ids = self.ids[order]
        pos = np.searchsorted(sorted_ids, ids)
        pos = np.clip(pos, 0, self.n - 1)
        missing = sorted_ids[pos] != ids
        if missing.any():
            raise DataError(f"unknown id {ids[missing][0]} in {self.name or 'dataset'}")
        return order[pos]

    def subset(self, ids, name=None) -> "Dataset":
        """Rows for ``ids`` in ascending id order."""
        ids = np.sort(np.asarray(ids, dtype=np.int64))
        rows = self.positions(ids)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.points[rows], ids, labels, name or self.name)


@dataclass(frozen=True, eq=False)
class SamplePlan:
    """A nested chain of uniform subsamples.

    ``levels[i]`` holds the sorted ids retained at ``rates[i]``; every level is
    a subset of the one before it.
    """

    seed: int
    n: int
    rates: tuple
    levels: tuple = field(repr=False)

    def index(self, rate) -> int:
        for i, r in enumerate(self.rates):
            if math.isclose(r, rate, rel_tol=0.0, abs_tol=1e-12):
                return i
        raise DataError(f"rate {rate} is not part of this plan (rates: {list(self.rates)})")

    def level(self, rate) -> np.ndarray:
        return self.levels[self.index(rate)]

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "n": int(self.n),
            "rates": [float(r) for r in self.rates],
            "levels": [lvl.tolist() for lvl in self.levels],
        }


def sample_size(n: int, rate: float) -> int:
    """``ceil(n * rate)``, robust to the float error in products like 100 * 0.29."""
    exact = n * rate
    nearest = round(exact)
    if math.isclose(exact, nearest, rel_tol=1e-12, abs_tol=1e-9):
        return int(nearest)
    return int(math.ceil(exact))


def _partial_shuffle(pool: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """First ``m`` entries of a seeded partial Fisher-Yates shuffle of ``pool``."""
    items = pool.tolist()
    size = len(items)
    picks = rng.integers(np.arange(m), size) if m else []
    for i, j in enumerate(picks):
        items[i], items[j] = items[j], items[i]
    return np.sort(np.asarray(items[:m], dtype=np.int64))


def _check_rates(rates: Sequence[float], n: int):
    rates = [float(r) for r in rates]
    if not rates:
        raise DataError("at least one sampling rate is required")
    for r in rates:
        if not 0.0 < r <= 1.0:
            raise DataError(f"sampling rate {r} outside (0, 1]")
    for a, b in zip(rates, rates[1:]):
        if not a > b:
            raise DataError(f"sampling rates must be strictly descending, got {a} then {b}")
    smallest = sample_size(n, rates[-1])
    if smallest < 2:
        raise DataError(
            f"rate {rates[-1]} keeps only {smallest} of {n} points; at least 2 are needed"
        )
    return rates


def draw_uniform_sample(dataset: Dataset, rate: float, rng) -> np.ndarray:
    """Sorted ids of a uniform sample of ``ceil(n * rate)`` points without replacement."""
    _check_rates([rate], dataset.n)
    rng = np.random.default_rng(rng)
    pool = np.sort(dataset.ids)
    return _partial_shuffle(pool, sample_size(dataset.n, rate), rng)


def draw_nested_samples(dataset: Dataset, rates: Sequence[float], seed: int) -> SamplePlan:
    """Draw a nested chain of uniform samples, one level per rate.

    Each level is drawn without replacement from the level above it, so the
    smaller samples are always contained in the larger ones.
    """
    rates = _check_rates(rates, dataset.n)
    rng = np.random.default_rng(seed)
    pool = np.sort(dataset.ids)
    levels = []
    for r in rates:
        pool = _partial_shuffle(pool, sample_size(dataset.n, r), rng)
        pool.setflags(write=False)
        levels.append(pool)
    return SamplePlan(int(seed), dataset.n, tuple(rates), tuple(levels))


def materialize_sample(dataset: Dataset, plan: SamplePlan, rate: float) -> Dataset:
    """Restrict ``dataset`` to the ids kept at ``rate``, sorted by id."""
    ids = plan.level(rate)
    name = f"{dataset.name}@{rate:g}" if dataset.name else f"sample@{rate:g}"
    return dataset.subset(ids, name=name)


# -- file formats ----------------------------------------------------------


def _infer_format(path, format):
    if format is not None:
        if format not in ("csv", "bin"):
            raise DataError(f"unknown format {format!r}; expected 'csv' or 'bin'")
        return format
    return "bin" if Path(path).suffix.lower() in (".bin", ".psc") else "csv"


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_csv(path: Path, name: str) -> Dataset:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")

    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip().lower() for c in rows[0]]
        rows = rows[1:]
    has_id = bool(header) and header[0] == "id"
    has_label = bool(header) and len(header) > 1 and header[-1] == "label"

    width = len(header) if header else len(rows[0]) if rows else 0
    values = []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: ragged row {r} has {len(row)} columns, expected {width}")
        parsed = []
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value at row {r}, column {c}")
            parsed.append(v)
        values.append(parsed)
    if len(values) < 2:
        raise DataError(f"{path}: need at least 2 rows, found {len(values)}")

    table = np.array(values, dtype=np.float64)
    ids = labels = None
    lo, hi = 0, table.shape[1]
    if has_id:
        ids = table[:, 0]
        lo = 1
    if has_label:
        labels = table[:, -1]
        hi -= 1
    for col, what in ((ids, "id"), (labels, "label")):
        if col is not None and not np.array_equal(col, np.round(col)):
            raise DataError(f"{path}: {what} column must hold integers")
    return Dataset(table[:, lo:hi], ids, labels, name)


def _read_bin(path: Path, name: str) -> Dataset:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, d, flags = _HEADER.unpack_from(blob)
    if magic != BINARY_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * n * d + (4 * n if flags & _FLAG_LABELS else 0)
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {n}x{d}, found {len(blob)}")
    points = np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d)
    labels = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=_HEADER.size + 4 * n * d)
    bad = np.argwhere(~np.isfinite(points))
    if len(bad):
        raise DataError(f"{path}: non-finite value at row {bad[0][0]}, column {bad[0][1]}")
    if n < 2:
        raise DataError(f"{path}: need at least 2 rows, found {n}")
    return Dataset(points.astype(np.float64), None, labels, name)


def load_matrix(path, format: Optional[str] = None) -> Dataset:
    """Load a dataset from ``csv`` or ``bin`` (format inferred from the suffix)."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    name = path.stem
    return _read_csv(path, name) if fmt == "csv" else _read_bin(path, name)


def _fmt(v):
    return repr(float(v))


def save_matrix(dataset: Dataset, path, format: Optional[str] = None) -> Path:
    """Write ``dataset`` as csv (``id,x0..,label``) or raw little-endian binary.

    The binary layout stores float32 coordinates and no ids.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "csv":
        cols = ["id"] + [f"x{j}" for j in range(dataset.d)]
        if dataset.labels is not None:
            cols.append("label")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(dataset.n):
                row = [str(int(dataset.ids[i]))] + [_fmt(v) for v in dataset.points[i]]
                if dataset.labels is not None:
                    row.append(str(int(dataset.labels[i])))
                w.writerow(row)
        return path

    flags = _FLAG_LABELS if dataset.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, dataset.n, dataset.d, flags))
        fh.write(np.ascontiguousarray(dataset.points, dtype="<f4").tobytes())
        if flags:
            fh.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())
    return path
