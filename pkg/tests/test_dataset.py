import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from perpscale.dataset import (
    Dataset, draw_nested_samples, load_matrix, materialize_sample, sample_size, save_matrix,
)
from perpscale.exceptions import DataError


def _write_bin(path, points, labels=None):
    """Byte-level writer kept independent of the package."""
    points = np.asarray(points, dtype=np.float32)
    n, d = points.shape
    out = bytearray(b"PSC1" + struct.pack("<III", n, d, 1 if labels is not None else 0))
    for row in points:
        out += struct.pack(f"<{d}f", *row)
    if labels is not None:
        out += struct.pack(f"<{n}i", *labels)
    path.write_bytes(bytes(out))
    return bytes(out)


# -- Dataset ---------------------------------------------------------------


def test_dataset_defaults_and_validation():
    ds = Dataset(np.arange(6.0).reshape(3, 2))
    assert ds.n == 3 and ds.d == 2
    assert ds.ids.tolist() == [0, 1, 2]
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 2)))
    with pytest.raises(DataError):
        Dataset(np.array([[0.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), ids=[4, 4])
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), ids=[-1, 3])


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ds.points[0, 0] = 1.0


def test_subset_keeps_rows_and_sorts_by_id():
    pts = np.arange(10.0).reshape(5, 2)
    ds = Dataset(pts, ids=[10, 3, 7, 1, 5], labels=[0, 1, 0, 1, 0])
    sub = ds.subset([7, 1])
    assert sub.ids.tolist() == [1, 7]
    assert np.array_equal(sub.points, pts[[3, 2]])
    assert sub.labels.tolist() == [1, 0]
    with pytest.raises(DataError):
        ds.subset([2])


# -- file formats ----------------------------------------------------------


def test_csv_round_trip_small(tmp_path):
    pts = np.array([[0.1, -2.5], [3.0, 1e-300], [np.pi, 7.0]])
    save_matrix(Dataset(pts), tmp_path / "m.csv")
    back = load_matrix(tmp_path / "m.csv")
    assert np.array_equal(back.points, pts)
    assert back.ids.tolist() == [0, 1, 2]


def test_csv_ragged_row_named(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,2\n3,4,5\n")
    with pytest.raises(DataError, match="ragged row 1"):
        load_matrix(p)


def test_csv_bad_cells_located(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("x0,x1\n1,2\n3,abc\n")
    with pytest.raises(DataError, match="row 1, column 1"):
        load_matrix(p)
    p.write_text("1,2\nnan,4\n")
    with pytest.raises(DataError, match="row 1, column 0"):
        load_matrix(p)
    p.write_text("1,2\n")
    with pytest.raises(DataError, match="at least 2"):
        load_matrix(p)
    with pytest.raises(DataError):
        load_matrix(tmp_path / "missing.csv")


def test_csv_header_id_and_label_columns(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("id,a,b,label\n9,1.5,2,1\n4,3,4,0\n")
    ds = load_matrix(p)
    assert ds.ids.tolist() == [9, 4]
    assert ds.labels.tolist() == [1, 0]
    assert np.array_equal(ds.points, [[1.5, 2.0], [3.0, 4.0]])


@given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                         min_size=3, max_size=3), min_size=2, max_size=20))
def test_csv_round_trip_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    ds = Dataset(np.array(rows), labels=np.arange(len(rows)) % 3)
    save_matrix(ds, path)
    first = path.read_bytes()
    back = load_matrix(path)
    assert np.array_equal(back.points, ds.points)
    assert back.checksum() == ds.checksum()
    save_matrix(back, path)
    assert path.read_bytes() == first


def test_binary_reader_against_independent_writer(tmp_path, rng):
    pts = rng.normal(size=(4, 5)).astype(np.float32)
    path = tmp_path / "m.bin"
    written = _write_bin(path, pts)
    ds = load_matrix(path)
    assert ds.n == 4 and ds.d == 5
    assert np.array_equal(ds.points, pts.astype(np.float64))
    assert ds.checksum() == Dataset(pts.astype(np.float64)).checksum()
    # the package writer must produce the same bytes
    save_matrix(ds, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == written
    assert hashlib.sha256(written).hexdigest() == hashlib.sha256((tmp_path / "again.bin").read_bytes()).hexdigest()


def test_binary_labels_and_errors(tmp_path, rng):
    pts = rng.normal(size=(6, 2))
    path = tmp_path / "l.bin"
    written = _write_bin(path, pts, labels=[0, 1, 2, 0, 1, 2])
    ds = load_matrix(path)
    assert ds.labels.tolist() == [0, 1, 2, 0, 1, 2]
    save_matrix(ds, tmp_path / "l2.psc")
    assert (tmp_path / "l2.psc").read_bytes() == written

    (tmp_path / "bad.bin").write_bytes(b"XXXX" + written[4:])
    with pytest.raises(DataError, match="magic"):
        load_matrix(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(written[:-3])
    with pytest.raises(DataError, match="bytes"):
        load_matrix(tmp_path / "short.bin")
    bad = pts.astype(np.float32).copy()
    bad[2, 1] = np.inf
    _write_bin(tmp_path / "inf.bin", bad)
    with pytest.raises(DataError, match="row 2, column 1"):
        load_matrix(tmp_path / "inf.bin")


# -- sampling --------------------------------------------------------------


def _ds(n):
    return Dataset(np.arange(2.0 * n).reshape(n, 2))


def test_identity_sample():
    plan = draw_nested_samples(_ds(50), [1.0], seed=3)
    assert plan.level(1.0).tolist() == list(range(50))


def test_smallest_level_below_two_rejected():
    with pytest.raises(DataError):
        draw_nested_samples(_ds(10), [0.7, 0.4, 0.1], seed=0)


@pytest.mark.parametrize("rates", [[0.5, 0.5], [0.2, 0.5], [1.5], [0.0], [-0.1]])
def test_bad_rates_rejected(rates):
    with pytest.raises(DataError):
        draw_nested_samples(_ds(100), rates, seed=0)


def test_plan_determinism_and_seed_sensitivity():
    ds = _ds(1000)
    a = draw_nested_samples(ds, [0.5, 0.25], seed=7)
    b = draw_nested_samples(ds, [0.5, 0.25], seed=7)
    c = draw_nested_samples(ds, [0.5, 0.25], seed=8)
    assert a.to_dict() == b.to_dict()
    assert all(np.array_equal(x, y) for x, y in zip(a.levels, b.levels))
    assert not np.array_equal(a.levels[0], c.levels[0])


def test_materialize():
    ds = Dataset(np.random.default_rng(0).normal(size=(100, 3)), labels=np.arange(100) % 4)
    plan = draw_nested_samples(ds, [1.0, 0.7, 0.4, 0.3], seed=1)
    full = materialize_sample(ds, plan, 1.0)
    assert np.array_equal(full.points, ds.points) and np.array_equal(full.ids, ds.ids)
    assert set(materialize_sample(ds, plan, 0.4).ids) <= set(materialize_sample(ds, plan, 0.7).ids)
    s = materialize_sample(ds, plan, 0.3)
    assert s.n == 30
    assert np.all(np.diff(s.ids) > 0)
    for i, row, lab in zip(s.ids, s.points, s.labels):
        assert np.array_equal(row, ds.points[i]) and lab == ds.labels[i]
    with pytest.raises(DataError):
        materialize_sample(ds, plan, 0.5)


@given(n=st.integers(2, 400), raw=st.lists(st.integers(1, 100), min_size=1, max_size=5, unique=True),
       seed=st.integers(0, 2**63 - 1))
def test_nesting_and_cardinality(n, raw, seed):
    rates = sorted((r / 100 for r in raw), reverse=True)
    if sample_size(n, rates[-1]) < 2:
        with pytest.raises(DataError):
            draw_nested_samples(_ds(n), rates, seed)
        return
    plan = draw_nested_samples(_ds(n), rates, seed)
    for rate, level in zip(plan.rates, plan.levels):
        assert level.size == sample_size(n, rate)
        assert np.array_equal(level, np.unique(level))
    for big, small in zip(plan.levels, plan.levels[1:]):
        assert np.isin(small, big).all()


def test_sample_size_is_exact_ceiling():
    assert sample_size(10, 0.7) == 7
    assert sample_size(3000, 0.1) == 300
    assert sample_size(100, 0.29) == 29
    assert sample_size(7, 0.5) == 4


def test_selection_is_uniform():
    ds = _ds(100)
    counts = np.zeros(100)
    for seed in range(1000):
        counts[draw_nested_samples(ds, [0.5], seed).levels[0]] += 1
    freq = counts / 1000
    assert freq.min() >= 0.45 and freq.max() <= 0.55, (freq.min(), freq.max())
