import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq
from scipy.spatial.distance import cdist

from perpscale.affinity import (
    DistanceRow, build_affinities, conditional_probabilities, find_bandwidth, knn_graph,
    neighborhood_size, row_perplexity,
)
from perpscale.dataset import Dataset
from perpscale.exceptions import BudgetError, DataError
from perpscale.synthetic import gaussian_blob


def _oracle_perplexity(d, sigma):
    # independent evaluation: natural-log entropy, converted at the end
    logits = -(d - d.min()) / (2.0 * sigma**2)
    p = np.exp(logits)
    p /= p.sum()
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def _oracle_sigma(d, target):
    f = lambda ls: _oracle_perplexity(d, np.exp(ls)) - target  # noqa: E731
    return float(np.exp(brentq(f, np.log(1e-12), np.log(1e12), xtol=1e-14)))


def _row(d):
    return DistanceRow(0, np.arange(1, len(d) + 1), np.asarray(d, dtype=float))


# -- row_perplexity --------------------------------------------------------


def test_row_perplexity_examples():
    assert row_perplexity([0.25] * 4) == pytest.approx(4.0, abs=1e-12)
    assert row_perplexity([1.0, 0.0, 0.0]) == 1.0
    assert row_perplexity([0.5, 0.25, 0.25]) == pytest.approx(2**1.5, abs=1e-12)


def test_row_perplexity_errors():
    with pytest.raises(DataError):
        row_perplexity([0.5, 0.7, -0.2])
    with pytest.raises(DataError):
        row_perplexity([0.5, 0.4])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30).filter(lambda v: sum(v) > 1e-3))
def test_row_perplexity_bounds(raw):
    p = np.asarray(raw) / np.sum(raw)
    m = int(np.count_nonzero(p))
    val = row_perplexity(p)
    assert 1.0 - 1e-9 <= val <= m + 1e-9
    if np.allclose(p[p > 0], 1.0 / m, rtol=0, atol=1e-15):
        assert val == pytest.approx(m, abs=1e-9)


# -- find_bandwidth --------------------------------------------------------


def test_equidistant_row_converges_immediately():
    res = find_bandwidth(_row([2.0, 2.0, 2.0]), 3.0)
    assert res.achieved == pytest.approx(3.0, abs=1e-12)
    assert res.iterations <= 1
    assert not res.degenerate_row
    other = find_bandwidth(_row([2.0, 2.0, 2.0]), 2.5)
    assert other.degenerate_row


def test_two_neighbors_against_brentq():
    d = np.array([1.0, 4.0])
    res = find_bandwidth(_row(d), 1.99)
    assert not res.clamped
    assert _oracle_perplexity(d, res.sigma) == pytest.approx(1.99, abs=1e-5)
    assert res.sigma == pytest.approx(_oracle_sigma(d, 1.99), rel=1e-3)


def test_unreachable_target_clamps_high():
    res = find_bandwidth(_row([1.0, 4.0]), 2.5)
    assert res.clamped_high
    assert res.sigma == pytest.approx(1e12)
    assert res.achieved == pytest.approx(2.0, abs=1e-9)


def test_target_below_tied_minimum_clamps_low():
    res = find_bandwidth(_row([1.0, 1.0, 1.0, 9.0]), 2.0)
    assert res.clamped_low
    assert res.achieved == pytest.approx(3.0, abs=1e-9)


def test_target_must_exceed_one():
    with pytest.raises(DataError):
        find_bandwidth(_row([1.0, 2.0]), 1.0)


@given(st.lists(st.floats(0.0, 1e3), min_size=2, max_size=60), st.floats(1.01, 70.0))
def test_bandwidth_matches_oracle_or_clamps(raw, target):
    d = np.asarray(raw)
    res = find_bandwidth(_row(d), target)
    assert res.iterations <= 64
    if res.clamped:
        return
    assert abs(_oracle_perplexity(d, res.sigma) - target) <= 1e-5
    assert abs(res.achieved - target) <= 1e-5


def test_perplexity_increases_with_sigma(rng):
    d = rng.uniform(0, 10, size=40)
    sigmas = np.logspace(-1, 2, 60)
    vals = [row_perplexity(conditional_probabilities(d, s)) for s in sigmas]
    assert np.all(np.diff(vals) > 0)


def test_distance_row_validation():
    with pytest.raises(DataError):
        DistanceRow(1, [1, 2], [0.5, 1.0])
    with pytest.raises(DataError):
        DistanceRow(0, [1], [-1.0])
    row = DistanceRow(0, [3, 4], [1.0, 2.5])
    assert row.radius == 2.5


# -- knn_graph -------------------------------------------------------------


def test_knn_tie_goes_to_smaller_id():
    ds = Dataset(np.array([[0.0], [1.0], [2.0], [3.0]]))
    rows = knn_graph(ds, 1)
    assert rows[1].neighbor_ids.tolist() == [0]
    assert rows[2].neighbor_ids.tolist() == [1]


def test_knn_exhaustive_equals_dense():
    pts = np.random.default_rng(1).normal(size=(30, 4))
    ds = Dataset(pts)
    D = cdist(pts, pts, "sqeuclidean")
    for i, row in enumerate(knn_graph(ds, 29)):
        assert sorted(row.neighbor_ids.tolist()) == [j for j in range(30) if j != i]
        assert np.allclose(row.sq_dists, D[i, row.neighbor_ids], rtol=1e-12, atol=1e-12)


def test_knn_against_brute_force():
    pts = np.random.default_rng(2).normal(size=(500, 5))
    ds = Dataset(pts)
    D = cdist(pts, pts, "sqeuclidean")
    np.fill_diagonal(D, np.inf)
    for i, row in enumerate(knn_graph(ds, 10)):
        others = np.setdiff1d(np.arange(500), np.append(row.neighbor_ids, i))
        assert row.sq_dists.max() <= D[i, others].min() + 1e-12
        expected = np.lexsort((np.arange(500), D[i]))[:10]
        assert row.neighbor_ids.tolist() == expected.tolist()


def test_knn_respects_custom_ids():
    pts = np.array([[0.0], [1.0], [2.0], [3.0]])
    ds = Dataset(pts, ids=[30, 20, 10, 0])
    rows = knn_graph(ds, 1)
    # point id 10 sits at 2.0: ids 20 (at 1.0) and 0 (at 3.0) tie; smaller id wins
    assert rows[2].center_id == 10 and rows[2].neighbor_ids.tolist() == [0]


def test_knn_k_out_of_range():
    ds = Dataset(np.zeros((3, 1)) + np.arange(3)[:, None])
    with pytest.raises(DataError):
        knn_graph(ds, 3)
    with pytest.raises(DataError):
        knn_graph(ds, 0)


# -- build_affinities ------------------------------------------------------


def _check_joint(J):
    assert np.allclose(J, J.T, rtol=0, atol=1e-15)
    assert np.all(np.diag(J) == 0)
    assert np.all(J >= 0)
    assert abs(J.sum() - 1.0) <= 1e-9


def test_square_symmetry():
    ds = Dataset(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    J = build_affinities(ds, 2.0).toarray()
    _check_joint(J)
    edges = [J[0, 1], J[1, 2], J[2, 3], J[3, 0]]
    assert np.ptp(edges) < 1e-15
    assert abs(J[0, 2] - J[1, 3]) < 1e-15


@pytest.mark.parametrize("mode", ["dense", "sparse"])
def test_joint_invariants_and_row_perplexities(mode):
    ds = gaussian_blob(200, d=5, seed=3)
    aff = build_affinities(ds, 15.0, mode=mode)
    _check_joint(aff.toarray())
    ok = aff.flags == 0
    assert ok.all()
    cond = aff.conditional.toarray() if mode == "sparse" else aff.conditional
    for i in range(ds.n):
        assert abs(row_perplexity(cond[i]) - 15.0) <= 1e-5
    if mode == "sparse":
        k = neighborhood_size(15.0, ds.n)
        assert k == 45
        assert (np.diff(aff.conditional.indptr) <= k).all()


def test_dense_and_sparse_agree_on_support():
    ds = gaussian_blob(300, d=10, seed=0)
    dense = build_affinities(ds, 20.0, mode="dense").toarray()
    sparse = build_affinities(ds, 20.0, mode="sparse").csr().tocoo()
    assert np.abs(sparse.data - dense[sparse.row, sparse.col]).max() <= 1e-3


def test_neighborhood_size_floor_and_cap():
    assert neighborhood_size(10.5, 1000) == 31
    assert neighborhood_size(10.0, 20) == 19


def test_perplexity_range_and_mode_errors():
    ds = gaussian_blob(20, d=3, seed=0)
    for bad in (1.0, 20.0, 25.0):
        with pytest.raises(DataError):
            build_affinities(ds, bad)
    with pytest.raises(DataError):
        build_affinities(ds, 5.0, mode="fast")


def test_dense_budget_ceiling():
    ds = gaussian_blob(100, d=3, seed=0)
    with pytest.raises(BudgetError):
        build_affinities(ds, 5.0, max_dense_bytes=1000)


def test_duplicates_allowed_unless_row_collapses():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
    aff = build_affinities(Dataset(pts), 2.0)
    _check_joint(aff.toarray())
    ids = [7, 8, 9, 10]
    with pytest.raises(DataError, match="coincides"):
        build_affinities(Dataset(np.zeros((4, 2)), ids=ids), 2.0)
    # in sparse mode a point whose whole neighborhood is duplicates also fails
    pts = np.vstack([np.zeros((5, 2)), [[10.0, 10.0], [11.0, 10.0], [10.0, 11.0]]])
    with pytest.raises(DataError, match="coincides"):
        build_affinities(Dataset(pts), 1.2, mode="sparse")


def test_p_log_p_matches_direct_sum():
    ds = gaussian_blob(80, d=4, seed=5)
    for mode in ("dense", "sparse"):
        aff = build_affinities(ds, 10.0, mode=mode)
        J = aff.toarray()
        nz = J[J > 0]
        assert aff.p_log_p() == pytest.approx(float(np.sum(nz * np.log(nz))), rel=1e-12)


def test_bandwidth_determinism_across_threads():
    import numba

    from perpscale import set_threads

    ds = gaussian_blob(400, d=6, seed=9)
    outs = []
    for t in (1, 2, numba.config.NUMBA_NUM_THREADS):
        set_threads(t)
        a = build_affinities(ds, 20.0, mode="sparse")
        b = build_affinities(ds, 20.0, mode="dense")
        outs.append((a.bandwidths.tobytes(), a.csr().data.tobytes(), b.joint.tobytes()))
    set_threads(numba.config.NUMBA_NUM_THREADS)
    assert outs[0] == outs[1] == outs[2]
