import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invbss.errors import (AllCellsDroppedError, NonFiniteError, NonUniformSamplingError,
                           SeriesFormatError, SeriesTooShortError)
from invbss.trajectory import (TimeSeries, VelocitySeries, build_neighborhoods, default_min_count,
                               estimate_velocity, load_series, save_series)


def _vs(positions, velocities=None):
    p = np.asarray(positions, dtype=float)
    v = np.zeros_like(p) if velocities is None else velocities
    return VelocitySeries(positions=p, velocities=v, dt=1.0, index=np.arange(len(p)))


def test_default_min_count_two_channels():
    assert default_min_count(2) == 620
    assert default_min_count(1) == 50


def test_uniform_grid_counts():
    rng = np.random.default_rng(0)
    vs = _vs(rng.uniform(size=(10_000, 2)))
    idx = build_neighborhoods(vs, cells_per_axis=8, min_count=20)
    assert len(idx) == 64
    counts = idx.counts
    assert counts.sum() == 10_000
    # binomial spread around 10000/64 = 156
    assert abs(counts.mean() - 156.25) < 1e-9
    assert counts.min() > 100 and counts.max() < 220


def test_sparse_data_drops_everything():
    rng = np.random.default_rng(1)
    with pytest.raises(AllCellsDroppedError):
        build_neighborhoods(_vs(rng.uniform(size=(100, 2))), min_count=1000)


def test_identical_positions_give_one_cell():
    idx = build_neighborhoods(_vs(np.ones((300, 2))), cells_per_axis=8, min_count=10)
    assert len(idx) == 1
    assert len(idx.cells[0].members) == 300


def test_grid_partition_and_adjacency():
    rng = np.random.default_rng(2)
    vs = _vs(rng.normal(size=(20_000, 2)))
    idx = build_neighborhoods(vs, cells_per_axis=6, min_count=100)
    seen = np.concatenate([c.members for c in idx.cells])
    assert len(seen) == len(np.unique(seen))
    for i, c in enumerate(idx.cells):
        assert len(c.members) >= 100
        assert np.all(idx.sample_cell[c.members] == i)
    for a, b in idx.adjacency:
        ka, kb = np.array(idx.grid_keys[a]), np.array(idx.grid_keys[b])
        assert a < b and np.abs(ka - kb).sum() == 1
    assert idx.n_dropped + len(idx) <= 36


def test_knn_cells_overlap_and_are_symmetric():
    rng = np.random.default_rng(3)
    vs = _vs(rng.uniform(size=(3000, 2)))
    idx = build_neighborhoods(vs, strategy="knn", k=200, min_count=200)
    assert idx.mode == "knn" and not idx.disjoint
    assert all(len(c.members) == 200 for c in idx.cells)
    nb = idx.neighbors()
    for a, b in idx.adjacency:
        assert b in nb[a] and a in nb[b]


def test_unknown_strategy():
    with pytest.raises(ValueError):
        build_neighborhoods(_vs(np.zeros((10, 2))), strategy="voronoi", min_count=1)


def test_velocity_exact_for_quadratic():
    t = np.arange(50) * 0.1
    x = np.stack([3 * t + 1, t ** 2], axis=1)
    vs = estimate_velocity(TimeSeries(dt=0.1, samples=x))
    assert len(vs) == 48
    np.testing.assert_allclose(vs.velocities[:, 0], 3.0)
    np.testing.assert_allclose(vs.velocities[:, 1], 2 * t[1:-1], atol=1e-12)
    np.testing.assert_array_equal(vs.index, np.arange(1, 49))


def test_series_validation():
    with pytest.raises(SeriesTooShortError):
        TimeSeries(dt=1.0, samples=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        TimeSeries(dt=0.0, samples=np.zeros((5, 2)))
    bad = np.zeros((5, 2))
    bad[3, 1] = np.nan
    with pytest.raises(NonFiniteError) as err:
        TimeSeries(dt=1.0, samples=bad)
    assert err.value.row == 4


def test_samples_are_read_only():
    ts = TimeSeries(dt=1.0, samples=np.zeros((5, 2)))
    with pytest.raises(ValueError):
        ts.samples[0, 0] = 1.0


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_round_trip_is_exact(tmp_path, suffix):
    rng = np.random.default_rng(4)
    ts = TimeSeries(dt=0.01, samples=rng.normal(size=(200, 3)))
    path = tmp_path / f"series{suffix}"
    save_series(ts, path)
    back = load_series(path)
    np.testing.assert_array_equal(back.samples, ts.samples)
    assert back.dt == ts.dt


def test_csv_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("t,x1,x2\n0,1,2\n0.1,1,2\n0.2,1\n")
    with pytest.raises(SeriesFormatError) as err:
        load_series(p)
    assert err.value.row == 3
    p.write_text("t,x1,x2\n0,1,2\n0.1,1,2\n0.35,1,2\n0.4,1,2\n")
    with pytest.raises(NonUniformSamplingError):
        load_series(p)
    p.write_text("t,x1,x2\n0,1,2\n0.1,nan,2\n0.2,1,2\n")
    with pytest.raises(NonFiniteError):
        load_series(p)


def test_binary_rejects_bad_magic(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(SeriesFormatError):
        load_series(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 40), st.integers(0, 2 ** 16))
def test_grid_members_are_valid_and_disjoint(g, min_count, seed):
    rng = np.random.default_rng(seed)
    vs = _vs(rng.normal(size=(800, 2)))
    try:
        idx = build_neighborhoods(vs, cells_per_axis=g, min_count=min_count)
    except AllCellsDroppedError:
        return
    members = np.concatenate([c.members for c in idx.cells])
    assert members.min() >= 0 and members.max() < len(vs)
    assert len(members) == len(np.unique(members))
    assert all(len(c.members) >= min_count for c in idx.cells)
