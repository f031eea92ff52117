import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invbss.errors import InsufficientSamplesError, MissingOrderError, QuadratureError
from invbss.moments import (EmpiricalDensity, MomentField, Quadrature, canonical_indices,
                            compress_symmetric, expand_symmetric, load_moment_field, local_moments,
                            moments_from_density, moments_of, save_moment_field)
from invbss.trajectory import VelocitySeries, build_neighborhoods


def gaussian(point, v):
    return np.exp(-0.5 * np.sum(v ** 2, axis=1)) / (2 * np.pi)


def test_canonical_index_count():
    for n in (2, 3, 12):
        for r in (2, 3, 5):
            assert len(canonical_indices(n, r)) == comb(n + r - 1, r)


def test_symmetric_storage_round_trip():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(50, 3))
    dense = np.einsum("ia,ib,ic->abc", v, v, v) / 50
    np.testing.assert_allclose(expand_symmetric(compress_symmetric(dense), 3, 3), dense, atol=1e-14)


def test_four_point_set():
    mt = moments_of(np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]]))
    np.testing.assert_array_equal(mt.mean_velocity, [0, 0])
    np.testing.assert_allclose(mt.c2, np.diag([0.5, 0.5]))
    np.testing.assert_allclose(mt.c3, 0.0, atol=1e-15)


def test_constant_velocities_have_zero_moments():
    mt = moments_of(np.tile([[0.3, -2.0]], (40, 1)))
    for r in range(2, 6):
        np.testing.assert_allclose(mt.tensor(r), 0.0, atol=1e-15)


def test_independent_components_sampling_oracle():
    rng = np.random.default_rng(1)
    n = 100_000
    v = np.stack([rng.normal(0, 1, n), rng.normal(0, 2, n)], axis=1)
    mt = moments_of(v, 4)
    d = v - v.mean(axis=0)
    for (a, b), target in {(0, 0): 1.0, (1, 1): 4.0, (0, 1): 0.0}.items():
        se = np.std(d[:, a] * d[:, b]) / np.sqrt(n)
        assert abs(mt.entry(a, b) - target) < 5 * se
    # product structure of independent fourth moments: <a a b b> = <a a><b b>
    p = d[:, 0] ** 2 * d[:, 1] ** 2
    assert abs(mt.entry(0, 0, 1, 1) - mt.entry(0, 0) * mt.entry(1, 1)) < 5 * np.std(p) / np.sqrt(n)


def test_single_index_moment_vanishes():
    rng = np.random.default_rng(2)
    v = rng.exponential(size=(1000, 2)) * 1e3
    mt = moments_of(v)
    assert np.max(np.abs((v - mt.mean_velocity).mean(axis=0))) < 1e-9


def test_c2_agrees_with_gram_accumulation():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(5000, 3)) + 10
    mt = moments_of(v, 2)
    gram = (v.T @ v) / len(v) - np.outer(v.mean(0), v.mean(0))
    np.testing.assert_allclose(mt.c2, gram, rtol=1e-10)


def test_missing_order():
    mt = moments_of(np.random.default_rng(4).normal(size=(20, 2)), 3)
    with pytest.raises(MissingOrderError):
        mt.tensor(4)


def test_single_member_cell_is_an_error():
    with pytest.raises(InsufficientSamplesError):
        moments_of(np.zeros((1, 2)))


def test_density_oracle_gaussian():
    q = Quadrature(bounds=((-9, 9), (-9, 9)))
    np.testing.assert_allclose(moments_from_density(gaussian, np.zeros(2), 2, q), np.eye(2), atol=1e-6)
    np.testing.assert_allclose(moments_from_density(gaussian, np.zeros(2), 3, q), 0.0, atol=1e-6)


def test_density_oracle_uniform_fourth_moment():
    q = Quadrature(bounds=((-1, 1), (-1, 1)), nodes=8)
    c4 = moments_from_density(lambda p, v: np.full(len(v), 0.25), np.zeros(2), 4, q)
    assert abs(c4[0, 0, 0, 0] - 0.2) < 1e-6
    assert abs(c4[0, 0, 1, 1] - 1 / 9) < 1e-6


def test_density_oracle_non_convergence():
    q = Quadrature(bounds=((-1, 1), (-1, 1)), nodes=2, tol=1e-15, max_refinements=1)
    rough = lambda p, v: 1.0 + np.sign(v[:, 0] - 0.123)
    with pytest.raises(QuadratureError):
        moments_from_density(rough, np.zeros(2), 2, q)


def test_local_moments_match_empirical_density_exactly():
    rng = np.random.default_rng(5)
    pos = rng.uniform(size=(4000, 2))
    vel = rng.gamma(2.0, size=(4000, 2))
    vs = VelocitySeries(positions=pos, velocities=vel, dt=1.0, index=np.arange(4000))
    idx = build_neighborhoods(vs, cells_per_axis=3, min_count=50)
    field = local_moments(vs, idx, 5)
    for cell, mt in zip(idx.cells, field.cells):
        emp = EmpiricalDensity(vel[cell.members])
        for r in range(2, 6):
            np.testing.assert_allclose(mt.tensor(r), moments_from_density(emp, None, r),
                                       rtol=1e-10, atol=1e-13)


def test_threads_do_not_change_results():
    rng = np.random.default_rng(6)
    pos = rng.uniform(size=(6000, 2))
    vs = VelocitySeries(positions=pos, velocities=rng.normal(size=(6000, 2)), dt=1.0,
                        index=np.arange(6000))
    idx = build_neighborhoods(vs, cells_per_axis=4, min_count=50)
    a = local_moments(vs, idx, 5, workers=1)
    b = local_moments(vs, idx, 5, workers=4)
    for x, y in zip(a.cells, b.cells):
        for r in range(2, 6):
            np.testing.assert_array_equal(x.values[r], y.values[r])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    cells = tuple(moments_of(rng.normal(size=(100, 2))) for _ in range(3))
    field = MomentField(cells=cells, max_order=5)
    path = tmp_path / "m.ibss"
    save_moment_field(field, path)
    back = load_moment_field(path)
    for x, y in zip(field.cells, back.cells):
        assert x.sample_count == y.sample_count
        for r in range(2, 6):
            np.testing.assert_array_equal(x.values[r], y.values[r])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 40), st.just(3)),
              elements=st.floats(-100, 100, allow_nan=False)))
def test_tensors_are_symmetric_and_c2_psd(v):
    mt = moments_of(v, 4)
    assert np.all(np.linalg.eigvalsh(mt.c2) > -1e-9 * max(1.0, np.abs(mt.c2).max()))
    c4 = mt.c4
    for perm in itertools.permutations(range(4)):
        np.testing.assert_array_equal(c4, np.transpose(c4, perm))
