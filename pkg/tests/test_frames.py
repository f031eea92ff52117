import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invbss.errors import SingularCovarianceError
from invbss.frames import (FrameField, MFrame, align_frames, build_frame_field, construct_frame,
                           continuity_violations, contract_fourth, frame_residuals,
                           nearest_signed_permutation, transform_tensor)
from invbss.invariants import signed_permutations
from invbss.moments import MomentField, MomentTensors, compress_symmetric, moments_of
from invbss.trajectory import NeighborhoodIndex


def symmetrize(t):
    perms = list(itertools.permutations(range(t.ndim)))
    return sum(np.transpose(t, p) for p in perms) / len(perms)


def tensors(c2, c4):
    n = c2.shape[0]
    return MomentTensors(mean_velocity=np.zeros(n),
                         values={2: compress_symmetric(c2), 4: compress_symmetric(c4)},
                         sample_count=100)


def diag4(values):
    n = len(values)
    c4 = np.zeros((n,) * 4)
    for i, v in enumerate(values):
        c4[i, i, i, i] = v
    return c4


def is_signed_permutation(p, tol=1e-6):
    a = np.abs(p)
    return (np.allclose(np.sort(a, axis=1)[:, -1], 1, atol=tol) and np.allclose(a.sum(0), 1, atol=tol)
            and np.allclose(a.sum(1), 1, atol=tol))


def test_contract_fourth_examples():
    assert np.all(contract_fourth(np.zeros((2,) * 4)) == 0)
    c4 = np.zeros((2,) * 4)
    c4[0, 0, 0, 0] = 3
    np.testing.assert_array_equal(contract_fourth(c4), [[3, 0], [0, 0]])


def test_contract_fourth_brute_force():
    rng = np.random.default_rng(0)
    c4 = symmetrize(rng.normal(size=(3,) * 4))
    brute = np.zeros((3, 3))
    for k, l, m in itertools.product(range(3), repeat=3):
        brute[k, l] += c4[k, l, m, m]
    np.testing.assert_allclose(contract_fourth(c4), brute, atol=1e-14)


def test_identity_covariance_with_diagonal_fourth():
    fr = construct_frame(tensors(np.eye(2), diag4([5.0, 2.0])))
    assert is_signed_permutation(fr.m)
    assert not fr.degenerate
    assert np.all(np.diff(fr.d) < 0)


def test_pure_rescaling():
    c2 = np.diag([4.0, 1.0])
    # fourth moments of independent components with distinct kurtosis, in raw coordinates
    c4 = diag4([3.0 * 16, 9.0])
    c4 = symmetrize(c4 + 0.0)
    fr = construct_frame(tensors(c2, c4))
    np.testing.assert_allclose(np.abs(fr.m[np.argsort(np.abs(fr.m[:, 0]))[::-1]]),
                               np.diag([0.5, 1.0]), atol=1e-12)


def test_random_substitution_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        c2 = a @ a.T + 0.1 * np.eye(3)
        c4 = symmetrize(rng.normal(size=(3,) * 4))
        mt = tensors(c2, c4)
        white, off = frame_residuals(construct_frame(mt), mt)
        assert white <= 1e-10
        assert off <= 1e-8


def test_singular_covariance():
    c2 = np.diag([1.0, 0.0])
    with pytest.raises(SingularCovarianceError):
        construct_frame(tensors(c2, diag4([1.0, 0.0])))


def test_degenerate_spectrum_flagged():
    v = np.random.default_rng(2).normal(size=(400, 2))
    # a rotation-invariant sample: the contracted matrix is a multiple of the identity
    angles = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    fr = construct_frame(moments_of(ring, 4))
    assert fr.degenerate
    assert not construct_frame(moments_of(v ** 3, 4)).degenerate


def test_two_valid_frames_differ_by_signed_permutation():
    rng = np.random.default_rng(3)
    v = rng.gamma(2.0, size=(5000, 3)) @ rng.normal(size=(3, 3))
    mt = moments_of(v, 4)
    fr = construct_frame(mt)
    p = np.diag([1.0, -1.0, 1.0])[[2, 0, 1]]
    other = p @ fr.m
    white, off = frame_residuals(MFrame(other, fr.d, False, fr.spectral_gap), mt)
    assert white <= 1e-10 and off <= 1e-8
    assert is_signed_permutation(other @ np.linalg.inv(fr.m))


def test_transform_tensor_matches_einsum():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(3, 3))
    t = rng.normal(size=(3, 3, 3))
    np.testing.assert_allclose(transform_tensor(m, t),
                               np.einsum("ai,bj,ck,ijk->abc", m, m, m, t), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 47), st.integers(0, 2 ** 16))
def test_nearest_signed_permutation_recovers_noisy_permutation(which, seed):
    perms = list(signed_permutations(3))
    p = perms[which]
    rng = np.random.default_rng(seed)
    assert np.array_equal(nearest_signed_permutation(p + 0.2 * rng.uniform(-1, 1, (3, 3))), p)


def _chain_index(n_cells):
    adjacency = tuple((i, i + 1) for i in range(n_cells - 1))
    return NeighborhoodIndex(cells=tuple(range(n_cells)), adjacency=adjacency, min_count=1,
                             mode="grid", disjoint=True, sample_cell=np.zeros(0, dtype=np.int64))


def test_alignment_of_identical_frames_is_identity():
    m = np.array([[2.0, 0.3], [0.1, 1.0]])
    field = FrameField(frames=tuple(MFrame(m, np.array([2.0, 1.0]), False, 1.0) for _ in range(4)))
    out = align_frames(field, _chain_index(4))
    for f in out.frames:
        np.testing.assert_array_equal(f.m, m)
    assert out.n_components == 1


def test_alignment_undoes_a_row_swap():
    m = np.array([[2.0, 0.3], [0.1, 1.0]])
    swapped = m[[1, 0]]
    field = FrameField(frames=(MFrame(m, np.array([2.0, 1.0]), False, 5.0),
                               MFrame(swapped, np.array([1.0, 2.0]), False, 1.0)))
    out = align_frames(field, _chain_index(2))
    np.testing.assert_array_equal(out.frames[1].m, m)


def test_disconnected_components_are_counted():
    m = np.eye(2)
    field = FrameField(frames=tuple(MFrame(m, np.array([2.0, 1.0]), False, 1.0) for _ in range(3)))
    idx = NeighborhoodIndex(cells=(0, 1, 2), adjacency=((0, 1),), min_count=1, mode="grid",
                            disjoint=True, sample_cell=np.zeros(0, dtype=np.int64))
    assert align_frames(field, idx).n_components == 2


def test_toy_field_is_continuous_and_residuals_survive(separable_analysis):
    a = separable_analysis
    assert a.frames.alignment_applied
    bad = continuity_violations(a.frames, a.index)
    # a small spectral gap leaves the in-plane rotation to sampling noise, so a few
    # weak-contrast pairs may break; strong-contrast pairs must not
    rel = np.array([f.spectral_gap / np.max(np.abs(f.d)) for f in a.frames.frames])
    assert len(bad) <= 0.02 * len(a.index.adjacency)
    assert all(min(rel[x], rel[y]) < np.median(rel) for x, y in bad)
    for f, mt in zip(a.frames.frames, a.moments.cells):
        white, off = frame_residuals(f, mt)
        assert white <= 1e-10 and off <= 1e-8


def test_coarser_toy_grid_is_fully_continuous(separable_toy):
    from invbss.pipeline import CellConfig, analyze_series
    a = analyze_series(separable_toy.series, cells=CellConfig(cells_per_axis=8))
    assert continuity_violations(a.frames, a.index) == []


def test_build_frame_field_records_singular_cells():
    good = moments_of(np.random.default_rng(5).gamma(2.0, size=(200, 2)), 4)
    flat = moments_of(np.column_stack([np.arange(50.0), np.zeros(50)]), 4)
    ff = build_frame_field(MomentField(cells=(good, flat), max_order=4))
    assert ff.excluded == {1: "singular"}
    assert ff.valid.tolist() == [True, False]
