import csv

import numpy as np
import pytest

from invbss.errors import EmptyCorrespondenceError, MissingOrderError, TooFewInvariantsError
from invbss.frames import construct_frame
from invbss.invariants import (IndexGrouping, InvariantField, build_multiplets, group_strings,
                               index_label, relabel, scalarity_residual, signed_permutations,
                               transform_correlations, write_multiplets_csv)
from invbss.moments import canonical_indices, moments_of


def skewed_velocities(n=20_000, dims=2, seed=0):
    rng = np.random.default_rng(seed)
    # distinct shapes per component so the frame is well determined
    cols = [rng.gamma(1.0 + k, size=n) for k in range(dims)]
    return np.stack(cols, axis=1)


def field_from(rows, n=2, max_order=5):
    """An InvariantField over cells 0..len(rows)-1 with the given canonical values."""
    values = {r: np.array([row[r] for row in rows]) for r in range(3, max_order + 1)}
    k = len(rows)
    return InvariantField(n=n, max_order=max_order, values=values, cells=np.arange(k),
                          centers=np.zeros((k, n)), counts=np.full(k, 100))


def min_over_signed_perms(a, b, n):
    """Largest discrepancy between invariant dicts after the best relabeling of ``b``."""
    fa, fb = field_from([a], n), field_from([b], n)
    best = np.inf
    for p in signed_permutations(n):
        rb = relabel(fb, p)
        err = max(np.max(np.abs(fa.values[r] - rb.values[r])) for r in fa.values)
        best = min(best, err)
    return best


def test_grouping_validation_and_label():
    g = IndexGrouping((2,), (0, 1))
    assert g.d_a == 1 and g.d_b == 2 and g.n == 3
    assert g.label() == "{3}|{1,2}"
    assert g.swapped().group_a == (0, 1)
    with pytest.raises(ValueError):
        IndexGrouping((0,), (0, 1))
    with pytest.raises(ValueError):
        IndexGrouping((0,), (2,))
    with pytest.raises(ValueError):
        IndexGrouping((), (0,))


def test_index_label_is_one_based():
    assert index_label((0, 0, 1)) == "I112"


def test_group_strings_counts():
    assert group_strings((0,), 5) == [(0, 0, 0), (0, 0, 0, 0), (0,) * 5]
    assert len(group_strings((1, 2), 5)) == 4 + 5 + 6


def test_signed_permutation_count_and_identity_first():
    perms = list(signed_permutations(3))
    assert len(perms) == 48
    np.testing.assert_array_equal(perms[0], np.eye(3))


def test_invariants_are_unchanged_by_linear_maps():
    v = skewed_velocities()
    base = transform_correlations(construct_frame(moments_of(v)), moments_of(v))
    a = np.array([[2.0, 0.7], [-0.4, 1.3]])
    w = v @ a.T + 5.0
    other = transform_correlations(construct_frame(moments_of(w)), moments_of(w))
    assert min_over_signed_perms(base, other, 2) < 1e-8


def test_whitened_second_order_is_checked():
    mt = moments_of(skewed_velocities(1000))
    with pytest.raises(ValueError):
        transform_correlations(np.eye(2) * 3.0, mt)
    with pytest.raises(MissingOrderError):
        transform_correlations(construct_frame(mt), moments_of(skewed_velocities(1000), 4))


def test_relabel_round_trip():
    rng = np.random.default_rng(1)
    rows = [{r: rng.normal(size=len(canonical_indices(3, r))) for r in (3, 4, 5)} for _ in range(4)]
    f = field_from(rows, n=3)
    p = list(signed_permutations(3))[17]
    back = relabel(relabel(f, p), p.T)
    for r in f.values:
        np.testing.assert_allclose(back.values[r], f.values[r], atol=1e-12)


def test_value_accepts_any_index_order():
    rng = np.random.default_rng(2)
    rows = [{r: rng.normal(size=len(canonical_indices(2, r))) for r in (3, 4, 5)}]
    f = field_from(rows)
    np.testing.assert_array_equal(f.value(1, 0, 0), f.value(0, 0, 1))
    assert f.labels(3) == ["I111", "I112", "I122", "I222"]


def test_scalarity_residual_recovers_relabeling():
    rng = np.random.default_rng(3)
    rows = [{r: rng.normal(size=len(canonical_indices(2, r))) for r in (3, 4, 5)} for _ in range(6)]
    f = field_from(rows)
    p = np.array([[0.0, -1.0], [1.0, 0.0]])
    out = scalarity_residual(f, relabel(f, p), np.column_stack([np.arange(6), np.arange(6)]))
    assert out["median_relative_error"] < 1e-12
    np.testing.assert_array_equal(out["best_signed_permutation"], p.T)
    assert out["n_pairs"] == 6


def test_scalarity_residual_needs_shared_cells():
    rows = [{r: np.ones(len(canonical_indices(2, r))) for r in (3, 4, 5)}]
    f = field_from(rows)
    with pytest.raises(EmptyCorrespondenceError):
        scalarity_residual(f, f, np.array([[5, 5]]))


def test_multiplets_and_their_minimum_size(tmp_path):
    rng = np.random.default_rng(4)
    rows = [{r: rng.normal(size=len(canonical_indices(2, r))) for r in (3, 4, 5)} for _ in range(3)]
    f = build_multiplets(field_from(rows), IndexGrouping((0,), (1,)))
    assert f.labels_a == ("I111", "I1111", "I11111")
    np.testing.assert_array_equal(f.multiplet_b[:, 0], f.value(1, 1, 1))
    short = field_from([{r: rows[0][r] for r in (3, 4)}], max_order=4)
    with pytest.raises(TooFewInvariantsError):
        build_multiplets(short, IndexGrouping((0,), (1,)))
    path = tmp_path / "m.csv"
    write_multiplets_csv(f, path)
    with open(path) as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["cell_id", "x1", "x2", "IA_1", "IA_2", "IA_3", "IB_1", "IB_2", "IB_3"]
    assert len(table) == 4


def test_toy_multiplets_track_their_own_source(separable_analysis, separable_toy):
    from scipy.stats import spearmanr
    a = separable_analysis
    grouping = a.search.grouping
    f = build_multiplets(a.invariants, grouping)
    src = separable_toy.sources[a.velocity.index]
    means = np.array([src[a.index.cells[c].members].mean(axis=0) for c in f.cells])
    # the leading A invariant is a function of one source only
    rho = [abs(spearmanr(f.multiplet_a[:, 0], means[:, j])[0]) for j in range(2)]
    assert max(rho) > 0.6 and min(rho) < 0.3
