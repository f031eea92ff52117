"""M-transformed velocity correlations and the grouped multiplets built from them.

``I_{kl...} = sum M_{kk'} M_{ll'} ... C_{k'l'...}`` inherits the full index
symmetry of ``C``, so values are keyed by canonical (non-decreasing) index
strings.  Indices are 0-based internally; labels such as ``"I112"`` use the
1-based convention of the channel names.
"""
import csv
import itertools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import EmptyCorrespondenceError, MissingOrderError, TooFewInvariantsError
from .frames import transform_tensor
from .moments import canonical_indices, compress_symmetric, expand_symmetric


@dataclass(frozen=True)
class IndexGrouping:
    """Bipartition of channel indices (0-based) into groups A and B."""

    group_a: tuple
    group_b: tuple

    def __post_init__(self):
        a = tuple(sorted(int(i) for i in self.group_a))
        b = tuple(sorted(int(i) for i in self.group_b))
        if not a or not b:
            raise ValueError("both groups must be non-empty")
        if set(a) & set(b):
            raise ValueError("groups overlap")
        if set(a) | set(b) != set(range(len(a) + len(b))):
            raise ValueError("groups must cover 0..N-1")
        object.__setattr__(self, "group_a", a)
        object.__setattr__(self, "group_b", b)

    @property
    def d_a(self):
        return len(self.group_a)

    @property
    def d_b(self):
        return len(self.group_b)

    @property
    def n(self):
        return self.d_a + self.d_b

    def swapped(self):
        return IndexGrouping(self.group_b, self.group_a)

    def label(self):
        a = ",".join(str(i + 1) for i in self.group_a)
        b = ",".join(str(i + 1) for i in self.group_b)
        return "{" + a + "}|{" + b + "}"

    def to_dict(self):
        return {"group_a": [i + 1 for i in self.group_a], "group_b": [i + 1 for i in self.group_b]}


def index_label(index):
    return "I" + "".join(str(int(i) + 1) for i in index)


@dataclass(frozen=True)
class InvariantField:
    """Invariants of every valid cell.

    ``values[r]`` has shape ``(n_cells, K_r)`` with columns following
    :func:`~invbss.moments.canonical_indices`.  ``cells`` holds the cell
    numbers in the originating NeighborhoodIndex.  Multiplets are filled in
    by :func:`build_multiplets`.
    """

    n: int
    max_order: int
    values: dict
    cells: np.ndarray
    centers: np.ndarray
    counts: np.ndarray
    grouping: Optional[IndexGrouping] = None
    multiplet_a: Optional[np.ndarray] = None
    multiplet_b: Optional[np.ndarray] = None
    labels_a: tuple = ()
    labels_b: tuple = ()

    def __len__(self):
        return len(self.cells)

    def labels(self, order):
        return [index_label(ix) for ix in canonical_indices(self.n, order)]

    def value(self, *index):
        order = len(index)
        key = tuple(sorted(int(i) for i in index))
        col = [tuple(r) for r in canonical_indices(self.n, order).tolist()].index(key)
        return self.values[order][:, col]

    def tensor(self, row, order):
        return expand_symmetric(self.values[order][row], self.n, order)

    def row_of_cell(self):
        """Map from cell number to row in this field."""
        return {int(c): i for i, c in enumerate(self.cells)}


def transform_correlations(frame, mt, max_order=5, check_tol=1e-6):
    """Canonical invariant values of orders 3..``max_order`` for one cell.

    The order-2 transform is checked against the identity (to
    ``check_tol``) but not returned.
    """
    if max_order > mt.max_order:
        raise MissingOrderError(f"moments available to order {mt.max_order}, need {max_order}")
    m = frame.m if hasattr(frame, "m") else np.asarray(frame, dtype=float)
    i2 = transform_tensor(m, mt.tensor(2))
    if np.max(np.abs(i2 - np.eye(len(i2)))) > check_tol:
        raise ValueError("frame does not whiten the covariance")
    return {r: compress_symmetric(transform_tensor(m, mt.tensor(r))) for r in range(3, max_order + 1)}


def build_invariant_field(frame_field, moment_field, idx, max_order=5):
    """Invariants for every cell the frame field marks valid."""
    valid = np.flatnonzero(frame_field.valid)
    n = moment_field.cells[0].n
    vals = {r: [] for r in range(3, max_order + 1)}
    for c in valid:
        out = transform_correlations(frame_field.frames[c], moment_field.cells[c], max_order)
        for r in vals:
            vals[r].append(out[r])
    k_r = {r: len(canonical_indices(n, r)) for r in vals}
    values = {r: np.array(v).reshape(len(valid), k_r[r]) for r, v in vals.items()}
    centers = np.array([idx.cells[c].center for c in valid]).reshape(len(valid), n)
    counts = np.array([len(idx.cells[c].members) for c in valid], dtype=np.int64)
    return InvariantField(n=n, max_order=max_order, values=values, cells=valid,
                          centers=centers, counts=counts)


def group_strings(group, max_order):
    """Index strings of orders 3..max_order drawn only from ``group``.

    Ordered by order, then lexicographically.
    """
    out = []
    for r in range(3, max_order + 1):
        out.extend(itertools.combinations_with_replacement(group, r))
    return out


def build_multiplets(field, grouping):
    """Attach multiplets for ``grouping``.

    Each multiplet collects every invariant whose index string lies inside
    its group; it must have more than twice the group's dimension entries.
    """
    if grouping.n != field.n:
        raise ValueError(f"grouping covers {grouping.n} channels, field has {field.n}")
    mults, labels = [], []
    for group in (grouping.group_a, grouping.group_b):
        strings = group_strings(group, field.max_order)
        if len(strings) <= 2 * len(group):
            raise TooFewInvariantsError(
                f"group {[i + 1 for i in group]} has {len(strings)} invariants up to order "
                f"{field.max_order}; need more than {2 * len(group)}")
        cols = []
        for s in strings:
            pos = {tuple(r): p for p, r in enumerate(canonical_indices(field.n, len(s)).tolist())}
            cols.append(field.values[len(s)][:, pos[s]])
        mults.append(np.stack(cols, axis=1))
        labels.append(tuple(index_label(s) for s in strings))
    return replace(field, grouping=grouping, multiplet_a=mults[0], multiplet_b=mults[1],
                   labels_a=labels[0], labels_b=labels[1])


def signed_permutations(n):
    """All ``2^n n!`` signed permutation matrices, identity first."""
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((1.0, -1.0), repeat=n):
            p = np.zeros((n, n))
            p[np.arange(n), perm] = signs
            yield p


def relabel(field, p):
    """Invariant values under the frame change ``M -> P M``."""
    values = {}
    for r, v in field.values.items():
        rows = [compress_symmetric(transform_tensor(p, expand_symmetric(x, field.n, r))) for x in v]
        values[r] = np.array(rows).reshape(v.shape)
    return replace(field, values=values, grouping=None, multiplet_a=None, multiplet_b=None,
                   labels_a=(), labels_b=())


def scalarity_residual(field_x, field_y, correspondence):
    """Best signed permutation relating two invariant fields and its error.

    ``correspondence`` is an ``(S, 2)`` array of (cell in x, cell in y)
    pairs, typically one per sample.  Pairs touching a cell absent from
    either field are ignored.  The relative error of an invariant is its
    absolute discrepancy divided by its RMS over the x cells; the reported
    value is the median over all pairs and invariants; ties between
    permutations are broken by the mean.

    Returns
    -------
    dict
        ``best_signed_permutation`` (array), ``median_relative_error`` and
        ``n_pairs``.
    """
    corr = np.asarray(correspondence, dtype=np.int64).reshape(-1, 2)
    rx, ry = field_x.row_of_cell(), field_y.row_of_cell()
    keep = [(rx[a], ry[b]) for a, b in corr.tolist() if a in rx and b in ry]
    if not keep:
        raise EmptyCorrespondenceError("no sample falls in valid cells of both fields")
    pairs = np.array(keep)
    ix, iy = pairs[:, 0], pairs[:, 1]
    x_all = np.hstack([field_x.values[r] for r in sorted(field_x.values)])
    scale = np.sqrt(np.mean(x_all ** 2, axis=0))
    scale[scale == 0] = 1.0
    best = None
    for p in signed_permutations(field_x.n):
        y_all = np.hstack([relabel(field_y, p).values[r] for r in sorted(field_y.values)])
        err = np.abs(x_all[ix] - y_all[iy]) / scale
        # about half the invariants are even in any one index, so a single
        # reflection can tie on the median; the mean breaks such ties
        key = (float(np.median(err)), float(np.mean(err)))
        if best is None or key < best[1]:
            best = (p, key)
    return {"best_signed_permutation": best[0], "median_relative_error": best[1][0],
            "n_pairs": len(pairs)}


def write_multiplets_csv(field, path):
    """``cell_id, x1.., IA_1.., IB_1..`` one row per valid cell."""
    if field.multiplet_a is None:
        raise ValueError("multiplets not built")
    head = ["cell_id"] + [f"x{i + 1}" for i in range(field.n)]
    head += [f"IA_{i + 1}" for i in range(field.multiplet_a.shape[1])]
    head += [f"IB_{i + 1}" for i in range(field.multiplet_b.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for i, c in enumerate(field.cells):
            row = [int(c)] + [repr(float(v)) for v in field.centers[i]]
            row += [repr(float(v)) for v in field.multiplet_a[i]]
            row += [repr(float(v)) for v in field.multiplet_b[i]]
            w.writerow(row)
