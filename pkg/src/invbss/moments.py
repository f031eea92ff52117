"""Local central moments of velocity, orders 2 through 5.

Within a cell the correlation ``C_{kl...}`` is the average over member
samples of ``prod (v_k - vbar_k)``.  Tensors are fully symmetric, so only
non-decreasing index tuples are stored; :meth:`MomentTensors.tensor`
expands them to dense arrays on request.
"""
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import container
from .errors import InsufficientSamplesError, MissingOrderError, QuadratureError

MAX_ORDER = 5


@lru_cache(maxsize=None)
def canonical_indices(n, order):
    """Non-decreasing index tuples of length ``order`` over ``range(n)``.

    Ordered lexicographically; returned as an ``(K, order)`` int array.
    """
    combos = list(itertools.combinations_with_replacement(range(n), order))
    out = np.array(combos, dtype=np.int64).reshape(len(combos), order)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _canonical_position(n, order):
    return {tuple(int(i) for i in row): p for p, row in enumerate(canonical_indices(n, order))}


@lru_cache(maxsize=None)
def _dense_lookup(n, order):
    """For every dense multi-index, the row of its canonical representative."""
    pos = _canonical_position(n, order)
    grid = np.indices((n,) * order).reshape(order, -1).T
    lookup = np.array([pos[tuple(sorted(row))] for row in grid.tolist()], dtype=np.int64)
    lookup.setflags(write=False)
    return lookup


@lru_cache(maxsize=None)
def _parents(n, order):
    """Row of each order-``r`` tuple's prefix among order ``r-1`` tuples, and its last index."""
    pos = _canonical_position(n, order - 1)
    idx = canonical_indices(n, order)
    parent = np.array([pos[tuple(int(i) for i in row[:-1])] for row in idx], dtype=np.int64)
    return parent, idx[:, -1].copy()


def expand_symmetric(values, n, order):
    """Dense ``n**order`` tensor from canonical values."""
    values = np.asarray(values)
    return values[_dense_lookup(n, order)].reshape((n,) * order)


def compress_symmetric(tensor):
    """Canonical values of a symmetric dense tensor (no symmetry check)."""
    tensor = np.asarray(tensor)
    order = tensor.ndim
    n = tensor.shape[0]
    idx = canonical_indices(n, order)
    return tensor[tuple(idx.T)] if order else tensor.reshape(1)


@dataclass(frozen=True)
class MomentTensors:
    """Central velocity moments of one cell.

    ``values[r]`` holds the canonical entries of the order-``r`` tensor.
    """

    mean_velocity: np.ndarray
    values: dict
    sample_count: int

    @property
    def n(self):
        return self.mean_velocity.shape[0]

    @property
    def max_order(self):
        return max(self.values)

    def tensor(self, order):
        if order not in self.values:
            raise MissingOrderError(f"order {order} not computed (max {self.max_order})")
        return expand_symmetric(self.values[order], self.n, order)

    def entry(self, *index):
        order = len(index)
        if order not in self.values:
            raise MissingOrderError(f"order {order} not computed")
        key = tuple(sorted(int(i) for i in index))
        return float(self.values[order][_canonical_position(self.n, order)[key]])

    @property
    def c2(self):
        return self.tensor(2)

    @property
    def c3(self):
        return self.tensor(3)

    @property
    def c4(self):
        return self.tensor(4)

    @property
    def c5(self):
        return self.tensor(5)


@dataclass(frozen=True)
class MomentField:
    cells: tuple
    max_order: int

    def __len__(self):
        return len(self.cells)

    def __getitem__(self, i):
        return self.cells[i]


def moments_of(velocities, max_order=MAX_ORDER):
    """Two-pass central moments of a set of velocity samples."""
    v = np.asarray(velocities, dtype=float)
    if v.ndim != 2:
        raise ValueError("velocities must be (count, N)")
    count, n = v.shape
    if count < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {count}")
    if not 2 <= max_order:
        raise ValueError("max_order must be >= 2")
    mean = v.mean(axis=0)
    z = v - mean
    values = {}
    prod = z
    values[1] = np.zeros(n)
    for order in range(2, max_order + 1):
        parent, last = _parents(n, order)
        prod = prod[:, parent] * z[:, last]
        values[order] = prod.mean(axis=0)
    del values[1]
    return MomentTensors(mean_velocity=mean, values=values, sample_count=count)


def local_moments(vs, idx, max_order=MAX_ORDER, workers=None):
    """Per-cell central moments up to ``max_order`` (between 2 and 5 by default use).

    Cells are processed independently; ``workers`` > 1 maps them over a
    thread pool.  Output order follows the cell order of ``idx``.
    """
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    vel = vs.velocities

    def one(cell):
        if len(cell.members) < 2:
            raise InsufficientSamplesError(f"cell has {len(cell.members)} members")
        return moments_of(vel[cell.members], max_order)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = tuple(pool.map(one, idx.cells))
    else:
        cells = tuple(one(c) for c in idx.cells)
    return MomentField(cells=cells, max_order=max_order)


# ------------------------------------------------------------ density oracle


@dataclass(frozen=True)
class EmpiricalDensity:
    """Weighted point masses in velocity space (the same at every position)."""

    velocities: np.ndarray
    weights: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Quadrature:
    """Tensor-product Gauss-Legendre rule over a velocity box.

    ``bounds`` is a sequence of ``(low, high)`` per axis.  The rule starts
    with ``nodes`` points per axis and doubles until successive results
    agree to ``tol``.
    """

    bounds: tuple
    nodes: int = 24
    tol: float = 1e-9
    max_refinements: int = 4


def _outer_power_average(d, w, order):
    """``sum_i w_i d_i (x) ... (x) d_i`` as a dense tensor."""
    m, n = d.shape
    acc = w[:, None] * np.ones((m, 1))
    for _ in range(order):
        acc = (acc[:, :, None] * d[:, None, :]).reshape(m, -1)
    return acc.sum(axis=0).reshape((n,) * order)


def _weighted_central(points, w, order):
    w = w / w.sum()
    mean = w @ points
    if order == 1:
        return np.zeros(points.shape[1])
    return _outer_power_average(points - mean, w, order)


def moments_from_density(density, point, order, quadrature=None):
    """Central velocity moment of ``density`` at ``point`` as a dense tensor.

    ``density`` is either an :class:`EmpiricalDensity` (a finite sum, exact)
    or a callable ``rho(x, v)`` taking a position of shape ``(N,)`` and
    velocities of shape ``(M, N)``, integrated with ``quadrature``.
    Intended as an independent check on :func:`local_moments`.
    """
    if isinstance(density, EmpiricalDensity):
        v = np.asarray(density.velocities, dtype=float)
        w = np.ones(len(v)) if density.weights is None else np.asarray(density.weights, dtype=float)
        return _weighted_central(v, w, order)
    if quadrature is None:
        raise ValueError("a Quadrature is required for callable densities")
    point = np.asarray(point, dtype=float)
    bounds = np.asarray(quadrature.bounds, dtype=float)
    n = bounds.shape[0]
    nodes = quadrature.nodes
    prev = None
    for _ in range(quadrature.max_refinements + 1):
        g, gw = np.polynomial.legendre.leggauss(nodes)
        axes = [0.5 * (hi - lo) * g + 0.5 * (hi + lo) for lo, hi in bounds]
        wax = [0.5 * (hi - lo) * gw for lo, hi in bounds]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        wgrid = np.ones(1)
        for wa in wax:
            wgrid = np.multiply.outer(wgrid, wa)
        wgrid = wgrid.reshape(-1)
        rho = np.asarray(density(point, grid), dtype=float)
        current = _weighted_central(grid, wgrid * rho, order)
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(current))))
            if np.max(np.abs(current - prev)) <= quadrature.tol * scale:
                return current
        prev = current
        nodes *= 2
    raise QuadratureError(f"no convergence after {quadrature.max_refinements} refinements")


# ------------------------------------------------------------ checkpointing


def save_moment_field(field, path):
    n = field.cells[0].n
    arrays = {
        "mean_velocity": np.array([c.mean_velocity for c in field.cells]),
        "sample_count": np.array([c.sample_count for c in field.cells], dtype=np.int64),
    }
    for order in range(2, field.max_order + 1):
        arrays[f"order{order}"] = np.array([c.values[order] for c in field.cells])
    container.save_sections(path, arrays, meta={"kind": "MomentField", "n": n,
                                                "max_order": field.max_order})


def load_moment_field(path):
    arrays, meta = container.load_sections(path)
    if not meta or meta.get("kind") != "MomentField":
        raise ValueError("file does not hold a MomentField")
    max_order = meta["max_order"]
    cells = []
    for i in range(len(arrays["sample_count"])):
        values = {o: arrays[f"order{o}"][i] for o in range(2, max_order + 1)}
        cells.append(MomentTensors(mean_velocity=arrays["mean_velocity"][i], values=values,
                                   sample_count=int(arrays["sample_count"][i])))
    return MomentField(cells=tuple(cells), max_order=max_order)
