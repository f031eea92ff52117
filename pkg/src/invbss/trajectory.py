"""Time series ingestion, velocity estimation and state-space neighborhoods.

All statistics downstream are local: they are averages over the samples
whose positions fall in one neighborhood ("cell") of state space.  This
module owns the sampled trajectory, its central-difference velocity and
the partition of positions into cells.
"""
import csv
import itertools
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    AllCellsDroppedError,
    NonFiniteError,
    NonUniformSamplingError,
    SeriesFormatError,
    SeriesTooShortError,
)

MAGIC = b"IBSS"
SERIES_VERSION = 1
_HEADER = struct.Struct("<4sHHQd")
JITTER_TOL = 1e-6


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled ``N``-channel trajectory.

    ``samples`` has shape ``(length, N)``.
    """

    dt: float
    samples: np.ndarray
    channel_names: Optional[tuple] = None
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2:
            raise ValueError("samples must be a 2-D array (length, N)")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if samples.shape[1] < 2:
            raise ValueError("need at least 2 channels")
        if samples.shape[0] < 3:
            raise SeriesTooShortError(f"need at least 3 samples, got {samples.shape[0]}")
        bad = ~np.isfinite(samples).all(axis=1)
        if bad.any():
            raise NonFiniteError(int(np.argmax(bad)) + 1)
        object.__setattr__(self, "samples", _frozen(samples))
        if self.channel_names is not None:
            names = tuple(str(c) for c in self.channel_names)
            if len(names) != samples.shape[1]:
                raise ValueError("channel_names length does not match N")
            object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self))


@dataclass(frozen=True)
class VelocitySeries:
    """Positions and central-difference velocities at interior samples.

    ``index[i]`` is the sample number in the originating :class:`TimeSeries`.
    """

    positions: np.ndarray
    velocities: np.ndarray
    dt: float
    index: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "velocities", _frozen(self.velocities))
        object.__setattr__(self, "index", _frozen(self.index, dtype=np.int64))
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have equal shapes")
        if not np.isfinite(self.velocities).all():
            raise ValueError("velocities must be finite")

    def __len__(self):
        return self.positions.shape[0]

    @property
    def n_channels(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class Cell:
    center: np.ndarray
    members: np.ndarray
    centroid: np.ndarray


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Partition (grid) or cover (knn) of the visited state space.

    ``sample_cell[i]`` is the cell owning velocity sample ``i`` (``-1`` when
    its grid box was dropped); in knn mode it is the cell with the nearest
    center.  ``adjacency`` holds sorted pairs ``(a, b)`` with ``a < b``.
    """

    cells: tuple
    adjacency: tuple
    min_count: int
    mode: str
    disjoint: bool
    sample_cell: np.ndarray
    grid_shape: Optional[tuple] = None
    grid_keys: Optional[tuple] = None
    bounds: Optional[np.ndarray] = None
    n_dropped: int = 0

    def __len__(self):
        return len(self.cells)

    def neighbors(self):
        """Adjacency as a list of neighbor lists."""
        out = [[] for _ in self.cells]
        for a, b in self.adjacency:
            out[a].append(b)
            out[b].append(a)
        return out

    @property
    def centroids(self):
        return np.array([c.centroid for c in self.cells])

    @property
    def counts(self):
        return np.array([len(c.members) for c in self.cells])


def default_min_count(n_channels):
    """Members needed to estimate moments of order up to 5 in ``n_channels`` dims."""
    n = n_channels
    return max(50, 10 * sum(n ** r for r in range(1, 6)))


# ---------------------------------------------------------------- file io


def load_series(path, format=None):
    """Read a :class:`TimeSeries` from CSV or the ``IBSS`` binary format.

    ``format`` is ``"csv"`` or ``"binary"``; when omitted it is inferred
    from the file extension (``.csv`` means CSV, anything else binary).
    """
    path = str(path)
    if format is None:
        format = "csv" if path.lower().endswith(".csv") else "binary"
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {format!r}")


def save_series(ts, path, format=None):
    path = str(path)
    if format is None:
        format = "csv" if path.lower().endswith(".csv") else "binary"
    if format == "csv":
        _save_csv(ts, path)
    elif format == "binary":
        _save_binary(ts, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def _save_csv(ts, path):
    names = ts.channel_names or tuple(f"x{k + 1}" for k in range(ts.n_channels))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        # dt in a comment keeps the round trip bit-exact
        fh.write(f"# dt={ts.dt!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("t",) + tuple(names))
        for t, row in zip(ts.times, ts.samples):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _load_csv(path):
    dt_decl = None
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        s = ln.strip()
        if s.startswith("#"):
            for part in s[1:].replace(",", " ").split():
                if part.startswith("dt="):
                    dt_decl = float(part[3:])
            continue
        if s:
            body.append(ln)
    if not body:
        raise SeriesFormatError("empty file")
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    if len(header) < 3 or header[0] != "t":
        raise SeriesFormatError("header must be 't,x1,...,xN'", row=0)
    width = len(header)
    for rownum, row in enumerate(reader, start=1):
        if len(row) != width:
            raise SeriesFormatError(f"expected {width} fields, got {len(row)}", row=rownum)
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise SeriesFormatError(f"unparseable value ({exc})", row=rownum) from None
        if not all(math.isfinite(v) for v in vals):
            raise NonFiniteError(rownum)
        rows.append(vals)
    if len(rows) < 3:
        raise SeriesTooShortError(f"need at least 3 rows, got {len(rows)}")
    data = np.array(rows)
    t = data[:, 0]
    steps = np.diff(t)
    dt = dt_decl if dt_decl is not None else float(np.mean(steps))
    if dt <= 0:
        raise NonUniformSamplingError("time column is not increasing", row=1)
    jitter = np.abs(steps - dt) / dt
    if jitter.max() > JITTER_TOL:
        bad = int(np.argmax(jitter > JITTER_TOL)) + 2
        raise NonUniformSamplingError(f"non-uniform time spacing (relative jitter {jitter.max():.3g})", row=bad)
    return TimeSeries(dt=dt, samples=data[:, 1:], channel_names=tuple(header[1:]), t0=float(t[0]))


def _save_binary(ts, path):
    samples = np.ascontiguousarray(ts.samples, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, SERIES_VERSION, ts.n_channels, len(ts), float(ts.dt)))
        fh.write(samples.tobytes())


def _load_binary(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise SeriesFormatError("truncated header")
    magic, version, n, length, dt = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SeriesFormatError("bad magic bytes")
    if version != SERIES_VERSION:
        raise SeriesFormatError(f"unsupported version {version}")
    expected = _HEADER.size + 8 * n * length
    if len(data) != expected:
        raise SeriesFormatError(f"expected {expected} bytes, found {len(data)}")
    samples = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(length, n)
    bad = ~np.isfinite(samples).all(axis=1)
    if bad.any():
        raise NonFiniteError(int(np.argmax(bad)) + 1)
    return TimeSeries(dt=dt, samples=samples.copy())


# ---------------------------------------------------------------- velocity


def estimate_velocity(ts, scheme="central"):
    """Second-order central differences at interior samples.

    Endpoints are dropped so every estimate has the same error order.
    """
    if scheme != "central":
        raise ValueError(f"unknown velocity scheme {scheme!r}")
    x = ts.samples
    if len(x) < 3:
        raise SeriesTooShortError("velocity estimation needs at least 3 samples")
    v = (x[2:] - x[:-2]) / (2.0 * ts.dt)
    return VelocitySeries(positions=x[1:-1], velocities=v, dt=ts.dt,
                          index=np.arange(1, len(x) - 1))


# ---------------------------------------------------------------- cells


def build_neighborhoods(vs, strategy="grid", cells_per_axis=8, k=None,
                        min_count=None, n_centers=None):
    """Group velocity samples into local neighborhoods of state space.

    Parameters
    ----------
    vs : VelocitySeries
    strategy : {"grid", "knn"}
        ``grid`` tiles the bounding box of positions with
        ``cells_per_axis**N`` axis-aligned boxes; boxes with fewer than
        ``min_count`` members are dropped.  ``knn`` centers overlapping
        cells on a farthest-point subsample of positions, each holding the
        ``k`` nearest samples.
    min_count : int, optional
        Defaults to :func:`default_min_count`.

    Returns
    -------
    NeighborhoodIndex
    """
    if len(vs) == 0:
        raise AllCellsDroppedError("no samples")
    n = vs.n_channels
    if min_count is None:
        min_count = default_min_count(n)
    if min_count < 1:
        raise ValueError("min_count must be positive")
    if strategy == "grid":
        if cells_per_axis < 1:
            raise ValueError("cells_per_axis must be positive")
        return _grid_cells(vs.positions, int(cells_per_axis), int(min_count))
    if strategy == "knn":
        if k is None:
            k = min_count
        if k < 1:
            raise ValueError("k must be positive")
        return _knn_cells(vs.positions, int(k), int(min_count), n_centers)
    raise ValueError(f"unknown strategy {strategy!r}")


def _grid_cells(pos, g, min_count):
    n = pos.shape[1]
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    ij = np.floor((pos - lo) / safe * g).astype(np.int64)
    ij = np.clip(ij, 0, g - 1)
    ij[:, width <= 0] = 0
    flat = np.ravel_multi_index(ij.T, (g,) * n)
    order = np.argsort(flat, kind="stable")
    keys, starts, counts = np.unique(flat[order], return_index=True, return_counts=True)
    cells, grid_keys = [], []
    sample_cell = np.full(len(pos), -1, dtype=np.int64)
    dropped = 0
    for key, st, ct in zip(keys, starts, counts):
        if ct < min_count:
            dropped += 1
            continue
        members = np.sort(order[st:st + ct])
        multi = np.array(np.unravel_index(key, (g,) * n))
        center = lo + (multi + 0.5) * np.where(width > 0, width / g, 0.0)
        sample_cell[members] = len(cells)
        cells.append(Cell(center=_frozen(center), members=_frozen(members, np.int64),
                          centroid=_frozen(pos[members].mean(axis=0))))
        grid_keys.append(tuple(int(v) for v in multi))
    if not cells:
        raise AllCellsDroppedError(f"every cell has fewer than {min_count} members")
    lookup = {key: i for i, key in enumerate(grid_keys)}
    adjacency = []
    for i, key in enumerate(grid_keys):
        for axis in range(n):
            nb = list(key)
            nb[axis] += 1
            j = lookup.get(tuple(nb))
            if j is not None:
                adjacency.append((min(i, j), max(i, j)))
    sample_cell.setflags(write=False)
    return NeighborhoodIndex(cells=tuple(cells), adjacency=tuple(sorted(adjacency)),
                             min_count=min_count, mode="grid", disjoint=True,
                             sample_cell=sample_cell, grid_shape=(g,) * n,
                             grid_keys=tuple(grid_keys),
                             bounds=_frozen(np.stack([lo, hi])), n_dropped=dropped)


def _farthest_points(pos, m):
    m = min(m, len(pos))
    chosen = [0]
    d = np.sum((pos - pos[0]) ** 2, axis=1)
    for _ in range(1, m):
        i = int(np.argmax(d))
        if d[i] == 0:
            break
        chosen.append(i)
        d = np.minimum(d, np.sum((pos - pos[i]) ** 2, axis=1))
    return np.array(chosen)


def _knn_cells(pos, k, min_count, n_centers):
    if k < min_count or len(pos) < min_count:
        raise AllCellsDroppedError(f"k={k} with {len(pos)} samples cannot reach min_count={min_count}")
    k = min(k, len(pos))
    if n_centers is None:
        n_centers = max(1, int(math.ceil(2 * len(pos) / k)))
    centers_idx = _farthest_points(pos, n_centers)
    tree = cKDTree(pos)
    _, members = tree.query(pos[centers_idx], k=k)
    members = np.atleast_2d(members)
    cells = []
    for ci, mem in zip(centers_idx, members):
        mem = np.sort(mem)
        cells.append(Cell(center=_frozen(pos[ci]), members=_frozen(mem, np.int64),
                          centroid=_frozen(pos[mem].mean(axis=0))))
    centers = pos[centers_idx]
    adjacency = set()
    if len(cells) > 1:
        m = min(2 * pos.shape[1], len(cells) - 1)
        ctree = cKDTree(centers)
        _, nn = ctree.query(centers, k=m + 1)
        near = [set(row[1:].tolist()) for row in np.atleast_2d(nn)]
        for a, b in itertools.combinations(range(len(cells)), 2):
            if b in near[a] and a in near[b]:
                adjacency.add((a, b))
    _, owner = cKDTree(centers).query(pos, k=1)
    owner = np.asarray(owner, dtype=np.int64)
    owner.setflags(write=False)
    return NeighborhoodIndex(cells=tuple(cells), adjacency=tuple(sorted(adjacency)),
                             min_count=min_count, mode="knn", disjoint=False,
                             sample_cell=owner,
                             bounds=_frozen(np.stack([pos.min(0), pos.max(0)])))
