"""Dimension tests and charts for multiplet point clouds.

A separable system forces each multiplet cloud onto a manifold of its
group's dimension.  :func:`estimate_dimension` checks this by local PCA;
:func:`fit_chart` gives the manifold coordinates; :func:`evaluate_sigma`
carries those coordinates back to every sample of the trajectory.
"""
import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator, RBFInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial import cKDTree

from .atlas import fit_atlas
from .errors import DegenerateCloudError, DisconnectedGraphError, InsufficientSamplesError


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.isfinite(p).all():
            raise ValueError("cloud points must be finite")
        object.__setattr__(self, "points", p)
        w = np.ones(len(p)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (len(p),):
            raise ValueError("one weight per point required")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


def standardize_cloud(cloud):
    """Shift each coordinate to zero mean and unit weighted spread."""
    p, w = cloud.points, cloud.weights
    mu = np.average(p, axis=0, weights=w)
    sd = np.sqrt(np.average((p - mu) ** 2, axis=0, weights=w))
    sd[sd == 0] = 1.0
    return PointCloud((p - mu) / sd, w)


@dataclass(frozen=True)
class ManifoldTest:
    target_dim: int
    residual_fraction: float
    passes: bool
    threshold: float
    k: int
    n_skipped: int = 0

    def to_dict(self):
        return {"target_dim": self.target_dim, "residual_fraction": self.residual_fraction,
                "passes": self.passes, "threshold": self.threshold, "k": self.k,
                "n_skipped": self.n_skipped}


def local_residuals(points, k, target_dim):
    """Per-point fraction of local variance beyond ``target_dim`` principal directions.

    NaN where the neighborhood has zero variance.
    """
    tree = cKDTree(points)
    _, nn = tree.query(points, k=k)
    out = np.empty(len(points))
    for i, row in enumerate(nn):
        q = points[row] - points[row].mean(axis=0)
        ev = np.linalg.svd(q, compute_uv=False) ** 2
        total = ev.sum()
        out[i] = ev[target_dim:].sum() / total if total > 0 else np.nan
    return out


def estimate_dimension(cloud, k=12, target_dim=1, threshold=0.10):
    """Weighted mean local-PCA residual fraction at ``target_dim``.

    Raises
    ------
    DegenerateCloudError
        More than half of the neighborhoods have zero variance.
    InsufficientSamplesError
        The cloud has no more than ``k`` points.
    """
    if k < 2 * target_dim + 2:
        raise ValueError(f"k must be at least {2 * target_dim + 2}, got {k}")
    if len(cloud) <= k:
        raise InsufficientSamplesError(f"cloud of {len(cloud)} points is too small for k={k}")
    r = local_residuals(cloud.points, k, target_dim)
    bad = np.isnan(r)
    if bad.sum() > 0.5 * len(r):
        raise DegenerateCloudError(f"{int(bad.sum())} of {len(r)} neighborhoods have zero variance")
    frac = float(np.average(r[~bad], weights=cloud.weights[~bad]))
    return ManifoldTest(target_dim=target_dim, residual_fraction=frac,
                        passes=bool(frac <= threshold), threshold=threshold, k=k,
                        n_skipped=int(bad.sum()))


@dataclass(frozen=True)
class Chart:
    """Coordinates on a multiplet cloud.

    ``coords[i]`` is the coordinate of cloud point ``i``.  Calling the chart
    on new multiplet values returns the coordinate of the nearest cloud
    point.
    """

    dim: int
    points: np.ndarray
    coords: np.ndarray
    closed_loop: bool = False
    injective: bool = True
    component_fraction: float = 1.0
    path: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __call__(self, values):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        _, nn = cKDTree(self.points).query(values, k=1)
        return self.coords[np.asarray(nn).reshape(-1)]


def knn_graph(points, k):
    """Symmetric kNN graph with Euclidean edge weights (sparse CSR)."""
    n = len(points)
    k = min(k, n - 1)
    dist, nn = cKDTree(points).query(points, k=k + 1)
    rows = np.repeat(np.arange(n), k)
    cols = nn[:, 1:].reshape(-1)
    w = dist[:, 1:].reshape(-1)
    g = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    return g.maximum(g.T)


def _project_on_polyline(points, vertices):
    """Arclength of each point's nearest position on the polyline ``vertices``."""
    seg = np.diff(vertices, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    start = np.concatenate([[0.0], np.cumsum(seglen)])
    best_d = np.full(len(points), np.inf)
    best_s = np.zeros(len(points))
    for j in range(len(seg)):
        if seglen[j] == 0:
            continue
        rel = points - vertices[j]
        u = np.clip(rel @ seg[j] / seglen[j] ** 2, 0.0, 1.0)
        d = np.linalg.norm(rel - u[:, None] * seg[j], axis=1)
        better = d < best_d
        best_d[better] = d[better]
        best_s[better] = start[j] + u[better] * seglen[j]
    return best_s, best_d


def _smooth_path(vertices, half_width):
    if half_width <= 0 or len(vertices) < 3:
        return vertices
    out = vertices.copy()
    n = len(vertices)
    for i in range(1, n - 1):
        h = min(half_width, i, n - 1 - i)
        out[i] = vertices[i - h:i + h + 1].mean(axis=0)
    return out


def fit_chart(cloud, dim=1, k=6, smooth=1, min_component=0.8, n_patches=None, seed=0):
    """Coordinates on a cloud assumed to be a ``dim``-dimensional manifold.

    ``dim == 1`` uses the longest geodesic of a symmetric kNN graph (``k``
    is raised step by step, up to ``3 k``, until the largest component
    is big enough).  Cloud points are projected onto that path (after a moving-average smoothing
    of its vertices) and their arclength, scaled to [0, 1], is the
    coordinate.  ``dim > 1`` stitches local principal planes into one
    chart (see :mod:`invbss.atlas`).

    Raises
    ------
    DisconnectedGraphError
        The largest connected component holds less than ``min_component``
        of the points.
    """
    pts = cloud.points
    n = len(pts)
    if n < max(dim + 2, 3):
        raise InsufficientSamplesError(f"cloud of {n} points is too small to chart")
    if dim == 1:
        return _fit_curve(pts, k, smooth, min_component)
    if n_patches is None:
        n_patches = max(2, n // 15)
    atlas = fit_atlas(pts, dim, n_patches=n_patches, overlap=3.0, seed=seed)
    coords = atlas(pts)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    coords = (coords - lo) / span
    return Chart(dim=dim, points=pts, coords=coords,
                 info={"residual_fraction": atlas.residual_fraction, "patches": len(atlas.centers)})


def _fit_curve(pts, k, smooth, min_component):
    n = len(pts)
    # widen the neighborhood until one component dominates
    for k_used in range(k, max(k, min(n - 1, 3 * k)) + 1):
        g = knn_graph(pts, k_used)
        n_comp, labels = connected_components(g, directed=False)
        sizes = np.bincount(labels)
        main = int(np.argmax(sizes))
        frac = sizes[main] / n
        if frac >= min_component:
            break
    if frac < min_component:
        raise DisconnectedGraphError(
            f"largest kNN component holds {frac:.0%} of {n} points ({n_comp} components)")
    nodes = np.flatnonzero(labels == main)
    sub = g[nodes][:, nodes]
    dist, pred = shortest_path(sub, directed=False, return_predecessors=True)
    a, b = np.unravel_index(np.argmax(dist), dist.shape)
    # deterministic orientation: start from the lower node number
    if a > b:
        a, b = b, a
    path = [b]
    while path[-1] != a:
        path.append(pred[a, path[-1]])
    path = np.array(path[::-1])
    length = dist[a, b]
    mid = path[np.argmin(np.abs(dist[a, path] - 0.5 * length))]
    # on a loop every node sees the cut point at about the full path length
    closed = bool(np.max(dist[mid]) > 0.75 * length) if length > 0 else False
    verts = _smooth_path(pts[nodes[path]], smooth)
    s, offpath = _project_on_polyline(pts, verts)
    total = s.max() - s.min()
    coords = (s - s.min()) / total if total > 0 else np.zeros(n)
    # injectivity: points sharing a coordinate must be close to each other
    noise = max(float(np.median(offpath)), 1e-12)
    order = np.argsort(coords)
    gaps = np.linalg.norm(np.diff(pts[order], axis=0), axis=1)
    near_same = np.diff(coords[order]) < 0.5 / n
    injective = bool(not np.any(gaps[near_same] > 20 * noise))
    return Chart(dim=1, points=pts, coords=coords.reshape(n, 1), closed_loop=closed,
                 injective=injective, component_fraction=float(frac), path=nodes[path],
                 info={"path_length": float(length), "median_offpath": noise,
                       "n_components": int(n_comp), "k": int(k_used)})


@dataclass(frozen=True)
class SourceMap:
    """Recovered source coordinates at every velocity sample.

    Rows follow the VelocitySeries; ``defined`` is False (and the values
    NaN) where the sample's cell was dropped or excluded.
    """

    sigma_a: np.ndarray
    sigma_b: np.ndarray
    defined: np.ndarray
    index: np.ndarray
    dt: float
    grouping: object = None
    mode: str = "smooth"

    @property
    def coverage(self):
        return float(np.mean(self.defined))

    def swapped(self):
        g = self.grouping.swapped() if self.grouping is not None else None
        return SourceMap(self.sigma_b, self.sigma_a, self.defined, self.index, self.dt, g, self.mode)


def evaluate_sigma(charts, inv, idx, vs, mode="smooth", smoothing=1.0, fill_dropped=True):
    """Per-sample source coordinates from two charts.

    Each valid cell gets ``chart(multiplet)``.  With ``mode="nearest"``
    every sample inherits its cell's value.  With ``mode="interpolate"``
    cell values are placed at cell centroids and interpolated linearly
    to each sample position (nearest centroid outside their hull), which
    yields a continuous coordinate whose time derivative is meaningful.
    ``mode="smooth"`` (the default) replaces the linear interpolant by a
    thin-plate smoothing spline over the centroids (see
    :func:`smooth_field`), which also damps cell-to-cell estimation noise.
    Samples of cells excluded for a singular or degenerate frame stay
    undefined.  Samples of grid boxes dropped for having too few members
    are undefined in ``"nearest"`` mode; the field modes extend to them
    unless ``fill_dropped`` is False, so that the defined set is not
    carved out of the corners of state space.
    """
    chart_a, chart_b = charts
    if inv.multiplet_a is None:
        raise ValueError("multiplets not built")
    cell_a = chart_a(inv.multiplet_a)
    cell_b = chart_b(inv.multiplet_b)
    rows = inv.row_of_cell()
    owner = idx.sample_cell
    defined = np.array([c in rows for c in owner.tolist()])
    if fill_dropped and mode != "nearest":
        # samples of boxes too sparse to keep still lie inside the charted region
        defined |= owner < 0
    t = len(owner)
    da, db = cell_a.shape[1], cell_b.shape[1]
    if mode == "nearest":
        row = np.array([rows.get(c, 0) for c in owner.tolist()])
        sa, sb = cell_a[row], cell_b[row]
    elif mode == "smooth":
        cents = np.array([idx.cells[c].centroid for c in inv.cells])
        vals = np.hstack([cell_a, cell_b])
        out = smooth_field(cents, vals, vs.positions, smoothing)
        sa, sb = out[:, :da], out[:, da:]
    elif mode == "interpolate":
        cents = np.array([idx.cells[c].centroid for c in inv.cells])
        vals = np.hstack([cell_a, cell_b])
        if len(cents) > vs.n_channels + 1:
            try:
                lin = LinearNDInterpolator(cents, vals)
                out = lin(vs.positions)
            except Exception:  # coplanar centroids: no triangulation
                out = np.full((t, da + db), np.nan)
        else:
            out = np.full((t, da + db), np.nan)
        miss = np.isnan(out).any(axis=1)
        if miss.any():
            out[miss] = NearestNDInterpolator(cents, vals)(vs.positions[miss])
        sa, sb = out[:, :da], out[:, da:]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    sa = np.where(defined[:, None], sa, np.nan)
    sb = np.where(defined[:, None], sb, np.nan)
    return SourceMap(sigma_a=sa, sigma_b=sb, defined=defined, index=vs.index, dt=vs.dt,
                     grouping=inv.grouping, mode=mode)


def smooth_field(centers, values, points, smoothing=1.0, chunk=20000):
    """Thin-plate smoothing spline through ``values`` at ``centers``, evaluated at ``points``.

    Coordinates are scaled per axis by the spread of ``centers`` so that
    ``smoothing`` does not depend on the units of the trajectory.
    """
    centers = np.asarray(centers, dtype=float)
    scale = centers.std(axis=0)
    scale[scale == 0] = 1.0
    n = centers.shape[1]
    if len(centers) <= n + 1:
        return NearestNDInterpolator(centers, values)(points)
    rbf = RBFInterpolator(centers / scale, values, smoothing=smoothing,
                          kernel="thin_plate_spline", degree=1)
    out = np.empty((len(points), values.shape[1]))
    for i in range(0, len(points), chunk):
        out[i:i + chunk] = rbf(points[i:i + chunk] / scale)
    return out


def write_source_map_csv(sm, path, t0=0.0):
    """``t, sigma_A.., sigma_B..`` per sample; undefined values are empty fields."""
    da, db = sm.sigma_a.shape[1], sm.sigma_b.shape[1]
    head = ["t"] + (["sigma_A"] if da == 1 else [f"sigma_A{i + 1}" for i in range(da)])
    head += ["sigma_B"] if db == 1 else [f"sigma_B{i + 1}" for i in range(db)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for i in range(len(sm.index)):
            vals = np.concatenate([sm.sigma_a[i], sm.sigma_b[i]])
            w.writerow([repr(float(t0 + sm.index[i] * sm.dt))]
                       + ["" if np.isnan(v) else repr(float(v)) for v in vals])


def write_chart_csv(chart, path):
    """``point, coordinate(s), cloud coordinates`` for every cloud point."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point"] + [f"sigma{i + 1}" for i in range(chart.dim)]
                   + [f"m{i + 1}" for i in range(chart.points.shape[1])])
        for i in range(len(chart.points)):
            w.writerow([i] + [repr(float(v)) for v in chart.coords[i]]
                       + [repr(float(v)) for v in chart.points[i]])
