"""Local principal planes stitched into one global chart.

Points are covered by overlapping patches (k-means centers with
nearest-neighbor membership).  Each patch gets its own ``d``-dimensional
principal plane.  Patch coordinates are then related by affine maps fitted
on shared members, composed along a maximum-overlap spanning tree rooted
at patch 0.  A point's global coordinate is a Gaussian-weighted blend over
its nearest patch centers, which makes the chart continuous.
"""
import heapq
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Atlas:
    """Fitted patches and the affine maps taking them to the root frame.

    ``maps[i]`` is ``(A, b)`` so that global = ``A @ local + b``.
    """

    dim: int
    centers: np.ndarray
    means: np.ndarray
    bases: np.ndarray
    maps: tuple
    scale: float
    blend: int
    residual_fraction: float
    residual_profile: np.ndarray
    overlap_discrepancy: float
    n_unreached: int

    def local(self, i, y):
        return (y - self.means[i]) @ self.bases[i].T

    def __call__(self, y):
        """Global coordinates of points ``y`` (in the space the atlas was fitted in)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        nb = min(self.blend, len(self.centers))
        dist, idx = cKDTree(self.centers).query(y, k=nb)
        dist = dist.reshape(len(y), nb)
        idx = idx.reshape(len(y), nb)
        # shift before exponentiating so far-away points keep finite weights
        logw = -0.5 * ((dist - dist[:, :1]) / self.scale) ** 2
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        out = np.zeros((len(y), self.dim))
        for k in range(nb):
            for c in np.unique(idx[:, k]):
                sel = idx[:, k] == c
                a, b = self.maps[c]
                out[sel] += w[sel, k:k + 1] * (self.local(c, y[sel]) @ a.T + b)
        return out


def fit_atlas(y, dim, n_patches, overlap=3.0, blend=4, bandwidth=1.0, seed=0,
              max_fit_points=20000):
    """Fit an :class:`Atlas` of ``dim``-dimensional patches to points ``y``.

    Parameters
    ----------
    y : ndarray, shape (T, m)
    n_patches : int
        Number of k-means centers.
    overlap : float
        Each patch holds ``overlap * T / n_patches`` nearest points.
    blend : int
        Patches blended per point when evaluating.
    bandwidth : float
        Gaussian blend width as a multiple of the median distance from a
        point to its nearest center.
    """
    y = np.asarray(y, dtype=float)
    t, m = y.shape
    n_patches = int(max(1, min(n_patches, t // max(dim + 2, 1))))
    rng = np.random.default_rng(seed)
    sub = y if t <= max_fit_points else y[np.sort(rng.choice(t, max_fit_points, replace=False))]
    if n_patches == 1:
        centers = y.mean(axis=0, keepdims=True)
    else:
        centers, _ = kmeans2(sub, n_patches, seed=seed, minit="++")
        # kmeans2 may leave duplicate or empty centers; keep distinct ones
        centers = np.unique(centers, axis=0)
    k = len(centers)
    n_local = int(min(t, max(dim + 2, round(overlap * t / k))))
    tree = cKDTree(y)
    means, bases, members = [], [], []
    resid_num = np.zeros(m)
    resid_den = 0.0
    for c in centers:
        _, mem = tree.query(c, k=n_local)
        mem = np.sort(np.atleast_1d(mem))
        p = y[mem]
        mu = p.mean(axis=0)
        _, sv, vt = np.linalg.svd(p - mu, full_matrices=False)
        var = np.zeros(m)
        var[: len(sv)] = sv ** 2
        resid_num += var
        resid_den += var.sum()
        means.append(mu)
        bases.append(_orient(vt[:dim]))
        members.append(mem)
    means = np.array(means)
    bases = np.array(bases)
    # fraction of local variance beyond the top j directions, j = 0..m
    tail = np.concatenate([[resid_num.sum()], resid_num.sum() - np.cumsum(resid_num)])
    profile = tail / resid_den if resid_den > 0 else np.zeros(m + 1)
    profile = np.clip(profile, 0.0, 1.0)

    shared = {}
    for i in range(k):
        for j in range(i + 1, k):
            o = np.intersect1d(members[i], members[j], assume_unique=True)
            if len(o) >= dim + 2:
                shared[(i, j)] = o
    adj = {i: [] for i in range(k)}
    for (i, j), o in shared.items():
        adj[i].append((len(o), j))
        adj[j].append((len(o), i))

    maps = [None] * k
    maps[0] = (np.eye(dim), np.zeros(dim))
    heap = [(-n, 0, j) for n, j in adj[0]]
    heapq.heapify(heap)
    disc = 0.0
    while heap:
        _, i, j = heapq.heappop(heap)
        if maps[j] is not None:
            continue
        o = shared[(min(i, j), max(i, j))]
        a_i, b_i = maps[i]
        target = (y[o] - means[i]) @ bases[i].T @ a_i.T + b_i
        zj = (y[o] - means[j]) @ bases[j].T
        design = np.hstack([zj, np.ones((len(o), 1))])
        sol, *_ = np.linalg.lstsq(design, target, rcond=None)
        maps[j] = (sol[:dim].T, sol[dim])
        disc = max(disc, float(np.max(np.abs(design @ sol - target))))
        for n2, nb in adj[j]:
            if maps[nb] is None:
                heapq.heappush(heap, (-n2, j, nb))
    unreached = [i for i in range(k) if maps[i] is None]
    if unreached:
        # isolated patches carry no information about the global frame; drop them
        keep = [i for i in range(k) if maps[i] is not None]
        centers, means, bases = centers[keep], means[keep], bases[keep]
        maps = [maps[i] for i in keep]
    dist, _ = cKDTree(centers).query(sub, k=1)
    scale = float(np.median(dist)) * bandwidth
    if scale <= 0:
        scale = 1.0
    return Atlas(dim=dim, centers=centers, means=means, bases=bases, maps=tuple(maps),
                 scale=scale, blend=blend, residual_fraction=float(profile[dim]),
                 residual_profile=profile, overlap_discrepancy=disc, n_unreached=len(unreached))


def _orient(basis):
    # sign convention: largest-magnitude entry of each row positive
    out = basis.copy()
    for r in range(len(out)):
        if out[r, np.argmax(np.abs(out[r]))] < 0:
            out[r] = -out[r]
    return out


def intrinsic_dimension(profile, threshold):
    """Smallest dimension whose residual fraction is within ``threshold``."""
    for d, r in enumerate(profile):
        if r <= threshold:
            return d
    return len(profile) - 1
