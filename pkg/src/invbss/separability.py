"""Separability verdicts: factorization, partition search and the linear case.

Independence is tested in phase space: a bounded library of polynomial
test functions is built over ``(sigma, dsigma/dt)`` of each group, and the
largest absolute cross-correlation between an A function and a B function
is the statistic.
"""
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import subspace_angles
from scipy.stats import rankdata

from .errors import BSSError, BudgetExceededError, InsufficientSamplesError, InsufficientVariationError
from .invariants import IndexGrouping, build_multiplets
from .manifold import (PointCloud, SourceMap, estimate_dimension, evaluate_sigma, fit_chart,
                       smooth_field)

CLIP = 3.0


@dataclass(frozen=True)
class FactorizationReport:
    statistic: float
    threshold: float
    factorizes: bool
    breakdown: tuple = ()
    skipped: tuple = ()
    n_samples: int = 0
    null: Optional[dict] = None

    def to_dict(self, top=10):
        ranked = sorted(self.breakdown, key=lambda e: -abs(e[1]))[:top]
        out = {"statistic": self.statistic, "threshold": self.threshold,
               "factorizes": self.factorizes, "n_samples": self.n_samples,
               "top_pairs": [{"pair": p, "correlation": c} for p, c in ranked],
               "skipped": list(self.skipped)}
        if self.null is not None:
            out["null"] = self.null
        return out


def time_derivative(x, dt):
    """Central differences along axis 0; NaN at the ends and next to gaps."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, np.nan)
    out[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    return out


def _monomials(z, names, max_degree):
    funcs, labels = [], []
    for deg in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(z.shape[1]), deg):
            funcs.append(np.prod(z[:, combo], axis=1))
            labels.append("*".join(names[c] for c in combo))
    return funcs, labels


def rank_scores(x):
    """Column-wise ranks mapped to a zero-mean, unit-variance uniform scale."""
    x = np.asarray(x, dtype=float)
    u = (rankdata(x, axis=0) - 0.5) / len(x)
    return (u - 0.5) * math.sqrt(12.0)


def function_library(sigma, dsigma, prefix, max_degree=3):
    """Bounded monomials in the components of ``(sigma, dsigma)``.

    Coordinates enter through their rank scores, so the library depends on
    sigma only up to strictly increasing reparameterization; velocities
    are standardized and clipped at ``CLIP`` standard deviations.
    Returns ``(values, labels)`` with ``values`` of shape ``(T, F)``.
    """
    d = sigma.shape[1]
    names = [f"{prefix}{i + 1}" for i in range(d)] + [f"d{prefix}{i + 1}" for i in range(d)]
    v = np.asarray(dsigma, dtype=float)
    sd = v.std(axis=0)
    sd[sd == 0] = 1.0
    zv = np.clip((v - v.mean(axis=0)) / sd, -CLIP, CLIP)
    z = np.hstack([rank_scores(sigma), zv])
    funcs, labels = _monomials(z, names, max_degree)
    return np.stack(funcs, axis=1), labels


def _cross_correlation(fa, fb):
    """Correlation matrix between columns of ``fa`` and ``fb``; NaN for constant columns."""
    a = fa - fa.mean(axis=0)
    b = fb - fb.mean(axis=0)
    sa = np.sqrt(np.mean(a * a, axis=0))
    sb = np.sqrt(np.mean(b * b, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a.T @ b) / len(a) / np.outer(sa, sb)
    c[sa == 0, :] = np.nan
    c[:, sb == 0] = np.nan
    return c


def factorization_test(sm, n_functions=None, threshold=0.05, max_degree=3,
                       null_shifts=0, seed=0, min_coverage=0.8):
    """Dependence between the A and B coordinates of a source map.

    Parameters
    ----------
    sm : SourceMap
    n_functions : int, optional
        Keep only the first ``n_functions`` library entries per group
        (ordered by degree).  Must be at least 4.
    threshold : float
        ``factorizes`` is ``statistic <= threshold``.
    null_shifts : int
        When positive, the statistic is recomputed with ``sigma_B``
        circularly shifted by that many random lags of at least 5% of the
        series; the threshold becomes ``max(threshold, 95th percentile)``.

    Returns
    -------
    FactorizationReport
    """
    if n_functions is not None and n_functions < 4:
        raise ValueError("n_functions must be at least 4")
    if sm.coverage < min_coverage:
        raise InsufficientSamplesError(f"sigma defined on {sm.coverage:.0%} of samples")
    da_dot = time_derivative(sm.sigma_a, sm.dt)
    db_dot = time_derivative(sm.sigma_b, sm.dt)
    ok = (np.isfinite(sm.sigma_a).all(1) & np.isfinite(sm.sigma_b).all(1)
          & np.isfinite(da_dot).all(1) & np.isfinite(db_dot).all(1))
    if ok.sum() < 10:
        raise InsufficientSamplesError("too few samples with defined velocity")
    fa, la = function_library(sm.sigma_a[ok], da_dot[ok], "a", max_degree)
    fb, lb = function_library(sm.sigma_b[ok], db_dot[ok], "b", max_degree)
    if n_functions is not None:
        fa, la = fa[:, :n_functions], la[:n_functions]
        fb, lb = fb[:, :n_functions], lb[:n_functions]
    c = _cross_correlation(fa, fb)
    skipped = tuple(sorted({la[i] for i in np.flatnonzero(np.isnan(c).all(1))}
                           | {lb[j] for j in np.flatnonzero(np.isnan(c).all(0))}))
    finite = np.isfinite(c)
    if not finite.any():
        raise InsufficientVariationError("every test function is constant")
    stat = float(np.max(np.abs(c[finite])))
    breakdown = tuple((f"{la[i]}|{lb[j]}", float(c[i, j]))
                      for i, j in zip(*np.nonzero(finite)))
    used = threshold
    null = None
    if null_shifts > 0:
        rng = np.random.default_rng(seed)
        t = len(fb)
        lo = max(1, t // 20)
        stats = []
        for lag in rng.integers(lo, t - lo, size=null_shifts):
            cn = _cross_correlation(fa, np.roll(fb, int(lag), axis=0))
            stats.append(float(np.nanmax(np.abs(cn))))
        q95 = float(np.quantile(stats, 0.95))
        used = max(threshold, q95)
        null = {"shifts": int(null_shifts), "median": float(np.median(stats)), "q95": q95}
    return FactorizationReport(statistic=stat, threshold=used, factorizes=bool(stat <= used),
                               breakdown=breakdown, skipped=skipped, n_samples=int(ok.sum()),
                               null=null)


# ---------------------------------------------------------------- partition search


@dataclass(frozen=True)
class Candidate:
    grouping: IndexGrouping
    test_a: Optional[object] = None
    test_b: Optional[object] = None
    factorization: Optional[FactorizationReport] = None
    note: str = ""

    @property
    def passes(self):
        return bool(self.test_a is not None and self.test_a.passes and self.test_b.passes
                    and self.factorization is not None and self.factorization.factorizes)

    def to_dict(self):
        out = {"grouping": self.grouping.to_dict(), "label": self.grouping.label(),
               "test_a": self.test_a.to_dict() if self.test_a else None,
               "test_b": self.test_b.to_dict() if self.test_b else None,
               "factorization": self.factorization.to_dict() if self.factorization else None,
               "passes": self.passes}
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class PartitionSearchResult:
    candidates: tuple
    verdict: str
    grouping: Optional[IndexGrouping] = None
    source_map: Optional[SourceMap] = field(default=None, repr=False)
    charts: Optional[tuple] = field(default=None, repr=False)
    truncated: bool = False
    sub_result: Optional["PartitionSearchResult"] = None

    def to_dict(self):
        win = next((c for c in self.candidates if c.passes), None)
        out = {"verdict": self.verdict,
               "grouping": self.grouping.to_dict() if self.grouping else None,
               "statistic": win.factorization.statistic if win else None,
               "threshold": win.factorization.threshold if win else None,
               "candidates": [c.to_dict() for c in self.candidates],
               "truncated": self.truncated}
        if self.sub_result is not None:
            out["sub_result"] = self.sub_result.to_dict()
        return out


def enumerate_groupings(n, max_exhaustive=8):
    """Bipartitions ordered by ascending ``d_A`` then lexicographic group A.

    A and B are interchangeable, so when ``d_A == d_B`` only groupings with
    index 0 in A are listed.
    """
    if n > max_exhaustive:
        raise BudgetExceededError(f"exhaustive search over {n} channels exceeds budget {max_exhaustive}")
    out = []
    for da in range(1, n // 2 + 1):
        for a in itertools.combinations(range(n), da):
            if 2 * da == n and 0 not in a:
                continue
            b = tuple(i for i in range(n) if i not in a)
            out.append(IndexGrouping(a, b))
    return out


@dataclass(frozen=True)
class SearchConfig:
    """Settings of the partition search.

    ``k`` is the neighbor count of the manifold test; ``None`` scales it
    with the cloud as ``max(12, ceil(k_fraction * n_points))`` so that a
    neighborhood spans a comparable stretch of the curve whatever the cell
    count.
    """

    k: Optional[int] = None
    k_fraction: float = 0.4
    manifold_threshold: float = 0.10
    factorization_threshold: float = 0.2
    null_shifts: int = 0
    chart_k: int = 6
    chart_smooth: int = 1
    sigma_mode: str = "smooth"
    sigma_smoothing: float = 1.0
    standardize: bool = False
    recurse: bool = False
    max_exhaustive: int = 8
    seed: int = 0


def _cloud(values, counts, standardize):
    from .manifold import standardize_cloud
    c = PointCloud(values, counts)
    return standardize_cloud(c) if standardize else c


def evaluate_grouping(inv_base, grouping, idx, vs, cfg):
    """Manifold tests, charts, source map and factorization for one grouping."""
    inv = build_multiplets(inv_base, grouping)
    cloud_a = _cloud(inv.multiplet_a, inv.counts, cfg.standardize)
    cloud_b = _cloud(inv.multiplet_b, inv.counts, cfg.standardize)
    k = cfg.k if cfg.k is not None else max(12, math.ceil(cfg.k_fraction * len(cloud_a.points)))
    test_a = estimate_dimension(cloud_a, k, grouping.d_a, cfg.manifold_threshold)
    test_b = estimate_dimension(cloud_b, k, grouping.d_b, cfg.manifold_threshold)
    if not (test_a.passes and test_b.passes):
        return Candidate(grouping, test_a, test_b), None, None
    charts = []
    try:
        for cloud, d in ((cloud_a, grouping.d_a), (cloud_b, grouping.d_b)):
            charts.append(fit_chart(cloud, d, k=cfg.chart_k, smooth=cfg.chart_smooth, seed=cfg.seed))
    except BSSError as exc:
        return Candidate(grouping, test_a, test_b, note=f"chart failed: {exc}"), None, None
    # charts were fitted on the (possibly standardized) clouds; evaluate on the same values
    inv_eval = inv
    if cfg.standardize:
        from dataclasses import replace
        inv_eval = replace(inv, multiplet_a=cloud_a.points, multiplet_b=cloud_b.points)
    sm = evaluate_sigma(tuple(charts), inv_eval, idx, vs, mode=cfg.sigma_mode,
                        smoothing=cfg.sigma_smoothing)
    fact = factorization_test(sm, threshold=cfg.factorization_threshold,
                              null_shifts=cfg.null_shifts, seed=cfg.seed)
    note = "closed loop" if any(getattr(c, "closed_loop", False) for c in charts) else ""
    return Candidate(grouping, test_a, test_b, fact, note), sm, tuple(charts)


def partition_search(inv_base, idx, vs, cfg=None):
    """Try every grouping in order; the first that passes everything wins."""
    cfg = cfg or SearchConfig()
    n = inv_base.n
    truncated = False
    try:
        groupings = enumerate_groupings(n, cfg.max_exhaustive)
    except BudgetExceededError:
        truncated = True
        groupings = [IndexGrouping((i,), tuple(j for j in range(n) if j != i)) for i in range(n)]
    candidates = []
    for g in groupings:
        cand, sm, charts = evaluate_grouping(inv_base, g, idx, vs, cfg)
        candidates.append(cand)
        if cand.passes:
            sub = None
            if cfg.recurse and g.d_a > 1:
                sub = _recurse(sm, cfg)
            return PartitionSearchResult(tuple(candidates), "separable", g, sm, charts,
                                         truncated, sub)
    return PartitionSearchResult(tuple(candidates), "inseparable", truncated=truncated)


def _recurse(sm, cfg):
    """Re-run the whole analysis on the multidimensional sigma_A trajectory."""
    from .pipeline import analyze_series
    from .trajectory import TimeSeries
    ok = sm.defined
    ts = TimeSeries(dt=sm.dt, samples=sm.sigma_a[ok])
    return analyze_series(ts, search=cfg).search


# ---------------------------------------------------------------- linear case


@dataclass(frozen=True)
class LinearityReport:
    direction_cov: dict
    mean_directions: dict
    u_vectors: Optional[np.ndarray]
    linear: bool
    hat_s_factorizes: Optional[bool]
    threshold: float
    n_cells: int
    n_skipped: int
    factorization: Optional[FactorizationReport] = None

    def to_dict(self):
        return {"linear": self.linear, "direction_cov": self.direction_cov,
                "threshold": self.threshold,
                "mean_directions": {k: np.asarray(v).tolist() for k, v in self.mean_directions.items()},
                "u_vectors": None if self.u_vectors is None else self.u_vectors.tolist(),
                "hat_s_factorizes": self.hat_s_factorizes, "n_cells": self.n_cells,
                "n_skipped": self.n_skipped,
                "factorization": self.factorization.to_dict() if self.factorization else None}


def _cell_gradients(values, positions, idx, owner_ok, min_members):
    """Least-squares gradient of ``values`` against position within each cell."""
    grads, weights, skipped = [], [], 0
    for cell in idx.cells:
        mem = cell.members[owner_ok[cell.members]]
        if len(mem) < min_members:
            skipped += 1
            continue
        x = positions[mem]
        design = np.hstack([x - x.mean(axis=0), np.ones((len(mem), 1))])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            skipped += 1
            continue
        sol, *_ = np.linalg.lstsq(design, values[mem], rcond=None)
        grads.append(sol[:-1].T)
        weights.append(len(mem))
    return grads, np.array(weights, dtype=float), skipped


def _direction_dispersion(grads, weights):
    """Mean gradient subspace and the weighted RMS sine of each cell's largest principal angle."""
    d = grads[0].shape[0]
    proj = np.zeros((grads[0].shape[1],) * 2)
    bases = []
    for g in grads:
        q, _ = np.linalg.qr(g.T)
        bases.append(q[:, :d])
    for q, w in zip(bases, weights):
        proj += w * (q @ q.T)
    proj /= weights.sum()
    ev, evec = np.linalg.eigh(proj)
    u = evec[:, ::-1][:, :d]
    sines = np.array([np.sin(np.max(subspace_angles(q, u))) for q in bases])
    return u, float(np.sqrt(np.average(sines ** 2, weights=weights)))


def linearity_test(sm, vs, idx, threshold=0.05, factorization_threshold=0.05, min_cells=10,
                   min_members=None, gradient_smoothing=30.0):
    """Check whether each group's coordinates are functions of a fixed linear projection.

    Per cell, gradients of sigma_A and sigma_B against position are fitted
    by least squares.  The coordinates are first averaged per cell and
    refitted with a thin-plate smoothing spline (``gradient_smoothing``),
    since chart noise otherwise dominates the local slopes.  Heavy
    smoothing drives any field towards an affine one, so the direction
    check alone loses power as ``gradient_smoothing`` grows; the ``hat_s``
    factorization is what rejects curved mixings then.

    A group is linear when its gradient subspaces are (nearly) the same in
    every cell; ``direction_cov`` is the weighted RMS sine of the principal
    angle between each cell's subspace and their mean.  When both groups
    are linear the mean subspaces give ``U`` and ``hat_s = U x`` is tested
    for factorization.

    Raises
    ------
    InsufficientVariationError
        A coordinate is constant.
    InsufficientSamplesError
        Fewer than ``min_cells`` cells give usable gradients.
    """
    n = vs.n_channels
    if min_members is None:
        min_members = 2 * (n + 1)
    ok = sm.defined
    for name, s in (("sigma_A", sm.sigma_a), ("sigma_B", sm.sigma_b)):
        v = s[ok]
        if len(v) == 0 or np.all(np.ptp(v, axis=0) == 0):
            raise InsufficientVariationError(f"{name} is constant")
    dispersion, directions, bases = {}, {}, []
    n_cells, n_skipped = 0, 0
    pos = vs.positions
    used = [c.members[ok[c.members]] for c in idx.cells]
    used = [m for m in used if len(m) >= min_members]
    if len(used) < min_cells:
        raise InsufficientSamplesError(f"only {len(used)} cells hold defined samples")
    centers = np.array([pos[m].mean(axis=0) for m in used])
    for name, s in (("A", sm.sigma_a), ("B", sm.sigma_b)):
        means = np.array([s[m].mean(axis=0) for m in used])
        fitted = np.full_like(s, np.nan)
        fitted[ok] = smooth_field(centers, means, pos[ok], gradient_smoothing)
        grads, weights, skipped = _cell_gradients(fitted, pos, idx, ok, min_members)
        # cells where the coordinate is flat carry no direction
        norms = np.array([np.linalg.norm(g) for g in grads])
        keep = norms > 1e-12 * max(norms.max(), 1e-300) if len(norms) else norms.astype(bool)
        grads = [g for g, k in zip(grads, keep) if k]
        weights = weights[keep] if len(weights) else weights
        n_skipped = max(n_skipped, skipped + int((~keep).sum()))
        if len(grads) < min_cells:
            raise InsufficientSamplesError(f"only {len(grads)} cells give gradients for group {name}")
        n_cells = max(n_cells, len(grads))
        u, disp = _direction_dispersion(grads, weights)
        dispersion[name] = disp
        directions[name] = u.T
        bases.append(u.T)
    linear_dirs = all(v <= threshold for v in dispersion.values())
    u_vectors, hat_ok, fact = None, None, None
    if linear_dirs:
        u_vectors = np.vstack(bases)
        hat = vs.positions @ u_vectors.T
        da = sm.sigma_a.shape[1]
        hat_map = SourceMap(sigma_a=hat[:, :da], sigma_b=hat[:, da:],
                            defined=np.ones(len(hat), dtype=bool), index=vs.index, dt=vs.dt,
                            grouping=sm.grouping, mode="linear")
        fact = factorization_test(hat_map, threshold=factorization_threshold)
        hat_ok = fact.factorizes
    return LinearityReport(direction_cov=dispersion, mean_directions=directions,
                           u_vectors=u_vectors, linear=bool(linear_dirs and hat_ok),
                           hat_s_factorizes=hat_ok, threshold=threshold, n_cells=n_cells,
                           n_skipped=n_skipped, factorization=fact)


def report_json(obj):
    """Stable JSON text for a report (sorted keys, fixed float formatting)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _jsonable(x):
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x
