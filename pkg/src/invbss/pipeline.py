"""End-to-end analysis of one trajectory: cells, moments, frames, invariants, verdict."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AllCellsDroppedError
from .frames import EPS_GAP_REL, EPS_PD_REL, align_frames, build_frame_field, frame_residuals
from .invariants import build_invariant_field
from .moments import local_moments
from .separability import SearchConfig, partition_search
from .trajectory import build_neighborhoods, estimate_velocity


@dataclass(frozen=True)
class CellConfig:
    """Neighborhood and frame settings.

    ``cells_per_axis=None`` starts from 12 boxes per axis in two dimensions
    and 6 above, fine enough for the source map to resolve the state space,
    and coarsens the grid while fewer than ``min_cells`` boxes hold
    ``min_count`` samples.
    """

    strategy: str = "grid"
    cells_per_axis: Optional[int] = None
    k: Optional[int] = None
    min_count: Optional[int] = None
    max_order: int = 5
    eps_pd_rel: float = EPS_PD_REL
    eps_gap_rel: float = EPS_GAP_REL
    min_cells: int = 30


@dataclass(frozen=True)
class Analysis:
    velocity: object
    index: object
    moments: object
    frames: object
    invariants: object
    search: object
    timings: dict = field(default_factory=dict)

    def cell_stats(self):
        excl = self.frames.excluded
        return {"retained": len(self.index), "dropped": int(self.index.n_dropped),
                "singular": sum(1 for v in excl.values() if v == "singular"),
                "degenerate": sum(1 for v in excl.values() if v == "degenerate"),
                "valid": int(self.frames.valid.sum()),
                "frame_components": int(self.frames.n_components)}

    def frame_diagnostics(self):
        """Worst whitening error and relative off-diagonal over cells holding a frame."""
        white, off = 0.0, 0.0
        for f, mt in zip(self.frames.frames, self.moments.cells):
            if f is not None:
                w, o = frame_residuals(f, mt)
                white, off = max(white, w), max(off, o)
        return {"max_whitening_error": white, "max_relative_offdiagonal": off}


def analyze_series(ts, cells=None, search=None, workers=None, clock=None):
    """Run every stage on ``ts`` and return the intermediate products with the verdict."""
    cells = cells or CellConfig()
    search = search or SearchConfig()
    timings = {}

    def tick(name, t0):
        if clock is not None:
            timings[name] = clock() - t0
        return clock() if clock is not None else None

    t0 = clock() if clock is not None else None
    vs = estimate_velocity(ts)
    idx = _neighborhoods(vs, cells)
    t0 = tick("neighborhoods", t0)
    mf = local_moments(vs, idx, cells.max_order, workers=workers)
    t0 = tick("moments", t0)
    ff = align_frames(build_frame_field(mf, cells.eps_pd_rel, cells.eps_gap_rel), idx)
    t0 = tick("frames", t0)
    inv = build_invariant_field(ff, mf, idx, cells.max_order)
    t0 = tick("invariants", t0)
    result = partition_search(inv, idx, vs, search)
    tick("separability", t0)
    return Analysis(velocity=vs, index=idx, moments=mf, frames=ff, invariants=inv,
                    search=result, timings=timings)


def _neighborhoods(vs, cells):
    if cells.strategy != "grid" or cells.cells_per_axis is not None:
        return build_neighborhoods(vs, strategy=cells.strategy, cells_per_axis=cells.cells_per_axis,
                                   k=cells.k, min_count=cells.min_count)
    best = None
    for g in range(12 if vs.n_channels == 2 else 6, 2, -1):
        try:
            idx = build_neighborhoods(vs, "grid", cells_per_axis=g, min_count=cells.min_count)
        except AllCellsDroppedError:
            continue
        if len(idx) >= cells.min_cells:
            return idx
        if best is None or len(idx) > len(best):
            best = idx
    if best is None:
        raise AllCellsDroppedError("no grid resolution retains a cell")
    return best


def match_sources(sigma, truth):
    """Pair recovered coordinates with true sources by total |Spearman|.

    Returns ``(pairs, matrix)`` where ``pairs[i] = (source, rho)`` for
    recovered coordinate ``i`` and ``matrix`` holds every |rho|.
    """
    from itertools import permutations
    from scipy.stats import spearmanr
    k = sigma.shape[1]
    m = truth.shape[1]
    rho = np.zeros((k, m))
    for i in range(k):
        for j in range(m):
            rho[i, j] = spearmanr(sigma[:, i], truth[:, j])[0]
    best = None
    for perm in permutations(range(m), k):
        score = sum(abs(rho[i, perm[i]]) for i in range(k))
        if best is None or score > best[0]:
            best = (score, perm)
    pairs = [(int(best[1][i]), float(rho[i, best[1][i]])) for i in range(k)]
    return pairs, rho
