"""Local frames that whiten velocity covariance and diagonalize contracted kurtosis.

For each cell the frame ``M`` satisfies

* ``M C2 M^T = I``
* ``sum_m (M-transformed C4)_{klmm}`` is diagonal.

It is built as ``M = R2 . Lambda^(-1/2) . R1``: ``R1`` rotates onto the
eigenvectors of ``C2``, the diagonal factor rescales to unit variance and
``R2`` rotates onto the eigenvectors of the whitened, contracted fourth
moment.  A frame is unique up to a signed permutation of its rows, so
neighboring frames are aligned afterwards to make the field continuous.
"""
import heapq
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import SingularCovarianceError

EPS_PD_REL = 1e-10
EPS_GAP_REL = 1e-6


@dataclass(frozen=True)
class MFrame:
    m: np.ndarray
    d: np.ndarray
    degenerate: bool
    spectral_gap: float


@dataclass(frozen=True)
class FrameField:
    """Per-cell frames aligned with a NeighborhoodIndex.

    ``frames[i]`` is ``None`` for cells whose covariance was singular.
    ``excluded`` maps cell number to the reason it takes no part in
    downstream analysis (``"singular"``, ``"degenerate"``).
    """

    frames: tuple
    alignment_applied: bool = False
    excluded: dict = field(default_factory=dict)
    n_components: int = 0
    alignment_cost: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    @property
    def valid(self):
        return np.array([f is not None and i not in self.excluded
                         for i, f in enumerate(self.frames)])


def contract_fourth(c4):
    """``sum_m c4[k, l, m, m]``."""
    c4 = np.asarray(c4, dtype=float)
    return np.einsum("klmm->kl", c4)


def spectral_gap(d):
    d = np.sort(np.asarray(d, dtype=float))
    if d.size < 2:
        return np.inf
    return float(np.min(np.diff(d)))


def construct_frame(mt, eps_pd_rel=EPS_PD_REL, eps_gap_rel=EPS_GAP_REL):
    """Frame for one cell's moments.

    Raises :class:`SingularCovarianceError` when the smallest eigenvalue of
    ``C2`` is below ``eps_pd_rel * trace(C2) / N``.  Rows are ordered by
    descending diagonal of the contracted matrix; ``degenerate`` is set
    when two of those values are closer than ``eps_gap_rel * max|d|``.
    """
    c2 = mt.tensor(2)
    c4 = mt.tensor(4)
    n = c2.shape[0]
    lam, r1 = np.linalg.eigh(c2)
    eps_pd = eps_pd_rel * np.trace(c2) / n
    if not lam[0] > eps_pd:
        raise SingularCovarianceError(f"smallest covariance eigenvalue {lam[0]:.3g} <= {eps_pd:.3g}")
    whiten = (r1 / np.sqrt(lam)).T
    # sum_m W_mc W_md = inv(C2)_cd, so the contraction can happen before whitening
    inv_c2 = (r1 / lam) @ r1.T
    k = np.einsum("abcd,cd->ab", c4, inv_c2)
    q = whiten @ k @ whiten.T
    q = 0.5 * (q + q.T)
    d, r2 = np.linalg.eigh(q)
    order = np.argsort(d)[::-1]
    d = d[order]
    r2 = r2[:, order]
    m = r2.T @ whiten
    gap = spectral_gap(d)
    degenerate = bool(gap < eps_gap_rel * np.max(np.abs(d)))
    return MFrame(m=m, d=d, degenerate=degenerate, spectral_gap=gap)


def transform_tensor(m, tensor):
    """``sum M_{kk'} M_{ll'} ... T_{k'l'...}`` over every axis of ``tensor``."""
    out = np.asarray(tensor, dtype=float)
    for _ in range(out.ndim):
        # contract the leading axis and append the new one at the end
        out = np.tensordot(out, m, axes=([0], [1]))
    return out


def frame_residuals(frame, mt):
    """Whitening residual and relative off-diagonal of the contracted fourth moment.

    Computed by direct substitution of the frame into the full tensors.
    """
    i2 = transform_tensor(frame.m, mt.tensor(2))
    white = float(np.max(np.abs(i2 - np.eye(i2.shape[0]))))
    q = contract_fourth(transform_tensor(frame.m, mt.tensor(4)))
    diag = np.abs(np.diag(q))
    off = q - np.diag(np.diag(q))
    rel = float(np.max(np.abs(off)) / np.max(diag)) if q.shape[0] > 1 else 0.0
    return white, rel


def build_frame_field(moment_field, eps_pd_rel=EPS_PD_REL, eps_gap_rel=EPS_GAP_REL):
    """Unaligned frames for every cell; singular and degenerate cells are recorded."""
    frames, excluded = [], {}
    for i, mt in enumerate(moment_field.cells):
        try:
            fr = construct_frame(mt, eps_pd_rel, eps_gap_rel)
        except SingularCovarianceError:
            frames.append(None)
            excluded[i] = "singular"
            continue
        frames.append(fr)
        if fr.degenerate:
            excluded[i] = "degenerate"
    return FrameField(frames=tuple(frames), excluded=excluded)


def nearest_signed_permutation(b):
    """Signed permutation ``P`` maximizing ``sum_ij B_ij P_ij``.

    Equivalent to minimizing ``||A P^T - I||_F^2`` summed over the matrices
    ``A`` that add up to ``B``; solved exactly as a linear assignment.
    """
    b = np.asarray(b, dtype=float)
    rows, cols = linear_sum_assignment(-np.abs(b))
    p = np.zeros_like(b)
    signs = np.sign(b[rows, cols])
    signs[signs == 0] = 1.0
    p[rows, cols] = signs
    return p


def _apply_signed_perm(frame, p):
    perm = np.argmax(np.abs(p), axis=1)
    return replace(frame, m=p @ frame.m, d=frame.d[perm])


def align_frames(field, idx):
    """Make the frame field continuous across adjacent cells.

    Starting in each connected component from the cell with the largest
    spectral gap, cells are visited best-first: the next cell is the
    frontier cell whose optimal signed permutation leaves it closest to
    its already aligned neighbors (Frobenius distance of ``M_a M_b^-1``
    to the identity).  Disconnected components are aligned independently
    and counted in ``n_components``.
    """
    n_cells = len(field.frames)
    valid = field.valid
    neighbors = [[j for j in nb if valid[j]] for nb in idx.neighbors()]
    frames = list(field.frames)
    aligned = np.zeros(n_cells, dtype=bool)
    cost = {}
    components = 0

    def evaluate(b):
        inv_b = np.linalg.inv(frames[b].m)
        nbs = [k for k in neighbors[b] if aligned[k]]
        mats = [frames[k].m @ inv_b for k in nbs]
        p = nearest_signed_permutation(np.sum(mats, axis=0))
        eye = np.eye(p.shape[0])
        c = float(np.mean([np.linalg.norm(a @ p.T - eye) for a in mats]))
        return c, p, len(nbs)

    gaps = np.array([f.spectral_gap if valid[i] else -np.inf for i, f in enumerate(frames)])
    while True:
        todo = np.flatnonzero(valid & ~aligned)
        if todo.size == 0:
            break
        root = int(todo[np.argmax(gaps[todo])])
        components += 1
        aligned[root] = True
        cost[root] = 0.0
        heap = []

        def push_frontier(a):
            for b in neighbors[a]:
                if not aligned[b]:
                    c, _, k = evaluate(b)
                    heapq.heappush(heap, (c, b, k))

        push_frontier(root)
        while heap:
            c, b, k = heapq.heappop(heap)
            if aligned[b]:
                continue
            c_now, p, k_now = evaluate(b)
            if k_now != k:
                heapq.heappush(heap, (c_now, b, k_now))
                continue
            frames[b] = _apply_signed_perm(frames[b], p)
            aligned[b] = True
            cost[b] = c_now
            push_frontier(b)
    return FrameField(frames=tuple(frames), alignment_applied=True,
                      excluded=dict(field.excluded), n_components=components,
                      alignment_cost=cost)


def continuity_violations(field, idx):
    """Adjacent valid pairs whose relative frame is nearer a nontrivial signed permutation than the identity."""
    valid = field.valid
    bad = []
    for a, b in idx.adjacency:
        if not (valid[a] and valid[b]):
            continue
        rel = field.frames[a].m @ np.linalg.inv(field.frames[b].m)
        p = nearest_signed_permutation(rel)
        if not np.allclose(p, np.eye(len(p))):
            d_id = np.linalg.norm(rel - np.eye(len(p)))
            if np.linalg.norm(rel - p) < d_id:
                bad.append((a, b))
    return bad
