"""
The same trajectory in two coordinate systems
==============================================

Invariants are built from local velocity moments after each cell's frame
has whitened the covariance and diagonalized the contracted fourth
moment.  Re-expressing the trajectory through any smooth invertible map
should leave them unchanged, up to a relabeling and sign flips of the
frame axes.  Here we check that numerically.
"""
import numpy as np

from invbss import generators as gen
from invbss.frames import align_frames, build_frame_field
from invbss.invariants import build_invariant_field, scalarity_residual
from invbss.moments import local_moments
from invbss.trajectory import build_neighborhoods, estimate_velocity

toy = gen.make_toy_system(gen.ToySystemSpec(kind="separable_product"), 200_000)
phi = gen.random_diffeomorphism(toy.series.samples, seed=0)
other = gen.apply_diffeomorphism(toy.series, phi)

vx = estimate_velocity(toy.series)
vy = estimate_velocity(other)

# a cell is a set of samples, so one partition can serve both systems;
# otherwise cell boundaries would not correspond and we'd be comparing
# averages over different pieces of state space
idx = build_neighborhoods(vx, cells_per_axis=12, min_count=620)
print(len(idx), "cells kept,", idx.n_dropped, "dropped")


def invariants(vs):
    mf = local_moments(vs, idx, 5)
    return build_invariant_field(align_frames(build_frame_field(mf), idx), mf, idx, 5)


ix, iy = invariants(vx), invariants(vy)
cells = idx.sample_cell
out = scalarity_residual(ix, iy, np.column_stack([cells, cells]))
print("best signed permutation:\n", out["best_signed_permutation"])
print("median relative error: %.4f over %d sample pairs" % (out["median_relative_error"], out["n_pairs"]))

# for contrast, the raw third moments are not scalars at all
c3x = np.array([m.entry(0, 0, 0) for m in local_moments(vx, idx, 3).cells])
c3y = np.array([m.entry(0, 0, 0) for m in local_moments(vy, idx, 3).cells])
print("raw C111 ratio across cells: min %.2f, max %.2f" % ((c3y / c3x).min(), (c3y / c3x).max()))
