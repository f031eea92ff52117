"""
Two synthetic voices in one microphone
======================================

Each voice is a pulse train through one resonance whose frequency,
bandwidth and gain follow a slowly wandering "tract state".  The two
voices are summed, quantized to 16 bits and turned into log mel
energies.  The features lie near a curved 2-D surface, which we chart,
and the 2-D trajectory goes through the separability analysis.  If it
works, the two recovered coordinates should each follow one voice's
state.

``python demos/two_voices.py [minutes]``; 16 minutes takes well under a
minute on a laptop.  At 4 minutes too few cells survive and the
factorization test usually fails.
"""
import sys

import numpy as np

from invbss import generators as gen
from invbss.audiofeatures import feature_times, featurize, reduce_dimension
from invbss.pipeline import analyze_series, match_sources
from invbss.separability import linearity_test

minutes = float(sys.argv[1]) if len(sys.argv) > 1 else 16.0

scene = gen.mix_scene(gen.default_scene(duration_s=60 * minutes))
print(f"{minutes:g} min scene, voice 2 at {scene.energy_db(1):+.2f} dB re voice 1,"
      f" {scene.clipped_fraction:.1e} clipped")

feats = featurize(scene.waveform)
print("features:", feats.samples.shape, "every %.0f ms" % (1000 * feats.dt))

traj, model = reduce_dimension(feats)
print("global variance explained by 6 PCs: %.3f" % model.explained[:6].sum())
print("local residual beyond 2 dims: %.3f" % model.residual_fraction)

a = analyze_series(traj)
res = a.search
print("cells:", a.cell_stats())
for c in res.candidates:
    print("  ", c.grouping.label(),
          "manifold %.4f / %.4f" % (c.test_a.residual_fraction, c.test_b.residual_fraction),
          "factorization", None if c.factorization is None else round(c.factorization.statistic, 3))
print("verdict:", res.verdict)

if res.source_map is not None:
    sm = res.source_map
    ok = sm.defined
    t = feature_times(traj)[a.velocity.index][ok]
    truth = scene.ground_truth(t)
    pairs, _ = match_sources(np.hstack([sm.sigma_a, sm.sigma_b])[ok], truth)
    for name, (src, r) in zip(("sigma_A", "sigma_B"), pairs):
        print(f"{name} ~ voice {src + 1}: Spearman {r:+.3f}")
    lin = linearity_test(sm, a.velocity, a.index)
    print("linear mixing?", lin.linear, {k: round(v, 3) for k, v in lin.direction_cov.items()})
