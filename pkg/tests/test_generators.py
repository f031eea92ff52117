import numpy as np
import pytest

from invbss import generators as gen
from invbss.errors import ClippingError, JacobianError, NyquistError


def test_ease_hits_targets_and_departs_fast():
    times = np.array([0.0, 1.0, 2.0])
    vals = np.array([0.0, 1.0, 0.5])
    np.testing.assert_allclose(gen.ease(times, vals, np.array([0.0, 1.0])), [0.0, 1.0])
    assert gen.ease(times, vals, np.array([0.5]))[0] == pytest.approx(0.875)
    # with a short duty the state holds once the move is over
    assert gen.ease(times, vals, np.array([0.6]), duty=0.5)[0] == pytest.approx(1.0)


def test_target_times_spacing():
    t = gen.target_times(10.0, (0.1, 0.12), np.random.default_rng(0))
    gaps = np.diff(t)
    assert t[0] == 0 and t[-1] >= 10.0
    assert gaps.min() >= 0.1 and gaps.max() <= 0.12


def test_state_process_range_and_target_count():
    st = gen.synth_state_process(gen.VoiceSpec(pitch_hz=100.0), 60.0)
    assert st.values.min() >= 0 and st.values.max() <= 1
    assert len(st.t) == 60_001
    assert 60 / 0.12 - 1 <= st.n_targets_within(60.0) <= 60 / 0.1 + 1


def test_voice_validation():
    with pytest.raises(ValueError):
        gen.VoiceSpec(pitch_hz=0.0)
    with pytest.raises(ValueError):
        gen.VoiceSpec(pitch_hz=100.0, freq_map=(300.0, -400.0))
    spec = gen.VoiceSpec(pitch_hz=100.0, freq_map=(7000.0, 2000.0))
    with pytest.raises(NyquistError):
        gen.synth_voice(spec, gen.synth_state_process(spec, 0.5))


def test_spike_train_count():
    assert gen.spike_train(160.0, 1.0).sum() == 160


def test_scene_offset_quantization_and_truth(tmp_path):
    scene = gen.mix_scene(gen.default_scene(duration_s=3.0))
    assert scene.energy_db(1) == pytest.approx(-2.4, abs=1e-9)
    assert scene.pcm.dtype == np.int16
    assert np.max(np.abs(scene.pcm)) == round(0.9 * 32767)
    path = tmp_path / "s.wav"
    gen.write_wav(path, scene.pcm)
    rate, back = gen.read_wav(path)
    assert rate == 16000
    np.testing.assert_array_equal(back, scene.pcm)
    gen.write_ground_truth(tmp_path / "gt.csv", scene)
    t, states = gen.read_ground_truth(tmp_path / "gt.csv")
    np.testing.assert_array_equal(states[:, 0], scene.states[0].values)
    np.testing.assert_allclose(scene.ground_truth(t[:3]), states[:3])


def test_muted_voice_and_clipping():
    voices = gen.default_voices()
    scene = gen.mix_scene(gen.SceneSpec(voices=voices, relative_gain_db=(0.0, -np.inf), duration_s=1.0))
    assert np.all(scene.voices[1] == 0)
    with pytest.raises(ClippingError):
        gen.mix_scene(gen.SceneSpec(voices=voices, duration_s=1.0, peak=None))


def test_scene_is_reproducible():
    a = gen.mix_scene(gen.default_scene(duration_s=1.0, seed=3))
    b = gen.mix_scene(gen.default_scene(duration_s=1.0, seed=3))
    np.testing.assert_array_equal(a.pcm, b.pcm)


@pytest.mark.parametrize("n", [2, 3])
def test_standard_mixing_inverts(n):
    x = np.random.default_rng(n).uniform(size=(200, n))
    f = gen.standard_mixing(n)
    np.testing.assert_allclose(f.inverse(f(x)), x, atol=1e-10)


def test_random_diffeomorphism_inverts_and_is_regular():
    x = np.random.default_rng(4).uniform(size=(500, 2))
    f = gen.random_diffeomorphism(x, seed=2)
    np.testing.assert_allclose(f.inverse(f(x)), x, atol=1e-9)
    assert np.all(np.abs(gen.check_jacobian(f, x)) > 1e-6)


def test_jacobian_of_a_linear_map():
    a = np.array([[1.0, 2.0], [0.5, -1.0]])
    f = gen.Diffeomorphism((gen.MapStep("linear", {"matrix": a, "shift": np.zeros(2)}),))
    np.testing.assert_allclose(f.jacobian(np.zeros((3, 2))), np.broadcast_to(a, (3, 2, 2)), atol=1e-8)
    flat = gen.Diffeomorphism((gen.MapStep("linear", {"matrix": np.ones((2, 2)), "shift": np.zeros(2)}),))
    with pytest.raises(JacobianError):
        gen.check_jacobian(flat, np.zeros((1, 2)))


def test_rotation_is_orthogonal():
    r = gen.rotation(3, [0.3, -1.0, 2.0])
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)


def test_toy_spec_validation():
    with pytest.raises(ValueError):
        gen.ToySystemSpec(kind="chaotic")
    with pytest.raises(ValueError):
        gen.ToySystemSpec(kind="coupled", coupling=1.5)
    assert gen.ToySystemSpec(kind="coupled3").n_sources == 3


def test_separable_sources_are_independent_and_bounded():
    sy = gen.make_toy_system(gen.ToySystemSpec(), 50_000)
    s = sy.sources
    assert s.min() >= 0 and s.max() <= 1
    assert abs(np.corrcoef(s.T)[0, 1]) < 0.05
    np.testing.assert_allclose(sy.mixing.inverse(sy.series.samples), s, atol=1e-9)


def test_coupling_ties_speed_to_the_partner():
    sy = gen.make_toy_system(gen.ToySystemSpec(kind="coupled", coupling=0.6), 100_000)
    s = sy.sources
    speed0 = np.abs(np.diff(s[:, 0]))
    # source 0 runs its clock faster when source 1 is high
    hi = s[:-1, 1] > 0.5
    assert speed0[hi].mean() > 1.3 * speed0[~hi].mean()


def test_linear_mix_uses_a_constant_matrix():
    sy = gen.make_toy_system(gen.ToySystemSpec(kind="linear_mix"), 1000)
    m = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    np.testing.assert_allclose(sy.series.samples, sy.sources @ m.T, atol=1e-12)


def test_subspace_system_keeps_the_first_source_free():
    s = gen.make_toy_system(gen.ToySystemSpec(kind="subspace_1plus2", coupling=0.6), 100_000).sources
    speed = np.abs(np.diff(s, axis=0))

    def ratio(k, j):
        hi = s[:-1, j] > 0.5
        return speed[hi, k].mean() / speed[~hi, k].mean()

    assert abs(ratio(0, 1) - 1) < 0.1 and abs(ratio(0, 2) - 1) < 0.1
    assert ratio(1, 2) > 1.3 and ratio(2, 1) > 1.3
