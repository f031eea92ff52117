"""Synthetic data with known ground truth.

Two families live here:

* the two-voice acoustic scene: each voice is a spike train at a fixed
  pitch filtered by a one-resonance impulse response whose amplitude,
  frequency and damping are affine in a slowly wandering scalar state;
* low-dimensional toy systems (separable, coupled, linearly mixed,
  1-D plus 2-D subspaces) observed through smooth invertible maps.

State processes move between uniformly drawn targets placed every
100-120 ms.  The easing between targets is the cubic ``1 - (1 - u)**3``
(fast departure, slow arrival).  A time-symmetric easing would make the
process statistically reversible, and every odd-order velocity moment
would then vanish.
"""
import csv
import math
import wave
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ClippingError, JacobianError, NyquistError
from .trajectory import TimeSeries

SAMPLE_RATE = 16000
STATE_RATE = 1000.0


# ---------------------------------------------------------------- state processes


def target_times(duration, interval, rng):
    """Target onsets from 0 until past ``duration`` with uniform spacing in ``interval``."""
    lo, hi = interval
    n_est = int(math.ceil(duration / lo)) + 3
    steps = rng.uniform(lo, hi, size=n_est)
    times = np.concatenate([[0.0], np.cumsum(steps)])
    while times[-1] < duration + hi:
        times = np.append(times, times[-1] + rng.uniform(lo, hi))
    return times[: np.searchsorted(times, duration + hi, side="right") + 1]


def ease(times, values, t, duty=1.0):
    """Move from each target to the next along ``1 - (1 - u)**3``.

    With ``duty < 1`` the move finishes after that fraction of the interval
    and the state holds until the next onset.
    """
    i = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
    u = (t - times[i]) / (times[i + 1] - times[i])
    u = np.clip(u / duty, 0.0, 1.0)
    h = 1.0 - (1.0 - u) ** 3
    return values[i] + (values[i + 1] - values[i]) * h


@dataclass(frozen=True)
class StateProcess:
    t: np.ndarray
    values: np.ndarray
    target_times: np.ndarray
    target_values: np.ndarray

    def n_targets_within(self, duration):
        """Target onsets after the start and no later than ``duration``."""
        tt = self.target_times
        return int(np.count_nonzero((tt > 0) & (tt <= duration)))

    def at(self, t):
        return np.interp(t, self.t, self.values)


# ---------------------------------------------------------------- voices


@dataclass(frozen=True)
class VoiceSpec:
    """One synthetic voice.

    The maps are ``(offset, slope)`` pairs giving amplitude, resonant
    frequency (Hz) and damping (1/s) as ``offset + slope * state`` with
    the state in [0, 1].
    """

    pitch_hz: float
    amp_map: tuple = (1.0, 0.5)
    freq_map: tuple = (300.0, 600.0)
    damping_map: tuple = (150.0, 100.0)
    state_interval_ms: tuple = (100.0, 120.0)
    seed: int = 0

    def __post_init__(self):
        if not self.pitch_hz > 0:
            raise ValueError("pitch must be positive")
        f_ends = [self.freq_map[0], self.freq_map[0] + self.freq_map[1]]
        g_ends = [self.damping_map[0], self.damping_map[0] + self.damping_map[1]]
        if min(f_ends) <= 0:
            raise ValueError("resonant frequency must stay positive over the state range")
        if min(g_ends) <= 0:
            raise ValueError("damping must stay positive over the state range")
        lo, hi = self.state_interval_ms
        if not 0 < lo <= hi:
            raise ValueError("bad state interval")

    def response(self, state):
        s = np.asarray(state, dtype=float)
        amp = self.amp_map[0] + self.amp_map[1] * s
        freq = self.freq_map[0] + self.freq_map[1] * s
        damp = self.damping_map[0] + self.damping_map[1] * s
        return amp, freq, damp


def default_voices(seed=0):
    """Two voices at 100 Hz and 160 Hz with resonances in disjoint bands."""
    return (
        VoiceSpec(pitch_hz=100.0, freq_map=(300.0, 600.0), damping_map=(150.0, 100.0), seed=seed),
        VoiceSpec(pitch_hz=160.0, freq_map=(1500.0, 1500.0), damping_map=(200.0, 100.0), seed=seed + 1),
    )


def synth_state_process(spec, duration_s, rate=STATE_RATE):
    """Scalar state of one voice sampled at ``rate`` Hz over ``[0, duration_s]``."""
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.state_interval_ms
    times = target_times(duration_s, (lo / 1000.0, hi / 1000.0), rng)
    vals = rng.uniform(0.0, 1.0, size=len(times))
    t = np.arange(int(math.floor(duration_s * rate)) + 1) / rate
    return StateProcess(t=t, values=ease(times, vals, t), target_times=times, target_values=vals)


def synth_voice(spec, states, duration_s=None, sample_rate=SAMPLE_RATE, decay=1e-4):
    """Spike train at the voice pitch through a state-dependent damped sinusoid.

    The impulse response is read from the state at each spike and kept for
    the whole response, truncated once its envelope has fallen by
    ``decay``.

    Raises
    ------
    NyquistError
        If the resonant frequency can exceed half the sample rate.
    """
    f_ends = [spec.freq_map[0], spec.freq_map[0] + spec.freq_map[1]]
    if max(f_ends) >= sample_rate / 2:
        raise NyquistError(f"resonance up to {max(f_ends):.0f} Hz exceeds Nyquist {sample_rate / 2:.0f} Hz")
    if duration_s is None:
        duration_s = float(states.t[-1])
    n = int(round(duration_s * sample_rate))
    onsets = np.arange(0.0, duration_s, 1.0 / spec.pitch_hz)
    amp, freq, damp = spec.response(states.at(onsets))
    length = int(math.ceil(math.log(1.0 / decay) / min(spec.damping_map[0],
                                                         sum(spec.damping_map)) * sample_rate))
    tt = np.arange(length) / sample_rate
    out = np.zeros(n + length)
    starts = np.round(onsets * sample_rate).astype(np.int64)
    for i0, a, f, g in zip(starts, amp, freq, damp):
        out[i0:i0 + length] += a * np.exp(-g * tt) * np.sin(2 * np.pi * f * tt)
    return out[:n]


def spike_train(pitch_hz, duration_s, sample_rate=SAMPLE_RATE):
    """Unit spikes at the glottal onsets."""
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    idx = np.round(np.arange(0.0, duration_s, 1.0 / pitch_hz) * sample_rate).astype(np.int64)
    out[idx[idx < n]] = 1.0
    return out


@dataclass(frozen=True)
class SceneSpec:
    voices: tuple
    relative_gain_db: tuple = (0.0, -2.4)
    duration_s: float = 960.0
    sample_rate: int = SAMPLE_RATE
    bit_depth: int = 16
    peak: Optional[float] = 0.9

    def __post_init__(self):
        if len(self.voices) < 2:
            raise ValueError("a scene needs at least two voices")
        if len(self.relative_gain_db) != len(self.voices):
            raise ValueError("one gain per voice required")
        if not self.duration_s > 0:
            raise ValueError("duration must be positive")
        if self.bit_depth != 16:
            raise ValueError("only 16-bit output is supported")


def default_scene(duration_s=960.0, seed=0):
    return SceneSpec(voices=default_voices(seed), duration_s=duration_s)


@dataclass(frozen=True)
class Scene:
    """A mixed scene with its ground truth.

    ``mixed`` is the gain-scaled sum before peak normalization and
    quantization; ``pcm`` the 16-bit samples written to disk; ``waveform``
    the float view of ``pcm``.
    """

    pcm: np.ndarray
    waveform: np.ndarray
    mixed: np.ndarray
    voices: tuple
    states: tuple
    sample_rate: int
    clipped_fraction: float = 0.0

    def energy_db(self, k, ref=0):
        e = [float(np.sum(v ** 2)) for v in self.voices]
        return 10.0 * math.log10(e[k] / e[ref])

    def ground_truth(self, t):
        return np.stack([s.at(t) for s in self.states], axis=1)


def mix_scene(spec, max_clipped=1e-3):
    """Synthesize, gain-scale, sum and quantize every voice of ``spec``.

    Voice ``k`` is scaled so that its energy relative to the first voice
    equals ``relative_gain_db[k]``; ``-inf`` mutes it.

    Raises
    ------
    ClippingError
        More than ``max_clipped`` of the samples hit full scale.
    """
    states, raw = [], []
    for v in spec.voices:
        st = synth_state_process(v, spec.duration_s)
        states.append(st)
        raw.append(synth_voice(v, st, spec.duration_s, spec.sample_rate))
    e_ref = float(np.sum(raw[0] ** 2))
    scaled = []
    for y, g in zip(raw, spec.relative_gain_db):
        e = float(np.sum(y ** 2))
        if g == -np.inf or e == 0:
            scaled.append(np.zeros_like(y))
        else:
            scaled.append(y * math.sqrt(e_ref / e * 10.0 ** (g / 10.0)))
    mixed = np.sum(scaled, axis=0)
    full = 32767.0
    if spec.peak is not None:
        top = np.max(np.abs(mixed))
        level = mixed * (spec.peak / top) if top > 0 else mixed
    else:
        level = mixed
    q = np.round(level * full)
    clipped = float(np.mean(np.abs(q) > full))
    if clipped > max_clipped:
        raise ClippingError(f"{100 * clipped:.3f}% of samples clipped")
    pcm = np.clip(q, -32768, 32767).astype(np.int16)
    return Scene(pcm=pcm, waveform=pcm / full, mixed=mixed, voices=tuple(scaled),
                 states=tuple(states), sample_rate=spec.sample_rate, clipped_fraction=clipped)


def write_wav(path, pcm, sample_rate=SAMPLE_RATE):
    pcm = np.asarray(pcm)
    if pcm.dtype != np.int16:
        raise ValueError("expected int16 samples")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(pcm.astype("<i2").tobytes())


def read_wav(path):
    """Return ``(sample_rate, int16 samples)`` from a mono 16-bit WAV file."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError("expected mono 16-bit PCM")
        rate = fh.getframerate()
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2").astype(np.int16)
    return rate, data


def write_ground_truth(path, scene, rate=STATE_RATE):
    t = scene.states[0].t
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"state_voice{k + 1}" for k in range(len(scene.states))])
        for i in range(len(t)):
            w.writerow([repr(float(t[i]))] + [repr(float(s.values[i])) for s in scene.states])


def read_ground_truth(path):
    """``(t, states)`` from a ground-truth CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


# ---------------------------------------------------------------- smooth maps


@dataclass(frozen=True)
class MapStep:
    """One invertible stage of a :class:`Diffeomorphism`.

    ``kind`` is one of

    * ``"monotone"``: ``y_i = a_i tanh((x_i - c_i) / b_i)`` with a, b > 0
    * ``"linear"``: ``y = A x + shift``
    * ``"shear"``: ``y_i = x_i + coef * g(x_j)`` with ``g`` in {square, sin}
    """

    kind: str
    params: dict

    def forward(self, x):
        p = self.params
        if self.kind == "monotone":
            return p["a"] * np.tanh((x - p["c"]) / p["b"])
        if self.kind == "linear":
            return x @ np.asarray(p["matrix"]).T + p["shift"]
        if self.kind == "shear":
            y = x.copy()
            y[:, p["i"]] += p["coef"] * _shear_fn(p["fn"], x[:, p["j"]])
            return y
        raise ValueError(f"unknown map kind {self.kind!r}")

    def inverse(self, y):
        p = self.params
        if self.kind == "monotone":
            return p["c"] + p["b"] * np.arctanh(y / p["a"])
        if self.kind == "linear":
            return np.linalg.solve(np.asarray(p["matrix"]), (y - p["shift"]).T).T
        if self.kind == "shear":
            x = y.copy()
            x[:, p["i"]] -= p["coef"] * _shear_fn(p["fn"], y[:, p["j"]])
            return x
        raise ValueError(f"unknown map kind {self.kind!r}")


def _shear_fn(name, v):
    if name == "square":
        return v * v
    if name == "sin":
        return np.sin(v)
    raise ValueError(f"unknown shear function {name!r}")


@dataclass(frozen=True)
class Diffeomorphism:
    steps: tuple = ()

    def __call__(self, x):
        y = np.asarray(x, dtype=float)
        for s in self.steps:
            y = s.forward(y)
        return y

    def inverse(self, y):
        x = np.asarray(y, dtype=float)
        for s in reversed(self.steps):
            x = s.inverse(x)
        return x

    def jacobian(self, x, h=1e-6):
        """Central-difference Jacobians, shape ``(P, N, N)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[1]
        out = np.empty((len(x), n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            out[:, :, j] = (self(x + e) - self(x - e)) / (2 * h)
        return out


def rotation(n, angles):
    """Product of Givens rotations over axis pairs, one angle per pair."""
    r = np.eye(n)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for (i, j), th in zip(pairs, angles):
        g = np.eye(n)
        g[i, i] = g[j, j] = math.cos(th)
        g[i, j] = -math.sin(th)
        g[j, i] = math.sin(th)
        r = g @ r
    return r


def standard_mixing(n):
    """Fixed nonlinear mixing of sources in [0, 1]^n used by the toy systems."""
    steps = [
        MapStep("monotone", {"a": np.ones(n), "b": np.full(n, 1 / 1.5), "c": np.full(n, 0.5)}),
        MapStep("linear", {"matrix": rotation(n, [0.6, 0.4, -0.5][: n * (n - 1) // 2]),
                           "shift": np.zeros(n)}),
        MapStep("shear", {"i": 0, "j": 1, "coef": 0.3, "fn": "square"}),
        MapStep("shear", {"i": 1, "j": 0, "coef": 0.2, "fn": "sin"}),
    ]
    if n > 2:
        steps.append(MapStep("shear", {"i": 2, "j": 0, "coef": 0.25, "fn": "sin"}))
    return Diffeomorphism(tuple(steps))


def random_diffeomorphism(data, seed=0, strength=1.0):
    """Random monotone-rotation-shear composition adapted to the range of ``data``.

    The monotone stage keeps every channel within the tanh core
    (arguments below about 1.5 standard deviations), so the map stays
    well conditioned on the data.
    """
    x = np.asarray(data, dtype=float)
    n = x.shape[1]
    rng = np.random.default_rng(seed)
    c = np.median(x, axis=0)
    spread = np.max(np.abs(x - c), axis=0)
    spread[spread == 0] = 1.0
    b = spread * rng.uniform(0.8, 1.4, size=n) / strength
    a = spread * rng.uniform(0.7, 1.3, size=n)
    angles = rng.uniform(-np.pi, np.pi, size=n * (n - 1) // 2)
    steps = [MapStep("monotone", {"a": a, "b": b, "c": c}),
             MapStep("linear", {"matrix": rotation(n, angles), "shift": np.zeros(n)})]
    scale = float(np.mean(a))
    for i in range(n):
        j = (i + 1) % n
        steps.append(MapStep("shear", {"i": i, "j": j, "coef": 0.2 * strength / scale,
                                       "fn": "square"}))
    return Diffeomorphism(tuple(steps))


def apply_diffeomorphism(ts, diffeo):
    """Apply ``diffeo`` to every sample; the map travels with the caller."""
    y = diffeo(ts.samples)
    return TimeSeries(dt=ts.dt, samples=y, channel_names=ts.channel_names, t0=ts.t0)


def check_jacobian(diffeo, points, min_abs_det=1e-6):
    """Raise :class:`JacobianError` if ``|det J|`` falls below ``min_abs_det`` at any point."""
    dets = np.linalg.det(diffeo.jacobian(points))
    worst = float(np.min(np.abs(dets)))
    if not worst > min_abs_det:
        raise JacobianError(f"Jacobian determinant {worst:.3g} too close to zero")
    return dets


# ---------------------------------------------------------------- toy systems

TOY_KINDS = ("separable_product", "coupled", "linear_mix", "subspace_1plus2", "coupled3")


@dataclass(frozen=True)
class ToySystemSpec:
    """Ground-truth toy system.

    Each source follows an eased target process on its own internal clock.
    Coupled kinds make the clock rates depend on the other sources,
    ``dtau_k/dt = 1 + coupling * (2 s_j - 1)``, so source speeds carry
    information about their partners even though every source visits the
    same states.  ``mixing`` is ``"standard"`` (fixed nonlinear map),
    ``"identity"``, ``"random"`` or an explicit matrix.
    """

    kind: str = "separable_product"
    n_sources: int = 2
    interval: tuple = (0.10, 0.12)
    duty: Optional[tuple] = None
    coupling: float = 0.0
    mixing: object = "standard"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TOY_KINDS:
            raise ValueError(f"unknown toy kind {self.kind!r}")
        if self.kind in ("subspace_1plus2", "coupled3") and self.n_sources != 3:
            object.__setattr__(self, "n_sources", 3)
        if not 0 <= self.coupling < 1:
            raise ValueError("coupling must lie in [0, 1)")


@dataclass(frozen=True)
class ToySystem:
    series: TimeSeries
    sources: np.ndarray
    mixing: object
    spec: ToySystemSpec = field(repr=False, default=None)


def _coupling_graph(spec):
    n = spec.n_sources
    if spec.kind == "coupled":
        return {0: [1], 1: [0]}
    if spec.kind == "subspace_1plus2":
        return {0: [], 1: [2], 2: [1]}
    if spec.kind == "coupled3":
        return {0: [1], 1: [2], 2: [0]}
    return {k: [] for k in range(n)}


def simulate_sources(spec, n_samples, dt):
    """Source trajectories of shape ``(n_samples, n_sources)`` with values in [0, 1]."""
    n = spec.n_sources
    duty = spec.duty if spec.duty is not None else (1.0,) * n
    rng = np.random.default_rng(spec.seed)
    graph = _coupling_graph(spec)
    # slack in clock range covers the fastest possible clock
    horizon = n_samples * dt * (1.0 + spec.coupling) + 1.0
    proc = []
    for k in range(n):
        times = target_times(horizon, spec.interval, rng)
        vals = rng.uniform(0.0, 1.0, size=len(times))
        proc.append((times, vals))
    coupled = spec.coupling > 0 and any(graph.values())
    if not coupled:
        t = np.arange(n_samples) * dt
        return np.stack([ease(tt, vv, t, duty[k]) for k, (tt, vv) in enumerate(proc)], axis=1)
    out = np.empty((n_samples, n))
    tau = [0.0] * n
    seg = [0] * n
    s = [float(proc[k][1][0]) for k in range(n)]
    for i in range(n_samples):
        out[i] = s
        rates = [1.0 + spec.coupling * (2.0 * sum(s[j] for j in graph[k]) / len(graph[k]) - 1.0)
                 if graph[k] else 1.0 for k in range(n)]
        for k in range(n):
            tau[k] += dt * rates[k]
            times, vals = proc[k]
            while times[seg[k] + 1] <= tau[k]:
                seg[k] += 1
            j = seg[k]
            u = min((tau[k] - times[j]) / (times[j + 1] - times[j]) / duty[k], 1.0)
            s[k] = vals[j] + (vals[j + 1] - vals[j]) * (1.0 - (1.0 - u) ** 3)
    return out


def make_toy_system(spec, n_samples, dt=0.01, check_grid=10):
    """Simulate sources and observe them through the requested mixing.

    Raises
    ------
    JacobianError
        The mixing is not safely invertible on a grid over [0, 1]^n.
    """
    src = simulate_sources(spec, n_samples, dt)
    n = spec.n_sources
    mix = spec.mixing
    if spec.kind == "linear_mix" and isinstance(mix, str) and mix == "standard":
        mix = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2) if n == 2 else rotation(n, [0.5] * 3)
    if isinstance(mix, str):
        if mix == "identity":
            diffeo = Diffeomorphism(())
        elif mix == "standard":
            diffeo = standard_mixing(n)
        elif mix == "random":
            diffeo = random_diffeomorphism(src, seed=spec.seed + 1)
        else:
            raise ValueError(f"unknown mixing {mix!r}")
    else:
        matrix = np.asarray(mix, dtype=float)
        diffeo = Diffeomorphism((MapStep("linear", {"matrix": matrix, "shift": np.zeros(n)}),))
    axes = [np.linspace(0.0, 1.0, check_grid)] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    check_jacobian(diffeo, grid)
    x = diffeo(src)
    ts = TimeSeries(dt=dt, samples=x, channel_names=tuple(f"x{k + 1}" for k in range(n)))
    return ToySystem(series=ts, sources=src, mixing=diffeo, spec=spec)
