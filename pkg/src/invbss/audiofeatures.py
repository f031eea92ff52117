"""Log mel-filterbank features of a waveform and their reduction to a low-dimensional chart."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft

from .atlas import fit_atlas, intrinsic_dimension
from .errors import DimensionMismatchError, SeriesTooShortError
from .trajectory import TimeSeries

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    """Framing and filterbank settings for :func:`featurize`."""

    preemphasis: float = 0.97
    frame_len_ms: float = 25.0
    hop_ms: float = 5.0
    n_mel: int = 12
    mel_lo_hz: float = 0.0
    mel_hi_hz: float = 8000.0
    pair_average: bool = True
    n_fft: Optional[int] = None
    sample_rate: int = 16000

    def __post_init__(self):
        if not 0 <= self.preemphasis < 1:
            raise ValueError("preemphasis must lie in [0, 1)")
        if self.frame_len_ms <= self.hop_ms:
            raise ValueError("frame length must exceed the hop")
        if self.n_mel < 1:
            raise ValueError("n_mel must be positive")
        if not 0 <= self.mel_lo_hz < self.mel_hi_hz <= self.sample_rate / 2:
            raise ValueError("mel band must satisfy 0 <= lo < hi <= Nyquist")

    @property
    def frame_len(self):
        return int(round(self.frame_len_ms * 1e-3 * self.sample_rate))

    @property
    def hop(self):
        return int(round(self.hop_ms * 1e-3 * self.sample_rate))

    @property
    def fft_size(self):
        if self.n_fft is not None:
            return int(self.n_fft)
        return 1 << int(np.ceil(np.log2(self.frame_len)))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_edges(config):
    """The ``n_mel + 2`` filter edge frequencies, equally spaced in mel."""
    m = np.linspace(hz_to_mel(config.mel_lo_hz), hz_to_mel(config.mel_hi_hz), config.n_mel + 2)
    return mel_to_hz(m)


def mel_centers(config):
    return mel_edges(config)[1:-1]


def mel_filterbank(config):
    """Triangular filters on the FFT bin grid, shape ``(n_mel, n_fft // 2 + 1)``."""
    edges = mel_edges(config)
    freqs = np.fft.rfftfreq(config.fft_size, 1.0 / config.sample_rate)
    bank = np.zeros((config.n_mel, len(freqs)))
    for j in range(config.n_mel):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        bank[j] = np.clip(np.minimum(rise, fall), 0.0, None)
    return bank


def frame_energies(waveform, config=None, workers=None, chunk=8192):
    """Log filter energies of every frame, before pair averaging.

    Returns
    -------
    ndarray, shape (n_frames, n_mel)
    """
    config = config or FeatureConfig()
    w = np.asarray(waveform, dtype=float).ravel()
    flen, hop = config.frame_len, config.hop
    if len(w) < flen:
        raise SeriesTooShortError(f"waveform has {len(w)} samples, one frame needs {flen}")
    y = np.empty_like(w)
    y[0] = w[0]
    y[1:] = w[1:] - config.preemphasis * w[:-1]
    n_frames = 1 + (len(y) - flen) // hop
    window = np.hanning(flen)
    bank = mel_filterbank(config)
    out = np.empty((n_frames, config.n_mel))
    offsets = np.arange(flen)
    # chunked so that the spectra of a long recording never sit in memory at once
    for start in range(0, n_frames, chunk):
        stop = min(n_frames, start + chunk)
        idx = offsets[None, :] + hop * np.arange(start, stop)[:, None]
        spec = sfft.rfft(y[idx] * window, n=config.fft_size, axis=1, workers=workers)
        power = spec.real ** 2 + spec.imag ** 2
        out[start:stop] = np.log(np.maximum(power @ bank.T, LOG_FLOOR))
    return out


def featurize(waveform, config=None, workers=None):
    """Log mel energies of ``waveform`` as a :class:`TimeSeries`.

    With ``pair_average`` consecutive frames are averaged in pairs, so the
    output spacing is twice the hop.  ``t0`` is the center of the first
    output frame in seconds.

    Raises
    ------
    SeriesTooShortError
        The waveform is shorter than one frame (or than two when pairing).
    """
    config = config or FeatureConfig()
    e = frame_energies(waveform, config, workers=workers)
    sr = config.sample_rate
    t0 = 0.5 * config.frame_len / sr
    dt = config.hop / sr
    if config.pair_average:
        m = (len(e) // 2) * 2
        if m == 0:
            raise SeriesTooShortError("pair averaging needs at least two frames")
        e = 0.5 * (e[0:m:2] + e[1:m:2])
        t0 += 0.5 * dt
        dt *= 2
    if len(e) < 3:
        raise SeriesTooShortError(f"only {len(e)} feature frames")
    names = tuple(f"mel{j + 1}" for j in range(config.n_mel))
    return TimeSeries(dt=dt, samples=e, channel_names=names, t0=t0)


def feature_times(series):
    return series.t0 + series.dt * np.arange(len(series.samples))


@dataclass(frozen=True)
class ReductionModel:
    """Global principal directions followed by a stitched local-plane atlas.

    ``explained`` holds the variance fraction of every global component
    (non-increasing); ``atlas`` maps the projected features to the output
    chart.
    """

    mean: np.ndarray
    components: np.ndarray
    explained: np.ndarray
    atlas: object
    target_dim: int
    intrinsic_dim_estimate: int
    residual_profile: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def residual_fraction(self):
        return float(self.residual_profile[self.target_dim])

    def project(self, samples):
        return (np.asarray(samples, dtype=float) - self.mean) @ self.components.T

    def transform(self, samples):
        return self.atlas(self.project(samples))

    def to_dict(self):
        return {"target_dim": self.target_dim, "n_global": int(len(self.components)),
                "explained": self.explained.tolist(),
                "residual_profile": self.residual_profile.tolist(),
                "residual_fraction": self.residual_fraction,
                "intrinsic_dim_estimate": self.intrinsic_dim_estimate,
                "n_patches": int(len(self.atlas.centers)),
                "overlap_discrepancy": self.atlas.overlap_discrepancy}


def reduce_dimension(features, target_dim=2, neighborhood_count=40, n_global=6, overlap=3.0,
                     max_residual=0.15, seed=0):
    """Reduce a feature series to a ``target_dim``-dimensional chart.

    The features are first projected on their top ``min(N, n_global)``
    principal directions; ``neighborhood_count`` overlapping local planes
    are then fitted and stitched (see :func:`invbss.atlas.fit_atlas`).

    Returns
    -------
    (TimeSeries, ReductionModel)

    Raises
    ------
    DimensionMismatchError
        The local residual at ``target_dim`` exceeds ``max_residual``; the
        error carries the smallest dimension that would pass.
    """
    x = np.asarray(features.samples, dtype=float)
    t, n = x.shape
    if target_dim >= n:
        raise ValueError(f"target_dim {target_dim} must be below the feature count {n}")
    if t < 10 * neighborhood_count:
        raise SeriesTooShortError(f"{t} frames is too few for {neighborhood_count} neighborhoods")
    mean = x.mean(axis=0)
    _, sv, vt = np.linalg.svd(x - mean, full_matrices=False)
    var = sv ** 2
    explained = var / var.sum() if var.sum() > 0 else np.zeros_like(var)
    k = max(target_dim, min(n, n_global))
    comps = vt[:k]
    y = (x - mean) @ comps.T
    atlas = fit_atlas(y, target_dim, neighborhood_count, overlap=overlap, seed=seed)
    profile = atlas.residual_profile
    est = intrinsic_dimension(profile, max_residual)
    if profile[target_dim] > max_residual:
        raise DimensionMismatchError(
            f"local residual {profile[target_dim]:.3f} at dimension {target_dim} exceeds "
            f"{max_residual}; estimated intrinsic dimension {est}",
            intrinsic_dim=est, residual=float(profile[target_dim]))
    model = ReductionModel(mean=mean, components=comps, explained=explained, atlas=atlas,
                           target_dim=target_dim, intrinsic_dim_estimate=est,
                           residual_profile=profile)
    names = tuple(f"x{j + 1}" for j in range(target_dim))
    return TimeSeries(dt=features.dt, samples=atlas(y), channel_names=names,
                      t0=features.t0), model
