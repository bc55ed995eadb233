"""Deterministic feature extraction.

Every front-end works on 25 ms frames with a 10 ms step, so the rate map,
the autocorrelation features and the MFCCs of one clip always have the same
number of frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.fft import dct, irfft, rfft

from .corpus import FRAME_PERIOD, SAMPLE_RATE, AudioClip

WIN_SAMPLES = 400
STEP_SAMPLES = 160
N_LAGS = 320
ACF_EPS = 1e-10
LOG_FLOOR = 1e-10
#: envelope scale ahead of log compression; with full-scale samples in
#: [-1, 1] a unit gain would leave log(1 + x) almost linear
RM_GAIN = 1e4
KINDS = ("rate_map", "acf", "mfcc", "bottleneck", "combined")


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    frame_period: float = FRAME_PERIOD
    kind: str = "mfcc"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("feature data must be a T x D matrix")
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class FilterbankSpec:
    center_freqs: np.ndarray
    fmin: float
    fmax: float
    sample_rate: int = SAMPLE_RATE

    @property
    def n_channels(self) -> int:
        return len(self.center_freqs)


@dataclass(frozen=True)
class NormStats:
    lo: np.ndarray
    hi: np.ndarray


# --------------------------------------------------------------------------
# framing


def n_frames(n_samples: int, win: int = WIN_SAMPLES, step: int = STEP_SAMPLES) -> int:
    if n_samples < win:
        raise ValueError(f"clip of {n_samples} samples is shorter than one {win}-sample window")
    return (n_samples - win) // step + 1


def frame_signal(clip: AudioClip | np.ndarray, win: float = 0.025, step: float = 0.010) -> np.ndarray:
    """Cut a clip into overlapping frames, dropping the trailing partial frame.

    Returns a read-only ``(T, N)`` view with ``N = win * 16000``.
    """
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    w = int(round(win * SAMPLE_RATE))
    s = int(round(step * SAMPLE_RATE))
    T = n_frames(len(x), w, s)
    return np.lib.stride_tricks.sliding_window_view(x, w)[::s][:T]


# --------------------------------------------------------------------------
# gammatone rate map


def erb_rate(f):
    """Glasberg and Moore ERB-rate (Cams) of frequency ``f`` in Hz."""
    return 21.4 * np.log10(4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def erb_rate_inv(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) * 1000.0 / 4.37


def erb_bandwidth(f):
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def design_gammatone_bank(
    n: int = 64, fmin: float = 80.0, fmax: float = 7500.0, fs: int = SAMPLE_RATE
) -> FilterbankSpec:
    if n < 2:
        raise ValueError("a filterbank needs at least 2 channels")
    if not 0 < fmin < fmax:
        raise ValueError(f"need 0 < fmin < fmax, got fmin={fmin}, fmax={fmax}")
    e = np.linspace(erb_rate(fmin), erb_rate(fmax), n)
    cf = erb_rate_inv(e)
    cf[0], cf[-1] = fmin, fmax
    return FilterbankSpec(cf, float(fmin), float(fmax), fs)


def gammatone_sos(cf: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Second-order sections of a 4th-order complex all-pole gammatone.

    Four identical one-sided poles at ``a * exp(i * 2 * pi * cf / fs)`` with
    ``a`` set by a 1.019 ERB bandwidth; unit complex gain at ``cf``.
    """
    a = np.exp(-2 * np.pi * 1.019 * erb_bandwidth(cf) / fs)
    p = a * np.exp(2j * np.pi * cf / fs)
    return np.array([[(1 - a) ** 2, 0, 0, 1, -2 * p, p * p]] * 2)


def gammatone_filter(x: np.ndarray, cf: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Real gammatone response of ``x``; a tone at ``cf`` passes with unit gain."""
    return 2.0 * np.real(sps.sosfilt(gammatone_sos(cf, fs), np.asarray(x, dtype=complex)))


def rate_map(
    clip: AudioClip,
    spec: FilterbankSpec | None = None,
    tau: float = 0.008,
    gain: float = RM_GAIN,
) -> FeatureMatrix:
    """Auditory rate map: gammatone, half-wave rectify, smooth, decimate, log.

    Each channel's envelope is smoothed by a leaky integrator with time
    constant ``tau``, read at every frame centre, scaled by ``gain`` and
    compressed with ``log(1 + x)``.
    """
    if gain <= 0:
        raise ValueError("gain must be positive")
    spec = spec or design_gammatone_bank()
    x = np.asarray(clip.samples, dtype=complex)
    T = n_frames(len(x))
    idx = np.arange(T) * STEP_SAMPLES + WIN_SAMPLES // 2
    k = np.exp(-1.0 / (tau * spec.sample_rate))
    out = np.empty((T, spec.n_channels))
    for c, cf in enumerate(spec.center_freqs):
        bm = 2.0 * np.real(sps.sosfilt(gammatone_sos(cf, spec.sample_rate), x))
        env = sps.lfilter([1 - k], [1, -k], np.maximum(bm, 0.0))
        out[:, c] = env[idx]
    return FeatureMatrix(np.log1p(gain * out), FRAME_PERIOD, "rate_map")


# --------------------------------------------------------------------------
# autocorrelation


def acf(frames: np.ndarray, n_lags: int = N_LAGS) -> np.ndarray:
    """Energy-normalised short-term autocorrelation of each row of ``frames``.

    Returns lags ``1..n_lags`` of ``sum_n y(n) y(n - lag)`` divided by the
    lag-0 value plus ``1e-10``; samples before the frame start count as 0.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    N = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(N + n_lags + 1)))
    spec = rfft(frames, nfft, axis=1)
    r = irfft(spec.real**2 + spec.imag**2, nfft, axis=1)[:, : n_lags + 1]
    if n_lags >= N:
        r[:, N:] = 0.0
    return r[:, 1:] / (r[:, :1] + ACF_EPS)


def acf_frames(clip: AudioClip) -> FeatureMatrix:
    return FeatureMatrix(acf(frame_signal(clip)), FRAME_PERIOD, "acf")


# --------------------------------------------------------------------------
# MFCC


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = 26, nfft: int = 512, fs: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale, ``(n_filters, nfft//2+1)``."""
    fmax = fs / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * fs / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


_MEL = mel_filterbank()
_HAMMING = np.hamming(WIN_SAMPLES)


def mfcc(clip: AudioClip, n_ceps: int = 12) -> FeatureMatrix:
    """C1..C12 from a 26-band log mel spectrum (C0 is dropped)."""
    frames = frame_signal(clip) * _HAMMING
    power = np.abs(rfft(frames, 512, axis=1)) ** 2
    logmel = np.log(np.maximum(power @ _MEL.T, LOG_FLOOR))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)
    return FeatureMatrix(ceps[:, 1 : n_ceps + 1], FRAME_PERIOD, "mfcc")


# --------------------------------------------------------------------------
# deltas and normalisation


def _regression(x: np.ndarray, window: int) -> np.ndarray:
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window, 0), x, np.repeat(x[-1:], window, 0)])
    denom = 2 * sum(th * th for th in range(1, window + 1))
    out = np.zeros_like(x)
    for th in range(1, window + 1):
        out += th * (padded[window + th : window + th + T] - padded[window - th : window - th + T])
    return out / denom


def add_deltas(f: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """Append regression deltas and accelerations: ``[static, delta, accel]``."""
    x = f.data
    if x.shape[0] == 0:
        return FeatureMatrix(np.zeros((0, 3 * x.shape[1])), f.frame_period, f.kind)
    d = _regression(x, window)
    dd = _regression(d, window)
    return FeatureMatrix(np.hstack([x, d, dd]), f.frame_period, f.kind)


def _as_array(f) -> np.ndarray:
    return f.data if isinstance(f, FeatureMatrix) else np.asarray(f, dtype=np.float64)


def fit_norm(data) -> NormStats:
    """Per-dimension min/max over one feature matrix or a list of them."""
    if isinstance(data, (list, tuple)):
        X = np.concatenate([_as_array(d) for d in data])
    else:
        X = _as_array(data)
    return NormStats(X.min(axis=0), X.max(axis=0))


def apply_norm(f: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    """Min-max scale into [0.05, 0.95] on the training range, clipped to [0, 1].

    Dimensions that were constant in training map to 0.5.
    """
    span = stats.hi - stats.lo
    ok = span > 0
    scaled = np.full(f.data.shape, 0.5)
    scaled[:, ok] = 0.05 + 0.9 * (f.data[:, ok] - stats.lo[ok]) / span[ok]
    return FeatureMatrix(np.clip(scaled, 0.0, 1.0), f.frame_period, f.kind)


# --------------------------------------------------------------------------
# binary container

_FEAT_MAGIC = b"SDBF"


def save_features(path, f: FeatureMatrix) -> None:
    kind = f.kind.encode("ascii").ljust(16, b"\0")
    T, D = f.data.shape
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC + kind + struct.pack("<IId", T, D, f.frame_period))
        fh.write(np.ascontiguousarray(f.data, dtype="<f4").tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != _FEAT_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    kind = raw[4:20].rstrip(b"\0").decode("ascii")
    T, D, fp = struct.unpack("<IId", raw[20:36])
    body = raw[36:]
    if len(body) != 4 * T * D:
        raise ValueError(f"{path}: truncated feature file")
    data = np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)
    return FeatureMatrix(data, fp, kind)
