"""Mel-spectrogram front end, time-axis augmentation, window cropping and a
classical autocorrelation tempo estimator used as an independent reference.

All analysis runs at 11025 Hz with a 1024-sample Hann window and a 512-sample
hop, so a 256-frame window spans about 11.9 s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import MODEL_SAMPLE_RATE, AudioClip

N_FFT = 1024
HOP = 512
N_MELS = 40
F_LO = 20.0
F_HI = 5000.0
WINDOW_FRAMES = 256
FRAME_HOP_SECONDS = HOP / MODEL_SAMPLE_RATE

SCALE_FACTORS = tuple(round(0.8 + 0.04 * i, 2) for i in range(11))

BPM_MIN = 30.0
BPM_MAX = 285.0


class TooShortError(ValueError):
    """Input has fewer samples or frames than the operation needs."""


class WindowBoundsError(IndexError):
    pass


class NoPeriodicityError(ValueError):
    pass


def round_half_up(x):
    """Round to the nearest integer, halves away from -inf (2.5 -> 3)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray
    frame_hop_seconds: float = FRAME_HOP_SECONDS
    f_lo: float = F_LO
    f_hi: float = F_HI

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("spectrogram values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def n_bands(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "MelSpectrogram":
        return MelSpectrogram(values, self.frame_hop_seconds, self.f_lo, self.f_hi)


@dataclass(frozen=True)
class SpectrogramWindow:
    values: np.ndarray
    source_offset: int = 0

    def __post_init__(self):
        if np.shape(self.values) != (N_MELS, WINDOW_FRAMES):
            raise ValueError(
                f"window must be {N_MELS}x{WINDOW_FRAMES}, got {np.shape(self.values)}"
            )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=1)
def _hann():
    n = np.arange(N_FFT)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / N_FFT)
    w.flags.writeable = False
    return w


def stft_magnitude(clip: AudioClip) -> np.ndarray:
    """Magnitude STFT, shape ``(513, 1 + (N - 1024) // 512)``."""
    if clip.sample_rate != MODEL_SAMPLE_RATE:
        raise ValueError(f"expected {MODEL_SAMPLE_RATE} Hz audio, got {clip.sample_rate} Hz")
    x = clip.samples
    if len(x) < N_FFT:
        raise TooShortError(f"need at least {N_FFT} samples, got {len(x)}")
    frames = np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::HOP]
    return np.abs(np.fft.rfft(frames * _hann(), axis=1)).T


@lru_cache(maxsize=1)
def _filterbank():
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(F_LO), hz_to_mel(F_HI), N_MELS + 2))
    freqs = np.arange(N_FFT // 2 + 1) * MODEL_SAMPLE_RATE / N_FFT
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb /= fb.max(axis=1, keepdims=True)
    fb.flags.writeable = False
    return fb, edges_hz[1:-1].copy()


def mel_filterbank() -> np.ndarray:
    """40 x 513 triangular filters between 20 Hz and 5 kHz, each row peaking at 1."""
    return _filterbank()[0]


def mel_center_frequencies() -> np.ndarray:
    return _filterbank()[1].copy()


def mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    """Linear-magnitude Mel spectrogram (no log compression)."""
    return MelSpectrogram(mel_filterbank() @ stft_magnitude(clip))


def _interp_frames(values: np.ndarray, positions: np.ndarray) -> np.ndarray:
    positions = np.clip(positions, 0.0, values.shape[1] - 1)
    i0 = np.floor(positions).astype(np.int64)
    i1 = np.minimum(i0 + 1, values.shape[1] - 1)
    w = positions - i0
    return values[:, i0] * (1.0 - w) + values[:, i1] * w


def scale_time(spec: MelSpectrogram, c: float) -> tuple[MelSpectrogram, float]:
    """Resample the time axis by factor ``c`` (c > 1 speeds the music up).

    Returns the scaled spectrogram with ``round(T / c)`` frames and the
    multiplier to apply to the ground-truth bpm (``c`` itself).
    """
    if not any(abs(c - s) < 1e-9 for s in SCALE_FACTORS):
        raise ValueError(f"scale factor {c} not in {SCALE_FACTORS}")
    T = spec.n_frames
    if T < 2:
        raise TooShortError("time scaling needs at least 2 frames")
    if c == 1.0:
        return spec.with_values(spec.values.copy()), 1.0
    n_out = max(1, int(round_half_up(T / c)))
    out = _interp_frames(spec.values, np.arange(n_out) * c)
    return spec.with_values(out), float(c)


def crop_window(spec: MelSpectrogram, offset: int) -> SpectrogramWindow:
    T = spec.n_frames
    if offset < 0 or offset + WINDOW_FRAMES > T:
        raise WindowBoundsError(
            f"window [{offset}, {offset + WINDOW_FRAMES}) outside spectrogram of {T} frames"
        )
    return SpectrogramWindow(spec.values[:, offset:offset + WINDOW_FRAMES].copy(), offset)


def stretch_to_window(spec: MelSpectrogram) -> tuple[SpectrogramWindow, float]:
    """Stretch a spectrogram shorter than one window to exactly 256 frames.

    The returned multiplier is ``T / 256``: a tempo read off the window must
    be divided by it to recover the track tempo.
    """
    T = spec.n_frames
    if T < 2:
        raise TooShortError(f"need at least 2 frames to stretch, got {T}")
    if T >= WINDOW_FRAMES:
        raise ValueError(f"spectrogram has {T} frames; crop instead of stretching")
    ratio = T / WINDOW_FRAMES
    out = _interp_frames(spec.values, np.arange(WINDOW_FRAMES) * ratio)
    return SpectrogramWindow(out, 0), ratio


def onset_envelope(spec: MelSpectrogram) -> np.ndarray:
    """Spectral flux: summed positive band-energy increase per frame."""
    M = spec.values
    if M.shape[1] < 2:
        raise TooShortError("onset envelope needs at least 2 frames")
    e = np.zeros(M.shape[1])
    e[1:] = np.maximum(0.0, np.diff(M, axis=1)).sum(axis=0)
    return e


def lag_range(frame_hop_seconds: float, bpm_lo=BPM_MIN, bpm_hi=BPM_MAX) -> tuple[int, int]:
    lo = math.ceil(60.0 / (bpm_hi * frame_hop_seconds) - 1e-9)
    hi = math.floor(60.0 / (bpm_lo * frame_hop_seconds) + 1e-9)
    return lo, hi


def _smooth(x: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return x
    half = int(np.ceil(4 * sigma))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    return np.convolve(x, k / k.sum(), mode="same")


def autocorr_tempo(envelope, frame_hop_seconds: float = FRAME_HOP_SECONDS,
                   tie_ratio: float = 0.35, smooth_frames: float = 1.0) -> float:
    """Tempo (bpm) from the autocorrelation of an onset envelope.

    The envelope is lightly smoothed (Gaussian, ``smooth_frames`` std) so
    beats falling between frame boundaries still line up, mean-removed and
    autocorrelated over lags covering 30-285 bpm. Among the local maxima,
    a shorter lag whose multiple lands on the strongest peak counts as a
    tie if it reaches ``tie_ratio`` of that peak's height; ties resolve to
    the shortest lag (fastest tempo). The chosen lag is refined by
    parabolic interpolation.

    Raises
    ------
    NoPeriodicityError
        If the envelope is constant or has no positive peak in range.
    """
    raw = np.asarray(envelope, dtype=np.float64)
    lo, hi = lag_range(frame_hop_seconds)
    if len(raw) <= hi + 1:
        raise TooShortError(f"envelope of {len(raw)} frames too short for lags up to {hi}")
    scale = np.abs(raw).max()
    if scale == 0 or np.ptp(raw) <= 1e-12 * scale:
        raise NoPeriodicityError("envelope has zero variance")
    e = _smooth(raw, smooth_frames)
    e = e - e.mean()
    n = len(e)
    spectrum = np.fft.rfft(e, 2 * n)
    r = np.fft.irfft(spectrum * np.conj(spectrum), 2 * n)[: hi + 2]

    peaks = [L for L in range(lo, hi + 1) if r[L] >= r[L - 1] and r[L] >= r[L + 1] and r[L] > 0]
    if not peaks:
        raise NoPeriodicityError("no positive autocorrelation peak in tempo range")
    best = max(peaks, key=lambda L: (r[L], -L))
    for L in peaks:
        if L >= best:
            break
        k = round(best / L)
        # integer lags carry up to half a frame of error, which grows with k
        if k >= 2 and abs(best - k * L) <= 0.5 * k + 0.5 and r[L] >= tie_ratio * r[best]:
            best = L
            break

    return 60.0 / (_refine_lag(r, best, hi) * frame_hop_seconds)


def _refine_lag(r: np.ndarray, lag: int, hi: int) -> float:
    """Sub-frame period estimate from the furthest in-range multiple of ``lag``.

    Measuring the k-th repetition and dividing by k shrinks the half-frame
    quantisation error by a factor of k.
    """
    def vertex(L):
        a, b, c = r[L - 1], r[L], r[L + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
        return L + float(np.clip(shift, -0.5, 0.5))

    period = vertex(lag)
    k = int((hi - 1) // period)
    while k >= 2:
        guess = int(round(k * period))
        window = range(max(guess - 1, 1), min(guess + 1, hi) + 1)
        L = max(window, key=lambda i: r[i])
        if 0 < L < hi + 1 and r[L] >= r[L - 1] and r[L] >= r[L + 1] and r[L] > 0:
            return vertex(L) / k
        k -= 1
    return period


def oracle_tempo(clip: AudioClip) -> float:
    """Autocorrelation tempo of a clip (resampled to the model rate first)."""
    from .audio_io import resample
    return autocorr_tempo(onset_envelope(mel_spectrogram(resample(clip, MODEL_SAMPLE_RATE))))


def spectrogram_to_csv(spec: MelSpectrogram) -> str:
    """One row per mel band, frames as columns, 6 significant digits."""
    return "".join(",".join(f"{v:.6g}" for v in row) + "\n" for row in spec.values)
