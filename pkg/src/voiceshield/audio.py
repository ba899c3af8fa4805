"""Deterministic DSP primitives: WAV I/O, STFT/iSTFT, pitch and band energy.

Everything here is a pure function of its inputs. Waveforms are float64
arrays in [-1, 1] carried together with their sample rate.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    """Raised when a WAV file does not match the corpus format."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass(frozen=True)
class StftParams:
    window_len: int = 1024
    hop: int = 512
    window: str = "hann"

    def __post_init__(self):
        n = self.window_len
        if n <= 0 or n & (n - 1):
            raise ValueError(f"window_len must be a power of two, got {n}")
        if not 0 < self.hop <= n:
            raise ValueError(f"hop must be in (0, window_len], got {self.hop}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        if not self.is_cola():
            raise ValueError(
                f"{self.window} window with hop {self.hop} does not satisfy "
                "constant overlap-add")

    def taper(self) -> np.ndarray:
        return _WINDOWS[self.window](self.window_len)

    def is_cola(self, rtol: float = 1e-10) -> bool:
        w = self.taper()
        acc = np.zeros(self.hop)
        for start in range(0, self.window_len, self.hop):
            chunk = w[start:start + self.hop]
            acc[:chunk.size] += chunk
        return bool(np.allclose(acc, acc[0], rtol=rtol, atol=0.0) and acc[0] > 0)


def _hann(n):
    # periodic Hann: sums to a constant at hop n/2, n/4, ...
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _hamming(n):
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _boxcar(n):
    return np.ones(n)


_WINDOWS = {"hann": _hann, "hamming": _hamming, "boxcar": _boxcar}


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT grid of shape (F, T) plus the context needed to invert it."""

    bins: np.ndarray
    sample_rate: int
    params: StftParams = field(default_factory=StftParams)
    n_samples: int = 0

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.params.window_len

    @property
    def frame_seconds(self) -> float:
        return self.params.hop / self.sample_rate

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def frequencies(self) -> np.ndarray:
        return np.arange(self.bins.shape[0]) * self.bin_hz

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

def read_wav(path, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM WAV file.

    Samples are scaled by 1/32768, so full-scale 32767 maps to 0.99997.

    Raises
    ------
    FileNotFoundError
        If `path` does not exist.
    AudioFormatError
        On anything other than mono 16-bit PCM at `sample_rate`.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != sample_rate:
        raise AudioFormatError(f"{path}: expected {sample_rate} Hz, got {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path, waveform: Waveform) -> None:
    """Write `waveform` as mono 16-bit PCM; samples are rounded to the nearest step."""
    samples = waveform.samples
    if samples.size and np.max(np.abs(samples)) > 1.0:
        raise ValueError("samples must lie in [-1, 1] before writing")
    path = Path(path)
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(waveform.sample_rate)
            wf.writeframes(to_pcm16(samples).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write WAV to {path}: {exc}") from exc


def normalize_duration(waveform: Waveform, target_seconds: float = 3.0) -> Waveform:
    """Cut or zero-pad to exactly ``round(target_seconds * sample_rate)`` samples.

    Long inputs keep their first samples (the onset); short ones are padded
    at the end.
    """
    if target_seconds <= 0:
        raise ValueError("target_seconds must be positive")
    if len(waveform) == 0:
        raise ValueError("cannot normalize an empty waveform")
    n = int(round(target_seconds * waveform.sample_rate))
    x = waveform.samples
    if x.size == n:
        return waveform
    if x.size > n:
        return Waveform(x[:n], waveform.sample_rate)
    return Waveform(np.concatenate([x, np.zeros(n - x.size)]), waveform.sample_rate)


# --------------------------------------------------------------------------
# STFT
# --------------------------------------------------------------------------

def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Strided (n_frames, frame_len) view; no centering, trailing partial frame dropped."""
    n_frames = 1 + (x.shape[0] - frame_len) // hop
    return np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, frame_len),
        strides=(x.strides[0] * hop, x.strides[0]), writeable=False)


def stft(waveform: Waveform, params: StftParams | None = None) -> Spectrogram:
    """Short-time Fourier transform without centering.

    Returns F = window_len/2 + 1 bins by T = 1 + (len - window_len) // hop
    frames.
    """
    params = params or StftParams()
    x = waveform.samples
    if x.shape[0] < params.window_len:
        raise ValueError(
            f"waveform of {x.shape[0]} samples is shorter than one window "
            f"({params.window_len})")
    frames = frame_signal(np.ascontiguousarray(x), params.window_len, params.hop)
    bins = np.fft.rfft(frames * params.taper(), axis=1).T
    return Spectrogram(bins, waveform.sample_rate, params, x.shape[0])


def istft(spec: Spectrogram, params: StftParams | None = None) -> Waveform:
    """Least-squares overlap-add inverse of :func:`stft`.

    Samples that no analysis window touched (or touched only at a zero of
    the taper) come back as 0; everything in the fully overlapped interior
    is reconstructed exactly up to rounding.
    """
    params = params or spec.params
    if params != spec.params:
        raise ValueError("istft params differ from those used at analysis")
    n_bins, n_frames = spec.bins.shape
    if n_bins != params.window_len // 2 + 1:
        raise ValueError(
            f"spectrogram has {n_bins} bins, expected {params.window_len // 2 + 1}")
    w = params.taper()
    length = max(spec.n_samples, params.window_len + (n_frames - 1) * params.hop)
    frames = np.fft.irfft(spec.bins.T, n=params.window_len, axis=1) * w
    out = np.zeros(length)
    norm = np.zeros(length)
    w2 = w * w
    for t in range(n_frames):
        start = t * params.hop
        out[start:start + params.window_len] += frames[t]
        norm[start:start + params.window_len] += w2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return Waveform(out[:spec.n_samples or length], spec.sample_rate)


def interior_slice(n_samples: int, params: StftParams) -> slice:
    """Sample range covered by at least two full overlapping windows."""
    n_frames = 1 + (n_samples - params.window_len) // params.hop
    end = params.window_len + (n_frames - 1) * params.hop
    return slice(params.window_len, max(params.window_len, end - params.window_len))


def band_bins(freqs: np.ndarray, band: tuple[float, float]) -> np.ndarray:
    lo, hi = band
    idx = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if idx.size == 0:
        raise ValueError(f"band [{lo}, {hi}] Hz contains no frequency bins")
    return idx


def band_energy_series(spec: Spectrogram, band: tuple[float, float]) -> np.ndarray:
    """Per-frame sum of |X[f, t]| over bins whose center lies in `band` (inclusive)."""
    nyquist = spec.sample_rate / 2
    if band[0] > band[1] or band[0] < 0 or band[1] > nyquist:
        raise ValueError(f"band {band} outside [0, {nyquist}] Hz")
    idx = band_bins(spec.frequencies(), band)
    return np.abs(spec.bins[idx, :]).sum(axis=0)


# --------------------------------------------------------------------------
# Pitch
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PitchTrack:
    f0: float
    track: np.ndarray      # per-frame estimate, NaN on unvoiced frames
    voiced: np.ndarray     # boolean mask
    no_pitch: bool

    @property
    def voiced_f0(self) -> np.ndarray:
        return self.track[self.voiced]

    def variance(self) -> float:
        v = self.voiced_f0
        return float(np.var(v)) if v.size else 0.0


def estimate_pitch(waveform: Waveform, search_band: tuple[float, float] = (50.0, 500.0),
                   frame_len: int = 1024, hop: int = 256,
                   voicing_threshold: float = 0.3,
                   silence_rms: float = 1e-4) -> PitchTrack:
    """Frame-wise autocorrelation pitch tracker.

    The lag is picked on the biased, energy-normalized autocorrelation
    (whose taper suppresses sub-octave picks) and refined by a parabola
    through the unbiased autocorrelation around that peak. Frames whose
    normalized peak is below `voicing_threshold`, or whose RMS is below
    `silence_rms`, are unvoiced and excluded from the mean.
    """
    sr = waveform.sample_rate
    fmin, fmax = search_band
    if not 0 < fmin < fmax < sr / 2:
        raise ValueError(f"search band {search_band} must lie in (0, {sr / 2})")
    x = waveform.samples
    if x.shape[0] < frame_len:
        x = np.concatenate([x, np.zeros(frame_len - x.shape[0])])
    frames = frame_signal(np.ascontiguousarray(x), frame_len, hop)
    frames = frames - frames.mean(axis=1, keepdims=True)

    lag_min = max(2, int(np.floor(sr / fmax)))
    lag_max = min(frame_len - 2, int(np.ceil(sr / fmin)))

    nfft = 1 << int(np.ceil(np.log2(2 * frame_len)))
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(spec * spec.conj(), n=nfft, axis=1)[:, :frame_len]
    energy = acf[:, 0]
    rms = np.sqrt(np.maximum(energy, 0.0) / frame_len)
    live = rms > silence_rms

    track = np.full(frames.shape[0], np.nan)
    voiced = np.zeros(frames.shape[0], dtype=bool)
    if np.any(live):
        biased = acf[live] / energy[live, None]
        seg = biased[:, lag_min:lag_max + 1]
        peak = np.argmax(seg, axis=1) + lag_min
        peak_val = biased[np.arange(biased.shape[0]), peak]
        unbiased = acf[live] / (frame_len - np.arange(frame_len))[None, :]
        rows = np.arange(unbiased.shape[0])
        left = unbiased[rows, np.maximum(peak - 1, 0)]
        mid = unbiased[rows, peak]
        right = unbiased[rows, np.minimum(peak + 1, frame_len - 1)]
        denom = left - 2.0 * mid + right
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = np.where(np.abs(denom) > 1e-12, 0.5 * (left - right) / denom, 0.0)
        shift = np.clip(shift, -0.5, 0.5)
        f0 = sr / (peak + shift)
        ok = (peak_val >= voicing_threshold) & (f0 >= fmin) & (f0 <= fmax)
        live_idx = np.flatnonzero(live)
        track[live_idx[ok]] = f0[ok]
        voiced[live_idx[ok]] = True

    if not voiced.any():
        return PitchTrack(0.0, track, voiced, True)
    return PitchTrack(float(np.mean(track[voiced])), track, voiced, False)
