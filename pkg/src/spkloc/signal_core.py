"""Time-domain buffers, STFT analysis/synthesis and WAV I/O.

Shape conventions used throughout the package:

    waveform samples: (C, N)
    spectrogram bins: (C, T, F), F = n_fft // 2 + 1

Frames are centered: frame ``t`` is centered on sample ``t * hop`` of the
original signal, with reflection padding of ``n_fft // 2`` on both sides.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "MultichannelWaveform",
    "StftParams",
    "Spectrogram",
    "WavFormatError",
    "stft",
    "istft",
    "read_wav",
    "write_wav",
    "nola_margin",
]

DEFAULT_SAMPLE_RATE = 8000

# Windows with a zero last sample make the sum of squares vanish at hop = win.
_NOLA_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MultichannelWaveform:
    """Real C x N sample matrix with a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"waveform must be (C, N) with C, N >= 1, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, c: int) -> "MultichannelWaveform":
        return MultichannelWaveform(self.samples[c], self.sample_rate)

    def scaled(self, a: float) -> "MultichannelWaveform":
        return MultichannelWaveform(a * self.samples, self.sample_rate)


def _window(name: str, length: int) -> np.ndarray:
    n = np.arange(length)
    if name == "hann":
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / length)
    if name == "sqrt-hann":
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / length))
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * n / length)
    if name in ("rect", "boxcar"):
        return np.ones(length)
    raise ValueError(f"unknown window {name!r}")


@dataclass(frozen=True)
class StftParams:
    """Frame parameters in samples. Defaults: 25 ms window, 10 ms hop at 8 kHz."""

    win_length: int = 200
    hop: int = 80
    n_fft: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.win_length <= self.n_fft):
            raise ValueError(
                f"need 0 < hop <= win_length <= n_fft, got hop={self.hop}, "
                f"win_length={self.win_length}, n_fft={self.n_fft}"
            )
        _window(self.window, 1)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def analysis_window(self) -> np.ndarray:
        """Window of length ``n_fft``: the ``win_length`` taps centered, zeros elsewhere."""
        w = np.zeros(self.n_fft)
        start = (self.n_fft - self.win_length) // 2
        w[start:start + self.win_length] = _window(self.window, self.win_length)
        return w

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    def bin_frequencies(self, sample_rate: int) -> np.ndarray:
        return np.arange(self.n_bins) * sample_rate / self.n_fft

    def to_dict(self) -> dict:
        return {"win_length": self.win_length, "hop": self.hop,
                "n_fft": self.n_fft, "window": self.window}


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """One-sided complex STFT, bins shaped (C, T, F)."""

    bins: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    length: int | None = None

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3:
            raise ValueError(f"spectrogram bins must be (C, T, F), got shape {b.shape}")
        if b.shape[2] != self.params.n_bins:
            raise ValueError(f"expected F={self.params.n_bins} bins, got {b.shape[2]}")
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)

    @property
    def n_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[2]

    @property
    def shape_tf(self) -> tuple[int, int]:
        return self.bins.shape[1:]

    def channel(self, c: int) -> "Spectrogram":
        return self.with_bins(self.bins[c:c + 1])

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        return Spectrogram(bins, self.params, self.sample_rate, self.length)


def stft(x: MultichannelWaveform, p: StftParams | None = None) -> Spectrogram:
    p = p or StftParams()
    if x.n_samples < p.win_length:
        raise ValueError(
            f"signal too short: {x.n_samples} samples < window of {p.win_length}"
        )
    pad = p.n_fft // 2
    padded = np.pad(x.samples, ((0, 0), (pad, pad)), mode="reflect")
    n_frames = p.n_frames(x.n_samples)
    frames = sliding_window_view(padded, p.n_fft, axis=-1)[:, ::p.hop][:, :n_frames]
    bins = np.fft.rfft(frames * p.analysis_window(), axis=-1)
    return Spectrogram(bins, p, x.sample_rate, x.n_samples)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    # frames: (C, T, n_fft)
    c, t, n = frames.shape
    out = np.zeros((c, n + hop * (t - 1)))
    for i in range(t):
        out[:, i * hop:i * hop + n] += frames[:, i]
    return out


def _window_square_sum(p: StftParams, n_frames: int) -> np.ndarray:
    w2 = p.analysis_window() ** 2
    return _overlap_add(np.broadcast_to(w2, (1, n_frames, p.n_fft)), p.hop)[0]


def nola_margin(p: StftParams, n_frames: int = 64) -> float:
    """Min/max ratio of the squared-window overlap sum in the interior.

    Synthesis divides the overlap-added frames by this sum, which makes the
    analysis/synthesis pair constant-overlap-add exactly where the sum is
    nonzero. A margin of 0 means some samples cannot be reconstructed.
    """
    denom = _window_square_sum(p, n_frames)
    interior = denom[p.n_fft:len(denom) - p.n_fft]
    return float(interior.min() / interior.max())


def istft(S: Spectrogram, length: int | None = None) -> MultichannelWaveform:
    p = S.params
    length = length if length is not None else S.length
    frames = np.fft.irfft(S.bins, n=p.n_fft, axis=-1) * p.analysis_window()
    out = _overlap_add(frames, p.hop)
    denom = _window_square_sum(p, S.n_frames)
    pad = p.n_fft // 2
    if length is None:
        length = (S.n_frames - 1) * p.hop
    stop = pad + length
    if stop > out.shape[1]:
        out = np.pad(out, ((0, 0), (0, stop - out.shape[1])))
        denom = np.pad(denom, (0, stop - denom.shape[0]))
    region = denom[pad:stop]
    if region.min() <= _NOLA_TOL * max(region.max(), _NOLA_TOL):
        raise ValueError(
            "reconstruction not guaranteed: window-square overlap sum vanishes for "
            f"window={p.window!r}, win_length={p.win_length}, hop={p.hop}"
        )
    return MultichannelWaveform(out[:, pad:stop] / region, S.sample_rate)


class WavFormatError(ValueError):
    """Malformed, truncated or unsupported WAV file."""


def read_wav(path) -> MultichannelWaveform:
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.io.wavfile.WavFileWarning)
            rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, scipy.io.wavfile.WavFileWarning, EOFError, OSError) as e:
        raise WavFormatError(f"{path}: cannot read WAV ({e})") from e
    except Exception as e:  # struct.error on short headers
        raise WavFormatError(f"{path}: malformed WAV header ({e})") from e
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}; need PCM16 or float32")
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise WavFormatError(f"{path}: no samples")
    return MultichannelWaveform(x.T, rate)


def write_wav(w: MultichannelWaveform, path, fmt: str = "float32") -> None:
    """Write ``w`` as PCM16 (``fmt="pcm16"``) or 32-bit IEEE float."""
    if not 1 <= w.n_channels <= 8:
        raise ValueError(f"WAV output supports 1-8 channels, got {w.n_channels}")
    if fmt == "float32":
        data = w.samples.T.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(w.samples.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    scipy.io.wavfile.write(Path(path), w.sample_rate, data)
