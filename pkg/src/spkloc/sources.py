"""Synthetic speech stand-ins.

Sources carry a fundamental frequency drawn from a class range (``low`` or
``high``, a rough male/female proxy), a class-dependent spectral envelope, and
syllable-rate on/off gating so that mixtures are sparse in time-frequency.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import chirp as _chirp

from .signal_core import DEFAULT_SAMPLE_RATE, MultichannelWaveform

F0_RANGES = {"low": (90.0, 150.0), "high": (180.0, 260.0)}
# formant centers (Hz) per class
_FORMANTS = {"low": (500.0, 1400.0, 2400.0), "high": (650.0, 1800.0, 2900.0)}
KINDS = ("harmonic-complex", "modulated-noise", "chirp")


@dataclass(frozen=True)
class SourceSpec:
    kind: str = "harmonic-complex"
    f0_class: str = "low"
    duration: float = 4.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def source_f0(f0_class: str, rng_seed: int) -> float:
    """Fundamental frequency used by :func:`synth_source` for this seed."""
    if f0_class not in F0_RANGES:
        raise ValueError(f"f0_class must be one of {sorted(F0_RANGES)}, got {f0_class!r}")
    rng = np.random.default_rng([rng_seed, 0])
    return float(rng.uniform(*F0_RANGES[f0_class]))


def _envelope(freqs, f0_class):
    tilt = 1.0 / (1.0 + freqs / 300.0)
    formants = sum(np.exp(-0.5 * ((freqs - fc) / 150.0) ** 2) for fc in _FORMANTS[f0_class])
    return tilt * (0.3 + formants)


def _syllable_gate(n, fs, rng):
    # alternating voiced / silent segments, 80-250 ms each, 10 ms ramps
    gate = np.zeros(n)
    pos, on = 0, bool(rng.integers(2))
    while pos < n:
        seg = int(rng.uniform(0.08, 0.25) * fs)
        if on:
            gate[pos:pos + seg] = 1.0
        pos += seg
        on = not on
    ramp = np.hanning(int(0.02 * fs) + 1)
    gate = np.convolve(gate, ramp / ramp.sum(), mode="same")
    return gate


def synth_source(kind: str, f0_class: str, duration: float, rng_seed: int,
                 sample_rate: int = DEFAULT_SAMPLE_RATE) -> MultichannelWaveform:
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    f0 = source_f0(f0_class, rng_seed)
    rng = np.random.default_rng([rng_seed, 1])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    nyq = sample_rate / 2

    if kind == "harmonic-complex":
        k = np.arange(1, int(0.95 * nyq / f0) + 1)
        amps = _envelope(k * f0, f0_class) / k
        phases = rng.uniform(0, 2 * np.pi, size=k.size)
        x = (amps[:, None] * np.cos(2 * np.pi * f0 * k[:, None] * t + phases[:, None])).sum(axis=0)
    elif kind == "modulated-noise":
        spec = np.fft.rfft(rng.standard_normal(n))
        spec *= _envelope(np.fft.rfftfreq(n, 1 / sample_rate), f0_class)
        x = np.fft.irfft(spec, n) * (1.0 + 0.8 * np.cos(2 * np.pi * f0 * t))
    else:
        f1 = min(10 * f0, 0.45 * sample_rate)
        x = _chirp(t, f0=f0, t1=duration, f1=f1, method="logarithmic", phi=rng.uniform(0, 360))
    x = x * _syllable_gate(n, sample_rate, rng)
    rms = np.sqrt(np.mean(x ** 2))
    if rms == 0:
        raise ValueError("generated source is silent; duration too short")
    return MultichannelWaveform(x / rms, sample_rate)


def synth_from_spec(spec: SourceSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> MultichannelWaveform:
    return synth_source(spec.kind, spec.f0_class, spec.duration, spec.seed, sample_rate)
