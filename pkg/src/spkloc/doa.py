"""Azimuth likelihood coding and steered-response DOA estimation.

Codings are 181-dim vectors indexed by integer azimuth in degrees, 0..180.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masking import ComplexMask
from .room_sim import SOUND_SPEED, ArrayGeometry
from .signal_core import Spectrogram

N_AZIMUTHS = 181
DEFAULT_SIGMA = 6.0
AZIMUTHS = np.arange(N_AZIMUTHS, dtype=float)

__all__ = [
    "DoaCoding",
    "SteeringTable",
    "angular_distance",
    "gaussian_coding",
    "argmax_angle",
    "estimate_doa",
    "steered_response",
    "doa_mse",
]


@dataclass(frozen=True, eq=False)
class DoaCoding:
    likelihoods: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.likelihoods, dtype=np.float64)
        if d.ndim != 1 or d.size == 0:
            raise ValueError(f"coding must be a nonempty vector, got shape {d.shape}")
        if np.any(d < 0) or np.any(d > 1):
            raise ValueError("coding entries must lie in [0, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "likelihoods", d)

    def __len__(self):
        return self.likelihoods.size


def angular_distance(a, b):
    """|a - b| in degrees for azimuths in the frontal half-plane [0, 180]."""
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any((a_arr < 0) | (a_arr > 180)) or np.any((b_arr < 0) | (b_arr > 180)):
        raise ValueError(f"azimuths must lie in [0, 180], got {a}, {b}")
    d = np.abs(a_arr - b_arr)
    return float(d) if d.ndim == 0 else d


def gaussian_coding(theta: float | None, sigma: float = DEFAULT_SIGMA) -> DoaCoding:
    """exp(-d(theta_i, theta)^2 / sigma^2) over the grid, or zeros if ``theta`` is None."""
    if theta is None:
        return DoaCoding(np.zeros(N_AZIMUTHS))
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = angular_distance(AZIMUTHS, theta)
    return DoaCoding(np.exp(-d ** 2 / sigma ** 2))


def argmax_angle(coding: DoaCoding) -> float:
    """Grid angle of the maximum; ties go to the smaller angle (first index)."""
    d = coding.likelihoods
    if not np.any(d > 0):
        raise ValueError("no DOA evidence: coding is all zero")
    return float(np.argmax(d))


@dataclass(frozen=True, eq=False)
class SteeringTable:
    """Expected far-field phase per (azimuth, bin, channel), relative to the array center.

    A plane wave from azimuth theta reaches mic c early by
    ``offset_c * cos(theta) / v`` seconds, so its STFT phase leads by
    ``2 pi f_hz offset_c cos(theta) / v``.
    """

    phases: np.ndarray  # (M, F, C)
    azimuths: np.ndarray

    @classmethod
    def build(cls, geometry: ArrayGeometry, n_fft: int = 512, sample_rate: int = 8000,
              azimuths=AZIMUTHS, sound_speed: float = SOUND_SPEED) -> "SteeringTable":
        f_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
        offsets = geometry.axis_offsets()
        cos = np.cos(np.deg2rad(np.asarray(azimuths, dtype=float)))
        phases = 2 * np.pi * f_hz[None, :, None] * offsets[None, None, :] * cos[:, None, None] / sound_speed
        return cls(phases, np.asarray(azimuths, dtype=float))

    def vectors(self) -> np.ndarray:
        return np.exp(1j * self.phases)


def steered_response(mask: ComplexMask, mixture: Spectrogram, table: SteeringTable) -> np.ndarray:
    """sum_{t,f} |sum_c m_tf Y_tfc exp(-j phase)|^2 for every candidate azimuth."""
    if mixture.n_channels < 2:
        raise ValueError("DOA requires >= 2 channels")
    if mask.shape != mixture.shape_tf:
        raise ValueError(f"mask shape {mask.shape} does not match mixture {mixture.shape_tf}")
    if table.phases.shape[1:] != (mixture.n_bins, mixture.n_channels):
        raise ValueError("steering table does not match the mixture's bins/channels")
    w = np.abs(mask.values) ** 2
    y = mixture.bins
    # |m a^H y|^2 summed over t == a^H R_f a with R_f = sum_t |m|^2 y y^H
    r = np.einsum("tf,ctf,dtf->fcd", w, y, y.conj(), optimize=True)
    a = table.vectors()  # (M, F, C)
    resp = np.einsum("mfc,fcd,mfd->m", a.conj(), r, a, optimize=True)
    return resp.real


def estimate_doa(mask: ComplexMask, mixture: Spectrogram, table: SteeringTable) -> DoaCoding:
    """Steered-response power rescaled to [0, 1] (min-max)."""
    resp = steered_response(mask, mixture, table)
    lo, hi = resp.min(), resp.max()
    if hi - lo <= 1e-300 * max(abs(hi), 1.0):
        return DoaCoding(np.zeros_like(resp))
    return DoaCoding(np.clip((resp - lo) / (hi - lo), 0.0, 1.0))


def doa_mse(estimate: DoaCoding, truth: DoaCoding, squared: bool = True) -> float:
    """sum_i (d_hat_i - d_i)^2; ``squared=False`` gives sum_i |d_hat_i - d_i|."""
    a, b = estimate.likelihoods, truth.likelihoods
    if a.shape != b.shape:
        raise ValueError(f"coding lengths differ: {a.size} vs {b.size}")
    diff = a - b
    return float(np.sum(diff ** 2) if squared else np.sum(np.abs(diff)))
