"""Evaluation metrics and composite loss values (no gradients)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .doa import DoaCoding, angular_distance, argmax_angle, doa_mse

SDR_CAP = 100.0
EPS_LOG = 1e-8

__all__ = [
    "LossWeights",
    "si_sdr",
    "sdr",
    "cross_entropy",
    "localizer_loss",
    "l_spex_loss",
    "doa_abs_error",
]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 10.0
    gamma: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")


def _pair(estimate, reference):
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64).reshape(-1)
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: estimate {est.size} vs reference {ref.size}")
    ref_energy = ref @ ref
    if ref_energy == 0:
        raise ValueError("reference signal is all zero")
    return est, ref, ref_energy


def _ratio_db(num: float, den: float) -> float:
    if den <= num * 10 ** (-SDR_CAP / 10):
        return SDR_CAP
    return float(10 * np.log10(num / den))


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB."""
    est, ref, ref_energy = _pair(estimate, reference)
    target = (est @ ref / ref_energy) * ref
    residual = target - est
    num = target @ target
    if num == 0:
        return -SDR_CAP
    return _ratio_db(num, residual @ residual)


def sdr(estimate, reference) -> float:
    """Plain signal-to-error ratio ||s||^2 / ||s - s_hat||^2 in dB, capped at +100 dB."""
    est, ref, ref_energy = _pair(estimate, reference)
    err = ref - est
    return _ratio_db(ref_energy, err @ err)


def cross_entropy(predicted, label) -> float:
    p_hat = np.asarray(predicted, dtype=np.float64)
    p = np.asarray(label, dtype=np.float64)
    if p_hat.shape != p.shape:
        raise ValueError(f"length mismatch: {p_hat.shape} vs {p.shape}")
    for name, v in (("predicted", p_hat), ("label", p)):
        if np.any(v < 0) or abs(v.sum() - 1) > 1e-6:
            raise ValueError(f"{name} is not a probability vector")
    # -log(1 + eps) < 0 on an exact match; clamp so the loss stays nonnegative
    return max(0.0, float(-np.sum(p * np.log(p_hat + EPS_LOG))))


def localizer_loss(beam_est, target_ref, p_hat, p, d_hat: DoaCoding, d: DoaCoding,
                   w: LossWeights = LossWeights()) -> tuple[float, dict]:
    """-SI-SDR + alpha * CE + beta * MSE, plus each component for logging."""
    parts = {
        "si_sdr": -si_sdr(beam_est, target_ref),
        "ce": cross_entropy(p_hat, p),
        "mse": doa_mse(d_hat, d),
    }
    total = parts["si_sdr"] + w.alpha * parts["ce"] + w.beta * parts["mse"]
    return total, parts


def l_spex_loss(extracted, target_ref, q_hat, p, gamma: float = 0.5) -> tuple[float, dict]:
    """-SI-SDR + gamma * CE, plus each component."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    parts = {"si_sdr": -si_sdr(extracted, target_ref), "ce": cross_entropy(q_hat, p)}
    return parts["si_sdr"] + gamma * parts["ce"], parts


def doa_abs_error(estimate: DoaCoding, truth_theta: float) -> float:
    return angular_distance(argmax_angle(estimate), truth_theta)
