"""Mask-weighted spatial covariance matrices and the trace-normalized MVDR beamformer.

Shapes: SCM (F, C, C), weights (F, C), mixture bins (C, T, F).

The beamformer is the reference-channel form

    w_f = (Phi_inf^-1 Phi_tgt) / tr(Phi_inf^-1 Phi_tgt) u,    B_tf = w_f^H y_tf

which for a rank-one target SCM reduces to the distortionless MVDR solution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .masking import EPS_DIV, ComplexMask, MaskPair
from .signal_core import MultichannelWaveform, Spectrogram, istft

logger = logging.getLogger(__name__)

DIAG_LOADING = 1e-6

__all__ = [
    "Scm",
    "BeamformerWeights",
    "estimate_scm",
    "mvdr_weights",
    "apply_beamformer",
    "beamform",
    "extract_target",
    "reference_vector",
]


@dataclass(frozen=True, eq=False)
class Scm:
    matrices: np.ndarray
    # frequency indices whose mask weight summed to zero
    degenerate_bins: tuple[int, ...] = field(default=())

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[-1]


@dataclass(frozen=True, eq=False)
class BeamformerWeights:
    weights: np.ndarray
    reference_mic: int = 0


def _scm_weights(mask: ComplexMask, weighting: str) -> np.ndarray:
    if weighting == "literal":
        return mask.values
    if weighting != "hermitian":
        raise ValueError(f"unknown SCM weighting {weighting!r}")
    return np.abs(mask.values) ** 2


def estimate_scm(mask: ComplexMask, mixture: Spectrogram, weighting: str = "hermitian") -> Scm:
    """Phi_f = sum_t w_tf y_tf y_tf^H / sum_t w_tf.

    ``weighting="hermitian"`` uses w = |cm|^2, so every slice is Hermitian
    PSD. ``"literal"`` weights by the raw complex mask value.
    """
    if mask.shape != mixture.shape_tf:
        raise ValueError(f"mask shape {mask.shape} does not match mixture {mixture.shape_tf}")
    w = _scm_weights(mask, weighting)  # (T, F)
    y = mixture.bins  # (C, T, F)
    phi = np.einsum("tf,ctf,dtf->fcd", w, y, y.conj(), optimize=True)
    norm = w.sum(axis=0)  # (F,)
    dead = np.abs(norm) < EPS_DIV
    c = y.shape[0]
    phi[~dead] /= norm[~dead, None, None]
    if dead.any():
        phi[dead] = EPS_DIV * np.eye(c)
        logger.warning("empty mask at %d frequency bins; SCM set to eps*I there", int(dead.sum()))
    if weighting == "hermitian":
        phi = 0.5 * (phi + phi.conj().transpose(0, 2, 1))
    return Scm(phi, tuple(int(i) for i in np.flatnonzero(dead)))


def reference_vector(n_channels: int, reference_mic: int = 0) -> np.ndarray:
    u = np.zeros(n_channels)
    u[reference_mic] = 1.0
    return u


def _load(phi: np.ndarray, loading: float) -> np.ndarray:
    c = phi.shape[-1]
    load = np.maximum(loading * np.real(np.trace(phi, axis1=1, axis2=2)) / c, 1e-300)
    return phi + load[:, None, None] * np.eye(c)


def mvdr_weights(phi_tgt: Scm, phi_inf: Scm, u: np.ndarray | int = 0,
                 loading: float = DIAG_LOADING, on_degenerate: str = "raise") -> BeamformerWeights:
    """Trace-normalized MVDR weights per frequency.

    ``Phi_inf`` is loaded with ``loading * tr(Phi_inf) / C`` on the diagonal
    before the solve. Bins where both SCMs are identical use the exact ratio
    I, so w = u / C there, and a single channel gives w = 1. Bins where the
    normalizing trace vanishes raise, or with ``on_degenerate="reference"``
    pass the reference channel through.
    """
    a, b = phi_tgt.matrices, phi_inf.matrices
    if a.shape != b.shape:
        raise ValueError(f"SCM shapes differ: {a.shape} vs {b.shape}")
    c = a.shape[-1]
    if np.ndim(u) == 0:
        u = reference_vector(c, int(u))
    u = np.asarray(u, dtype=float)
    if u.shape != (c,) or np.count_nonzero(u) != 1 or u.max() != 1:
        raise ValueError("u must be a one-hot vector over channels")
    ref = int(np.argmax(u))
    if c == 1:
        # the trace normalization makes w = 1 identically
        return BeamformerWeights(np.ones((a.shape[0], 1), dtype=complex), ref)
    ratio = np.linalg.solve(_load(b, loading), a)  # LU with partial pivoting
    # identical SCMs: the unloaded ratio is exactly I, keep it so
    same = np.all(a == b, axis=(1, 2))
    ratio[same] = np.eye(c)
    tr = np.trace(ratio, axis1=1, axis2=2)
    bad = np.abs(tr) < EPS_DIV
    if bad.any() and on_degenerate == "raise":
        raise ValueError(f"degenerate SCM pair at bin {int(np.flatnonzero(bad)[0])}")
    w = ratio[:, :, ref] / np.where(bad, 1.0, tr)[:, None]
    if bad.any():
        logger.warning("degenerate SCM pair at %d bins; passing reference channel", int(bad.sum()))
        w[bad] = u
    if not np.all(np.isfinite(w)):
        raise ValueError("beamformer weights are not finite")
    return BeamformerWeights(w, ref)


def apply_beamformer(w: BeamformerWeights, mixture: Spectrogram) -> Spectrogram:
    weights = w.weights
    if weights.shape != (mixture.n_bins, mixture.n_channels):
        raise ValueError(f"weights {weights.shape} do not match mixture (F={mixture.n_bins}, C={mixture.n_channels})")
    out = np.einsum("fc,ctf->tf", weights.conj(), mixture.bins)
    return mixture.with_bins(out[None])


def beamform(mask_pair: MaskPair, mixture: Spectrogram, u: np.ndarray | int = 0,
             weighting: str = "hermitian") -> Spectrogram:
    """Beam spectrum B_tf for a target/interferer mask pair."""
    phi_t = estimate_scm(mask_pair.target, mixture, weighting)
    phi_i = estimate_scm(mask_pair.interferer, mixture, weighting)
    return apply_beamformer(mvdr_weights(phi_t, phi_i, u, on_degenerate="reference"), mixture)


def extract_target(mask_pair: MaskPair, mixture: Spectrogram, u: np.ndarray | int = 0,
                   weighting: str = "hermitian") -> MultichannelWaveform:
    """Masks -> SCMs -> MVDR -> beam spectrum -> iSTFT, single-channel output."""
    return istft(beamform(mask_pair, mixture, u, weighting))
