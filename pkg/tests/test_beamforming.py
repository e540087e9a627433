import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spkloc.beamforming import (BeamformerWeights, Scm, apply_beamformer, beamform, estimate_scm,
                                extract_target, mvdr_weights, reference_vector)
from spkloc.masking import ComplexMask, MaskContext, MaskPair, get_provider, oracle_real_mask
from spkloc.metrics import si_sdr
from spkloc.signal_core import MultichannelWaveform, Spectrogram, StftParams, stft
from spkloc.sources import synth_source
from spkloc.room_sim import render_mixture

from conftest import place_sources, render_pair


def random_spec(rng, c, t, f=257):
    n_fft = 2 * (f - 1)
    p = StftParams(n_fft, n_fft // 2, n_fft) if f != 257 else StftParams()
    return Spectrogram(rng.standard_normal((c, t, f)) + 1j * rng.standard_normal((c, t, f)), p)


def hermitian_psd(phi, tol_h=1e-10, tol_psd=-1e-8):
    herm = np.max(np.abs(phi - phi.conj().transpose(0, 2, 1))) <= tol_h
    eig = np.linalg.eigvalsh(0.5 * (phi + phi.conj().transpose(0, 2, 1)))
    scale = np.maximum(np.abs(eig).max(axis=1, keepdims=True), 1.0)
    return herm and np.all(eig / scale >= tol_psd)


class TestScm:
    def test_single_frame_outer_product(self, rng):
        Y = random_spec(rng, 3, 1)
        phi = estimate_scm(ComplexMask.ones((1, 257)), Y).matrices
        y = Y.bins[:, 0, :]
        assert np.array_equal(phi, np.einsum("cf,df->fcd", y, y.conj()))

    def test_white_noise_is_scaled_identity(self, rng):
        Y = random_spec(rng, 4, 10000, 9)
        phi = estimate_scm(ComplexMask.ones((10000, 9)), Y).matrices
        sigma2 = 2.0
        off = phi - np.einsum("fcc->fc", phi)[:, :, None] * np.eye(4)
        assert np.allclose(np.einsum("fcc->fc", phi).real, sigma2, rtol=0.05)
        assert np.max(np.abs(off)) <= 0.05 * sigma2

    def test_single_channel_weighted_power(self, rng):
        Y = random_spec(rng, 1, 20)
        m = rng.uniform(0, 1, (20, 257))
        phi = estimate_scm(ComplexMask(m, "real"), Y).matrices[:, 0, 0]
        w = m ** 2  # squared mask magnitude, real masks included
        expect = np.sum(w * np.abs(Y.bins[0]) ** 2, axis=0) / w.sum(axis=0)
        assert np.allclose(phi, expect, rtol=1e-12) and np.all(phi.real > 0)

    def test_complex_mask_weight_is_power(self, rng):
        Y = random_spec(rng, 2, 5)
        cm = rng.standard_normal((5, 257)) + 1j * rng.standard_normal((5, 257))
        a = estimate_scm(ComplexMask(cm), Y).matrices
        b = estimate_scm(ComplexMask(np.abs(cm) ** 2 / 4, "complex"), Y, "literal").matrices
        assert np.allclose(a, b)

    def test_empty_mask_bins(self, rng, caplog):
        Y = random_spec(rng, 2, 6)
        m = np.ones((6, 257))
        m[:, [3, 100]] = 0
        with caplog.at_level(logging.WARNING, logger="spkloc.beamforming"):
            scm = estimate_scm(ComplexMask(m, "real"), Y)
        assert scm.degenerate_bins == (3, 100)
        assert np.allclose(scm.matrices[3], 1e-8 * np.eye(2))
        assert "empty mask" in caplog.text

    def test_literal_weighting_not_hermitian(self, rng):
        Y = random_spec(rng, 2, 8)
        cm = ComplexMask(np.exp(1j * rng.uniform(0, 6, (8, 257))))
        phi = estimate_scm(cm, Y, "literal").matrices
        assert np.max(np.abs(phi - phi.conj().transpose(0, 2, 1))) > 1e-3

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), c=st.integers(1, 6), t=st.integers(1, 12), complex_mask=st.booleans())
    def test_hermitian_psd_property(self, seed, c, t, complex_mask):
        rng = np.random.default_rng(seed)
        Y = random_spec(rng, c, t, 5)
        if complex_mask:
            m = ComplexMask(3 * (rng.standard_normal((t, 5)) + 1j * rng.standard_normal((t, 5))))
        else:
            m = ComplexMask(rng.uniform(0, 1, (t, 5)) * (rng.uniform(size=(t, 5)) > 0.3), "real")
        assert hermitian_psd(estimate_scm(m, Y).matrices)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            estimate_scm(ComplexMask.ones((3, 257)), random_spec(rng, 2, 4))


def scm(m):
    return Scm(np.asarray(m, dtype=complex))


class TestMvdr:
    def test_single_channel(self, rng):
        a = scm(rng.uniform(0.1, 2, (257, 1, 1)))
        b = scm(rng.uniform(0.1, 2, (257, 1, 1)))
        w = mvdr_weights(a, b)
        assert np.allclose(w.weights, 1.0, atol=1e-15)
        Y = random_spec(rng, 1, 7)
        assert np.allclose(apply_beamformer(w, Y).bins, Y.bins)

    def test_rank_one_identity_noise(self, rng):
        c, f = 4, 257
        d = np.exp(1j * rng.uniform(0, 2 * np.pi, (f, c)))
        phi_t = scm(np.einsum("fc,fd->fcd", d, d.conj()))
        phi_i = scm(np.broadcast_to(np.eye(c), (f, c, c)))
        w = mvdr_weights(phi_t, phi_i, 0, loading=0.0).weights
        # closed form: w = d d[ref]^* / ||d||^2
        closed = d * d[:, :1].conj() / np.sum(np.abs(d) ** 2, axis=1, keepdims=True)
        assert np.max(np.abs(w - closed)) <= 1e-10
        assert np.allclose(np.einsum("fc,fc->f", w.conj(), d), d[:, 0])

    def test_identical_identity(self):
        eye = scm(np.broadcast_to(np.eye(3), (257, 3, 3)))
        w = mvdr_weights(eye, eye, 2).weights
        assert np.array_equal(w, np.broadcast_to(reference_vector(3, 2) / 3, (257, 3)))

    def test_degenerate(self):
        zero = scm(np.zeros((4, 2, 2)))
        eye = scm(np.broadcast_to(np.eye(2), (4, 2, 2)))
        with pytest.raises(ValueError, match="degenerate SCM pair at bin 0"):
            mvdr_weights(zero, eye)
        w = mvdr_weights(zero, eye, 1, on_degenerate="reference").weights
        assert np.array_equal(w, np.tile([0.0, 1.0], (4, 1)))

    @pytest.mark.parametrize("u", [np.array([1, 1, 0]), np.array([0.5, 0, 0]), 5])
    def test_bad_u(self, u):
        eye = scm(np.broadcast_to(np.eye(3), (2, 3, 3)))
        with pytest.raises((ValueError, IndexError)):
            mvdr_weights(eye, eye, u)

    def test_singular_interference_is_loaded(self, rng):
        d = np.ones((3, 2)) / np.sqrt(2)
        phi_i = scm(np.einsum("fc,fd->fcd", d, d))  # rank one, singular
        phi_t = scm(np.broadcast_to(np.eye(2), (3, 2, 2)))
        w = mvdr_weights(phi_t, phi_i).weights
        assert np.all(np.isfinite(w))

    def test_deterministic(self, two_speaker_scene):
        sc, Y, S, _, _ = two_speaker_scene
        pair = oracle_real_mask(S[0], [S[1]])
        a = mvdr_weights(estimate_scm(pair.target, Y), estimate_scm(pair.interferer, Y)).weights
        b = mvdr_weights(estimate_scm(pair.target, Y), estimate_scm(pair.interferer, Y)).weights
        assert np.array_equal(a, b)

    def test_output_snr_beats_best_channel(self, rng):
        # plane wave + spatially white noise, known covariances
        c, t, f = 4, 400, 33
        d = np.exp(-1j * np.pi * np.outer(np.linspace(0, 1, f), np.arange(c)) * 0.7)
        s = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
        noise = 0.8 * (rng.standard_normal((c, t, f)) + 1j * rng.standard_normal((c, t, f)))
        sig = np.einsum("fc,tf->ctf", d, s)
        phi_t = scm(2 * np.einsum("fc,fd->fcd", d, d.conj()))
        phi_i = scm(np.broadcast_to(2 * 0.64 * np.eye(c), (f, c, c)))
        w = mvdr_weights(phi_t, phi_i)
        p = StftParams(64, 32, 64)
        out_s = apply_beamformer(w, Spectrogram(sig, p)).bins[0]
        out_n = apply_beamformer(w, Spectrogram(noise, p)).bins[0]
        snr_out = np.sum(np.abs(out_s) ** 2) / np.sum(np.abs(out_n) ** 2)
        snr_ch = (np.sum(np.abs(sig) ** 2, axis=(1, 2)) / np.sum(np.abs(noise) ** 2, axis=(1, 2))).max()
        assert snr_out > snr_ch


class TestApply:
    def test_pass_through_and_zero(self, rng):
        Y = random_spec(rng, 3, 5)
        u = np.tile(reference_vector(3, 1), (257, 1))
        assert np.array_equal(apply_beamformer(BeamformerWeights(u, 1), Y).bins[0], Y.bins[1])
        assert not np.any(apply_beamformer(BeamformerWeights(np.zeros((257, 3))), Y).bins)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), a=st.complex_numbers(max_magnitude=100, allow_nan=False))
    def test_linearity(self, seed, a):
        rng = np.random.default_rng(seed)
        Y = random_spec(rng, 2, 3)
        w = BeamformerWeights(rng.standard_normal((257, 2)) + 1j * rng.standard_normal((257, 2)))
        lhs = apply_beamformer(w, Y.with_bins(a * Y.bins)).bins
        assert np.allclose(lhs, a * apply_beamformer(w, Y).bins, atol=1e-9)

    def test_frame_permutation(self, rng):
        Y = random_spec(rng, 3, 12)
        w = BeamformerWeights(rng.standard_normal((257, 3)) + 0j)
        perm = rng.permutation(12)
        out = apply_beamformer(w, Y).bins[0]
        assert np.allclose(apply_beamformer(w, Y.with_bins(Y.bins[:, perm])).bins[0], out[perm])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            apply_beamformer(BeamformerWeights(np.zeros((257, 2))), random_spec(rng, 3, 2))


class TestExtract:
    # oracle masks whose interferer part is exactly zero here; the ratio mask
    # leaves eps / |S| on the interferer side, which weights near-silent bins
    @pytest.mark.parametrize("provider", ["oracle-complex", "oracle-binary"])
    def test_single_source_anechoic(self, provider):
        sc = place_sources([70.0])
        src = synth_source("harmonic-complex", "low", 2.0, 5)
        mix, imgs = render_mixture(sc, [src])
        Y = stft(mix)
        pair = get_provider(provider)(Y, MaskContext(0, [stft(imgs[0])], 0, sc))
        out = extract_target(pair, Y)
        assert si_sdr(out.samples[0], imgs[0].samples[0]) >= 40.0

    def test_two_speakers_90_degrees(self):
        sc, mix, imgs = render_pair((45.0, 135.0), seed=8)
        Y, S = stft(mix), [stft(w) for w in imgs]
        pair = oracle_real_mask(S[0], [S[1]])
        ref = imgs[0].samples[0]
        gain = si_sdr(extract_target(pair, Y).samples[0], ref) - si_sdr(mix.samples[0], ref)
        assert gain >= 8.0

    def test_zero_mixture(self):
        Y = stft(MultichannelWaveform(np.zeros((4, 1600))))
        pair = MaskPair(ComplexMask.ones(Y.shape_tf), ComplexMask.ones(Y.shape_tf))
        assert not np.any(extract_target(pair, Y).samples)

    def test_pass_through_masks_give_scaled_reference(self, two_speaker_scene):
        _, Y, _, mix, _ = two_speaker_scene
        ones = ComplexMask.ones(Y.shape_tf)
        out = extract_target(MaskPair(ones, ones), Y)
        assert np.allclose(out.samples[0], mix.samples[0] / 4, atol=1e-12)
