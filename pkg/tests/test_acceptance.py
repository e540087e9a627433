"""Acceptance criteria, one test each; every test prints a PASS/FAIL line with its measurements."""
import time
from dataclasses import replace

import numpy as np
import pytest

from spkloc.beamforming import Scm, beamform, estimate_scm, mvdr_weights
from spkloc.cli import main
from spkloc.doa import SteeringTable, argmax_angle, estimate_doa, gaussian_coding
from spkloc.masking import EPS_DIV, MASK_CEILING, ComplexMask, MaskContext, MaskPair, get_provider, \
    oracle_complex_mask
from spkloc.metrics import SDR_CAP, si_sdr
from spkloc.pipeline import PipelineConfig, generate_batch, load_manifest, load_scenario, run_batch
from spkloc.room_sim import SOUND_SPEED, ScenarioConstraints, generate_scenario, render_mixture, schroeder_t60, \
    simulate_rir
from spkloc.signal_core import MultichannelWaveform, Spectrogram, StftParams, istft, stft
from spkloc.sources import synth_source
from spkloc.spatial_features import compute_ipd, df_angle

from conftest import ANECHOIC

pytestmark = pytest.mark.acceptance

BUCKETS = ("<45", "45-90", ">90")


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


def mean(rows, key, **where):
    vals = [r[key] for r in rows if all(r[k] == v for k, v in where.items())]
    return float(np.mean(vals)), len(vals)


def test_stft_perfect_reconstruction(report):
    rng = np.random.default_rng(100)
    signals = [rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(400, 32000)))) for _ in range(100)]
    t0 = time.perf_counter()
    worst = 0.0
    for x in signals:
        y = istft(stft(MultichannelWaveform(x), StftParams())).samples
        worst = max(worst, np.linalg.norm(y - x) / np.linalg.norm(x))
    dt = time.perf_counter() - t0
    report("STFT perfect reconstruction", worst <= 1e-6 and dt < 5.0,
           f"worst relative L2 error {worst:.2e} (<= 1e-6), {dt:.2f} s for 100 signals (< 5 s)")


def test_si_sdr_properties(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    drift, ortho, ident = 0.0, 0.0, True
    for _ in range(200):
        s = rng.standard_normal(int(rng.integers(64, 4000)))
        est = s + rng.uniform(0.01, 3.0) * rng.standard_normal(s.size)
        base = si_sdr(est, s)
        for a in np.logspace(-4, 4, 9):
            drift = max(drift, abs(si_sdr(a * est, s) - base))
        n = rng.standard_normal(s.size)
        n -= (n @ s) / (s @ s) * s
        n *= np.linalg.norm(s) / np.linalg.norm(n)
        ortho = max(ortho, abs(si_sdr(s + n, s)))
        ident &= si_sdr(s, s) == SDR_CAP and si_sdr(rng.uniform(0.1, 10) * s, s) == SDR_CAP
    dt = time.perf_counter() - t0
    report("SI-SDR properties", drift <= 1e-9 and ortho <= 1e-9 and ident and dt < 1.0,
           f"scale drift {drift:.1e} dB, orthogonal case |{ortho:.1e}| dB, identity cap {ident}, {dt:.2f} s")


def test_gaussian_coding(report):
    worst, monotone = 0.0, True
    for theta in range(181):
        d = gaussian_coding(float(theta)).likelihoods
        worst = max(worst, abs(d[theta] - 1.0))
        for k in (theta - 6, theta + 6):
            if 0 <= k <= 180:
                worst = max(worst, abs(d[k] - np.exp(-1)))
        left, right = np.diff(d[:theta + 1]), np.diff(d[theta:])
        # non-increasing away from theta, strictly so until exp underflows to 0
        monotone &= bool(np.all(left >= 0) and np.all(right <= 0)
                         and np.all(left[d[:theta] > 0] > 0) and np.all(right[d[theta + 1:] > 0] < 0))
    report("Gaussian coding", worst <= 1e-12 and monotone,
           f"max deviation from 1 / e^-1 is {worst:.1e} over all 181 centers, monotone decay {monotone}")


def _random_psd(rng, c, rank=None):
    a = rng.standard_normal((c, rank or c)) + 1j * rng.standard_normal((c, rank or c))
    return a @ a.conj().T


def test_mvdr_algebra(report):
    rng = np.random.default_rng(102)
    # C = 1: the beamformer must return the mixture unchanged
    y1 = rng.standard_normal((1, 30, 257)) + 1j * rng.standard_normal((1, 30, 257))
    Y1 = Spectrogram(y1)
    m = ComplexMask(rng.uniform(0.05, 1, (30, 257)), "real")
    single = np.array_equal(beamform(MaskPair(m, ComplexMask(1 - m.values, "real")), Y1).bins, y1)

    # rank-1 target, identity-plus-rank-1 interference: Sherman-Morrison closed form
    closed = 0.0
    for _ in range(200):
        c, f = int(rng.integers(2, 7)), 6
        h = rng.standard_normal((f, c)) + 1j * rng.standard_normal((f, c))
        g = rng.standard_normal((f, c)) + 1j * rng.standard_normal((f, c))
        nu = rng.uniform(0.1, 2.0, f)
        phi_t = np.einsum("fc,fd->fcd", h, h.conj()) * rng.uniform(0.5, 3.0, f)[:, None, None]
        phi_i = nu[:, None, None] * np.eye(c) + np.einsum("fc,fd->fcd", g, g.conj())
        ref = int(rng.integers(c))
        w = mvdr_weights(Scm(phi_t), Scm(phi_i), ref, loading=0.0).weights
        for k in range(f):
            inv = (np.eye(c) - np.outer(g[k], g[k].conj()) / (nu[k] + g[k].conj() @ g[k])) / nu[k]
            ih = inv @ h[k]
            expect = ih * np.conj(h[k, ref]) / (h[k].conj() @ ih)
            closed = max(closed, np.linalg.norm(w[k] - expect) / np.linalg.norm(expect))

    herm, psd = 0.0, np.inf
    for i in range(1000):
        c, t, f = int(rng.integers(1, 7)), int(rng.integers(1, 20)), int(rng.integers(1, 9))
        n_fft = max(2 * f - 2, 1)
        Y = Spectrogram(rng.standard_normal((c, t, f)) + 1j * rng.standard_normal((c, t, f)),
                        StftParams(min(2, n_fft), 1, n_fft))
        if i % 2:
            mask = ComplexMask(rng.uniform(0, 1, (t, f)), "real")
        else:
            mask = ComplexMask(rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f)), "complex")
        phi = estimate_scm(mask, Y).matrices
        herm = max(herm, np.abs(phi - phi.conj().transpose(0, 2, 1)).max())
        ev = np.linalg.eigvalsh(phi)
        psd = min(psd, float((ev.min(axis=1) / np.maximum(ev.max(axis=1), 1e-300)).min()))
    ok = single and closed <= 1e-10 and herm == 0.0 and psd >= -1e-10
    report("MVDR algebra", ok, f"C=1 identity {single}; closed-form relative error {closed:.1e} (<= 1e-10); "
                               f"1000 SCMs: max |Phi - Phi^H| {herm:.1e}, min eig ratio {psd:.1e}")


def test_localization_single_source(report):
    t0 = time.perf_counter()
    c = replace(ANECHOIC, n_sources=1)
    errors = []
    provider = get_provider("oracle-real")
    for i in range(100):
        sc = generate_scenario((31, i), c)
        src = synth_source("harmonic-complex", ("low", "high")[i % 2], 2.0, 500 + i)
        mix, images = render_mixture(sc, [src])
        Y = stft(mix)
        masks = provider(Y, MaskContext(0, [stft(images[0])], sc.array.reference_mic, sc))
        coding = estimate_doa(masks.target, Y, SteeringTable.build(sc.array, 512, mix.sample_rate))
        errors.append(abs(argmax_angle(coding) - sc.source_angles[0]))
    dt = time.perf_counter() - t0
    errors = np.array(errors)
    med, within = float(np.median(errors)), float(np.mean(errors <= 5.0))
    report("Localization", med <= 2.0 and within >= 0.9 and dt < 60.0,
           f"median error {med:.2f} deg (<= 2), {100 * within:.0f}% within 5 deg (>= 90%), "
           f"max {errors.max():.1f} deg, {dt:.1f} s (< 60 s)")


def _brute_force_complex_mask(batch_dir, entry):
    """Per-bin check of mask * Y = S on the reference channel, in plain Python."""
    loaded = load_scenario(batch_dir, entry)
    ref = loaded.scenario.array.reference_mic
    Y, S = stft(loaded.mixture), stft(loaded.images[0])
    mask = oracle_complex_mask(S, Y, ref).values
    y, s = Y.bins[ref], S.bins[ref]
    worst, n = 0.0, 0
    for t in range(y.shape[0]):
        for f in range(y.shape[1]):
            if abs(y[t, f]) < EPS_DIV or abs(s[t, f] / y[t, f]) > MASK_CEILING:
                continue
            worst = max(worst, abs(mask[t, f] * y[t, f] - s[t, f]) / max(abs(s[t, f]), 1e-300))
            n += 1
    return worst, n


def test_extraction_gain(report, tmp_path):
    generate_batch(50, tmp_path, 103, ANECHOIC, duration=4.0)
    rows = run_batch(PipelineConfig(), tmp_path)["rows"]
    ok_rows = [r for r in rows if r["status"] == "ok"]
    gain, n = mean(ok_rows, "si_sdr_improvement")
    entries = load_manifest(tmp_path)["scenarios"][:5]
    checks = [_brute_force_complex_mask(tmp_path, e) for e in entries]
    worst = max(w for w, _ in checks)
    report("Extraction gain", n == 100 and gain >= 8.0 and worst <= 1e-9,
           f"oracle-real + MVDR mean SI-SDR improvement {gain:.2f} dB over {n} rows (>= 8 dB); "
           f"mask*Y = S per bin max relative error {worst:.1e} over {sum(k for _, k in checks)} bins")


@pytest.fixture(scope="module")
def stratified_batch(tmp_path_factory):
    d = tmp_path_factory.mktemp("stratified")
    generate_batch(75, d, 104, ANECHOIC, duration=4.0, stratify=True)
    return d


def test_table2_trend(report, stratified_batch):
    rows = run_batch(PipelineConfig(), stratified_batch)["rows"]
    stats = {b: mean(rows, "si_sdr_improvement", bucket=b) for b in BUCKETS}
    counts = [stats[b][1] for b in BUCKETS]
    ok = counts == [50, 50, 50] and stats["<45"][0] < stats["45-90"][0]
    report("Table 2 trend", ok, "oracle-real + MVDR SI-SDR improvement by bucket: " +
           ", ".join(f"{b} {stats[b][0]:.2f} dB (n={stats[b][1]})" for b in BUCKETS))


def test_table3_trend(report, stratified_batch):
    rows = run_batch(PipelineConfig(mask_provider="feature-guided"), stratified_batch)["rows"]
    same, n_same = mean(rows, "si_sdr", f0_pairing="same")
    diff, n_diff = mean(rows, "si_sdr", f0_pairing="different")
    report("Table 3 trend", n_same > 0 and n_diff > 0 and same < diff,
           f"feature-guided mean SI-SDR same-f0 {same:.2f} dB (n={n_same}) < different-f0 {diff:.2f} dB (n={n_diff})")


def test_df_angle_discrimination(report):
    margins = []
    for i in range(20):
        sc = generate_scenario((105, i), ANECHOIC)
        srcs = [synth_source("harmonic-complex", ("low", "high")[(i + k) % 2], 2.0, 700 + 2 * i + k) for k in range(2)]
        mix, images = render_mixture(sc, srcs)
        ipd = compute_ipd(stft(mix))
        ref = sc.array.reference_mic
        s, b = (np.abs(stft(w).bins[ref]) for w in images)
        dom = s > b
        theta = sc.source_angles[0]
        wrong = theta + 90 if theta + 90 <= 180 else theta - 90
        matched = df_angle(ipd, theta, sc.array).values[dom].mean()
        mismatched = df_angle(ipd, wrong, sc.array).values[dom].mean()
        margins.append(matched - mismatched)
    margins = np.array(margins)
    report("DF_angle discrimination", bool(np.all(margins > 0)),
           f"matched minus (theta +/- 90) mismatched mean over target-dominant bins: "
           f"min {margins.min():.3f}, median {np.median(margins):.3f} over 20 scenes")


def test_rir_physics(report):
    worst = 0.0
    for i in range(200):
        sc = generate_scenario((106, i))
        for m, rir in enumerate(simulate_rir(sc, 0)):
            d = np.linalg.norm(sc.array.mic_positions[m] - sc.source_positions[0])
            worst = max(worst, abs(int(np.argmax(np.abs(rir.taps))) - d / SOUND_SPEED * rir.sample_rate))
    t60 = {}
    for rt60 in (0.2, 0.4, 0.6):
        c = ScenarioConstraints(rt60_range=(rt60, rt60))
        t60[rt60] = [schroeder_t60(simulate_rir(generate_scenario((107, k), c), 0)[0].taps, 8000)
                     for k in range(3)]
    rel = max(abs(v / k - 1) for k, vs in t60.items() for v in vs)
    detail = "; ".join(f"{k}: " + "/".join(f"{v:.3f}" for v in vs) for k, vs in t60.items())
    report("RIR physics", worst <= 1.0 and rel <= 0.3,
           f"direct-path peak within {worst:.2f} samples of geometry over 200 rooms x 4 mics (<= 1); "
           f"Schroeder T60 (s) {detail}; worst deviation {100 * rel:.0f}% (<= 30%)")


def test_end_to_end_determinism(report, tmp_path):
    csvs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["generate", "-n", "4", "--seed", "108", "--duration", "1.0", "--out", str(d / "scen")]) == 0
        assert main(["run", str(d / "scen"), "--df-angle", "--out", str(d / "out")]) == 0
        assert main(["report", str(d / "out" / "batch.json"), "--out", str(d / "rep")]) == 0
        csvs.append((d / "rep" / "report.csv").read_bytes())
    same = csvs[0] == csvs[1]
    report("End-to-end determinism", same and len(csvs[0]) > 0,
           f"report.csv byte-identical across two generate+run+report passes: {same} ({len(csvs[0])} bytes)")
