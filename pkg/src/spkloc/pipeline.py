"""Batch generation, extraction runs and localization runs over scenario directories.

A scenario directory holds ``manifest.json`` plus, per scenario, a scenario
JSON file and float32 WAVs of the mixture, each source's reverberant image
and each dry source.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .beamforming import beamform
from .doa import DEFAULT_SIGMA, SteeringTable, argmax_angle, doa_mse, estimate_doa, gaussian_coding
from .masking import MaskContext, get_provider, provider_names
from .metrics import LossWeights, cross_entropy, sdr, si_sdr
from .room_sim import RoomScenario, ScenarioConstraints, angle_separation, generate_scenario, render_mixture
from .schemas import validate_config, validate_manifest
from .signal_core import StftParams, istft, read_wav, stft, write_wav
from .sources import KINDS, SourceSpec, synth_from_spec
from .spatial_features import DEFAULT_SHARPNESS, refine_masks

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
BUCKET_EDGES = (45.0, 90.0)
_STRATA = ((15.0, 45.0 - 1e-9), (45.0, 90.0), (90.0 + 1e-9, 180.0))


def separation_bucket(separation: float) -> str:
    """Closed-open buckets [0, 45), [45, 90], (90, 180]."""
    lo, hi = BUCKET_EDGES
    if separation < lo:
        return "<45"
    if separation <= hi:
        return "45-90"
    return ">90"


@dataclass(frozen=True)
class PipelineConfig:
    name: str = ""
    mask_provider: str = "oracle-real"
    use_df_beam: bool = False
    use_df_angle: bool = False
    doa_source: str = "estimated"
    beta_sharpness: float = DEFAULT_SHARPNESS
    mask_dir: str | None = None
    stft: StftParams = field(default_factory=StftParams)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    output_dir: str | None = None
    master_seed: int = 0
    save_wavs: bool = True

    def __post_init__(self):
        if self.mask_provider not in provider_names():
            raise ValueError(f"unknown mask provider {self.mask_provider!r}; registered: {provider_names()}")
        if self.doa_source not in ("oracle-angle", "estimated"):
            raise ValueError(f"doa_source must be 'oracle-angle' or 'estimated', got {self.doa_source!r}")

    @property
    def refine(self) -> bool:
        return self.use_df_angle or self.use_df_beam or self.mask_provider == "feature-guided"

    @property
    def base_provider(self) -> str:
        return "oracle-real" if self.mask_provider == "feature-guided" else self.mask_provider

    @property
    def method(self) -> str:
        if self.name:
            return self.name
        cues = [c for c, on in (("beam", self.use_df_beam), ("angle", self.use_df_angle)) if on]
        if self.mask_provider == "feature-guided" and not cues:
            cues = ["angle"]
        label = f"{self.base_provider}+mvdr" + (f"+df-{'-'.join(cues)}" if cues else "")
        if cues and self.doa_source == "oracle-angle":
            label += "@oracle-doa"
        return label

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        validate_config(d)
        d = dict(d)
        if "stft" in d:
            d["stft"] = StftParams(**d["stft"])
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e})") from None


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# -- generation ---------------------------------------------------------------

@dataclass(frozen=True)
class GenerateJob:
    index: int
    out_dir: str
    master_seed: int
    constraints: ScenarioConstraints
    duration: float
    kinds: tuple[str, ...]
    sample_rate: int
    stratify: bool


def _generate_one(job: GenerateJob) -> dict:
    c = job.constraints
    if job.stratify and c.n_sources == 2:
        lo, hi = _STRATA[job.index % 3]
        c = replace(c, min_separation=max(lo, c.min_separation), max_separation=hi)
    scenario = generate_scenario((job.master_seed, job.index), c)
    rng = np.random.default_rng([job.master_seed, job.index, 1])
    specs = []
    for k in range(scenario.n_sources):
        specs.append(SourceSpec(
            kind=str(job.kinds[int(rng.integers(len(job.kinds)))]),
            f0_class=("low", "high")[int(rng.integers(2))],
            duration=job.duration,
            seed=int(rng.integers(2**31)),
        ))
    dry = [synth_from_spec(s, job.sample_rate) for s in specs]
    mixture, images = render_mixture(scenario, dry)
    out = Path(job.out_dir)
    sid = f"scn{job.index:04d}"
    entry = {
        "id": sid,
        "scenario": f"{sid}.json",
        "mixture": f"{sid}_mix.wav",
        "images": [f"{sid}_img{k}.wav" for k in range(len(images))],
        "dry": [f"{sid}_dry{k}.wav" for k in range(len(dry))],
        "sources": [s.to_dict() for s in specs],
    }
    scenario.save(out / entry["scenario"])
    write_wav(mixture, out / entry["mixture"])
    for name, w in zip(entry["images"], images):
        write_wav(w, out / name)
    for name, w in zip(entry["dry"], dry):
        write_wav(w, out / name)
    return entry


def generate_batch(n_scenarios: int, out_dir, master_seed: int = 0,
                   constraints: ScenarioConstraints | None = None, duration: float = 4.0,
                   kinds=("harmonic-complex",), sample_rate: int = 8000,
                   stratify: bool = False, workers: int = 1) -> dict:
    """Write ``n_scenarios`` rendered scenarios and a manifest; returns the manifest."""
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    for k in kinds:
        if k not in KINDS:
            raise ValueError(f"unknown source kind {k!r}")
    constraints = constraints or ScenarioConstraints()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [GenerateJob(i, str(out), master_seed, constraints, duration, tuple(kinds), sample_rate, stratify)
            for i in range(n_scenarios)]
    entries = _map(_generate_one, jobs, workers)
    manifest = {
        "master_seed": master_seed,
        "sample_rate": sample_rate,
        "constraints": constraints.to_dict(),
        "stratified": stratify,
        "scenarios": entries,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(scenario_dir) -> dict:
    path = Path(scenario_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {scenario_dir}")
    manifest = json.loads(path.read_text())
    validate_manifest(manifest)
    return manifest


@dataclass
class LoadedScenario:
    sid: str
    scenario: RoomScenario
    mixture: object
    images: list
    sources: list[dict]

    @property
    def f0_pairing(self) -> str:
        classes = {s["f0_class"] for s in self.sources}
        return "same" if len(classes) == 1 else "different"


def load_scenario(scenario_dir, entry: dict) -> LoadedScenario:
    d = Path(scenario_dir)
    scenario = RoomScenario.load(d / entry["scenario"])
    mixture = read_wav(d / entry["mixture"])
    images = [read_wav(d / n) for n in entry["images"]]
    for w in images:
        if w.sample_rate != mixture.sample_rate:
            raise ValueError(f"{entry['id']}: image sample rate {w.sample_rate} != mixture {mixture.sample_rate}")
    return LoadedScenario(entry["id"], scenario, mixture, images, entry["sources"])


# -- extraction run -----------------------------------------------------------

def process_target(loaded: LoadedScenario, target: int, config: PipelineConfig) -> tuple[dict, object]:
    """Run one (scenario, target-role) pair; returns the report row and the extracted waveform."""
    sc = loaded.scenario.with_target(target)
    ref = sc.array.reference_mic
    params = config.stft
    Y = stft(loaded.mixture, params)
    images = [stft(w, params) for w in loaded.images]
    ctx = MaskContext(target, images, ref, sc, loaded.sid, config.mask_dir,
                      {"doa_source": config.doa_source})
    base = get_provider(config.base_provider)(Y, ctx)
    table = SteeringTable.build(sc.array, params.n_fft, Y.sample_rate)
    coding = estimate_doa(base.target, Y, table)
    truth = gaussian_coding(sc.target_angle, DEFAULT_SIGMA)
    theta_hat = argmax_angle(coding)

    masks = base
    if config.refine:
        if config.doa_source == "oracle-angle":
            t_angle = sc.target_angle
            i_angles = [a for i, a in enumerate(sc.source_angles) if i != target]
        else:
            t_angle = theta_hat
            i_angles = [argmax_angle(estimate_doa(base.interferer, Y, table))]
        use_angle = config.use_df_angle or (config.mask_provider == "feature-guided" and not config.use_df_beam)
        masks = refine_masks(base, Y, sc.array, t_angle, i_angles, use_df_angle=use_angle,
                             use_df_beam=config.use_df_beam, beta_sharpness=config.beta_sharpness,
                             reference_mic=ref)
    extracted = istft(beamform(masks, Y, ref))
    reference = loaded.images[target].samples[ref]
    mixture_ref = loaded.mixture.samples[ref]
    est = extracted.samples[0]
    si = si_sdr(est, reference)
    un_si = si_sdr(mixture_ref, reference)
    onehot = np.eye(sc.n_sources)[target]
    w = config.loss_weights
    mse = doa_mse(coding, truth)
    row = {
        "scenario": loaded.sid,
        "target": target,
        "method": config.method,
        "mask_type": masks.kind if not config.refine else base.kind,
        "df_beam": config.use_df_beam,
        "df_angle": config.use_df_angle or (config.mask_provider == "feature-guided" and not config.use_df_beam),
        "status": "ok",
        "si_sdr": si,
        "sdr": sdr(est, reference),
        "unprocessed_si_sdr": un_si,
        "unprocessed_sdr": sdr(mixture_ref, reference),
        "si_sdr_improvement": si - un_si,
        "doa_estimate": theta_hat,
        "doa_true": sc.target_angle,
        "doa_error": abs(theta_hat - sc.target_angle),
        "doa_mse": mse,
        # oracle speaker identity: the CE term sits at its floor
        "loss_localizer": -si + w.alpha * cross_entropy(onehot, onehot) + w.beta * mse,
        "separation": angle_separation(sc, target),
        "bucket": separation_bucket(angle_separation(sc, target)),
        "f0_pairing": loaded.f0_pairing,
        "rt60": sc.rt60,
    }
    return row, extracted


@dataclass(frozen=True)
class RunJob:
    scenario_dir: str
    entry: dict
    config: PipelineConfig
    out_dir: str | None


def _failed_row(sid, target, config, err) -> dict:
    return {"scenario": sid, "target": target, "method": config.method, "status": "failed",
            "error": f"{type(err).__name__}: {err}"}


def _run_one(job: RunJob) -> list[dict]:
    entry, config = job.entry, job.config
    n_targets = len(entry["images"])
    try:
        loaded = load_scenario(job.scenario_dir, entry)
    except Exception as e:  # row-level failure, the batch continues
        logger.error("%s: %s", entry["id"], e)
        return [_failed_row(entry["id"], t, config, e) for t in range(n_targets)]
    rows = []
    for t in range(n_targets):
        try:
            row, extracted = process_target(loaded, t, config)
            if job.out_dir and config.save_wavs:
                wav_dir = Path(job.out_dir) / "extracted"
                wav_dir.mkdir(parents=True, exist_ok=True)
                write_wav(extracted, wav_dir / f"{entry['id']}_t{t}.wav")
        except Exception as e:
            logger.error("%s target %d: %s", entry["id"], t, e)
            row = _failed_row(entry["id"], t, config, e)
        rows.append(row)
    if job.out_dir:
        row_dir = Path(job.out_dir) / "rows"
        row_dir.mkdir(parents=True, exist_ok=True)
        (row_dir / f"{entry['id']}.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


def run_batch(config: PipelineConfig, scenario_dir, out_dir=None, workers: int = 1) -> dict:
    """Extraction over every (scenario, target) pair.

    With ``out_dir`` set each worker writes ``rows/<id>.json`` and the parent
    merges them, in manifest order, into ``batch.json``.
    """
    manifest = load_manifest(scenario_dir)
    out_dir = out_dir or config.output_dir
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [RunJob(str(scenario_dir), e, config, str(out_dir) if out_dir else None)
            for e in manifest["scenarios"]]
    rows = [r for rs in _map(_run_one, jobs, workers) for r in rs]
    batch = {"config": _jsonable(config.to_dict()), "scenario_dir": Path(scenario_dir).name, "rows": rows}
    if out_dir:
        (Path(out_dir) / "batch.json").write_text(json.dumps(batch, indent=2, sort_keys=True) + "\n")
    return batch


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d


# -- localization run ---------------------------------------------------------

@dataclass(frozen=True)
class LocalizeJob:
    scenario_dir: str
    entry: dict
    provider: str
    stft: StftParams
    sigma: float


def _localize_one(job: LocalizeJob) -> list[dict]:
    loaded = load_scenario(job.scenario_dir, job.entry)
    Y = stft(loaded.mixture, job.stft)
    images = [stft(w, job.stft) for w in loaded.images]
    rows = []
    for t in range(len(images)):
        sc = loaded.scenario.with_target(t)
        ctx = MaskContext(t, images, sc.array.reference_mic, sc, loaded.sid, None, {})
        masks = get_provider(job.provider)(Y, ctx)
        table = SteeringTable.build(sc.array, job.stft.n_fft, Y.sample_rate)
        coding = estimate_doa(masks.target, Y, table)
        theta = argmax_angle(coding)
        rows.append({
            "scenario": loaded.sid,
            "target": t,
            "provider": job.provider,
            "doa_true": sc.target_angle,
            "doa_estimate": theta,
            "doa_error": abs(theta - sc.target_angle),
            "doa_mse": doa_mse(coding, gaussian_coding(sc.target_angle, job.sigma)),
            "rt60": sc.rt60,
            "coding": [round(float(v), 6) for v in coding.likelihoods],
        })
    return rows


def localize_batch(scenario_dir, mask_provider: str = "oracle-binary", out_dir=None, workers: int = 1,
                   params: StftParams | None = None, sigma: float = DEFAULT_SIGMA) -> dict:
    manifest = load_manifest(scenario_dir)
    jobs = [LocalizeJob(str(scenario_dir), e, mask_provider, params or StftParams(), sigma)
            for e in manifest["scenarios"]]
    rows = [r for rs in _map(_localize_one, jobs, workers) for r in rs]
    errors = np.array([r["doa_error"] for r in rows])
    summary = {
        "provider": mask_provider,
        "n": len(rows),
        "median_doa_error": float(np.median(errors)),
        "mean_doa_error": float(np.mean(errors)),
        "frac_within_5deg": float(np.mean(errors <= 5.0)),
        "mean_doa_mse": float(np.mean([r["doa_mse"] for r in rows])),
    }
    report = {"summary": summary, "rows": rows}
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "localize.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
