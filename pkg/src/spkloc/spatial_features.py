"""Direction-related spatial features and feature-guided mask refinement.

``df_angle`` compares observed inter-channel phase differences with the
phase a plane wave from a hypothesised azimuth would produce; ``df_beam`` is
the magnitude of a beamformer output. Both are T x F planes that can be
bundled with the mixture as input for an external mask estimator, or used
directly by the ``feature-guided`` provider.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from . import _container
from .beamforming import beamform
from .doa import SteeringTable, argmax_angle, estimate_doa
from .masking import ComplexMask, MaskContext, MaskPair, get_provider, register_provider
from .room_sim import SOUND_SPEED, ArrayGeometry
from .signal_core import Spectrogram, StftParams

DEFAULT_SHARPNESS = 4.0

__all__ = [
    "Ipd",
    "SpatialFeature",
    "FeatureBundle",
    "all_pairs",
    "compute_ipd",
    "df_angle",
    "df_beam",
    "assemble_features",
    "feature_guided_mask",
    "refine_masks",
]


def all_pairs(n_channels: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(n_channels), 2))


@dataclass(frozen=True, eq=False)
class Ipd:
    values: np.ndarray  # (P, T, F), radians in (-pi, pi]
    pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True, eq=False)
class SpatialFeature:
    values: np.ndarray  # (T, F)
    kind: str

    def __post_init__(self):
        if self.kind not in ("angle", "beam"):
            raise ValueError(f"feature kind must be 'angle' or 'beam', got {self.kind!r}")


def compute_ipd(mixture: Spectrogram, pairs=None) -> Ipd:
    c = mixture.n_channels
    if c < 2:
        raise ValueError("IPD needs at least 2 channels")
    pairs = tuple(tuple(p) for p in (pairs if pairs is not None else all_pairs(c)))
    if not pairs:
        raise ValueError("need at least one channel pair")
    for l, r in pairs:
        if not (0 <= l < c and 0 <= r < c) or l == r:
            raise ValueError(f"invalid channel pair {(l, r)} for {c} channels")
    y = mixture.bins
    vals = np.stack([np.angle(y[l] * y[r].conj()) for l, r in pairs])
    return Ipd(vals, pairs)


def steering_phase(f_index, displacement, theta_deg, n_bins, n_fft, sample_rate,
                   convention="bins", sound_speed=SOUND_SPEED):
    cos = np.cos(np.deg2rad(theta_deg))
    if convention == "bins":
        # N_FFT read as the number of one-sided bins, f = 0 .. N_FFT - 1
        return np.pi * sample_rate * f_index * displacement * cos / ((n_bins - 1) * sound_speed)
    if convention == "fft-size":
        return np.pi * sample_rate * f_index * displacement * cos / ((n_fft - 1) * sound_speed)
    if convention == "physical":
        return 2 * np.pi * (f_index * sample_rate / n_fft) * displacement * cos / sound_speed
    raise ValueError(f"unknown steering convention {convention!r}")


def df_angle(ipd: Ipd, theta_hat: float, geometry: ArrayGeometry, params: StftParams | None = None,
             sample_rate: int = 8000, convention: str = "bins",
             sound_speed: float = SOUND_SPEED) -> SpatialFeature:
    """Mean over pairs of cos(IPD - expected phase difference at ``theta_hat``).

    The pair displacement is signed (x_l - x_r along the array axis) so the
    sign of cos(theta) is distinguishable.
    """
    if not 0 <= theta_hat <= 180:
        raise ValueError(f"theta_hat must lie in [0, 180], got {theta_hat}")
    params = params or StftParams()
    f = np.arange(ipd.values.shape[-1])
    acc = np.zeros(ipd.values.shape[1:])
    for (l, r), o in zip(ipd.pairs, ipd.values):
        phase = steering_phase(f, geometry.displacement(l, r), theta_hat, params.n_bins,
                               params.n_fft, sample_rate, convention, sound_speed)
        acc += np.cos(o - phase[None, :])
    return SpatialFeature(acc / len(ipd.pairs), "angle")


def df_beam(beam: Spectrogram) -> SpatialFeature:
    if beam.n_channels != 1:
        raise ValueError("df_beam expects a single-channel beam spectrum")
    b = beam.bins[0]
    return SpatialFeature(np.sqrt(b.real ** 2 + b.imag ** 2), "beam")


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    """Ordered planes: mixture channels ``y0..y{C-1}`` then ``df_beam``, ``df_angle``."""

    planes: tuple[tuple[str, np.ndarray], ...]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.planes]

    @property
    def n_planes(self) -> int:
        return len(self.planes)

    def plane(self, name: str) -> np.ndarray:
        for n, v in self.planes:
            if n == name:
                return v
        raise KeyError(f"no plane {name!r}; have {self.names}")

    def save(self, path) -> None:
        _container.write_feature_file(path, [
            (n, v, _container.COMPLEX if np.iscomplexobj(v) else _container.REAL)
            for n, v in self.planes
        ])

    @classmethod
    def load(cls, path) -> "FeatureBundle":
        return cls(tuple((n, v) for n, v, _ in _container.read_feature_file(path)))


def assemble_features(mixture: Spectrogram, beam_df: SpatialFeature,
                      angle_df: SpatialFeature) -> FeatureBundle:
    tf = mixture.shape_tf
    for feat in (beam_df, angle_df):
        if feat.values.shape != tf:
            raise ValueError(f"{feat.kind} feature shape {feat.values.shape} does not match mixture {tf}")
    planes = [(f"y{c}", mixture.bins[c]) for c in range(mixture.n_channels)]
    planes += [("df_beam", beam_df.values), ("df_angle", angle_df.values)]
    return FeatureBundle(tuple(planes))


def feature_guided_mask(angle_df_tgt: SpatialFeature, angle_df_inf: SpatialFeature,
                        beta_sharpness: float = DEFAULT_SHARPNESS) -> MaskPair:
    """Logistic of beta * (DF_tgt - DF_inf); the interferer mask is its complement."""
    if beta_sharpness <= 0:
        raise ValueError("beta_sharpness must be positive")
    if angle_df_tgt.values.shape != angle_df_inf.values.shape:
        raise ValueError("feature shapes differ")
    m = expit(beta_sharpness * (angle_df_tgt.values - angle_df_inf.values))
    return MaskPair(ComplexMask(m, "real"), ComplexMask(1.0 - m, "real"))


_P_CLIP = 1e-6


def _estimated_angle(mask: ComplexMask, mixture: Spectrogram, geometry: ArrayGeometry) -> float:
    table = SteeringTable.build(geometry, mixture.params.n_fft, mixture.sample_rate)
    return argmax_angle(estimate_doa(mask, mixture, table))


def refine_masks(base: MaskPair, mixture: Spectrogram, geometry: ArrayGeometry,
                 target_angle: float, interferer_angles: list[float],
                 use_df_angle: bool = True, use_df_beam: bool = False,
                 beta_sharpness: float = DEFAULT_SHARPNESS, reference_mic: int = 0) -> MaskPair:
    """Fuse a base mask with direction evidence in the log-odds domain.

    Angle evidence is ``feature_guided_mask`` on DF_angle toward the target
    versus the closest-matching interferer direction; beam evidence is the
    log power ratio of the MVDR beams steered by the base masks toward the
    target and toward the interference. Each enabled cue adds its log-odds to
    the base mask's, as for independent posteriors.
    """
    m0 = np.clip(np.abs(base.target.values), _P_CLIP, 1 - _P_CLIP)
    log_odds = logit(m0)
    if use_df_angle:
        ipd = compute_ipd(mixture)
        fs = mixture.sample_rate
        tgt = df_angle(ipd, target_angle, geometry, mixture.params, fs)
        infs = [df_angle(ipd, a, geometry, mixture.params, fs).values for a in interferer_angles]
        inf = SpatialFeature(np.max(infs, axis=0), "angle")
        fg = feature_guided_mask(tgt, inf, beta_sharpness).target.values.real
        log_odds = log_odds + logit(np.clip(fg, _P_CLIP, 1 - _P_CLIP))
    if use_df_beam:
        bt = df_beam(beamform(base, mixture, reference_mic)).values
        bi = df_beam(beamform(MaskPair(base.interferer, base.target), mixture, reference_mic)).values
        log_odds = log_odds + np.log((bt ** 2 + 1e-12) / (bi ** 2 + 1e-12))
    m = expit(log_odds)
    return MaskPair(ComplexMask(m, "real"), ComplexMask(1.0 - m, "real"))


@register_provider("feature-guided")
def _feature_guided(mixture: Spectrogram, ctx: MaskContext) -> MaskPair:
    """Base provider masks refined by direction features.

    Options: ``base_provider`` (default ``oracle-real``), ``doa_source``
    (``oracle-angle`` or ``estimated``), ``use_df_angle``, ``use_df_beam``,
    ``beta_sharpness``.
    """
    opts = ctx.options
    base_name = opts.get("base_provider", "oracle-real")
    if base_name == "feature-guided":
        raise ValueError("feature-guided provider cannot be its own base")
    base = get_provider(base_name)(mixture, ctx)
    sc = ctx.scenario
    geometry = sc.array
    if opts.get("doa_source", "estimated") == "oracle-angle":
        t_angle = sc.source_angles[ctx.target_index]
        i_angles = [a for i, a in enumerate(sc.source_angles) if i != ctx.target_index]
    else:
        t_angle = _estimated_angle(base.target, mixture, geometry)
        i_angles = [_estimated_angle(base.interferer, mixture, geometry)]
    return refine_masks(base, mixture, geometry, t_angle, i_angles,
                        use_df_angle=opts.get("use_df_angle", True),
                        use_df_beam=opts.get("use_df_beam", False),
                        beta_sharpness=opts.get("beta_sharpness", DEFAULT_SHARPNESS),
                        reference_mic=ctx.reference_mic)
