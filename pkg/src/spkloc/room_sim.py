"""Shoebox image-source RIRs and reverberant array mixtures.

Coordinates are meters in a room spanning [0, L] x [0, W] x [0, H]. The array
axis is the direction from the first to the last microphone; azimuth is
measured from that axis in the horizontal plane, so 0 deg is endfire toward the
last microphone and 90 deg is broadside.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, fftconvolve, sosfiltfilt

from .signal_core import MultichannelWaveform

SOUND_SPEED = 343.0
SINC_TAPS = 81
_SABINE = 24 * np.log(10) / SOUND_SPEED  # ~0.1611 s/m

__all__ = [
    "SOUND_SPEED",
    "ArrayGeometry",
    "RoomScenario",
    "ScenarioConstraints",
    "Rir",
    "absorption_from_rt60",
    "calibrate_absorption",
    "simulate_rir",
    "render_mixture",
    "generate_scenario",
    "angle_separation",
    "schroeder_t60",
]


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    mic_positions: np.ndarray
    reference_mic: int = 0

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
            raise ValueError(f"mic_positions must be (M, 3), got {p.shape}")
        if not 0 <= self.reference_mic < p.shape[0]:
            raise ValueError(f"reference_mic {self.reference_mic} out of range for {p.shape[0]} mics")
        for l, r in itertools.combinations(range(p.shape[0]), 2):
            if np.linalg.norm(p[l] - p[r]) <= 0:
                raise ValueError(f"microphones {l} and {r} coincide")
        p.setflags(write=False)
        object.__setattr__(self, "mic_positions", p)

    @classmethod
    def ula(cls, n_mics=4, spacing=0.05, center=(0.0, 0.0, 0.0), reference_mic=0):
        """Uniform linear array along +x, mic 0 at the most negative x."""
        offsets = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
        pos = np.asarray(center, dtype=float)[None, :] + offsets[:, None] * np.array([1.0, 0.0, 0.0])
        return cls(pos, reference_mic)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    @property
    def axis(self) -> np.ndarray:
        if self.n_mics == 1:
            return np.array([1.0, 0.0, 0.0])
        d = self.mic_positions[-1] - self.mic_positions[0]
        return d / np.linalg.norm(d)

    @property
    def normal(self) -> np.ndarray:
        """Horizontal unit vector at azimuth 90 deg (the frontal side)."""
        a = self.axis
        n = np.array([-a[1], a[0], 0.0])
        norm = np.linalg.norm(n)
        return n / norm if norm > 0 else np.array([0.0, 1.0, 0.0])

    def axis_offsets(self) -> np.ndarray:
        """Signed position of each mic along the array axis, relative to the center."""
        return (self.mic_positions - self.center) @ self.axis

    def displacement(self, l: int, r: int) -> float:
        """Signed axis displacement x_l - x_r; its magnitude is the pair distance for a linear array."""
        off = self.axis_offsets()
        return float(off[l] - off[r])

    def distance(self, l: int, r: int) -> float:
        return float(np.linalg.norm(self.mic_positions[l] - self.mic_positions[r]))

    def direction(self, azimuth_deg: float) -> np.ndarray:
        t = np.deg2rad(azimuth_deg)
        return np.cos(t) * self.axis + np.sin(t) * self.normal

    def to_dict(self) -> dict:
        return {"mic_positions": self.mic_positions.tolist(), "reference_mic": self.reference_mic}

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        return cls(np.asarray(d["mic_positions"]), int(d.get("reference_mic", 0)))


def _inside(p, dims) -> bool:
    p = np.asarray(p)
    return bool(np.all(p > 0) and np.all(p < np.asarray(dims)))


@dataclass(frozen=True, eq=False)
class RoomScenario:
    room_dims: tuple[float, float, float]
    rt60: float
    source_positions: np.ndarray
    source_angles: tuple[float, ...]
    source_distances: tuple[float, ...]
    array: ArrayGeometry
    target_index: int = 0
    seed: int = 0

    def __post_init__(self):
        dims = tuple(float(v) for v in self.room_dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room_dims must be three positive lengths, got {self.room_dims}")
        pos = np.atleast_2d(np.asarray(self.source_positions, dtype=np.float64))
        angles = tuple(float(a) for a in self.source_angles)
        dists = tuple(float(d) for d in self.source_distances)
        if not (pos.shape[0] == len(angles) == len(dists)) or pos.shape[1] != 3:
            raise ValueError("source_positions, source_angles and source_distances disagree in length")
        if any(not 0.0 <= a <= 180.0 for a in angles):
            raise ValueError(f"source angles must lie in [0, 180], got {angles}")
        if self.rt60 < 0:
            raise ValueError(f"rt60 must be >= 0, got {self.rt60}")
        if not 0 <= self.target_index < len(angles):
            raise ValueError(f"target_index {self.target_index} out of range")
        for i, p in enumerate(pos):
            if not _inside(p, dims):
                raise ValueError(f"source {i} at {p.tolist()} is outside the room {dims}")
        for m, p in enumerate(self.array.mic_positions):
            if not _inside(p, dims):
                raise ValueError(f"microphone {m} at {p.tolist()} is outside the room {dims}")
        pos.setflags(write=False)
        object.__setattr__(self, "room_dims", dims)
        object.__setattr__(self, "rt60", float(self.rt60))
        object.__setattr__(self, "source_positions", pos)
        object.__setattr__(self, "source_angles", angles)
        object.__setattr__(self, "source_distances", dists)

    @property
    def n_sources(self) -> int:
        return len(self.source_angles)

    @property
    def target_angle(self) -> float:
        return self.source_angles[self.target_index]

    def with_target(self, index: int) -> "RoomScenario":
        return RoomScenario(self.room_dims, self.rt60, self.source_positions, self.source_angles,
                            self.source_distances, self.array, index, self.seed)

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "rt60": self.rt60,
            "source_positions": self.source_positions.tolist(),
            "source_angles": list(self.source_angles),
            "source_distances": list(self.source_distances),
            "array": self.array.to_dict(),
            "target_index": self.target_index,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScenario":
        return cls(
            room_dims=tuple(d["room_dims"]),
            rt60=d["rt60"],
            source_positions=np.asarray(d["source_positions"]),
            source_angles=tuple(d["source_angles"]),
            source_distances=tuple(d["source_distances"]),
            array=ArrayGeometry.from_dict(d["array"]),
            target_index=int(d.get("target_index", 0)),
            seed=int(d.get("seed", 0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RoomScenario":
        from .schemas import validate_scenario

        d = json.loads(Path(path).read_text())
        validate_scenario(d)
        return cls.from_dict(d)


def angle_separation(scenario: RoomScenario, index: int | None = None) -> float:
    """Smallest azimuth gap between source ``index`` (default: target) and any other source."""
    i = scenario.target_index if index is None else index
    others = [abs(scenario.source_angles[i] - a)
              for j, a in enumerate(scenario.source_angles) if j != i]
    return min(others) if others else 180.0


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int


def absorption_from_rt60(room_dims, rt60: float, model: str = "sabine") -> float:
    """Uniform energy absorption coefficient reaching ``rt60`` in the room.

    ``sabine`` inverts T = 0.1611 V / (S a); ``eyring`` inverts
    T = 0.1611 V / (-S ln(1 - a)).
    """
    if rt60 <= 0:
        return 1.0
    L, W, H = room_dims
    volume = L * W * H
    surface = 2 * (L * W + L * H + W * H)
    x = _SABINE * volume / (surface * rt60)
    if model == "sabine":
        a = x
    elif model == "eyring":
        a = 1.0 - np.exp(-x)
    else:
        raise ValueError(f"unknown absorption model {model!r}")
    return float(np.clip(a, 1e-6, 1.0))


def _edc_t60(times, energy, sample_rate, fit_db):
    n = int(np.ceil(times.max() * sample_rate)) + 1
    hist = np.bincount(np.round(times * sample_rate).astype(int), weights=energy, minlength=n)
    return schroeder_t60(np.sqrt(hist), sample_rate, fit_db)


def calibrate_absorption(scenario: RoomScenario, source_index: int = 0, sample_rate: int = 8000,
                         sound_speed: float = SOUND_SPEED, fit_db=(-5.0, -25.0)) -> float:
    """Absorption whose image-source energy decay gives the scenario's rt60.

    Shoebox image-source decays are not diffuse (axial paths decay slowly),
    so inverting Sabine overshoots long reverberation times. Bisects the
    absorption coefficient against the Schroeder T60 of the image energy
    histogram at the reference microphone, starting from the Sabine value.
    """
    dims = np.asarray(scenario.room_dims)
    src = scenario.source_positions[source_index]
    mic = scenario.array.mic_positions[scenario.array.reference_mic]
    max_dist = np.linalg.norm(mic - src) + sound_speed * scenario.rt60
    pos, order = _image_lattice(src, dims, None, max_dist)
    d = np.linalg.norm(pos - mic, axis=1)
    keep = d <= max_dist
    d, order = d[keep], order[keep]
    times = d / sound_speed
    spreading = 1.0 / (4 * np.pi * d) ** 2

    def t60(a):
        return _edc_t60(times, (1 - a) ** order * spreading, sample_rate, fit_db)

    lo, hi = 1e-4, 0.999
    a = absorption_from_rt60(dims, scenario.rt60, "sabine")
    for _ in range(40):
        try:
            too_long = t60(a) > scenario.rt60
        except ValueError:
            too_long = True
        if too_long:
            lo = a
        else:
            hi = a
        a = np.sqrt(lo * hi)
    return float(a)


def _image_lattice(src, dims, max_order, max_dist):
    dims = np.asarray(dims)
    if max_order is None:
        ranges = [np.arange(-k, k + 1) for k in (np.ceil(max_dist / dims).astype(int) + 1)]
    else:
        ranges = [np.arange(-max_order, max_order + 1)] * 3
    k = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    order = np.abs(k).sum(axis=1)
    if max_order is not None:
        keep = order <= max_order
        k, order = k[keep], order[keep]
    pos = k * dims + np.where(k % 2 == 0, src, dims - src)
    return pos, order


def simulate_rir(scenario: RoomScenario, source_index: int, max_order: int | None = None,
                 sample_rate: int = 8000, absorption: str = "calibrated",
                 sound_speed: float = SOUND_SPEED, highpass_hz: float | None = 50.0) -> list[Rir]:
    """Image-source RIR from one source to every microphone.

    With ``max_order=None`` every image arriving within one reverberation
    time (60 dB of decay) is kept. ``absorption`` is one of ``calibrated``
    (default, see :func:`calibrate_absorption`), ``sabine`` or ``eyring``.

    All image gains are positive, so dense late arrivals pile up coherently
    near DC and stretch the decay; reverberant RIRs are therefore zero-phase
    high-passed at ``highpass_hz`` (Allen & Berkley). Anechoic RIRs are left
    untouched. Each image contributes
    ``beta**order / (4 pi d)`` at delay ``d / c``, placed with an 81-tap
    Hann-windowed sinc.
    """
    src = scenario.source_positions[source_index]
    dims = np.asarray(scenario.room_dims)
    if not _inside(src, dims):
        raise ValueError(f"source {source_index} is outside the room")
    if max_order is not None and max_order < 0:
        raise ValueError("max_order must be >= 0")
    anechoic = scenario.rt60 == 0
    if anechoic:
        max_order = 0
    if absorption == "calibrated" and not anechoic:
        alpha = calibrate_absorption(scenario, source_index, sample_rate, sound_speed)
    else:
        alpha = absorption_from_rt60(dims, scenario.rt60, "sabine" if absorption == "calibrated" else absorption)
    beta = np.sqrt(max(1.0 - alpha, 0.0))

    mics = scenario.array.mic_positions
    direct = np.linalg.norm(mics - src, axis=1)
    max_dist = direct.max() + sound_speed * scenario.rt60
    pos, order = _image_lattice(src, dims, max_order, max_dist)

    half = SINC_TAPS // 2
    offsets = np.arange(-half, half + 1)
    # taps sit at integer offsets o from round(delay), so sin(pi (o + r)) = (-1)^o sin(pi r)
    # and the window cosine splits by the addition formula; only per-image trig is left
    sign = np.where(offsets % 2 == 0, 1.0, -1.0)
    cos_o, sin_o = np.cos(np.pi * offsets / (half + 1)), np.sin(np.pi * offsets / (half + 1))
    out = []
    for m in range(mics.shape[0]):
        d = np.linalg.norm(pos - mics[m], axis=1)
        keep = np.ones(d.shape, bool) if max_order is not None else d <= max_dist
        d_m, o_m = d[keep], order[keep]
        gain = beta ** o_m / (4 * np.pi * d_m)
        delay = d_m / sound_speed * sample_rate
        n_taps = int(np.ceil(delay.max())) + half + 2
        # front padding by ``half`` keeps every kernel index nonnegative
        buf = np.zeros(n_taps + half)
        for chunk in range(0, len(d_m), 65536):
            dl = delay[chunk:chunk + 65536]
            g = gain[chunk:chunk + 65536]
            base = np.round(dl)
            r = base - dl
            kernel = np.add.outer(r, offsets)
            with np.errstate(divide="ignore", invalid="ignore"):
                np.reciprocal(kernel, out=kernel)
                kernel *= sign
                wr = np.pi * r / (half + 1)
                window = np.multiply.outer(np.cos(wr), cos_o)
                window -= np.multiply.outer(np.sin(wr), sin_o)
                window += 1.0
                kernel *= window
                kernel *= (0.5 * g * np.sin(np.pi * r) / np.pi)[:, None]
            exact = np.abs(r) < 1e-12  # tap lands on the sample grid
            kernel[exact] = 0.0
            kernel[exact, half] = g[exact]
            idx = (base.astype(int) + half)[:, None] + offsets
            buf += np.bincount(idx.ravel(), weights=kernel.ravel(), minlength=buf.size)[:buf.size]
        taps = buf[half:]
        if not anechoic and highpass_hz:
            taps = sosfiltfilt(butter(2, highpass_hz, "highpass", fs=sample_rate, output="sos"), taps)
        out.append(Rir(taps, sample_rate))
    return out


def render_mixture(scenario: RoomScenario, source_signals: list[MultichannelWaveform],
                   rirs: list[list[Rir]] | None = None, max_order: int | None = None):
    """Convolve each dry source with its RIRs and sum: y = s + sum_i b_i.

    Returns ``(mixture, images)`` where ``images[i]`` is source ``i``'s
    reverberant image at every microphone, truncated to the source length.
    """
    if len(source_signals) != scenario.n_sources:
        raise ValueError(f"expected {scenario.n_sources} source signals, got {len(source_signals)}")
    rates = {s.sample_rate for s in source_signals}
    lengths = {s.n_samples for s in source_signals}
    if len(rates) != 1 or len(lengths) != 1:
        raise ValueError(f"source signals must share rate and length; got rates {rates}, lengths {lengths}")
    if any(s.n_channels != 1 for s in source_signals):
        raise ValueError("source signals must be single-channel")
    fs, n = rates.pop(), lengths.pop()
    if rirs is None:
        rirs = [simulate_rir(scenario, i, max_order, fs) for i in range(scenario.n_sources)]
    images = []
    for sig, rir in zip(source_signals, rirs):
        if any(r.sample_rate != fs for r in rir):
            raise ValueError("RIR sample rate does not match the source signals")
        n_taps = max(len(r.taps) for r in rir)
        h = np.stack([np.pad(r.taps, (0, n_taps - len(r.taps))) for r in rir])
        img = fftconvolve(sig.samples, h, axes=-1)[:, :n]
        images.append(MultichannelWaveform(img, fs))
    mixture = np.sum([img.samples for img in images], axis=0)
    return MultichannelWaveform(mixture, fs), images


@dataclass(frozen=True)
class ScenarioConstraints:
    n_sources: int = 2
    length_range: tuple[float, float] = (5.0, 10.0)
    width_range: tuple[float, float] = (5.0, 10.0)
    height_range: tuple[float, float] = (3.0, 4.0)
    rt60_range: tuple[float, float] = (0.2, 0.6)
    distance_range: tuple[float, float] = (0.75, 2.0)
    angle_range: tuple[float, float] = (0.0, 180.0)
    min_separation: float = 15.0
    max_separation: float = 180.0
    n_mics: int = 4
    mic_spacing: float = 0.05
    array_height: float = 1.5
    max_attempts: int = 1000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConstraints":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)

    @property
    def anechoic(self) -> bool:
        return self.rt60_range[1] == 0


def _separation_ok(angles, lo, hi) -> bool:
    gaps = [abs(a - b) for a, b in itertools.combinations(angles, 2)]
    return all(g >= lo for g in gaps) and (not gaps or min(gaps) <= hi)


def generate_scenario(rng_seed, constraints: ScenarioConstraints | None = None) -> RoomScenario:
    """Draw a random room, array placement and source layout.

    ``rng_seed`` may be an int or a sequence (e.g. ``(master_seed, index)``).
    Rejection-samples rooms and angle sets until every constraint holds.
    """
    c = constraints or ScenarioConstraints()
    lo_a, hi_a = c.angle_range
    if c.n_sources > 1 and (hi_a - lo_a) < (c.n_sources - 1) * c.min_separation:
        raise ValueError(
            f"cannot place {c.n_sources} sources {c.min_separation} deg apart in [{lo_a}, {hi_a}]"
        )
    ss = np.random.SeedSequence(rng_seed)
    rng = np.random.default_rng(ss)
    seed_int = int(ss.generate_state(1)[0])
    for _ in range(c.max_attempts):
        dims = (rng.uniform(*c.length_range), rng.uniform(*c.width_range), rng.uniform(*c.height_range))
        rt60 = float(rng.uniform(*c.rt60_range)) if c.rt60_range[1] > 0 else 0.0
        angles = rng.uniform(lo_a, hi_a, size=c.n_sources)
        if not _separation_ok(angles, c.min_separation, c.max_separation):
            continue
        dists = rng.uniform(*c.distance_range, size=c.n_sources)
        center = (dims[0] / 2, dims[1] / 2, c.array_height)
        array = ArrayGeometry.ula(c.n_mics, c.mic_spacing, center)
        pos = np.array([array.center + r * array.direction(a) for a, r in zip(angles, dists)])
        if not all(_inside(p, dims) for p in pos) or not all(_inside(p, dims) for p in array.mic_positions):
            continue
        return RoomScenario(dims, rt60, pos, tuple(angles), tuple(dists), array, 0, seed_int)
    raise ValueError(f"constraints unsatisfiable after {c.max_attempts} attempts: {c}")


def schroeder_t60(taps: np.ndarray, sample_rate: int, fit_db=(-5.0, -25.0)) -> float:
    """T60 from a line fit to the Schroeder backward-integrated energy decay."""
    edc = np.cumsum(taps[::-1] ** 2)[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_db
    i0 = int(np.argmax(edc_db <= hi))
    i1 = int(np.argmax(edc_db <= lo))
    if i1 <= i0:
        raise ValueError("decay range not reached")
    t = np.arange(i0, i1) / sample_rate
    slope, _ = np.polyfit(t, edc_db[i0:i1], 1)
    return float(-60.0 / slope)
