import numpy as np
import pytest

from spkloc.room_sim import ArrayGeometry, RoomScenario, ScenarioConstraints, generate_scenario, render_mixture
from spkloc.signal_core import MultichannelWaveform, stft
from spkloc.sources import synth_source

ANECHOIC = ScenarioConstraints(rt60_range=(0.0, 0.0))


def place_sources(angles, distance=1.5, room=(7.0, 6.0, 3.5), rt60=0.0, n_mics=4, seed=0):
    """Scenario with sources at the given azimuths around a room-centered ULA."""
    center = np.array([room[0] / 2, room[1] / 2, 1.5])
    array = ArrayGeometry.ula(n_mics, 0.05, center)
    pos = [tuple(center + distance * array.direction(a)) for a in angles]
    return RoomScenario(room_dims=room, rt60=rt60, source_positions=pos,
                        source_angles=list(angles), source_distances=[distance] * len(angles),
                        array=array, target_index=0, seed=seed)


def render_pair(angles, f0_classes=("low", "high"), duration=2.0, seed=0, rt60=0.0):
    sc = place_sources(angles, rt60=rt60, seed=seed)
    srcs = [synth_source("harmonic-complex", f0_classes[k], duration, 10 * seed + k)
            for k in range(len(angles))]
    mix, images = render_mixture(sc, srcs)
    return sc, mix, images


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_speaker_scene():
    sc, mix, images = render_pair((45.0, 120.0), seed=3)
    return sc, stft(mix), [stft(w) for w in images], mix, images


def random_waveform(rng, channels=1, n=8000):
    return MultichannelWaveform(rng.standard_normal((channels, n)))
