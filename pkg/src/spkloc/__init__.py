"""Mask-based MVDR target extraction with DOA coding and direction features."""
from .signal_core import MultichannelWaveform, Spectrogram, StftParams, istft, read_wav, stft, write_wav
from .room_sim import ArrayGeometry, RoomScenario, ScenarioConstraints, generate_scenario, render_mixture, simulate_rir
from .masking import ComplexMask, MaskPair, get_provider, provider_names
from .beamforming import beamform, extract_target, mvdr_weights
from .doa import DoaCoding, estimate_doa, gaussian_coding
from .metrics import sdr, si_sdr
from . import spatial_features  # registers the feature-guided provider

__version__ = "0.1.0"
