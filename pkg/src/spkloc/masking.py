"""Time-frequency masks, oracle masks and the mask-provider registry.

A provider turns a mixture spectrogram plus scenario context into a
:class:`MaskPair` (target, interferer). Oracle providers read the ground-truth
source images from the context; ``from-file`` loads masks written by an
external estimator in the container format documented in ``_container``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _container
from .signal_core import Spectrogram

MASK_CEILING = 4.0
EPS_DIV = 1e-8
# local criterion of the binary oracle; 10 dB keeps only clearly target-dominated bins
DEFAULT_LC_DB = 10.0

__all__ = [
    "ComplexMask",
    "MaskPair",
    "MaskContext",
    "oracle_complex_mask",
    "oracle_real_mask",
    "oracle_binary_mask",
    "complement",
    "save_mask",
    "load_mask",
    "register_provider",
    "get_provider",
    "provider_names",
]


@dataclass(frozen=True, eq=False)
class ComplexMask:
    """T x F mask; ``kind`` is ``"complex"`` or ``"real"``."""

    values: np.ndarray
    kind: str = "complex"

    def __post_init__(self):
        if self.kind not in ("complex", "real"):
            raise ValueError(f"mask kind must be 'complex' or 'real', got {self.kind!r}")
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError(f"mask must be T x F, got shape {v.shape}")
        if self.kind == "real":
            if np.any(v.imag != 0):
                raise ValueError("real mask has nonzero imaginary parts")
            if np.any(v.real < 0) or np.any(v.real > 1):
                raise ValueError("real mask values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def ones(cls, shape, kind="real") -> "ComplexMask":
        return cls(np.ones(shape), kind)


@dataclass(frozen=True)
class MaskPair:
    target: ComplexMask
    interferer: ComplexMask

    def __post_init__(self):
        if self.target.shape != self.interferer.shape:
            raise ValueError(f"mask shapes differ: {self.target.shape} vs {self.interferer.shape}")

    @property
    def kind(self) -> str:
        return self.target.kind


def _check_shapes(a: Spectrogram, b: Spectrogram):
    if a.shape_tf != b.shape_tf:
        raise ValueError(f"spectrogram shapes differ: {a.shape_tf} vs {b.shape_tf}")


def oracle_complex_mask(target_image: Spectrogram, mixture: Spectrogram, channel: int = 0,
                        ceiling: float = MASK_CEILING) -> ComplexMask:
    """Ideal complex mask S / Y on one channel, magnitude-clamped at ``ceiling``."""
    _check_shapes(target_image, mixture)
    if not 0 <= channel < mixture.n_channels:
        raise ValueError(f"channel {channel} out of range")
    s = target_image.bins[channel]
    y = mixture.bins[channel]
    ok = np.abs(y) >= EPS_DIV
    m = np.zeros_like(y)
    m[ok] = s[ok] / y[ok]
    mag = np.abs(m)
    over = mag > ceiling
    m[over] *= ceiling / mag[over]
    return ComplexMask(m, "complex")


def oracle_real_mask(target_image: Spectrogram, interferer_images: list[Spectrogram],
                     channel: int = 0) -> MaskPair:
    """Ideal ratio mask |S| / (|S| + sum |B_i| + eps) and its complement."""
    for b in interferer_images:
        _check_shapes(target_image, b)
    s = np.abs(target_image.bins[channel])
    b = sum((np.abs(x.bins[channel]) for x in interferer_images), np.zeros_like(s))
    tgt = s / (s + b + EPS_DIV)
    return MaskPair(ComplexMask(tgt, "real"), ComplexMask(1.0 - tgt, "real"))


def oracle_binary_mask(target_image: Spectrogram, interferer_images: list[Spectrogram],
                       channel: int = 0, lc_db: float = DEFAULT_LC_DB) -> MaskPair:
    """Ideal binary mask: 1 where 20 log10(|S| / sum |B_i|) exceeds ``lc_db``; interferer is 1 - target."""
    for b in interferer_images:
        _check_shapes(target_image, b)
    s = np.abs(target_image.bins[channel])
    b = sum((np.abs(x.bins[channel]) for x in interferer_images), np.zeros_like(s))
    tgt = (s > 10 ** (lc_db / 20) * b).astype(float)
    return MaskPair(ComplexMask(tgt, "real"), ComplexMask(1.0 - tgt, "real"))


def complement(m: ComplexMask) -> ComplexMask:
    return ComplexMask(1.0 - m.values, m.kind)


def save_mask(m: ComplexMask, path) -> None:
    kind = _container.REAL if m.kind == "real" else _container.COMPLEX
    _container.write_mask_file(path, m.values, kind)


def load_mask(path, expected_shape: tuple[int, int] | None = None) -> ComplexMask:
    values, kind = _container.read_mask_file(path)
    if expected_shape is not None and values.shape != tuple(expected_shape):
        t, f = expected_shape
        raise ValueError(
            f"{path}: mask dims (T={values.shape[0]}, F={values.shape[1]}) do not match "
            f"expected (T={t}, F={f})"
        )
    return ComplexMask(values, "real" if kind == _container.REAL else "complex")


@dataclass
class MaskContext:
    """What a provider may look at besides the mixture.

    ``images`` holds every source's reverberant image spectrogram (oracle
    providers only); ``target_index`` names the target among them.
    """

    target_index: int = 0
    images: list[Spectrogram] | None = None
    reference_mic: int = 0
    scenario: object = None
    scenario_id: str = ""
    mask_dir: str | None = None
    options: dict = field(default_factory=dict)

    def target_image(self) -> Spectrogram:
        if self.images is None:
            raise ValueError("oracle provider needs ground-truth source images")
        return self.images[self.target_index]

    def interferer_images(self) -> list[Spectrogram]:
        return [s for i, s in enumerate(self.images or []) if i != self.target_index]


Provider = Callable[[Spectrogram, MaskContext], MaskPair]
_PROVIDERS: dict[str, Provider] = {}


def register_provider(name: str):
    def deco(fn: Provider) -> Provider:
        _PROVIDERS[name] = fn
        return fn
    return deco


def get_provider(name: str) -> Provider:
    if name == "feature-guided":
        from . import spatial_features  # noqa: F401  registers itself
    try:
        return _PROVIDERS[name]
    except KeyError:
        raise ValueError(f"unknown mask provider {name!r}; registered: {provider_names()}") from None


def provider_names() -> list[str]:
    return sorted(set(_PROVIDERS) | {"feature-guided"})


def _sum_images(images: list[Spectrogram], like: Spectrogram) -> Spectrogram:
    total = np.zeros_like(like.bins)
    for s in images:
        total = total + s.bins
    return like.with_bins(total)


@register_provider("oracle-complex")
def _oracle_complex(mixture: Spectrogram, ctx: MaskContext) -> MaskPair:
    ref = ctx.reference_mic
    tgt = oracle_complex_mask(ctx.target_image(), mixture, ref)
    if ctx.options.get("complement", False):
        return MaskPair(tgt, complement(tgt))
    inf = oracle_complex_mask(_sum_images(ctx.interferer_images(), mixture), mixture, ref)
    return MaskPair(tgt, inf)


@register_provider("oracle-real")
def _oracle_real(mixture: Spectrogram, ctx: MaskContext) -> MaskPair:
    return oracle_real_mask(ctx.target_image(), ctx.interferer_images(), ctx.reference_mic)


@register_provider("oracle-binary")
def _oracle_binary(mixture: Spectrogram, ctx: MaskContext) -> MaskPair:
    return oracle_binary_mask(ctx.target_image(), ctx.interferer_images(), ctx.reference_mic,
                              ctx.options.get("lc_db", DEFAULT_LC_DB))


@register_provider("pass-through")
def _pass_through(mixture: Spectrogram, ctx: MaskContext) -> MaskPair:
    ones = ComplexMask.ones(mixture.shape_tf, "real")
    return MaskPair(ones, ones)


def mask_file_paths(mask_dir, scenario_id: str, target_index: int) -> tuple[Path, Path]:
    base = f"{scenario_id}_t{target_index}"
    return Path(mask_dir) / f"{base}.tgt.mask", Path(mask_dir) / f"{base}.inf.mask"


@register_provider("from-file")
def _from_file(mixture: Spectrogram, ctx: MaskContext) -> MaskPair:
    if not ctx.mask_dir:
        raise ValueError("from-file provider needs mask_dir")
    tgt_path, inf_path = mask_file_paths(ctx.mask_dir, ctx.scenario_id, ctx.target_index)
    tgt = load_mask(tgt_path, mixture.shape_tf)
    inf = load_mask(inf_path, mixture.shape_tf) if inf_path.exists() else complement(tgt)
    return MaskPair(tgt, inf)
