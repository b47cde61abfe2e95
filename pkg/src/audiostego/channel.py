"""Simulated transmission channel: AWGN, speckle noise and capture misalignment.

``sigma`` is the noise-to-signal L2 ratio: the perturbation is rescaled so
that ||perturbation|| == sigma * ||signal||.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Waveform
from .engine.tensor import DTYPE

KINDS = ("none", "awgn", "speckle")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def is_identity(self) -> bool:
        return self.kind == "none" or self.sigma == 0

    def reseeded(self, offset: int) -> "NoiseSpec":
        return NoiseSpec(self.kind, self.sigma, (self.seed + offset) % 2 ** 64)


def perturbation(samples: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """The additive perturbation the channel would apply to ``samples``."""
    x = np.asarray(samples, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("channel input contains non-finite samples")
    if spec.is_identity:
        return np.zeros_like(x)
    rng = np.random.default_rng(spec.seed)
    g = rng.standard_normal(x.shape)
    signal_norm = np.linalg.norm(x)
    if spec.kind == "awgn":
        raw = g
    else:
        raw = x * g
    raw_norm = np.linalg.norm(raw)
    if raw_norm == 0 or signal_norm == 0:
        return np.zeros_like(x)
    return raw * (spec.sigma * signal_norm / raw_norm)


def apply_noise(c: Waveform, spec: NoiseSpec) -> Waveform:
    if spec.is_identity:
        if not np.isfinite(c.samples).all():
            raise ValueError("channel input contains non-finite samples")
        return Waveform(c.samples.copy(), c.sample_rate)
    noisy = c.samples.astype(np.float64) + perturbation(c.samples, spec)
    return Waveform(noisy.astype(DTYPE), c.sample_rate)


def misalign(c: Waveform, offset_samples: int) -> Waveform:
    """Circularly delay the capture by ``offset_samples`` (negative advances it)."""
    n = len(c)
    if abs(offset_samples) >= n:
        raise ValueError(f"offset {offset_samples} out of range for {n} samples")
    return Waveform(np.roll(c.samples, offset_samples), c.sample_rate)
