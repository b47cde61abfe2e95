"""Audio SNR, image PSNR and SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class _Infinite:
    """Marker for an unbounded dB ratio (identical signals)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITE"

    def __str__(self) -> str:
        return "inf"


INFINITE = _Infinite()

Decibels = Union[float, _Infinite]


def is_infinite(x) -> bool:
    return x is INFINITE


def snr_db(host, container) -> Decibels:
    """10 log10(host energy / energy of (host - container))."""
    h = np.asarray(getattr(host, "samples", host), dtype=np.float64)
    c = np.asarray(getattr(container, "samples", container), dtype=np.float64)
    if h.shape != c.shape:
        raise ValueError(f"length mismatch: {h.shape} vs {c.shape}")
    signal = float(np.sum(h * h))
    if signal == 0:
        raise ValueError("host has zero energy")
    noise = float(np.sum((h - c) ** 2))
    if noise == 0:
        return INFINITE
    return 10.0 * math.log10(signal / noise)


def psnr(a, b, max_value: float = 255.0) -> Decibels:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return INFINITE
    return 10.0 * math.log10(max_value ** 2 / err)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of a 2-D array."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, data_range: float = 255.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows and over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    g = _gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def mean_db(values) -> Decibels:
    values = list(values)
    if any(v is INFINITE for v in values):
        return INFINITE
    return float(np.mean(values))


def format_db(x: Decibels) -> str:
    return "inf" if x is INFINITE else f"{x:.4f}"


@dataclass
class MetricsReport:
    audio_snr_db: Decibels
    image_ssim: float
    image_psnr_db: Decibels
    pairs: list = field(default_factory=list)

    @classmethod
    def aggregate(cls, pairs: list) -> "MetricsReport":
        """Build a report from per-pair dicts with keys snr_db, ssim, psnr_db."""
        return cls(
            audio_snr_db=mean_db(p["snr_db"] for p in pairs),
            image_ssim=float(np.mean([p["ssim"] for p in pairs])),
            image_psnr_db=mean_db(p["psnr_db"] for p in pairs),
            pairs=pairs,
        )
