"""Orthonormal DCT-II/III and the short-time DCT with exact overlap-add inverse.

Frames are taken with a rectangular window. The inverse transforms every
column back with DCT-III, overlap-adds, and divides by how many frames cover
each sample, which reproduces the input exactly. Samples past the last frame
are carried along untouched.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .engine.tensor import DTYPE, DimensionError, Tensor, record

_lock = threading.Lock()


@lru_cache(maxsize=16)
def _basis64(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * t + 1) * k / (2 * n))
    mat *= np.sqrt(2.0 / n)
    mat[0] *= np.sqrt(0.5)
    return mat


@lru_cache(maxsize=16)
def _basis32(n: int) -> np.ndarray:
    return np.ascontiguousarray(_basis64(n), dtype=DTYPE)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` with ``X = D @ x`` (float32, cached per size)."""
    if n < 1:
        raise ValueError("DCT length must be at least 1")
    with _lock:
        return _basis32(n)


def dct2(frame) -> np.ndarray:
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dct2 expects a non-empty 1-D frame")
    with _lock:
        basis = _basis64(x.size)
    return basis @ x


def dct3(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("dct3 expects a non-empty 1-D coefficient vector")
    with _lock:
        basis = _basis64(c.size)
    return basis.T @ c


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int
    hop: int

    def __post_init__(self):
        if self.frame_len < 1 or self.hop < 1:
            raise ValueError("frame_len and hop must be positive")
        if self.hop > self.frame_len:
            raise ValueError("hop must not exceed frame_len")

    def num_frames(self, length: int) -> int:
        if length < self.frame_len:
            raise ValueError(
                f"waveform has {length} samples, fewer than one frame ({self.frame_len})"
            )
        return (length - self.frame_len) // self.hop + 1

    def span(self, num_frames: int) -> int:
        """Samples covered by ``num_frames`` consecutive frames."""
        return self.frame_len + (num_frames - 1) * self.hop


PAPER_FRAMES = FrameSpec(frame_len=2 ** 12, hop=2 ** 6 - 2)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=DTYPE)
        if self.samples.ndim != 1:
            raise DimensionError("waveform must be one-dimensional (mono)")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class Spectrogram:
    """STDCT grid of shape [frame_len, num_frames] plus the unframed tail."""

    values: np.ndarray
    spec: FrameSpec
    source_len: int
    tail: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=DTYPE))

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "Spectrogram":
        if values.shape != self.values.shape:
            raise DimensionError(f"values shape {values.shape} != {self.values.shape}")
        return Spectrogram(np.asarray(values), self.spec, self.source_len, self.tail)


def _frames(samples: np.ndarray, spec: FrameSpec, n: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(samples[: spec.span(n)], spec.frame_len)
    return np.ascontiguousarray(view[:: spec.hop].T)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    frame_len, n = frames.shape
    out = np.zeros(frame_len + (n - 1) * hop, dtype=frames.dtype)
    # add in blocks of frames that do not overlap each other
    step = -(-frame_len // hop)
    for start in range(step):
        idx = np.arange(start, n, step)
        if idx.size == 0:
            continue
        pos = (idx * hop)[:, None] + np.arange(frame_len)[None, :]
        out[pos.ravel()] += frames[:, idx].T.ravel()
    return out


@lru_cache(maxsize=32)
def coverage(frame_len: int, hop: int, num_frames: int) -> np.ndarray:
    cov = _overlap_add(np.ones((frame_len, num_frames), dtype=DTYPE), hop)
    cov.setflags(write=False)
    return cov


def stdct(w: Waveform, spec: FrameSpec, max_frames: Optional[int] = None) -> Spectrogram:
    """Short-time DCT-II of a waveform.

    ``max_frames`` limits the number of frames taken from the start of the
    signal; everything after the last frame becomes the pass-through tail.
    """
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=DTYPE)
    n = spec.num_frames(samples.size)
    if max_frames is not None:
        if max_frames < 1 or max_frames > n:
            raise DimensionError(f"requested {max_frames} frames but only {n} fit")
        n = max_frames
    values = dct_matrix(spec.frame_len) @ _frames(samples, spec, n)
    tail = samples[spec.span(n):].copy()
    return Spectrogram(values.astype(DTYPE), spec, samples.size, tail)


def istdct(s: Spectrogram, sample_rate: int = 16000) -> Waveform:
    """Exact inverse of :func:`stdct`."""
    spec = s.spec
    if s.values.shape[0] != spec.frame_len:
        raise DimensionError(
            f"spectrogram has {s.values.shape[0]} bins, frame spec expects {spec.frame_len}"
        )
    frames = dct_matrix(spec.frame_len).T @ s.values
    body = _overlap_add(frames, spec.hop) / coverage(spec.frame_len, spec.hop, s.num_frames)
    out = np.concatenate([body.astype(DTYPE), np.asarray(s.tail, dtype=DTYPE)])
    if out.size != s.source_len:
        raise DimensionError(f"reconstructed {out.size} samples, expected {s.source_len}")
    return Waveform(out, sample_rate)


def stdct_adjoint(grid: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Adjoint of the framed STDCT (no coverage normalization)."""
    return _overlap_add(dct_matrix(spec.frame_len).T @ grid, spec.hop)


def stdct_tensor(samples: Tensor, spec: FrameSpec, num_frames: int) -> Tensor:
    """Differentiable STDCT of the first ``spec.span(num_frames)`` samples."""
    if samples.ndim != 1:
        raise DimensionError("stdct_tensor expects a 1-D tensor")
    basis = dct_matrix(spec.frame_len)
    span = spec.span(num_frames)
    if samples.size < span:
        raise DimensionError(f"need {span} samples, got {samples.size}")
    out = basis @ _frames(samples.data, spec, num_frames)

    def grad_fn(g):
        full = np.zeros(samples.shape, dtype=DTYPE)
        full[:span] = stdct_adjoint(g, spec)
        return (full,)

    return record(out, (samples,), grad_fn, "stdct")


def istdct_tensor(grid: Tensor, spec: FrameSpec) -> Tensor:
    """Differentiable inverse STDCT over the framed region (tail excluded)."""
    if grid.ndim != 2 or grid.shape[0] != spec.frame_len:
        raise DimensionError(f"grid shape {grid.shape} does not match frame_len {spec.frame_len}")
    basis = dct_matrix(spec.frame_len)
    cov = coverage(spec.frame_len, spec.hop, grid.shape[1])
    out = _overlap_add(basis.T @ grid.data, spec.hop) / cov

    def grad_fn(g):
        return (basis @ _frames((g / cov).astype(DTYPE), spec, grid.shape[1]),)

    return record(out.astype(DTYPE), (grid,), grad_fn, "istdct")
