"""WAV/PPM/PNG file I/O, image-audio pairing and the synthetic desk corpus."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .dsp import Waveform

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class FormatError(ValueError):
    """Unsupported or malformed file."""


# -- WAV ---------------------------------------------------------------------

def _chunks(blob: bytes):
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"truncated {cid!r} chunk")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> Waveform:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    for cid, body in _chunks(blob):
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = body
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels != 1:
        raise FormatError(f"{path}: unsupported format: {channels} channels (mono only)")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        n = len(data) // 2
        pcm = np.frombuffer(data[:2 * n], dtype="<i2")
        samples = pcm.astype(np.float32) / np.float32(32768.0)
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        n = len(data) // 4
        samples = np.frombuffer(data[:4 * n], dtype="<f4").astype(np.float32)
    else:
        raise FormatError(f"{path}: unsupported codec (format tag {tag}, {bits} bits)")
    return Waveform(samples, rate)


def write_wav(path, w: Waveform, pcm16: bool = False) -> None:
    if pcm16:
        scaled = np.round(np.asarray(w.samples, dtype=np.float64) * 32768.0)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    else:
        payload = np.asarray(w.samples, dtype="<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, w.sample_rate, w.sample_rate * block, block, bits)
    parts = [b"fmt ", struct.pack("<I", len(fmt)), fmt]
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        # non-PCM formats carry a fact chunk with the frame count
        parts += [b"fact", struct.pack("<II", 4, len(w.samples))]
    parts += [b"data", struct.pack("<I", len(payload)), payload]
    if len(payload) & 1:
        parts.append(b"\x00")
    body = b"WAVE" + b"".join(parts)
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- images ------------------------------------------------------------------

def _ppm_tokens(blob: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        if pos >= len(blob):
            raise FormatError("truncated PPM header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            end = blob.find(b"\n", pos)
            pos = len(blob) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(blob) and not blob[pos:pos + 1].isspace():
                pos += 1
            tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    tokens, pos = _ppm_tokens(blob, 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported bit depth (maxval {maxval}); 8-bit RGB only")
    n = w * h * 3
    if len(blob) - pos < n:
        raise FormatError(f"{path}: truncated PPM pixel data")
    return np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos).reshape(h, w, 3).copy()


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError("write_ppm expects an H x W x 3 uint8 array")
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def _read_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:
        raise FormatError("PNG support needs Pillow (pip install artifact[png])") from None
    with Image.open(path) as im:
        if im.mode == "1":
            raise FormatError(f"{path}: unsupported bit depth (1-bit); 8-bit RGB only")
        if im.mode not in ("RGB", "RGBA", "L", "P"):
            raise FormatError(f"{path}: unsupported PNG mode {im.mode}; 8-bit RGB only")
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _write_png(path, img: np.ndarray) -> None:
    try:
        from PIL import Image
    except ImportError:
        raise FormatError("PNG support needs Pillow (pip install artifact[png])") from None
    Image.fromarray(np.asarray(img, dtype=np.uint8), "RGB").save(path, format="PNG")


def center_crop_resize(img: np.ndarray, side: int) -> np.ndarray:
    """Center-crop to a square, then nearest-neighbor resize to ``side``."""
    h, w = img.shape[:2]
    m = min(h, w)
    top, left = (h - m) // 2, (w - m) // 2
    sq = img[top:top + m, left:left + m]
    if m == side:
        return np.ascontiguousarray(sq)
    idx = (np.arange(side) * m) // side
    return np.ascontiguousarray(sq[idx][:, idx])


def read_image(path, side: int | None = None) -> np.ndarray:
    """Load an 8-bit RGB image (PPM P6 or PNG); optionally crop/resize to ``side``."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P6":
        img = read_ppm(path)
    elif magic == b"\x89PNG\r\n\x1a\n":
        img = _read_png(path)
    elif magic[:1] == b"P" and magic[1:2] in b"12345":
        raise FormatError(f"{path}: unsupported PNM variant {magic[:2].decode()}; use 8-bit P6")
    else:
        raise FormatError(f"{path}: unrecognized image format")
    return center_crop_resize(img, side) if side else img


def write_image(path, img: np.ndarray) -> None:
    if str(path).lower().endswith(".png"):
        _write_png(path, img)
    else:
        write_ppm(path, img)


IMAGE_SUFFIXES = (".ppm", ".png")
AUDIO_SUFFIXES = (".wav",)


# -- pairing -----------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    image_dir: str
    audio_dir: str
    image_side: int
    clip_samples: int
    pairing_seed: int = 0

    def image_paths(self) -> list[Path]:
        return sorted(p for p in Path(self.image_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

    def audio_paths(self) -> list[Path]:
        return sorted(p for p in Path(self.audio_dir).iterdir() if p.suffix.lower() in AUDIO_SUFFIXES)


class PairedCorpus:
    """Images and clips loaded once; pairs drawn reproducibly per epoch."""

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        image_paths, audio_paths = spec.image_paths(), spec.audio_paths()
        if not image_paths or not audio_paths:
            raise ValueError(f"empty corpus: {len(image_paths)} images, {len(audio_paths)} clips")
        self.image_names = [p.name for p in image_paths]
        self.images = [read_image(p, spec.image_side) for p in image_paths]
        self.clips = [read_wav(p) for p in audio_paths]
        for p, clip in zip(audio_paths, self.clips):
            if len(clip) < spec.clip_samples:
                raise ValueError(
                    f"{p.name}: clip too short ({len(clip)} < {spec.clip_samples} samples)"
                )

    def __len__(self) -> int:
        return len(self.images)

    def epoch(self, epoch: int) -> Iterator[tuple[np.ndarray, Waveform]]:
        rng = np.random.default_rng([self.spec.pairing_seed, epoch])
        order = rng.permutation(len(self.images))
        for i in order:
            clip = self.clips[int(rng.integers(len(self.clips)))]
            start = int(rng.integers(len(clip) - self.spec.clip_samples + 1))
            segment = clip.samples[start:start + self.spec.clip_samples]
            yield self.images[i], Waveform(segment.copy(), clip.sample_rate)

    def stream(self) -> Iterator[tuple[np.ndarray, Waveform]]:
        epoch = 0
        while True:
            yield from self.epoch(epoch)
            epoch += 1


def pair_iterator(spec: DatasetSpec, epoch: int = 0):
    return PairedCorpus(spec).epoch(epoch)


# -- synthetic corpus ----------------------------------------------------------

def _synthetic_image(rng: np.random.Generator, side: int, kind: int) -> np.ndarray:
    y, x = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    if kind == 0:  # linear gradient
        angle = rng.uniform(0, 2 * np.pi)
        t = (np.cos(angle) * x + np.sin(angle) * y)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    elif kind == 1:  # checkerboard
        cells = int(rng.integers(2, 9))
        t = ((np.floor(x * cells * 0.999) + np.floor(y * cells * 0.999)) % 2).astype(float)
    elif kind == 2:  # disc on background
        cx, cy, r = rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.15, 0.35)
        t = (((x - cx) ** 2 + (y - cy) ** 2) < r * r).astype(float)
    else:  # concentric rings
        cx, cy = rng.uniform(0.2, 0.8, 2)
        freq = rng.uniform(4, 12)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * freq * np.hypot(x - cx, y - cy))
    img = (1 - t)[..., None] * c0 + t[..., None] * c1
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def _synthetic_clip(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    t = np.arange(n) / rate
    out = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        f = rng.uniform(80, rate / 4)
        out += rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    f0, f1 = rng.uniform(100, rate / 8), rng.uniform(rate / 8, rate / 3)
    dur = n / rate
    phase = 2 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / (2 * dur))
    out += rng.uniform(0.2, 0.8) * np.sin(phase)
    noise = rng.standard_normal(n)
    alpha = rng.uniform(0.8, 0.98)
    filtered = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = alpha * acc + (1 - alpha) * noise[i]
        filtered[i] = acc
    out += rng.uniform(0.5, 2.0) * filtered / max(np.abs(filtered).max(), 1e-9)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 3) * t + rng.uniform(0, 6.3))
    out *= envelope
    return out / np.abs(out).max() * rng.uniform(0.5, 0.9)


def generate_corpus(out_dir, n_images: int, n_clips: int, image_side: int,
                    clip_samples: int, seed: int = 0, sample_rate: int = 16000) -> tuple[Path, Path]:
    """Write synthetic images (PPM) and clips (float32 WAV) under ``out_dir``."""
    root = Path(out_dir)
    img_dir, wav_dir = root / "images", root / "audio"
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(wav_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_images):
        write_ppm(img_dir / f"img_{i:04d}.ppm", _synthetic_image(rng, image_side, i % 4))
    for i in range(n_clips):
        samples = _synthetic_clip(rng, clip_samples, sample_rate).astype(np.float32)
        write_wav(wav_dir / f"clip_{i:04d}.wav", Waveform(samples, sample_rate))
    return img_dir, wav_dir
