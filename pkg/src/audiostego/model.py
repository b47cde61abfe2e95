"""Hiding/reveal U-Nets, pixel shuffling and residual embedding into spectrograms.

An image (S x S x 3, values in [0, 1]) gets a zero fourth channel and is
pixel-shuffled into a 2S x 2S map. The hiding network turns that map into a
residual ("stamp") which is tiled over the host spectrogram and added to it.
The reveal network maps the tile-averaged container back to a 2S x 2S map
that is unshuffled into the image.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dsp import FrameSpec, Spectrogram
from .engine import checkpoint
from .engine.conv import batch_norm2d, conv2d, conv_transpose2d
from .engine.tensor import (
    DTYPE,
    DimensionError,
    Tensor,
    add,
    concat,
    leaky_relu,
    mul,
    record,
    reshape,
    transpose,
)

LEAKY_SLOPE = 0.8
BN_EPS = 1e-5
DOWN_FACTOR = 64


class ArchVariant(str, enum.Enum):
    RES_INDEP = "ResIndep"
    RES_DEP = "ResDep"
    PLAIN_DEP = "PlainDep"
    RES_SCALE = "ResScale"

    @property
    def cover_independent(self) -> bool:
        return self in (ArchVariant.RES_INDEP, ArchVariant.RES_SCALE)

    @property
    def code(self) -> int:
        return list(ArchVariant).index(self)

    @classmethod
    def from_code(cls, code: int) -> "ArchVariant":
        return list(cls)[code]


# -- pixel shuffle ---------------------------------------------------------

def pixel_shuffle(image):
    """S x S x 4 -> 2S x 2S with out[2i+di, 2j+dj] = image[i, j, 2*di+dj]."""
    shape = image.shape
    if len(shape) != 3 or shape[2] != 4:
        raise DimensionError(f"pixel_shuffle expects S x S x 4, got {shape}")
    h, w = shape[:2]
    if isinstance(image, Tensor):
        x = reshape(image, (h, w, 2, 2))
        return reshape(transpose(x, (0, 2, 1, 3)), (2 * h, 2 * w))
    return np.ascontiguousarray(
        np.asarray(image).reshape(h, w, 2, 2).transpose(0, 2, 1, 3).reshape(2 * h, 2 * w)
    )


def pixel_unshuffle(grid):
    """Inverse of :func:`pixel_shuffle`: 2S x 2S -> S x S x 4."""
    shape = grid.shape
    if len(shape) != 2 or shape[0] % 2 or shape[1] % 2:
        raise DimensionError(f"pixel_unshuffle expects an even-sided 2-D map, got {shape}")
    h, w = shape[0] // 2, shape[1] // 2
    if isinstance(grid, Tensor):
        x = reshape(grid, (h, 2, w, 2))
        return reshape(transpose(x, (0, 2, 1, 3)), (h, w, 4))
    return np.ascontiguousarray(
        np.asarray(grid).reshape(h, 2, w, 2).transpose(0, 2, 1, 3).reshape(h, w, 4)
    )


def add_zero_channel(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected S x S x 3 image, got {image.shape}")
    zeros = np.zeros(image.shape[:2] + (1,), dtype=DTYPE)
    return np.concatenate([image.astype(DTYPE), zeros], axis=2)


def normalize_image(image_u8: np.ndarray) -> np.ndarray:
    return np.asarray(image_u8, dtype=DTYPE) / DTYPE(255.0)


def shuffle_image(image_u8: np.ndarray) -> np.ndarray:
    """uint8 S x S x 3 image -> normalized 2S x 2S map."""
    return pixel_shuffle(add_zero_channel(normalize_image(image_u8)))


# -- geometry and tiling ---------------------------------------------------

@dataclass(frozen=True)
class StampGeometry:
    image_side: int
    k_b: int = 1
    k_f: int = 1

    def __post_init__(self):
        s = self.image_side
        if s < 2 or s % 2 or (s & (s - 1)):
            raise ValueError(f"image side must be an even power of two, got {s}")
        if self.k_b < 1 or self.k_f < 1:
            raise ValueError("tile counts must be positive")

    @property
    def shuffled_side(self) -> int:
        return 2 * self.image_side

    @property
    def bins(self) -> int:
        return self.k_b * self.shuffled_side

    @property
    def frames(self) -> int:
        return self.k_f * self.shuffled_side

    def check(self, shape: tuple) -> None:
        if tuple(shape) != (self.bins, self.frames):
            raise DimensionError(
                f"spectrogram shape {tuple(shape)} does not match geometry "
                f"{self.bins} x {self.frames}"
            )

    def min_samples(self, spec: FrameSpec) -> int:
        if spec.frame_len != self.bins:
            raise DimensionError(
                f"frame length {spec.frame_len} gives {spec.frame_len} bins, geometry needs {self.bins}"
            )
        return spec.span(self.frames)


def tile(residual, geometry: StampGeometry):
    """Repeat a 2S x 2S map k_b x k_f times."""
    reps = (geometry.k_b, geometry.k_f)
    if isinstance(residual, Tensor):
        side = residual.shape
        out = np.tile(residual.data, reps)

        def grad_fn(g):
            blocks = g.reshape(reps[0], side[0], reps[1], side[1])
            return (blocks.sum(axis=(0, 2)),)

        return record(out, (residual,), grad_fn, "tile")
    return np.tile(np.asarray(residual, dtype=DTYPE), reps)


def tile_average(spect, geometry: StampGeometry):
    """Mean over all 2S x 2S tiles of a spectrogram grid."""
    values = spect.values if isinstance(spect, Spectrogram) else spect
    geometry.check(values.shape)
    side = geometry.shuffled_side
    k = geometry.k_b * geometry.k_f
    if isinstance(values, Tensor):
        blocks = values.data.reshape(geometry.k_b, side, geometry.k_f, side)
        out = blocks.mean(axis=(0, 2))

        def grad_fn(g):
            return (np.tile(g / DTYPE(k), (geometry.k_b, geometry.k_f)),)

        return record(out, (values,), grad_fn, "tile_average")
    blocks = np.asarray(values, dtype=np.float64).reshape(geometry.k_b, side, geometry.k_f, side)
    return blocks.mean(axis=(0, 2)).astype(DTYPE)


# -- networks --------------------------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class UNet:
    """Two down blocks (strides 2 then 4) mirrored by two up blocks, concat skips."""

    def __init__(self, in_channels: int, width: int = 32, seed: int = 0, prefix: str = "net"):
        self.in_channels = in_channels
        self.width = width
        self.prefix = prefix
        rng = np.random.default_rng(seed)
        w, w2 = width, 2 * width
        self.params: dict[str, Tensor] = {}
        self._zero_bias: dict[str, Tensor] = {}
        # (name, kind, cin, cout)
        self.layers = [
            ("down1a", "conv", in_channels, w),
            ("down1b", "conv", w, w),
            ("down2a", "conv", w, w2),
            ("down2b", "conv", w2, w2),
            ("up1a", "tconv", w2, w2),
            ("up1b", "conv", w2 + w2, w2),
            ("up1c", "tconv", w2, w),
            ("up1d", "conv", w + w, w),
            ("up2a", "tconv", w, w),
            ("up2b", "conv", w + w, w),
            ("up2c", "tconv", w, w),
            ("up2d", "conv", w + in_channels, w),
            ("out", "conv", w, 1),
        ]
        for name, kind, cin, cout in self.layers:
            if kind == "conv":
                shape, fan_in = (cout, cin, 3, 3), cin * 9
            else:
                shape, fan_in = (cin, cout, 3, 3), cout * 9
            self._add(f"{name}.weight", _uniform(rng, shape, fan_in))
            if name == "out":
                self._add(f"{name}.bias", _uniform(rng, (cout,), fan_in))
            else:
                # a bias in front of batch norm is cancelled by the mean subtraction
                self._zero_bias[name] = Tensor(np.zeros(cout, dtype=DTYPE))
                self._add(f"{name}.bn_gamma", np.ones(cout, dtype=DTYPE))
                self._add(f"{name}.bn_beta", np.zeros(cout, dtype=DTYPE))

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True, name=f"{self.prefix}.{name}")

    def _p(self, layer, field):
        return self.params[f"{layer}.{field}"]

    def _block(self, x, layer, stride, transposed=False):
        w, b = self._p(layer, "weight"), self._zero_bias[layer]
        if transposed:
            padding = 0 if stride == 4 else 1
            y = conv_transpose2d(x, w, b, stride=stride, padding=padding, output_padding=1)
        else:
            y = conv2d(x, w, b, stride=stride, padding=1)
        y = batch_norm2d(y, self._p(layer, "bn_gamma"), self._p(layer, "bn_beta"), BN_EPS)
        return leaky_relu(y, LEAKY_SLOPE)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(f"expected [N, {self.in_channels}, H, W], got {x.shape}")
        if x.shape[2] % DOWN_FACTOR or x.shape[3] % DOWN_FACTOR:
            raise DimensionError(
                f"spatial size {x.shape[2:]} must be divisible by {DOWN_FACTOR}"
            )
        d1a = self._block(x, "down1a", 2)
        d1b = self._block(d1a, "down1b", 4)
        d2a = self._block(d1b, "down2a", 2)
        d2b = self._block(d2a, "down2b", 4)
        u = self._block(d2b, "up1a", 4, transposed=True)
        u = self._block(concat([u, d2a], axis=1), "up1b", 1)
        u = self._block(u, "up1c", 2, transposed=True)
        u = self._block(concat([u, d1b], axis=1), "up1d", 1)
        u = self._block(u, "up2a", 4, transposed=True)
        u = self._block(concat([u, d1a], axis=1), "up2b", 1)
        u = self._block(u, "up2c", 2, transposed=True)
        u = self._block(concat([u, x], axis=1), "up2d", 1)
        return conv2d(u, self._p("out", "weight"), self._p("out", "bias"), stride=1, padding=1)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())


class StegoNet:
    """Hiding and reveal networks for one architecture variant."""

    def __init__(
        self,
        variant: ArchVariant = ArchVariant.RES_INDEP,
        geometry: StampGeometry = StampGeometry(64),
        frames: FrameSpec = FrameSpec(128, 63),
        sample_rate: int = 16000,
        width: int = 32,
        seed: int = 0,
    ):
        self.variant = ArchVariant(variant)
        self.geometry = geometry
        self.frames = frames
        self.sample_rate = sample_rate
        self.width = width
        self.hiding: Optional[UNet] = None
        self.scale: Optional[Tensor] = None
        if self.variant is ArchVariant.RES_SCALE:
            self.scale = Tensor(0.01, requires_grad=True, name="scale")
        else:
            in_ch = 1 if self.variant is ArchVariant.RES_INDEP else 2
            self.hiding = UNet(in_ch, width, seed=seed, prefix="hiding")
        self.reveal_net = UNet(1, width, seed=seed + 1, prefix="reveal")

    # parameters and serialization

    def named_parameters(self) -> dict[str, Tensor]:
        named = {}
        if self.hiding is not None:
            named.update({f"hiding.{k}": v for k, v in self.hiding.params.items()})
        if self.scale is not None:
            named["scale"] = self.scale
        named.update({f"reveal.{k}": v for k, v in self.reveal_net.params.items()})
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data for k, v in self.named_parameters().items()}
        g = self.geometry
        state["meta.variant"] = np.array([self.variant.code], dtype=DTYPE)
        state["meta.geometry"] = np.array([g.image_side, g.k_b, g.k_f], dtype=DTYPE)
        state["meta.frames"] = np.array(
            [self.frames.frame_len, self.frames.hop, self.sample_rate, self.width], dtype=DTYPE
        )
        return state

    def save(self, path) -> bytes:
        return checkpoint.save(path, self.state_dict())

    @classmethod
    def from_state(cls, state: dict) -> "StegoNet":
        try:
            variant = ArchVariant.from_code(int(state["meta.variant"][0]))
            side, k_b, k_f = (int(v) for v in state["meta.geometry"])
            frame_len, hop, rate, width = (int(v) for v in state["meta.frames"])
        except KeyError as exc:
            raise checkpoint.CheckpointError(f"checkpoint lacks metadata entry {exc}") from None
        net = cls(variant, StampGeometry(side, k_b, k_f), FrameSpec(frame_len, hop), rate, width)
        for name, tensor in net.named_parameters().items():
            if name not in state:
                raise checkpoint.CheckpointError(f"checkpoint lacks parameter {name!r}")
            if state[name].shape != tensor.shape:
                raise checkpoint.CheckpointError(
                    f"parameter {name!r} has shape {state[name].shape}, expected {tensor.shape}"
                )
            tensor.data = np.array(state[name], dtype=DTYPE)
        return net

    @classmethod
    def load(cls, path) -> "StegoNet":
        return cls.from_state(checkpoint.load(path))

    def hiding_digest(self) -> bytes:
        """32-byte identifier of the parameters that produce stamps."""
        state = self.state_dict()
        keys = [k for k in state if k.startswith(("hiding.", "scale", "meta."))]
        return hashlib.sha256(checkpoint.dumps({k: state[k] for k in keys})).digest()

    # forward paths

    def _as_map(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(x)
        side = self.geometry.shuffled_side
        if t.shape != (side, side):
            raise DimensionError(f"expected {side} x {side} map, got {t.shape}")
        return reshape(t, (1, 1, side, side))

    def hiding_forward(self, shuffled, host_summary=None) -> Tensor:
        """Residual (2S x 2S) for a shuffled image; host summary for dependent variants."""
        side = self.geometry.shuffled_side
        x = self._as_map(shuffled)
        if self.variant is ArchVariant.RES_SCALE:
            return mul(reshape(x, (side, side)), self.scale)
        if self.variant is not ArchVariant.RES_INDEP:
            if host_summary is None:
                raise ValueError(f"{self.variant.value} needs the host summary as input")
            x = concat([x, self._as_map(host_summary)], axis=1)
        return reshape(self.hiding(x), (side, side))

    def hide(self, shuffled, host_grid: Tensor) -> Tensor:
        """Container spectrogram grid for a shuffled image and a host grid."""
        self.geometry.check(host_grid.shape)
        if self.variant.cover_independent:
            residual = self.hiding_forward(shuffled)
            return add(host_grid, tile(residual, self.geometry))
        summary = tile_average(host_grid, self.geometry)
        out = tile(self.hiding_forward(shuffled, summary), self.geometry)
        if self.variant is ArchVariant.PLAIN_DEP:
            return out
        return add(host_grid, out)

    def reveal_tensor(self, container_grid) -> Tensor:
        """Unclipped revealed image in normalized units, S x S x 3."""
        grid = container_grid if isinstance(container_grid, Tensor) else Tensor(container_grid)
        avg = tile_average(grid, self.geometry)
        out = self.reveal_net(self._as_map(avg))
        side = self.geometry.shuffled_side
        image4 = pixel_unshuffle(reshape(out, (side, side)))
        return image4[:, :, :3]

    def variant_forward(self, image_u8: np.ndarray, host_grid) -> tuple:
        """(container grid, unclipped revealed image) without any channel in between."""
        host = host_grid if isinstance(host_grid, Tensor) else Tensor(host_grid)
        container = self.hide(shuffle_image(image_u8), host)
        return container, self.reveal_tensor(container)

    def encode(self, image_u8: np.ndarray) -> "Stamp":
        if not self.variant.cover_independent:
            raise ValueError("cover-dependent variant cannot precompute stamps")
        side = self.geometry.image_side
        if image_u8.shape != (side, side, 3):
            raise DimensionError(f"expected {side} x {side} x 3 image, got {image_u8.shape}")
        residual = self.hiding_forward(shuffle_image(image_u8))
        return Stamp(residual.data.copy(), self.geometry, self.hiding_digest())

    def reveal(self, container: Spectrogram) -> np.ndarray:
        """Revealed S x S x 3 image, clipped to [0, 1] and scaled to [0, 255]."""
        values = container.values if isinstance(container, Spectrogram) else container
        self.geometry.check(values.shape)
        image = self.reveal_tensor(values).data
        return np.clip(image, 0.0, 1.0) * DTYPE(255.0)


# -- stamps ----------------------------------------------------------------

STAMP_MAGIC = b"PXWR"
STAMP_VERSION = 1


@dataclass
class Stamp:
    residual: np.ndarray
    geometry: StampGeometry
    digest: bytes = bytes(32)

    def __post_init__(self):
        self.residual = np.asarray(self.residual, dtype=DTYPE)
        side = self.geometry.shuffled_side
        if self.residual.shape != (side, side):
            raise DimensionError(f"stamp residual must be {side} x {side}")
        if not np.isfinite(self.residual).all():
            raise ValueError("stamp contains non-finite values")
        if len(self.digest) != 32:
            raise ValueError("checkpoint digest must be 32 bytes")

    def to_bytes(self) -> bytes:
        g = self.geometry
        header = STAMP_MAGIC + struct.pack("<IIII", STAMP_VERSION, g.shuffled_side, g.k_b, g.k_f)
        return header + self.digest + self.residual.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Stamp":
        if blob[:4] != STAMP_MAGIC:
            raise ValueError("not a stamp file (bad magic)")
        if len(blob) < 52:
            raise ValueError("truncated stamp header")
        version, side, k_b, k_f = struct.unpack_from("<IIII", blob, 4)
        if version != STAMP_VERSION:
            raise ValueError(f"unsupported stamp version {version}")
        digest = blob[20:52]
        expected = 52 + 4 * side * side
        if len(blob) != expected:
            raise ValueError(f"stamp payload has {len(blob)} bytes, expected {expected}")
        residual = np.frombuffer(blob, dtype="<f4", offset=52).reshape(side, side)
        return cls(residual.astype(DTYPE), StampGeometry(side // 2, k_b, k_f), digest)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Stamp":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def embed(stamp: Stamp, host: Spectrogram) -> Spectrogram:
    """container = host + tiled stamp; nothing else about the host changes.

    The sum is formed in float64 so that ``container - host`` gives back the
    float32 stamp exactly.
    """
    stamp.geometry.check(host.values.shape)
    tiled = tile(stamp.residual, stamp.geometry).astype(np.float64)
    return host.with_values(host.values.astype(np.float64) + tiled)
