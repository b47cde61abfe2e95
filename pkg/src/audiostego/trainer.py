"""Training loop, evaluation sweeps and capacity arithmetic."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import metrics
from .channel import NoiseSpec, apply_noise, misalign, perturbation
from .dataio import PairedCorpus
from .dsp import FrameSpec, Waveform, istdct, istdct_tensor, stdct, stdct_tensor
from .engine import checkpoint
from .engine.optim import AdamState, adam_step
from .engine.tensor import DTYPE, NumericError, Tape, Tensor, add, backward, zero_grad
from .losses import LossWeights, total_loss
from .model import ArchVariant, StampGeometry, StegoNet, shuffle_image

log = logging.getLogger(__name__)

LOG_HEADER = ["iteration", "total_loss", "image_mae", "audio_mse", "dtw_term", "snr_db", "ssim"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str = "ResIndep"
    image_side: int = 64
    k_b: int = 1
    k_f: int = 1
    frame_len: int = 128
    hop: int = 63
    sample_rate: int = 16000
    clip_samples: int = 8192
    beta: float = 0.5
    lam: float = 1e-4
    gamma: float = 1.0
    lr: float = 0.01
    batch: int = 1
    iterations: int = 2000
    noise_kind: str = "none"
    noise_sigma: float = 0.0
    noise_seed: int = 0
    seed: int = 0
    width: int = 32
    checkpoint_every: int = 0
    dtw_decimation: int = 32
    log_path: Optional[str] = None
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        ArchVariant(self.variant)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch != 1:
            raise ValueError("only batch size 1 is supported")
        # validate the derived objects eagerly
        _ = self.geometry, self.weights, self.frames, self.train_noise
        need = self.geometry.min_samples(self.frames)
        if self.clip_samples < need:
            raise ValueError(f"clip_samples {self.clip_samples} < {need} needed by the geometry")

    @property
    def geometry(self) -> StampGeometry:
        return StampGeometry(self.image_side, self.k_b, self.k_f)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.beta, self.lam, self.gamma)

    @property
    def frames(self) -> FrameSpec:
        return FrameSpec(self.frame_len, self.hop)

    @property
    def train_noise(self) -> NoiseSpec:
        return NoiseSpec(self.noise_kind, self.noise_sigma, self.noise_seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def build_model(config: TrainConfig) -> StegoNet:
    return StegoNet(
        ArchVariant(config.variant), config.geometry, config.frames,
        config.sample_rate, config.width, seed=config.seed,
    )


@dataclass
class Step:
    """Everything computed for one image/host pair."""

    loss: Tensor
    image_mae: float
    audio_mse: float
    dtw: float
    container: Waveform
    revealed: np.ndarray  # S x S x 3 in [0, 255]
    tensors: dict = field(default_factory=dict)


def forward_pair(
    net: StegoNet,
    image_u8: np.ndarray,
    host: Waveform,
    weights: LossWeights,
    noise: NoiseSpec,
    decimation: int = 32,
) -> Step:
    """Hide, transmit through the channel, receive and reveal; returns the loss terms."""
    frames, geometry = net.frames, net.geometry
    host_spec = stdct(host, frames, max_frames=geometry.frames)
    span = frames.span(geometry.frames)
    host_grid = Tensor(host_spec.values)
    container_grid = net.hide(shuffle_image(image_u8), host_grid)
    body = istdct_tensor(container_grid, frames)
    tail = host_spec.tail
    if noise.is_identity:
        received_body = body
    else:
        full = np.concatenate([body.data, tail])
        pert = perturbation(full, noise).astype(DTYPE)
        received_body = add(body, Tensor(pert[:span]))
    received_grid = stdct_tensor(received_body, frames, geometry.frames)
    revealed = net.reveal_tensor(received_grid)
    target = Tensor(image_u8.astype(DTYPE) / DTYPE(255.0))
    terms = total_loss(
        target, revealed, host_grid, container_grid,
        Tensor(host.samples[:span]), body, weights, decimation,
    )
    container = Waveform(np.concatenate([body.data, tail]), host.sample_rate)
    out_image = np.clip(revealed.data, 0.0, 1.0) * DTYPE(255.0)
    return Step(
        terms.total, terms.image_mae, terms.audio_mse, terms.dtw, container, out_image,
        {"host_grid": host_grid, "container_grid": container_grid, "revealed": revealed},
    )


@dataclass
class TrainResult:
    net: StegoNet
    rows: list
    initial_loss: float
    final_loss: float
    checkpoint_bytes: Optional[bytes] = None


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _dump_diagnostics(config: TrainConfig, iteration: int, image, host, tensors) -> Path:
    base = Path(config.log_path or "train").with_suffix("")
    path = Path(f"{base}.diverged-{iteration}.npz")
    arrays = {"image": image, "host": host.samples}
    arrays.update({k: v.data for k, v in tensors.items()})
    np.savez(path, **arrays)
    return path


def train(config: TrainConfig, corpus: PairedCorpus, progress: bool = False,
          flags: Optional[dict] = None) -> TrainResult:
    """Train a model end-to-end; writes the CSV log and checkpoint if paths are set.

    ``flags`` (e.g. command-line options) are echoed into the log header.
    """
    if corpus.spec.image_side != config.image_side or corpus.spec.clip_samples != config.clip_samples:
        raise ValueError("corpus geometry does not match the training config")
    net = build_model(config)
    params = net.parameters()
    state = AdamState(lr=config.lr)
    weights = config.weights
    rows = []
    pairs = corpus.stream()
    initial = None
    above = 0
    log_fh = writer = None
    if config.log_path:
        log_fh = open(config.log_path, "w", newline="")
        log_fh.write("# " + json.dumps(config.to_dict(), sort_keys=True) + "\n")
        if flags is not None:
            log_fh.write("# flags " + json.dumps(flags, sort_keys=True, default=str) + "\n")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
    started = time.time()
    blob = None
    try:
        for it in range(1, config.iterations + 1):
            image, host = next(pairs)
            noise = config.train_noise.reseeded(it)
            zero_grad(params)
            try:
                with Tape() as tape:
                    step = forward_pair(net, image, host, weights, noise, config.dtw_decimation)
                backward(step.loss, tape)
                tape.clear()
            except NumericError as exc:
                dump = _dump_diagnostics(config, it, image, host, {})
                raise TrainingError(f"iteration {it}: {exc}; inputs dumped to {dump}") from exc
            loss = step.loss.item()
            if not np.isfinite(loss):
                dump = _dump_diagnostics(config, it, image, host, step.tensors)
                raise TrainingError(f"iteration {it}: non-finite loss; tensors dumped to {dump}")
            adam_step(params, [p.grad for p in params], state)
            if initial is None:
                initial = loss
            above = above + 1 if loss > 10 * initial else 0
            if above >= 100:
                dump = _dump_diagnostics(config, it, image, host, step.tensors)
                raise TrainingError(
                    f"diverged: loss above 10x its initial value for 100 iterations (dump: {dump})"
                )
            snr = metrics.snr_db(host, step.container)
            row = [it, loss, step.image_mae, step.audio_mse, step.dtw,
                   metrics.format_db(snr), metrics.ssim(image, step.revealed)]
            rows.append(row)
            if writer:
                writer.writerow([_fmt(v) for v in row])
            if progress and (it % 50 == 0 or it == 1):
                log.info("iter %d loss %.5f mae %.4f mse %.5f snr %s ssim %.3f (%.0fs)",
                         it, loss, step.image_mae, step.audio_mse, row[5], row[6],
                         time.time() - started)
            if config.checkpoint_path and config.checkpoint_every and it % config.checkpoint_every == 0:
                net.save(config.checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    if config.checkpoint_path:
        blob = net.save(config.checkpoint_path)
    return TrainResult(net, rows, initial, rows[-1][1], blob)


def evaluation_pairs(corpus: PairedCorpus, epoch: int = 0) -> list:
    return list(corpus.epoch(epoch))


def run_pipeline(net: StegoNet, image_u8, host: Waveform, noise: NoiseSpec,
                 offset: int = 0) -> dict:
    """encode -> embed -> istdct -> channel -> stdct -> reveal, with metrics."""
    frames, geometry = net.frames, net.geometry
    host_spec = stdct(host, frames, max_frames=geometry.frames)
    grid = net.hide(shuffle_image(image_u8), Tensor(host_spec.values))
    container_spec = host_spec.with_values(grid.data)
    container = istdct(container_spec, host.sample_rate)
    received = apply_noise(container, noise)
    if offset:
        received = misalign(received, offset)
    rx_spec = stdct(received, frames, max_frames=geometry.frames)
    revealed = net.reveal(rx_spec)
    return {
        "snr_db": metrics.snr_db(host, container),
        "ssim": metrics.ssim(image_u8, revealed),
        "psnr_db": metrics.psnr(image_u8, revealed),
        "revealed": revealed,
    }


def evaluate(
    net: StegoNet,
    pairs: Sequence,
    noise_grid: Iterable[tuple[str, float]],
    seed: int = 0,
    offset: int = 0,
) -> list[tuple[str, float, metrics.MetricsReport]]:
    """Mean SNR/SSIM/PSNR per (noise kind, sigma) cell; parameters are not touched."""
    out = []
    for kind, sigma in noise_grid:
        per_pair = []
        for i, (image, host) in enumerate(pairs):
            noise = NoiseSpec(kind, sigma, seed + i)
            result = run_pipeline(net, image, host, noise, offset)
            result.pop("revealed")
            per_pair.append(result)
        out.append((kind, sigma, metrics.MetricsReport.aggregate(per_pair)))
    return out


def write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["noise", "sigma", "snr_db", "ssim", "psnr_db"])
        for kind, sigma, rep in rows:
            w.writerow([kind, sigma, metrics.format_db(rep.audio_snr_db),
                        f"{rep.image_ssim:.6f}", metrics.format_db(rep.image_psnr_db)])


def beta_sweep(base: TrainConfig, betas: Sequence[float], corpus: PairedCorpus,
               csv_path=None) -> list[tuple[float, object, float]]:
    """Train one model per beta from the same seed; noise-free evaluation on epoch 0 pairs."""
    for b in betas:
        if not 0.0 <= b <= 1.0:
            raise ValueError(f"beta {b} outside [0, 1]")
    pairs = evaluation_pairs(corpus)
    table = []
    for b in betas:
        cfg = base.replace(beta=b, log_path=None, checkpoint_path=None)
        result = train(cfg, corpus)
        (_, _, rep), = evaluate(result.net, pairs, [("none", 0.0)])
        table.append((b, rep.audio_snr_db, rep.image_ssim))
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", "snr_db", "ssim"])
            for b, snr, s in table:
                w.writerow([b, metrics.format_db(snr), f"{s:.6f}"])
    return table


def capacity_report(geometry: StampGeometry, sample_rate: int,
                    clip_samples: Optional[int] = None,
                    frames: Optional[FrameSpec] = None) -> float:
    """Hidden-image bits per second of audio.

    The clip length defaults to the minimum number of samples the geometry
    needs under ``frames``.
    """
    if clip_samples is None:
        if frames is None:
            raise ValueError("give clip_samples or a frame spec")
        clip_samples = geometry.min_samples(frames)
    bits = geometry.image_side ** 2 * 3 * 8
    return bits / (clip_samples / sample_rate)


def params_digest(net: StegoNet) -> bytes:
    return checkpoint.digest(net.state_dict())
