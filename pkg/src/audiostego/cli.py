"""Command-line interface.

Every failure exits non-zero with one line on stderr of the form
``error: <Kind>: <message>``.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics
from .dataio import DatasetSpec, PairedCorpus, generate_corpus, read_image, read_wav, write_image, write_wav
from .dsp import FrameSpec, istdct, stdct
from .model import Stamp, StampGeometry, StegoNet, embed as embed_stamp
from .trainer import (
    TrainConfig,
    beta_sweep,
    capacity_report,
    evaluate,
    evaluation_pairs,
    train,
    write_report_csv,
)


class CliError(Exception):
    """Validation failure reported to the user as-is."""


def _fail(exc: BaseException) -> int:
    kind = "UsageError" if isinstance(exc, click.UsageError) else type(exc).__name__
    message = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
    click.echo(f"error: {kind}: {' '.join(message.split())}", err=True)
    return 2 if isinstance(exc, click.UsageError) else 1


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {text!r}") from None


def _corpus(root, side: int, clip_samples: int, pairing_seed: int) -> PairedCorpus:
    root = Path(root)
    images, audio = root / "images", root / "audio"
    if not images.is_dir() or not audio.is_dir():
        raise CliError(f"{root} must contain images/ and audio/ directories")
    return PairedCorpus(DatasetSpec(str(images), str(audio), side, clip_samples, pairing_seed))


def _config_options(fn):
    """One override flag per TrainConfig field (``--noise-sigma`` for noise_sigma ...)."""
    for f in reversed(dataclasses.fields(TrainConfig)):
        kind = str if f.default is None else type(f.default)
        flag = "--" + f.name.replace("_", "-")
        fn = click.option(flag, f.name, type=kind, default=None,
                          help=f"override {f.name} (default {f.default})")(fn)
    return fn


def _resolve_config(config_path, overrides: dict) -> TrainConfig:
    base = TrainConfig.from_json(config_path).to_dict() if config_path else {}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="progress logging on stderr")
def cli(verbose):
    """Hide images in audio spectrograms and reveal them again."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)


@cli.command("gen-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--images", "n_images", default=4, show_default=True)
@click.option("--clips", "n_clips", default=4, show_default=True)
@click.option("--side", default=64, show_default=True)
@click.option("--clip-samples", default=16000, show_default=True)
@click.option("--sample-rate", default=16000, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_corpus_cmd(out_dir, n_images, n_clips, side, clip_samples, sample_rate, seed):
    """Write a synthetic corpus: OUT/images/*.ppm and OUT/audio/*.wav."""
    if n_images < 1 or n_clips < 1:
        raise CliError("need at least one image and one clip")
    StampGeometry(side)
    generate_corpus(out_dir, n_images, n_clips, side, clip_samples, seed, sample_rate)
    click.echo(f"wrote {n_images} images and {n_clips} clips to {out_dir}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--pairing-seed", default=0, show_default=True)
@_config_options
def train_cmd(config_path, corpus_dir, pairing_seed, **overrides):
    """Train a model; flags override values from --config."""
    config = _resolve_config(config_path, overrides)
    corpus = _corpus(corpus_dir, config.image_side, config.clip_samples, pairing_seed)
    flags = {"config": config_path, "corpus": corpus_dir, "pairing_seed": pairing_seed}
    flags.update({k: v for k, v in overrides.items() if v is not None})
    result = train(config, corpus, progress=True, flags=flags)
    click.echo(f"initial_loss={result.initial_loss!r} final_loss={result.final_loss!r}")


def _load_checkpoint(path) -> StegoNet:
    return StegoNet.load(path)


@cli.command("encode")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-stamp", required=True, type=click.Path(dir_okay=False))
def encode_cmd(checkpoint, image, out_stamp):
    """Precompute an image's stamp. Reads no audio."""
    net = _load_checkpoint(checkpoint)
    img = read_image(image, net.geometry.image_side)
    net.encode(img).save(out_stamp)


def _frames_for(geometry: StampGeometry, checkpoint, hop) -> FrameSpec:
    if checkpoint:
        net = _load_checkpoint(checkpoint)
        if net.geometry != geometry:
            raise CliError("stamp geometry does not match the checkpoint")
        return net.frames
    return FrameSpec(geometry.bins, hop)


@cli.command("embed")
@click.option("--stamp", "stamp_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host-wav", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-wav", required=True, type=click.Path(dir_okay=False))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
              help="take the frame spec from this checkpoint")
@click.option("--hop", default=63, show_default=True, help="hop size when no checkpoint is given")
@click.option("--pcm16", is_flag=True, help="write 16-bit PCM instead of float32")
def embed_cmd(stamp_path, host_wav, out_wav, checkpoint, hop, pcm16):
    """Add a stamp to a host recording."""
    stamp = Stamp.load(stamp_path)
    frames = _frames_for(stamp.geometry, checkpoint, hop)
    host = read_wav(host_wav)
    need = frames.span(stamp.geometry.frames)
    if len(host) < need:
        raise CliError(f"host has {len(host)} samples; geometry needs at least {need} samples")
    container = istdct(embed_stamp(stamp, stdct(host, frames, stamp.geometry.frames)), host.sample_rate)
    write_wav(out_wav, container, pcm16=pcm16)
    written = read_wav(out_wav)
    click.echo(f"snr_db={metrics.format_db(metrics.snr_db(host, written))}", err=True)


@cli.command("decode")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--container-wav", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-image", required=True, type=click.Path(dir_okay=False))
@click.option("--host-wav", type=click.Path(exists=True, dir_okay=False),
              help="only used to report SNR")
def decode_cmd(checkpoint, container_wav, out_image, host_wav):
    """Reveal the image hidden in a container recording."""
    net = _load_checkpoint(checkpoint)
    container = read_wav(container_wav)
    need = net.geometry.min_samples(net.frames)
    if len(container) < need:
        raise CliError(
            f"container has {len(container)} samples; geometry needs at least {need} samples"
        )
    revealed = net.reveal(stdct(container, net.frames, net.geometry.frames))
    write_image(out_image, np.round(revealed).astype(np.uint8))
    if host_wav:
        host = read_wav(host_wav)
        click.echo(f"snr_db={metrics.format_db(metrics.snr_db(host, container))}", err=True)


@cli.command("evaluate")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--noise", type=click.Choice(["none", "awgn", "speckle"]), default="awgn", show_default=True)
@click.option("--sigmas", default="0.1,0.5,0.75,0.9", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False))
@click.option("--clip-samples", type=int, default=None,
              help="segment length (default: the minimum the geometry needs)")
@click.option("--pairing-seed", default=0, show_default=True)
@click.option("--seed", default=0, show_default=True, help="base noise seed")
@click.option("--offset", default=0, show_default=True, help="misalignment in samples")
def evaluate_cmd(checkpoint, corpus_dir, noise, sigmas, out_csv, clip_samples, pairing_seed, seed, offset):
    """Metrics over a noise ladder; one CSV row per sigma."""
    net = _load_checkpoint(checkpoint)
    clip_samples = clip_samples or net.geometry.min_samples(net.frames)
    corpus = _corpus(corpus_dir, net.geometry.image_side, clip_samples, pairing_seed)
    grid = [(noise, s) for s in _floats(sigmas)]
    rows = evaluate(net, evaluation_pairs(corpus), grid, seed=seed, offset=offset)
    write_report_csv(out_csv, rows)


@cli.command("beta-sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--betas", default="0.1,0.5,0.9", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False))
@click.option("--pairing-seed", default=0, show_default=True)
@_config_options
def beta_sweep_cmd(config_path, corpus_dir, betas, out_csv, pairing_seed, **overrides):
    """Train one model per beta and tabulate noise-free SNR and SSIM."""
    config = _resolve_config(config_path, overrides)
    corpus = _corpus(corpus_dir, config.image_side, config.clip_samples, pairing_seed)
    beta_sweep(config, _floats(betas), corpus, out_csv)


@cli.command("capacity")
@click.option("--side", default=256, show_default=True)
@click.option("--k-b", default=8, show_default=True)
@click.option("--k-f", default=2, show_default=True)
@click.option("--frame-len", default=4096, show_default=True)
@click.option("--hop", default=62, show_default=True)
@click.option("--sample-rate", default=44100, show_default=True)
@click.option("--clip-samples", type=int, default=None,
              help="clip length (default: the minimum the geometry needs)")
def capacity_cmd(side, k_b, k_f, frame_len, hop, sample_rate, clip_samples):
    """Hidden-image bit rate; defaults to the large-scale geometry."""
    bps = capacity_report(StampGeometry(side, k_b, k_f), sample_rate, clip_samples,
                          FrameSpec(frame_len, hop))
    click.echo(f"{bps / 1000:.0f} Kbps")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="audiostego", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("error: Abort: interrupted", err=True)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure becomes one line
        return _fail(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
