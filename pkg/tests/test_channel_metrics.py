import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from audiostego.channel import NoiseSpec, apply_noise, misalign, perturbation
from audiostego.dsp import Waveform
from audiostego.metrics import INFINITE, MetricsReport, format_db, is_infinite, psnr, snr_db, ssim


def _wave(rng, n=4000):
    return Waveform(rng.uniform(-0.8, 0.8, n), 16000)


# -- channel ----------------------------------------------------------------

@pytest.mark.parametrize("spec", [NoiseSpec("awgn", 0.0, 5), NoiseSpec("none", 0.7, 5)])
def test_identity_channel_bitwise(rng, spec):
    w = _wave(rng)
    assert apply_noise(w, spec).samples.tobytes() == w.samples.tobytes()


@pytest.mark.parametrize("kind", ["awgn", "speckle"])
@pytest.mark.parametrize("sigma", [0.01, 0.1, 0.5, 0.9])
def test_relative_norm_law(rng, kind, sigma):
    x = _wave(rng).samples
    p = perturbation(x, NoiseSpec(kind, sigma, 3))
    assert np.linalg.norm(p) / np.linalg.norm(x.astype(np.float64)) == pytest.approx(sigma, abs=1e-6)


def test_awgn_output_ratio(rng):
    w = _wave(rng)
    out = apply_noise(w, NoiseSpec("awgn", 0.25, 1)).samples.astype(np.float64)
    x = w.samples.astype(np.float64)
    assert np.linalg.norm(out - x) / np.linalg.norm(x) == pytest.approx(0.25, abs=1e-6)


def test_speckle_is_signal_proportional(rng):
    x = _wave(rng).samples.copy()
    x[:100] = 0
    p = perturbation(x, NoiseSpec("speckle", 0.5, 2))
    assert not p[:100].any()


def test_seeded_determinism(rng):
    w = _wave(rng)
    a = apply_noise(w, NoiseSpec("awgn", 0.3, 11)).samples
    b = apply_noise(w, NoiseSpec("awgn", 0.3, 11)).samples
    c = apply_noise(w, NoiseSpec("awgn", 0.3, 12)).samples
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


def test_reseeded_offsets_seed():
    assert NoiseSpec("awgn", 0.1, 7).reseeded(5).seed == 12


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("pink", 0.1)
    with pytest.raises(ValueError):
        NoiseSpec("awgn", -0.1)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        perturbation(np.array([1.0, np.nan]), NoiseSpec("awgn", 0.1))


def test_misalign_identity_and_inverse(rng):
    w = _wave(rng, 100)
    assert misalign(w, 0).samples.tobytes() == w.samples.tobytes()
    assert misalign(misalign(w, 17), -17).samples.tobytes() == w.samples.tobytes()
    np.testing.assert_array_equal(misalign(w, 3).samples[3:], w.samples[:-3])


def test_misalign_range(rng):
    with pytest.raises(ValueError):
        misalign(_wave(rng, 10), 10)
    with pytest.raises(ValueError):
        misalign(_wave(rng, 10), -10)


# -- SNR / PSNR -------------------------------------------------------------

def test_snr_examples(rng):
    h = rng.standard_normal(1000)
    assert snr_db(h, h + h) == pytest.approx(0.0, abs=1e-12)
    assert snr_db(h, h + 0.1 * h) == pytest.approx(20.0, abs=1e-9)
    assert snr_db(h, h) is INFINITE


def test_snr_errors():
    with pytest.raises(ValueError):
        snr_db(np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        snr_db(np.ones(4), np.ones(5))


def test_psnr_examples():
    a = np.zeros((8, 8, 3))
    assert psnr(a, a + 255) == pytest.approx(0.0)
    value = psnr(a, a + 16)
    assert value == pytest.approx(10 * np.log10(255 ** 2 / 256), abs=1e-12)
    assert value == pytest.approx(24.03, abs=0.02)
    assert is_infinite(psnr(a, a))


def test_snr_psnr_decrease_with_noise(rng):
    h = rng.standard_normal(2000)
    img = rng.integers(0, 256, (16, 16, 3)).astype(float)
    g, gi = rng.standard_normal(2000), rng.standard_normal(img.shape)
    snrs = [snr_db(h, h + s * g) for s in (0.01, 0.1, 0.5, 1.0)]
    psnrs = [psnr(img, img + s * gi) for s in (1, 5, 20, 50)]
    assert all(x > y for x, y in zip(snrs, snrs[1:]))
    assert all(x > y for x, y in zip(psnrs, psnrs[1:]))


def test_format_db():
    assert format_db(INFINITE) == "inf" and format_db(3.0) == "3.0000"


# -- SSIM -------------------------------------------------------------------

def test_ssim_identity(rng):
    x = rng.integers(0, 256, (32, 32, 3))
    assert ssim(x, x) == 1.0


def test_ssim_inverted_ramp_is_negative():
    ramp = np.tile(np.linspace(64, 192, 32), (32, 1))
    img = np.stack([ramp, ramp.T, ramp], axis=2)
    assert ssim(img, 255 - img) < 0


@pytest.mark.parametrize("shape", [(32, 32, 3), (20, 27, 3), (64, 64)])
def test_ssim_matches_skimage(rng, shape):
    a = rng.integers(0, 256, shape).astype(float)
    b = np.clip(a + rng.normal(0, 30, shape), 0, 255)
    kw = dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=255)
    if len(shape) == 3:
        kw["channel_axis"] = 2
    assert ssim(a, b) == pytest.approx(structural_similarity(a, b, **kw), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_ssim_symmetric_and_bounded(seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 256, (16, 16, 3)), r.integers(0, 256, (16, 16, 3))
    v = ssim(a, b)
    assert abs(v - ssim(b, a)) < 1e-9 and -1 <= v <= 1


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def test_report_aggregate():
    r = MetricsReport.aggregate([{"snr_db": 10.0, "ssim": 0.5, "psnr_db": 20.0},
                                 {"snr_db": 20.0, "ssim": 0.7, "psnr_db": INFINITE}])
    assert r.audio_snr_db == 15.0 and r.image_ssim == pytest.approx(0.6)
    assert r.image_psnr_db is INFINITE and len(r.pairs) == 2
