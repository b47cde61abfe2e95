import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiostego.dsp import FrameSpec, Spectrogram, Waveform, stdct
from audiostego.engine import DimensionError, Tape, Tensor, backward, mean_all, square
from audiostego.model import (
    ArchVariant,
    Stamp,
    StampGeometry,
    StegoNet,
    UNet,
    embed,
    pixel_shuffle,
    pixel_unshuffle,
    shuffle_image,
    tile,
    tile_average,
)

DESK = StampGeometry(64)


def _image(rng, side=64):
    return rng.integers(0, 256, (side, side, 3), dtype=np.uint8)


def _host(rng, geometry=DESK):
    return Spectrogram(rng.standard_normal((geometry.bins, geometry.frames)).astype(np.float32),
                       FrameSpec(geometry.bins, 63), 0)


# -- pixel shuffle ----------------------------------------------------------

def test_pixel_shuffle_layout():
    r, g, b = 0.1, 0.2, 0.3
    out = pixel_shuffle(np.array([[[r, g, b, 0.0]]]))
    np.testing.assert_array_equal(out, [[r, g], [b, 0.0]])
    np.testing.assert_array_equal(pixel_unshuffle(out), [[[r, g, b, 0.0]]])


def test_pixel_shuffle_index_rule(rng):
    img = rng.standard_normal((3, 5, 4))
    out = pixel_shuffle(img)
    for i in range(3):
        for j in range(5):
            for di in (0, 1):
                for dj in (0, 1):
                    assert out[2 * i + di, 2 * j + dj] == img[i, j, 2 * di + dj]


def test_pixel_shuffle_zero():
    assert not pixel_shuffle(np.zeros((4, 4, 4))).any()


def test_pixel_shuffle_rejects_channels():
    with pytest.raises(DimensionError):
        pixel_shuffle(np.zeros((2, 2, 3)))
    with pytest.raises(DimensionError):
        pixel_unshuffle(np.zeros((3, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_shuffle_round_trip_bitwise(h, w, seed):
    grid = np.random.default_rng(seed).standard_normal((2 * h, 2 * w)).astype(np.float32)
    assert pixel_shuffle(pixel_unshuffle(grid)).tobytes() == grid.tobytes()
    img = np.random.default_rng(seed).standard_normal((h, w, 4)).astype(np.float32)
    assert pixel_unshuffle(pixel_shuffle(img)).tobytes() == img.tobytes()


def test_tensor_shuffle_matches_numpy(rng):
    img = rng.standard_normal((4, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(pixel_shuffle(Tensor(img)).data, pixel_shuffle(img))


def test_shuffle_image_normalizes_and_zero_channel(rng):
    img = _image(rng, 8)
    grid = shuffle_image(img)
    assert grid.shape == (16, 16)
    assert not grid[1::2, 1::2].any()
    np.testing.assert_allclose(grid[0::2, 0::2], img[:, :, 0] / 255.0, rtol=1e-6)


# -- geometry / tiling ------------------------------------------------------

def test_geometry_validation():
    with pytest.raises(ValueError):
        StampGeometry(48)
    with pytest.raises(ValueError):
        StampGeometry(64, k_b=0)
    paper = StampGeometry(256, 8, 2)
    assert (paper.bins, paper.frames) == (4096, 1024)


def test_tile_average_identity_single_tile(rng):
    g = np.random.default_rng(0).standard_normal((128, 128)).astype(np.float32)
    np.testing.assert_array_equal(tile_average(g, DESK), g)


def test_tile_average_of_embedded_zero_host(rng):
    geo = StampGeometry(4, 2, 3)
    stamp = Stamp(rng.standard_normal((8, 8)), geo)
    host = Spectrogram(np.zeros((16, 24), dtype=np.float32), FrameSpec(16, 4), 0)
    np.testing.assert_array_equal(tile_average(embed(stamp, host), geo), stamp.residual)


def test_tile_average_reduces_noise_variance():
    geo = StampGeometry(2, 2, 2)
    rng = np.random.default_rng(99)
    draws = np.array([tile_average(rng.standard_normal((8, 8)), geo)[0, 0] for _ in range(1000)])
    assert draws.var() == pytest.approx(1.0 / 4, rel=0.10)


def test_tile_average_geometry_mismatch():
    with pytest.raises(DimensionError):
        tile_average(np.zeros((128, 64)), DESK)


# -- embed ------------------------------------------------------------------

def test_zero_stamp_leaves_host_bitwise(rng):
    host = _host(rng)
    out = embed(Stamp(np.zeros((128, 128)), DESK), host)
    assert np.array_equal(out.values, host.values)


def test_container_minus_host_is_tiled_stamp(rng):
    geo = StampGeometry(8, 2, 3)
    host = Spectrogram(rng.standard_normal((32, 48)).astype(np.float32) * 100, FrameSpec(32, 8), 0)
    stamp = Stamp(rng.standard_normal((16, 16)) * 1e-3, geo)
    diff = embed(stamp, host).values - host.values
    assert diff.astype(np.float32).tobytes() == tile(stamp.residual, geo).tobytes()


def test_embed_linearity_across_hosts(rng):
    stamp = Stamp(rng.standard_normal((128, 128)), DESK)
    h1, h2 = _host(rng), _host(rng)
    d = embed(stamp, h1).values - embed(stamp, h2).values
    np.testing.assert_allclose(d, h1.values.astype(np.float64) - h2.values, atol=1e-12)


def test_embed_geometry_mismatch(rng):
    stamp = Stamp(np.zeros((128, 128)), DESK)
    host = Spectrogram(np.zeros((128, 129), dtype=np.float32), FrameSpec(128, 63), 0)
    with pytest.raises(DimensionError):
        embed(stamp, host)


# -- stamp file -------------------------------------------------------------

def test_stamp_file_round_trip(tmp_path, rng):
    stamp = Stamp(rng.standard_normal((128, 128)), StampGeometry(64, 1, 1), bytes(range(32)))
    path = tmp_path / "s.stamp"
    stamp.save(path)
    blob = path.read_bytes()
    assert blob[:4] == b"PXWR"
    assert len(blob) == 4 + 16 + 32 + 4 * 128 * 128
    back = Stamp.load(path)
    assert back.residual.tobytes() == stamp.residual.tobytes()
    assert back.geometry == stamp.geometry and back.digest == stamp.digest


def test_stamp_rejects_truncation(rng):
    blob = Stamp(np.zeros((128, 128)), DESK).to_bytes()
    with pytest.raises(ValueError):
        Stamp.from_bytes(blob[:-4])
    with pytest.raises(ValueError):
        Stamp.from_bytes(b"XXXX" + blob[4:])


# -- networks ---------------------------------------------------------------

def test_unet_preserves_shape():
    net = UNet(1, width=4, seed=0)
    out = net(Tensor(np.random.default_rng(0).standard_normal((1, 1, 128, 128))))
    assert out.shape == (1, 1, 128, 128)


def test_unet_rejects_bad_size():
    with pytest.raises(DimensionError):
        UNet(1, width=4)(Tensor(np.zeros((1, 1, 96, 96))))


def test_desk_parameter_count():
    assert UNet(1, width=32).num_params() == 259_937


def test_hiding_and_reveal_same_depth():
    net = StegoNet(ArchVariant.RES_DEP, width=4)
    assert len(net.hiding.layers) == len(net.reveal_net.layers)


def test_every_parameter_gets_gradient(rng):
    net = StegoNet(ArchVariant.RES_INDEP, width=4, seed=3)
    host = Tensor(rng.standard_normal((128, 128)))
    with Tape() as tape:
        container, revealed = net.variant_forward(_image(rng), host)
        loss = mean_all(square(revealed)) + mean_all(square(container))
    backward(loss, tape)
    for name, p in net.named_parameters().items():
        assert p.grad is not None and np.linalg.norm(p.grad) > 0, name


def test_res_indep_stamp_ignores_host(rng):
    net = StegoNet(ArchVariant.RES_INDEP, width=4)
    img = _image(rng)
    residuals = []
    for _ in range(3):
        host = Tensor(rng.standard_normal((128, 128)))
        container = net.hide(shuffle_image(img), host)
        residuals.append((np.asarray(container.data, np.float64) - host.data).astype(np.float32))
    np.testing.assert_allclose(residuals[0], residuals[1], atol=1e-5)
    assert net.encode(img).residual.tobytes() == net.encode(img.copy()).residual.tobytes()


def test_res_scale_zero_weight_is_identity(rng):
    net = StegoNet(ArchVariant.RES_SCALE, width=4)
    net.scale.data = np.float32(0.0) * net.scale.data
    host = rng.standard_normal((128, 128)).astype(np.float32)
    container, _ = net.variant_forward(_image(rng), host)
    np.testing.assert_array_equal(container.data, host)


def test_res_scale_initial_weight():
    assert float(StegoNet(ArchVariant.RES_SCALE, width=4).scale.data) == pytest.approx(0.01)


def test_plain_dep_has_no_identity_path(rng):
    net = StegoNet(ArchVariant.PLAIN_DEP, width=4)
    host = rng.standard_normal((128, 128)).astype(np.float32)
    container, _ = net.variant_forward(np.zeros((64, 64, 3), np.uint8), host)
    assert not np.allclose(container.data, host)


def test_res_dep_equals_res_indep_with_zero_host_weights(rng):
    indep = StegoNet(ArchVariant.RES_INDEP, width=4, seed=5)
    dep = StegoNet(ArchVariant.RES_DEP, width=4, seed=9)
    for name, p in indep.hiding.params.items():
        target = dep.hiding.params[name]
        if target.shape == p.shape:
            target.data = p.data.copy()
        else:
            # host channel is the second input channel in both down1a and the last skip
            w = np.zeros(target.shape, dtype=np.float32)
            w[:, : target.shape[1] - 1] = p.data
            target.data = w
    host = rng.standard_normal((128, 128)).astype(np.float32)
    img = _image(rng)
    a = indep.hiding_forward(shuffle_image(img)).data
    b = dep.hiding_forward(shuffle_image(img), host).data
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_dependent_variants_refuse_stamps(rng):
    for variant in (ArchVariant.RES_DEP, ArchVariant.PLAIN_DEP):
        with pytest.raises(ValueError, match="cover-dependent variant cannot precompute stamps"):
            StegoNet(variant, width=4).encode(_image(rng))


def test_reveal_untrained_is_in_range(rng):
    net = StegoNet(width=4)
    out = net.reveal(_host(rng))
    assert out.shape == (64, 64, 3)
    assert np.isfinite(out).all() and out.min() >= 0 and out.max() <= 255


def test_reveal_geometry_mismatch(rng):
    with pytest.raises(DimensionError):
        StegoNet(width=4).reveal(np.zeros((128, 64), np.float32))


def test_checkpoint_round_trip_keeps_outputs(tmp_path, rng):
    net = StegoNet(ArchVariant.RES_SCALE, StampGeometry(64, 1, 2), FrameSpec(128, 31), width=4, seed=2)
    net.save(tmp_path / "n.ckpt")
    back = StegoNet.load(tmp_path / "n.ckpt")
    assert back.variant is ArchVariant.RES_SCALE and back.geometry == net.geometry
    assert back.frames == net.frames and back.width == 4
    assert back.hiding_digest() == net.hiding_digest()
    host = Spectrogram(rng.standard_normal((128, 256)).astype(np.float32), net.frames, 0)
    np.testing.assert_array_equal(back.reveal(host), net.reveal(host))


def test_stamp_carries_checkpoint_digest(rng):
    net = StegoNet(width=4)
    assert net.encode(_image(rng)).digest == net.hiding_digest()
    other = StegoNet(width=4, seed=1)
    assert other.hiding_digest() != net.hiding_digest()


def test_end_to_end_on_real_spectrogram(rng):
    net = StegoNet(width=4)
    wave = Waveform(rng.uniform(-0.5, 0.5, 8192), 16000)
    host = stdct(wave, net.frames, max_frames=128)
    stamp = net.encode(_image(rng))
    container = embed(stamp, host)
    assert net.reveal(container).shape == (64, 64, 3)
