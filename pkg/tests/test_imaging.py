import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import analytic_texture
from uwrestore.errors import DataError
from uwrestore.imaging import (LUMA_WEIGHTS, MotionField, Video, center_crop_resize, load_field,
                               load_sequence, mean_frame, median_frame, read_image, resize,
                               sample_bilinear, save_field, save_sequence, warp, warp_video,
                               write_image)


def test_sample_bilinear_grid_nodes_are_exact(rng):
    img = rng.random((7, 9))
    ys, xs = np.mgrid[0:7, 0:9]
    assert np.array_equal(sample_bilinear(img, xs, ys), img)


def test_sample_bilinear_midpoint():
    img = np.tile([0.2, 0.4, 0.4], (3, 1))
    assert sample_bilinear(img, 0.5, 1.0) == pytest.approx(0.3, abs=1e-15)


def test_sample_bilinear_clamps_outside():
    img = np.arange(12, dtype=float).reshape(3, 4) / 12
    assert sample_bilinear(img, -5, -5) == img[0, 0]
    assert sample_bilinear(img, 100, 1) == img[1, 3]
    assert sample_bilinear(img, 2, 50) == img[2, 2]


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_sample_bilinear_is_linear_in_intensity(a, b, seed):
    r = np.random.default_rng(seed)
    i, j = r.random((2, 6, 5))
    x, y = r.uniform(-2, 7, (2, 20))
    lhs = sample_bilinear(a * i + b * j, x, y)
    rhs = a * sample_bilinear(i, x, y) + b * sample_bilinear(j, x, y)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_warp_zero_field_is_identity(rng):
    img = rng.random((20, 30))
    assert np.array_equal(warp(img, np.zeros((20, 30), complex)), img)


def test_warp_constant_shift(rng):
    img = rng.random((20, 30))
    out = warp(img, np.ones((20, 30), complex))
    assert np.allclose(out[:, :-1], img[:, 1:])


def test_warp_dimension_mismatch():
    with pytest.raises(DataError):
        warp(np.zeros((10, 10)), np.zeros((10, 11), complex))
    with pytest.raises(DataError):
        warp_video(np.zeros((3, 10, 10)), np.zeros((2, 10, 10), complex))


def test_warp_round_trip_within_two_interpolation_bounds():
    n = 96
    yy, xx = np.mgrid[0:n, 0:n].astype(float)

    def d(x, y):
        return 2.5 * np.sin(2 * np.pi * (x + 0.5 * y) / 80) + 1j * 1.8 * np.cos(2 * np.pi * (y - 0.3 * x) / 70)

    def warped(x, y):
        dd = d(x, y)
        return analytic_texture(x + dd.real, y + dd.imag)

    img = analytic_texture(xx, yy)
    field = d(xx, yy)
    # Oracle for the bilinear interpolation error: dense resampling of both
    # analytic images that get interpolated (the texture and its warp).
    r = np.random.default_rng(0)
    px, py = r.uniform(0, n - 1, (2, 200_000))
    bound = max(np.abs(sample_bilinear(img, px, py) - analytic_texture(px, py)).max(),
                np.abs(sample_bilinear(warped(xx, yy), px, py) - warped(px, py)).max())

    round_trip = warp(warp(img, field), -field)
    # exact composition: the second warp samples the first at y = x - d(x)
    sx, sy = xx - field.real, yy - field.imag
    d2 = d(sx, sy)
    exact = analytic_texture(sx + d2.real, sy + d2.imag)
    inner = (slice(8, -8), slice(8, -8))
    err = np.abs(round_trip - exact)[inner].max()
    assert err <= 2 * bound
    # and the round trip is close to the original image
    assert np.abs(round_trip - img)[inner].max() < 0.1


def test_mean_and_median_frames():
    f = np.random.default_rng(2).random((8, 8))
    assert np.allclose(mean_frame(np.stack([f, f, f])), f, rtol=0, atol=1e-15)
    two = np.stack([np.zeros((4, 4)), np.ones((4, 4))])
    assert np.all(mean_frame(two) == 0.5)
    three = np.stack([np.zeros((4, 4)), np.zeros((4, 4)), np.ones((4, 4))])
    assert np.all(median_frame(three) == 0)
    with pytest.raises(DataError):
        mean_frame(np.zeros((0, 4, 4)))


def test_mean_frame_commutes_with_affine_intensity_map(rng):
    v = rng.random((5, 6, 7))
    assert np.allclose(mean_frame(0.3 * v + 0.2), 0.3 * mean_frame(v) + 0.2)


def test_video_validation():
    with pytest.raises(DataError):
        Video(np.zeros((1, 4, 4)))
    v = np.zeros((2, 4, 4))
    v[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        Video(v)
    assert Video(np.full((2, 3, 3), 1.5)).frames.max() == 1.0


@pytest.mark.parametrize("bits", [8, 16])
def test_sequence_round_trip(tmp_path, rng, bits):
    video = Video(rng.random((3, 12, 10)), fps=25.0)
    save_sequence(video, tmp_path, bit_depth=bits)
    back = load_sequence(tmp_path)
    step = 1.0 / (2 ** bits - 1)
    assert back.frames.shape == (3, 12, 10)
    assert back.fps == 25.0
    assert np.abs(back.frames - video.frames).max() <= step / 2 + 1e-12
    # a second round trip is bit-exact
    save_sequence(back, tmp_path / "again", bit_depth=bits)
    assert np.array_equal(load_sequence(tmp_path / "again").frames, back.frames)


def test_sequence_gap_names_index(tmp_path, rng):
    save_sequence(Video(rng.random((4, 8, 8))), tmp_path)
    (tmp_path / "frame_00002.png").unlink()
    with pytest.raises(DataError, match="frame 2"):
        load_sequence(tmp_path)
    (tmp_path / "manifest.json").unlink()
    with pytest.raises(DataError, match="frame 2"):
        load_sequence(tmp_path)


def test_sequence_corrupt_and_nan_files(tmp_path, rng):
    save_sequence(Video(rng.random((3, 8, 8))), tmp_path)
    (tmp_path / "frame_00001.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="frame 1"):
        load_sequence(tmp_path)

    nan_dir = tmp_path / "nan"
    nan_dir.mkdir()
    for i in range(2):
        img = np.full((8, 8), 0.5, np.float32)
        if i == 1:
            img[3, 3] = np.nan
        cv2.imwrite(str(nan_dir / f"frame_{i:05d}.tif"), img)
    with pytest.raises(DataError, match="frame 1"):
        load_sequence(nan_dir)


def test_color_input_converted_with_luma_weights(tmp_path, rng):
    rgb = rng.integers(0, 256, (6, 5, 3)).astype(np.uint8)
    cv2.imwrite(str(tmp_path / "c.png"), rgb[..., ::-1])  # cv2 stores BGR
    gray = read_image(tmp_path / "c.png")
    oracle = (LUMA_WEIGHTS[0] * rgb[..., 0] + LUMA_WEIGHTS[1] * rgb[..., 1]
              + LUMA_WEIGHTS[2] * rgb[..., 2]) / 255.0
    assert np.allclose(gray, oracle, atol=1e-12)


def test_write_image_clamps(tmp_path):
    write_image(tmp_path / "a.png", np.array([[-1.0, 2.0]]))
    assert np.array_equal(read_image(tmp_path / "a.png"), [[0.0, 1.0]])


def test_field_round_trip_and_layout(tmp_path, rng):
    vals = rng.normal(size=(3, 4, 5)) + 1j * rng.normal(size=(3, 4, 5))
    path = tmp_path / "f.umvf"
    save_field(MotionField(vals), path)
    raw = path.read_bytes()
    assert raw[:4] == b"UMVF"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [5, 4, 3]
    first = np.frombuffer(raw[16:24], "<f4")
    assert np.allclose(first, [vals[0, 0, 0].real, vals[0, 0, 0].imag], atol=1e-6)
    back = load_field(path)
    assert np.allclose(back.values, vals, atol=1e-6)
    path.write_bytes(raw[:-4])
    with pytest.raises(DataError):
        load_field(path)


def test_motion_field_components():
    f = MotionField.from_components(np.ones((2, 3)), 2 * np.ones((2, 3)))
    assert f.values.shape == (1, 2, 3)
    assert f.dims == (3, 2, 1)
    assert np.all(f.dx == 1) and np.all(f.dy == 2)


def test_resize_and_center_crop():
    img = np.linspace(0, 1, 40 * 60).reshape(40, 60)
    out = center_crop_resize(img, 20)
    assert out.shape == (20, 20)
    assert np.allclose(resize(np.full((10, 10), 0.3), (5, 7)), 0.3)
    cplx = resize(np.full((8, 8), 1 + 2j), (4, 4))
    assert np.allclose(cplx, 1 + 2j)
