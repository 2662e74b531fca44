import numpy as np
import pytest
from scipy.spatial import cKDTree

from uwrestore import tracking as tr
from uwrestore import wave_sim as ws
from uwrestore.errors import DataError
from uwrestore.imaging import Video, warp


def checkerboard(size=96, square=8):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.where(((xx // square) + (yy // square)) % 2 == 0, 0.8, 0.2)


def test_constant_frame_has_no_features():
    assert len(tr.detect_features(np.full((64, 64), 0.4))) == 0


def test_small_frame_rejected():
    with pytest.raises(DataError):
        tr.detect_features(np.zeros((20, 64)))


def test_checkerboard_corners():
    img = checkerboard()
    pts = tr.detect_features(img)
    # interior intersections sit between pixels 8k-1 and 8k
    grid = np.arange(8, 96, 8) - 0.5
    corners = np.array([(x, y) for x in grid for y in grid])
    dist, _ = cKDTree(corners).query(pts)
    interior = np.all((pts > 6) & (pts < 89), axis=1)
    assert interior.sum() > 0
    assert np.all(dist[interior] <= 1.0)
    # most intersections are found
    found, _ = cKDTree(pts).query(corners)
    assert np.mean(found <= 1.0) > 0.9


def test_detection_deterministic(texture128):
    a = tr.detect_features(texture128)
    b = tr.detect_features(texture128)
    assert np.array_equal(a, b)
    # deduplication radius respected
    d, _ = cKDTree(a).query(a, k=2)
    assert d[:, 1].min() > tr.TrackerParams().dedup_radius


def test_static_video_gives_constant_valid_trajectories(texture128):
    video = Video(np.stack([texture128] * 6))
    seeds = tr.detect_features(texture128)[:40]
    trajs = tr.track(video, seeds)
    for t in trajs:
        assert t.valid
        assert np.abs(t.points - t.points[0]).max() < 1e-3


def test_empty_seed_list_is_an_error(texture128):
    with pytest.raises(DataError):
        tr.track(Video(np.stack([texture128] * 3)), np.zeros((0, 2)))


def shifted_video(base, n_frames, step=1.0):
    return Video(np.stack([warp(base, np.full(base.shape, -step * t + 0j)) for t in range(n_frames)]))


@pytest.mark.parametrize("n_frames", [6, 7])
def test_cot_split_rule_on_drift(n_frames):
    # a drift of s px/frame puts the half-video centres s * (T - T//2) px apart:
    # 2.7 px for T=6 (kept), 3.6 px for T=7 (rejected)
    step = 0.9
    base = ws.make_scene("noise", 128, seed=5)
    video = shifted_video(base, n_frames, step)
    seeds = np.array([[50.0, 60.0], [64.0, 64.0], [70.0, 50.0]])
    trajs = tr.track(video, seeds)
    expected_split = step * (n_frames - n_frames // 2)
    for t in trajs:
        offsets = np.diff(t.points, axis=0)
        assert np.allclose(offsets, [step, 0.0], atol=0.05)
        assert tr.cot_split_distance(t.points) == pytest.approx(expected_split, abs=0.1)
        assert t.valid == (expected_split <= 3)
        if not t.valid:
            assert "drift" in t.reason


def test_cot_split_never_passes_large_drift():
    pts = np.zeros((20, 2))
    pts[10:, 0] = 3.2
    assert tr.cot_split_distance(pts) > 3


def test_to_displacement_constant():
    traj = tr.Trajectory(np.tile([12.0, 7.0], (5, 1)), True, 3)
    dt = tr.to_displacement(traj)
    assert np.array_equal(dt.anchor, [12.0, 7.0])
    assert np.all(dt.offsets == 0)
    assert dt.point_id == 3


def test_to_displacement_circle_centre():
    t = np.arange(40)
    pts = np.stack([30 + 4 * np.cos(2 * np.pi * t / 20), 25 + 4 * np.sin(2 * np.pi * t / 20)], axis=1)
    dt = tr.to_displacement(tr.Trajectory(pts, True, 0))
    assert np.allclose(dt.anchor, [30, 25], atol=1e-12)
    assert np.abs(dt.offsets.mean(axis=0)).max() < 1e-9
    assert np.allclose(dt.positions(), pts, atol=1e-12)


def test_to_displacement_median_and_invalid():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [10.0, 10.0]])
    assert np.array_equal(tr.to_displacement(tr.Trajectory(pts, True, 0), "median").anchor, [1, 1])
    with pytest.raises(DataError):
        tr.to_displacement(tr.Trajectory(pts, False, 0))


def test_trajectory_csv_round_trip(tmp_path, rng):
    trajs = [tr.Trajectory(rng.uniform(0, 50, (4, 2)), bool(i % 2), i) for i in range(3)]
    tr.save_trajectories(trajs, tmp_path / "t.csv")
    back = tr.load_trajectories(tmp_path / "t.csv")
    assert [b.point_id for b in back] == [0, 1, 2]
    for a, b in zip(trajs, back):
        assert np.array_equal(a.points, b.points)
        assert a.valid == b.valid


def test_tracking_distorted_video_small():
    clean = ws.make_scene("mixed", 128, seed=2)
    model = ws.random_model(2, target_sigma_motion=3.0, width=128, height=128)
    bundle = ws.synthesize(clean, model, 12)
    seeds = tr.detect_features(bundle.distorted.frames[0])
    trajs = tr.track(bundle.distorted, seeds)
    truth = tr.ground_truth_trajectories(model, seeds, 12)
    errs = [np.hypot(*(t.points - truth[:, i]).T) for i, t in enumerate(trajs) if t.valid]
    assert len(errs) > 0.5 * len(seeds)
    assert np.median(np.concatenate(errs)) <= 0.5
