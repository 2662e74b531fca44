"""Salient-point detection, KLT tracking and displacement trajectories.

Points are detected in the first frame as the union of Harris corners and
FAST keypoints, tracked frame to frame with pyramidal Lucas-Kanade, and
weeded out when

* the tracker itself loses the point (small minimum eigenvalue, large
  window residual, a forward-backward error above ``fb_max``, or a window
  that no affine map of the frame-0 window explains), or
* the centre of trajectory over the first half of the video and over the
  second half differ by more than ``cot_max`` pixels.

Frame-to-frame KLT alone is biased under refraction: a 31x31 window
is visibly sheared, and its best translation drifts off the window centre.
Each frame-to-frame estimate is therefore refined by inverse-compositional
affine alignment of the frame-0 window, which also removes chain drift.

Coordinates are ``(x, y)`` in pixels throughout.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DataError
from .imaging import frames_of, sample_bilinear

log = logging.getLogger(__name__)


@dataclass
class TrackerParams:
    harris_k: float = 0.04
    harris_quality: float = 0.01
    harris_block: int = 3
    fast_threshold: int = 20  # on the 0..255 scale
    dedup_radius: float = 2.0
    subpix_window: int = 3
    win_size: int = 31
    levels: int = 3
    max_iter: int = 30
    eps: float = 0.01
    min_eig: float = 1e-4
    max_residual: float = 25.0  # mean abs window difference, 0..255 scale
    fb_max: float = 1.0
    affine: bool = True
    affine_iters: int = 20
    affine_smooth: float = 1.0
    affine_stride: int = 2
    max_affine_residual: float = 0.05  # weighted RMS intensity, 0..1 scale
    max_affine_jump: float = 2.0  # px between KLT estimate and affine refinement
    cot_max: float = 3.0
    anchor: str = "mean"


@dataclass
class Trajectory:
    """Positions ``points[t] = (x, y)`` of one tracked point."""

    points: np.ndarray
    valid: bool = True
    point_id: int = 0
    reason: str = ""

    def __len__(self):
        return len(self.points)


@dataclass
class DisplacementTrajectory:
    """Offsets of a trajectory from its centre of trajectory (``anchor``)."""

    anchor: np.ndarray
    offsets: np.ndarray
    point_id: int = 0

    @property
    def complex_offsets(self):
        return self.offsets[:, 0] + 1j * self.offsets[:, 1]

    def positions(self):
        return self.anchor[None, :] + self.offsets


def to_uint8(frame):
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def detect_features(frame, params=None):
    """Union of Harris and FAST detections in ``frame``, as an ``(N, 2)`` array.

    Candidates are refined to sub-pixel accuracy, scored by the Harris
    response, and thinned so no two survivors are within ``dedup_radius``
    (the stronger one is kept).  Output order is by decreasing response.
    """
    params = params or TrackerParams()
    frame = np.asarray(frame, dtype=np.float64)
    if min(frame.shape) < 32:
        raise DataError("frame must be at least 32x32 for feature detection")
    img = to_uint8(frame)
    candidates = []
    harris = cv2.goodFeaturesToTrack(
        img, maxCorners=0, qualityLevel=params.harris_quality, minDistance=params.dedup_radius,
        blockSize=params.harris_block, useHarrisDetector=True, k=params.harris_k)
    if harris is not None:
        candidates.append(harris.reshape(-1, 2))
    fast = cv2.FastFeatureDetector_create(threshold=params.fast_threshold, nonmaxSuppression=True)
    keypoints = fast.detect(img)
    if keypoints:
        candidates.append(np.array([kp.pt for kp in keypoints], dtype=np.float32))
    if not candidates:
        return np.zeros((0, 2))
    pts = np.concatenate(candidates).astype(np.float32)

    w = params.subpix_window
    criteria = (cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 40, 0.001)
    refined = cv2.cornerSubPix(img.astype(np.float32), pts.reshape(-1, 1, 2).copy(), (w, w), (-1, -1), criteria)
    refined = refined.reshape(-1, 2).astype(np.float64)
    # cornerSubPix can slide along straight edges; keep the raw point then
    moved = np.hypot(*(refined - pts).T) > w
    refined[moved] = pts[moved]
    h, wd = frame.shape
    refined[:, 0] = np.clip(refined[:, 0], 0, wd - 1)
    refined[:, 1] = np.clip(refined[:, 1], 0, h - 1)

    response = cv2.cornerHarris(img.astype(np.float32), params.harris_block, 3, params.harris_k)
    ix = np.clip(np.round(refined[:, 0]).astype(int), 0, wd - 1)
    iy = np.clip(np.round(refined[:, 1]).astype(int), 0, h - 1)
    score = response[iy, ix]
    # stable sort so ties keep detector order and the result is deterministic
    order = np.argsort(-score, kind="stable")
    refined = refined[order]

    tree = cKDTree(refined)
    keep = np.ones(len(refined), dtype=bool)
    for i in range(len(refined)):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(refined[i], params.dedup_radius):
            if j > i:
                keep[j] = False
    return refined[keep]


def _lk(prev, nxt, pts, params):
    criteria = (cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, params.max_iter, params.eps)
    out, status, err = cv2.calcOpticalFlowPyrLK(
        prev, nxt, pts.reshape(-1, 1, 2).astype(np.float32), None,
        winSize=(params.win_size, params.win_size), maxLevel=params.levels - 1,
        criteria=criteria, minEigThreshold=params.min_eig)
    return out.reshape(-1, 2).astype(np.float64), status.ravel().astype(bool), err.ravel()


class _AffineTemplates:
    """Frame-0 windows prepared for inverse-compositional affine alignment."""

    def __init__(self, frame0, centres, half, smooth, stride=1):
        self.smooth = smooth
        img = self._prep(frame0)
        gy, gx = np.gradient(img)
        r = np.arange(-half, half + 1, stride, dtype=np.float64)
        uy, ux = np.meshgrid(r, r, indexing="ij")
        self.ux = ux.ravel()
        self.uy = uy.ravel()
        sigma = half / 2.0
        self.w = np.exp(-(self.ux ** 2 + self.uy ** 2) / (2 * sigma ** 2))
        xs = centres[:, 0:1] + self.ux[None]
        ys = centres[:, 1:2] + self.uy[None]
        self.template = sample_bilinear(img, xs, ys)
        gxs = sample_bilinear(gx, xs, ys)
        gys = sample_bilinear(gy, xs, ys)
        # steepest-descent images for parameters (tx, ty, a11, a12, a21, a22)
        self.sd = np.stack([gxs, gys, gxs * self.ux, gxs * self.uy, gys * self.ux, gys * self.uy], axis=-1)
        self.sdw = self.sd * self.w[None, :, None]
        hess = np.einsum("npi,npj->nij", self.sdw, self.sd)
        self.hess_inv = np.linalg.pinv(hess)

    def _prep(self, frame):
        if self.smooth > 0:
            return ndimage.gaussian_filter(frame, self.smooth)
        return frame

    def align(self, frame, idx, pos, lin, iters, tol=5e-3):
        """Refine warps ``x = pos + lin @ u`` of templates ``idx`` onto ``frame``."""
        img = self._prep(frame)
        pos = pos.copy()
        lin = lin.copy()
        ux, uy, w = self.ux, self.uy, self.w
        active = np.ones(len(idx), dtype=bool)
        for _ in range(iters):
            a = np.flatnonzero(active)
            if len(a) == 0:
                break
            k = idx[a]
            xs = pos[a, 0:1] + lin[a, 0, 0:1] * ux + lin[a, 0, 1:2] * uy
            ys = pos[a, 1:2] + lin[a, 1, 0:1] * ux + lin[a, 1, 1:2] * uy
            err = sample_bilinear(img, xs, ys) - self.template[k]
            delta = np.einsum("nij,nj->ni", self.hess_inv[k], np.einsum("npi,np->ni", self.sdw[k], err))
            step = np.empty((len(a), 2, 2))
            step[:, 0, 0] = 1.0 + delta[:, 2]
            step[:, 0, 1] = delta[:, 3]
            step[:, 1, 0] = delta[:, 4]
            step[:, 1, 1] = 1.0 + delta[:, 5]
            new_lin = lin[a] @ np.linalg.inv(step)
            shift = np.einsum("nij,nj->ni", new_lin, delta[:, :2])
            lin[a] = new_lin
            pos[a] = pos[a] - shift
            active[a[np.hypot(*shift.T) < tol]] = False
        xs = pos[:, 0:1] + lin[:, 0, 0:1] * ux + lin[:, 0, 1:2] * uy
        ys = pos[:, 1:2] + lin[:, 1, 0:1] * ux + lin[:, 1, 1:2] * uy
        err = sample_bilinear(img, xs, ys) - self.template[idx]
        resid = np.sqrt(np.sum(w * err ** 2, axis=1) / w.sum())
        return pos, lin, resid


def cot_split_distance(points):
    """Distance between the centres of the first and last ``T // 2`` positions."""
    points = np.asarray(points, dtype=np.float64)
    half = len(points) // 2
    if half == 0:
        return 0.0
    first = points[:half].mean(axis=0)
    last = points[len(points) - half:].mean(axis=0)
    return float(np.hypot(*(first - last)))


def track(video, seeds, params=None):
    """Track ``seeds`` (positions in frame 0) through every frame of ``video``.

    Returns one :class:`Trajectory` per seed, with ``point_id`` equal to the
    seed index.  Lost points keep their last position for the remaining
    frames and are flagged invalid with a ``reason``.
    """
    params = params or TrackerParams()
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    if len(seeds) == 0:
        raise DataError("no seed points to track")
    frames = frames_of(video)
    n_frames, h, w = frames.shape
    if np.any(seeds < 0) or np.any(seeds[:, 0] > w - 1) or np.any(seeds[:, 1] > h - 1):
        raise DataError("seed points must lie inside the first frame")

    imgs = [to_uint8(f) for f in frames]
    positions = np.empty((n_frames, len(seeds), 2))
    positions[0] = seeds
    alive = np.ones(len(seeds), dtype=bool)
    reasons = [""] * len(seeds)
    if params.affine:
        templates = _AffineTemplates(frames[0], seeds, params.win_size // 2, params.affine_smooth,
                                     params.affine_stride)
        linear = np.tile(np.eye(2), (len(seeds), 1, 1))
    for t in range(1, n_frames):
        positions[t] = positions[t - 1]
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            continue
        prev_pts = positions[t - 1, idx]
        fwd, ok_f, err = _lk(imgs[t - 1], imgs[t], prev_pts, params)
        back, ok_b, _ = _lk(imgs[t], imgs[t - 1], fwd, params)
        fb = np.hypot(*(back - prev_pts).T)
        inside = (fwd[:, 0] >= 0) & (fwd[:, 0] <= w - 1) & (fwd[:, 1] >= 0) & (fwd[:, 1] <= h - 1)
        good = ok_f & ok_b & inside & (fb <= params.fb_max) & (err <= params.max_residual)
        affine_bad = np.zeros(len(idx), dtype=bool)
        if params.affine and np.any(good):
            g = np.flatnonzero(good)
            pos, lin, resid = templates.align(frames[t], idx[g], fwd[g], linear[idx[g]], params.affine_iters)
            jump = np.hypot(*(pos - fwd[g]).T)
            bad = (resid > params.max_affine_residual) | (jump > params.max_affine_jump) | ~np.all(np.isfinite(pos), axis=1)
            fwd[g] = pos
            linear[idx[g]] = lin
            affine_bad[g[bad]] = True
            good &= ~affine_bad
            inside = (fwd[:, 0] >= 0) & (fwd[:, 0] <= w - 1) & (fwd[:, 1] >= 0) & (fwd[:, 1] <= h - 1)
            good &= inside
        positions[t, idx[good]] = fwd[good]
        for j in np.flatnonzero(~good):
            i = int(idx[j])
            if affine_bad[j]:
                reasons[i] = f"not affine-trackable at frame {t}"
            elif not (ok_f[j] and ok_b[j]):
                reasons[i] = f"lost at frame {t}"
            elif not inside[j]:
                reasons[i] = f"left frame at {t}"
            elif fb[j] > params.fb_max:
                reasons[i] = f"forward-backward error {fb[j]:.2f} px at frame {t}"
            else:
                reasons[i] = f"residual {err[j]:.1f} at frame {t}"
        alive[idx[~good]] = False

    trajs = []
    for i in range(len(seeds)):
        pts = positions[:, i].copy()
        valid = bool(alive[i])
        reason = reasons[i]
        if valid:
            split = cot_split_distance(pts)
            if split > params.cot_max:
                valid = False
                reason = f"centre drift {split:.2f} px between halves"
        trajs.append(Trajectory(pts, valid, i, reason))
    n_bad = sum(not t.valid for t in trajs)
    log.info("tracked %d points over %d frames, %d rejected", len(trajs), n_frames, n_bad)
    return trajs


def to_displacement(traj, anchor="mean"):
    """Displacement trajectory of ``traj`` about its centre (mean or median)."""
    if not traj.valid:
        raise DataError(f"trajectory {traj.point_id} is invalid: {traj.reason}")
    pts = np.asarray(traj.points, dtype=np.float64)
    if anchor == "mean":
        centre = pts.mean(axis=0)
    elif anchor == "median":
        centre = np.median(pts, axis=0)
    else:
        raise ValueError(f"anchor must be 'mean' or 'median', got {anchor!r}")
    return DisplacementTrajectory(centre, pts - centre, traj.point_id)


def displacement_trajectories(trajs, anchor="mean"):
    return [to_displacement(t, anchor) for t in trajs if t.valid]


def save_trajectories(trajs, path):
    """CSV with one row per ``(point_id, t, x, y, valid)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "t", "x", "y", "valid"])
        for tr in trajs:
            for t, (x, y) in enumerate(tr.points):
                writer.writerow([tr.point_id, t, repr(float(x)), repr(float(y)), int(tr.valid)])


def load_trajectories(path):
    rows = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pid = int(row["point_id"])
            entry = rows.setdefault(pid, {"valid": bool(int(row["valid"])), "pts": {}})
            entry["pts"][int(row["t"])] = (float(row["x"]), float(row["y"]))
    trajs = []
    for pid in sorted(rows):
        entry = rows[pid]
        n = max(entry["pts"]) + 1
        if sorted(entry["pts"]) != list(range(n)):
            raise DataError(f"trajectory {pid} has missing frames")
        pts = np.array([entry["pts"][t] for t in range(n)])
        trajs.append(Trajectory(pts, entry["valid"], pid))
    return trajs


def ground_truth_trajectories(model, seeds, n_frames):
    """True image positions of the scene points under ``seeds`` (frame-0 pixels).

    ``model`` is a :class:`uwrestore.wave_sim.SurfaceModel`.
    """
    from .wave_sim import image_to_scene, scene_to_image

    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    px, py = image_to_scene(model, seeds[:, 0], seeds[:, 1], 0.0)
    out = np.empty((n_frames, len(seeds), 2))
    for t in range(n_frames):
        x, y = scene_to_image(model, px, py, float(t))
        out[t, :, 0] = x
        out[t, :, 1] = y
    return out
