"""Synthetic wavy-surface refraction.

The water surface is a sum of travelling sinusoids

    z(x, y, t) = sum_k a_k * sin(kx_k * x + ky_k * y + w_k * t + phi_k)

and the camera pixel ``x`` sees the flat scene at ``x + g(x, t)`` with
``g = alpha * grad z`` (small-slope refraction, ``alpha = h * (1 - 1/n_w)``
in pixels).  So a distorted frame is ``warp(clean, g)``.

Two fields come out of a simulation:

``surface_field``
    ``g`` on the camera grid.  Exactly Fourier-sparse (2 bins per wave).
``true_field``
    The restoration field ``u`` on the scene grid: scene point ``p`` is
    observed at ``p + u(p, t)``.  This is what tracked displacement
    trajectories measure, and ``warp(distorted, u)`` gives back the clean
    frame up to interpolation.  ``u`` is found by solving ``x + g(x) = p`` with
    Newton's method; the map is invertible while ``|grad g| < 1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .errors import NumericalError
from .imaging import MotionField, Video, warp

N_WATER = 1.33
DEFAULT_DEPTH_CM = 25.0
DEFAULT_PIXELS_PER_CM = 10.0

# Sampling ranges for random_model.  Wavelengths are relative to min(W, H).
WAVELENGTH_RANGE = (0.4, 1.0)
PERIOD_RANGE = (10.0, 25.0)  # frames
K_RANGE = (2, 6)


def depth_gain(depth_cm=DEFAULT_DEPTH_CM, pixels_per_cm=DEFAULT_PIXELS_PER_CM, n_water=N_WATER):
    """Pixels of displacement per unit surface slope for a scene at ``depth_cm``."""
    return depth_cm * pixels_per_cm * (1.0 - 1.0 / n_water)


@dataclass
class SineWave:
    amplitude: float
    wavevector: tuple[float, float]
    angular_frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        self.wavevector = (float(self.wavevector[0]), float(self.wavevector[1]))
        if not self.amplitude > 0:
            raise ValueError("wave amplitude must be positive")
        if np.hypot(*self.wavevector) == 0:
            raise ValueError("wavevector must be non-zero")


@dataclass
class SurfaceModel:
    waves: list[SineWave]
    depth_gain: float = field(default_factory=depth_gain)
    seed: int | None = None

    def __post_init__(self):
        if len(self.waves) < 1:
            raise ValueError("a surface needs at least one wave")
        if not np.isfinite(self.depth_gain):
            raise ValueError("depth_gain must be finite")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        waves = [SineWave(**w) for w in d["waves"]]
        return cls(waves=waves, depth_gain=d.get("depth_gain", depth_gain()), seed=d.get("seed"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def scaled(self, factor):
        """Copy with every amplitude multiplied by ``factor``."""
        waves = [SineWave(w.amplitude * factor, w.wavevector, w.angular_frequency, w.phase)
                 for w in self.waves]
        return SurfaceModel(waves, self.depth_gain, self.seed)

    def analytic_sigma(self):
        """RMS magnitude of ``g`` over space and time (cross terms average out)."""
        return float(np.sqrt(sum(
            0.5 * (self.depth_gain * w.amplitude) ** 2 * (w.wavevector[0] ** 2 + w.wavevector[1] ** 2)
            for w in self.waves)))

    def max_slope_gradient(self):
        """Upper bound on the spectral norm of ``grad g``; the mapping folds if >= 1."""
        return float(sum(self.depth_gain * w.amplitude * (w.wavevector[0] ** 2 + w.wavevector[1] ** 2)
                         for w in self.waves))


@dataclass
class GroundTruthBundle:
    distorted: Video
    true_field: MotionField
    surface_field: MotionField
    clean: np.ndarray
    model: SurfaceModel
    rng_seed: int | None = None


def _phase(w, x, y, t):
    return w.wavevector[0] * x + w.wavevector[1] * y + w.angular_frequency * t + w.phase


def surface_height(model, x, y, t):
    """Evaluate ``z(x, y, t)``; arguments broadcast."""
    x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, y, t)))
    z = np.zeros(x.shape)
    for w in model.waves:
        z += w.amplitude * np.sin(_phase(w, x, y, t))
    return z if z.ndim else float(z)


def surface_gradient(model, x, y, t):
    """Analytic ``(dz/dx, dz/dy)``."""
    x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, y, t)))
    zx = np.zeros(x.shape)
    zy = np.zeros(x.shape)
    for w in model.waves:
        c = w.amplitude * np.cos(_phase(w, x, y, t))
        zx += w.wavevector[0] * c
        zy += w.wavevector[1] * c
    return zx, zy


def image_to_scene(model, x, y, t):
    """Scene coordinates seen by camera pixel ``(x, y)`` at time ``t``."""
    zx, zy = surface_gradient(model, x, y, t)
    return x + model.depth_gain * zx, y + model.depth_gain * zy


def surface_hessian(model, x, y, t):
    """Analytic ``(z_xx, z_xy, z_yy)``."""
    x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, y, t)))
    hxx = np.zeros(x.shape)
    hxy = np.zeros(x.shape)
    hyy = np.zeros(x.shape)
    for w in model.waves:
        s = -w.amplitude * np.sin(_phase(w, x, y, t))
        kx, ky = w.wavevector
        hxx += kx * kx * s
        hxy += kx * ky * s
        hyy += ky * ky * s
    return hxx, hxy, hyy


def _slope_and_curvature(model, x, y, t):
    zx = np.zeros(x.shape)
    zy = np.zeros(x.shape)
    hxx = np.zeros(x.shape)
    hxy = np.zeros(x.shape)
    hyy = np.zeros(x.shape)
    for w in model.waves:
        ph = _phase(w, x, y, t)
        c = w.amplitude * np.cos(ph)
        s = -w.amplitude * np.sin(ph)
        kx, ky = w.wavevector
        zx += kx * c
        zy += ky * c
        hxx += kx * kx * s
        hxy += kx * ky * s
        hyy += ky * ky * s
    return zx, zy, hxx, hxy, hyy


def scene_to_image(model, px, py, t, tol=1e-10, max_iter=50):
    """Where scene point ``(px, py)`` appears in frame ``t``.

    Solves ``x + g(x) = p`` by Newton's method started at ``x = p``.
    """
    px, py, t = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (px, py, t)))
    a = model.depth_gain
    x, y = px.copy(), py.copy()
    for _ in range(max_iter):
        zx, zy, hxx, hxy, hyy = _slope_and_curvature(model, x, y, t)
        rx = x + a * zx - px
        ry = y + a * zy - py
        if max(np.max(np.abs(rx), initial=0.0), np.max(np.abs(ry), initial=0.0)) < tol:
            return x, y
        j11, j12, j22 = 1.0 + a * hxx, a * hxy, 1.0 + a * hyy
        det = j11 * j22 - j12 * j12
        x = x - (j22 * rx - j12 * ry) / det
        y = y - (j11 * ry - j12 * rx) / det
    raise NumericalError(
        "refraction mapping could not be inverted; the surface is steep enough to fold the "
        f"image (slope-gradient bound {model.max_slope_gradient():.2f}, must stay below 1)")


def _grid(width, height, n_frames):
    t, y, x = np.meshgrid(np.arange(n_frames, dtype=np.float64),
                          np.arange(height, dtype=np.float64),
                          np.arange(width, dtype=np.float64), indexing="ij")
    return x, y, t


def displacement_field(model, width, height, n_frames):
    """The camera-grid distortion ``g = alpha * grad z`` as a MotionField."""
    x, y, t = _grid(width, height, n_frames)
    zx, zy = surface_gradient(model, x, y, t)
    return MotionField.from_components(model.depth_gain * zx, model.depth_gain * zy)


def restoration_field(model, width, height, n_frames):
    """Scene-grid field ``u`` with scene point ``p`` observed at ``p + u(p)``."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    values = np.empty((n_frames, height, width), dtype=np.complex128)
    for t in range(n_frames):
        ix, iy = scene_to_image(model, xx, yy, float(t))
        values[t] = (ix - xx) + 1j * (iy - yy)
    return MotionField(values)


def synthesize(clean, model, n_frames, seed=None, noise_sigma=0.0, fps=50.0):
    """Distort ``clean`` through ``model`` for ``n_frames`` frames.

    ``noise_sigma`` adds i.i.d. Gaussian sensor noise drawn from ``seed``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.size == 0:
        raise ValueError("clean frame is empty")
    h, w = clean.shape
    g = displacement_field(model, w, h, n_frames)
    frames = np.stack([warp(clean, g.values[t]) for t in range(n_frames)])
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        frames = np.clip(frames + rng.normal(0.0, noise_sigma, frames.shape), 0.0, 1.0)
    true_field = restoration_field(model, w, h, n_frames)
    return GroundTruthBundle(
        distorted=Video(frames, fps=fps),
        true_field=true_field,
        surface_field=g,
        clean=clean,
        model=model,
        rng_seed=seed,
    )


def random_model(seed, n_waves=3, target_sigma_motion=6.0, width=256, height=256,
                 n_frames=None, gain=None, commensurate=False):
    """Draw a random K-wave surface whose displacement RMS is ``target_sigma_motion``.

    Per wave: wavelength ~ U(WAVELENGTH_RANGE) * min(W, H), direction ~ U[0, 2pi),
    temporal period ~ U(PERIOD_RANGE) frames, phase ~ U[0, 2pi), relative
    amplitude ~ U[0.5, 1].  Amplitudes are then scaled by a common factor.

    With ``commensurate=True`` every wave is snapped to a whole number of
    cycles across the grid and across ``n_frames``, so the sampled field is
    exactly sparse in the 3-D DFT.
    """
    if n_waves < 1:
        raise ValueError("n_waves must be >= 1")
    if target_sigma_motion <= 0:
        raise ValueError("target_sigma_motion must be positive")
    if commensurate and n_frames is None:
        raise ValueError("commensurate waves need n_frames")
    rng = np.random.default_rng(seed)
    size = min(width, height)
    waves = []
    for _ in range(n_waves):
        wavelength = rng.uniform(*WAVELENGTH_RANGE) * size
        direction = rng.uniform(0.0, 2 * np.pi)
        period = rng.uniform(*PERIOD_RANGE)
        phase = rng.uniform(0.0, 2 * np.pi)
        rel_amp = rng.uniform(0.5, 1.0)
        kx = 2 * np.pi / wavelength * np.cos(direction)
        ky = 2 * np.pi / wavelength * np.sin(direction)
        omega = 2 * np.pi / period
        if commensurate:
            cx, cy = round(kx * width / (2 * np.pi)), round(ky * height / (2 * np.pi))
            if cx == 0 and cy == 0:
                cx = 1
            kx, ky = 2 * np.pi * cx / width, 2 * np.pi * cy / height
            omega = 2 * np.pi * max(1, round(omega * n_frames / (2 * np.pi))) / n_frames
        waves.append(SineWave(rel_amp, (kx, ky), omega, phase))
    model = SurfaceModel(waves, depth_gain() if gain is None else gain, seed)
    return model.scaled(target_sigma_motion / model.analytic_sigma())


def field_sigma(field):
    """sigma_motion of a dense field: every grid site treated as a trajectory."""
    v = field.values if isinstance(field, MotionField) else np.asarray(field)
    centred = v - v.mean(axis=0, keepdims=True)
    n = centred.size
    return float(np.sqrt(np.sum(np.abs(centred) ** 2) / (n - 1)))


# --------------------------------------------------------------------------
# Test scenes


def make_scene(kind="mixed", size=256, seed=0):
    """Procedural clean scenes in [0, 1].

    ``noise``  band-pass random texture (dense trackable structure)
    ``blobs``  random rectangles and ellipses on a mid-grey ground
    ``tiles``  square tiles with dark grout
    ``text``   rows of random letters
    ``mixed``  blobs over a faint noise texture; the default test scene
    """
    rng = np.random.default_rng(seed)
    if kind == "noise":
        img = _bandpass_noise(rng, size)
    elif kind == "blobs":
        img = _blobs(rng, size)
    elif kind == "tiles":
        img = _tiles(rng, size)
    elif kind == "text":
        img = _text(rng, size)
    elif kind == "mixed":
        img = 0.6 * _blobs(rng, size) + 0.4 * _bandpass_noise(rng, size)
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    img = ndimage.gaussian_filter(img, 0.7)
    lo, hi = img.min(), img.max()
    return 0.05 + 0.9 * (img - lo) / max(hi - lo, 1e-12)


def _bandpass_noise(rng, size):
    white = rng.standard_normal((size, size))
    img = ndimage.gaussian_filter(white, 1.5) - ndimage.gaussian_filter(white, 6.0)
    return (img - img.min()) / (np.ptp(img) + 1e-12)


def _blobs(rng, size, count=None):
    img = np.full((size, size), 0.5)
    count = count or size // 2
    for _ in range(count):
        val = float(rng.uniform(0.0, 1.0))
        cx, cy = rng.integers(0, size, 2)
        ax, ay = rng.integers(size // 64 + 2, size // 10 + 4, 2)
        if rng.random() < 0.5:
            cv2.rectangle(img, (int(cx - ax), int(cy - ay)), (int(cx + ax), int(cy + ay)), val, -1)
        else:
            angle = float(rng.uniform(0, 180))
            cv2.ellipse(img, (int(cx), int(cy)), (int(ax), int(ay)), angle, 0, 360, val, -1)
    return img


def _tiles(rng, size, tile=None):
    tile = tile or max(8, size // 12)
    img = np.zeros((size, size))
    for y0 in range(0, size, tile):
        for x0 in range(0, size, tile):
            img[y0:y0 + tile, x0:x0 + tile] = rng.uniform(0.4, 1.0)
    grout = max(1, tile // 8)
    for k in range(0, size, tile):
        img[k:k + grout, :] = 0.1
        img[:, k:k + grout] = 0.1
    return img + 0.05 * _bandpass_noise(rng, size)


def _text(rng, size):
    img = np.full((size, size), 230, dtype=np.uint8)
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    scale = size / 256
    line_h = int(28 * scale)
    for y in range(line_h, size, line_h):
        word = "".join(rng.choice(list(letters), size=12))
        cv2.putText(img, word, (int(4 * scale), y), cv2.FONT_HERSHEY_SIMPLEX,
                    0.8 * scale, 25, max(1, int(2 * scale)), cv2.LINE_AA)
    return img / 255.0
