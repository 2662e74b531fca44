"""Frame and video containers, resampling, warping and file I/O.

Conventions used throughout the package:

* A frame is a 2-D float array of shape ``(H, W)`` with intensities in [0, 1].
  Pixel ``(x, y)`` lives at ``frame[y, x]``.
* A video is a 3-D array of shape ``(T, H, W)``; :class:`Video` wraps one
  together with its frame rate.
* A displacement field is complex, ``dx + 1j * dy``, in pixels.
* Warping is inverse mapping: ``out(x, y) = frame(x + dx, y + dy)`` sampled
  bilinearly with clamp-to-edge boundaries.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError

# ITU-R BT.601 luma weights, applied to (R, G, B).
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

FIELD_MAGIC = b"UMVF"
MANIFEST_NAME = "manifest.json"
FRAME_PATTERN = "frame_{:05d}.png"
_FRAME_RE = re.compile(r"^frame_(\d+)\.(png|tif|tiff)$")


@dataclass
class Video:
    """A grayscale video: ``frames`` has shape ``(T, H, W)``, values in [0, 1]."""

    frames: np.ndarray
    fps: float = 50.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise DataError(f"video frames must be (T, H, W), got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise DataError("a video needs at least 2 frames")
        if not np.all(np.isfinite(frames)):
            raise DataError("video contains non-finite intensities")
        self.frames = np.clip(frames, 0.0, 1.0)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape


@dataclass
class MotionField:
    """Complex displacement field ``dx + 1j*dy`` of shape ``(T, H, W)``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3:
            raise DataError(f"motion field must be (T, H, W), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("motion field contains non-finite values")
        self.values = values

    @classmethod
    def from_components(cls, dx, dy):
        return cls(np.asarray(dx, dtype=np.float64) + 1j * np.asarray(dy, dtype=np.float64))

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, dtype=np.complex128))

    @property
    def dx(self):
        return self.values.real

    @property
    def dy(self):
        return self.values.imag

    @property
    def dims(self):
        """``(W, H, T)``, the order used by the binary format."""
        t, h, w = self.values.shape
        return w, h, t

    def __len__(self):
        return self.values.shape[0]


def frames_of(video) -> np.ndarray:
    """Return the ``(T, H, W)`` float array behind a :class:`Video` or array."""
    if isinstance(video, Video):
        return video.frames
    return np.asarray(video, dtype=np.float64)


def _field_array(field) -> np.ndarray:
    if isinstance(field, MotionField):
        return field.values
    return np.asarray(field, dtype=np.complex128)


# --------------------------------------------------------------------------
# Resampling


def sample_bilinear(frame, x, y):
    """Bilinearly sample ``frame`` at real coordinates ``(x, y)``.

    ``x`` and ``y`` may be scalars or arrays of any (broadcastable) shape.
    Coordinates outside ``[0, W-1] x [0, H-1]`` are clamped to the edge.
    """
    frame = np.asarray(frame)
    h, w = frame.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = frame[y0, x0] * (1.0 - fx) + frame[y0, x1] * fx
    bottom = frame[y1, x0] * (1.0 - fx) + frame[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    if out.ndim == 0:
        return out.item()
    return out


def warp(frame, field):
    """Resample ``frame`` at ``(x + dx, y + dy)`` for every pixel.

    ``field`` is a complex ``(H, W)`` array (or a single-frame
    :class:`MotionField`).  The same operation models distortion
    (clean -> distorted) and restoration (distorted -> restored).
    """
    frame = np.asarray(frame, dtype=np.float64)
    d = _field_array(field)
    if d.ndim == 3 and d.shape[0] == 1:
        d = d[0]
    if d.shape != frame.shape:
        raise DataError(f"field shape {d.shape} does not match frame shape {frame.shape}")
    if not np.any(d):
        return frame.copy()
    h, w = frame.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = sample_bilinear(frame, xx + d.real, yy + d.imag)
    return np.clip(out, 0.0, 1.0)


def warp_video(video, field):
    """Warp every frame ``t`` of ``video`` by ``field[t]``; returns an array."""
    frames = frames_of(video)
    d = _field_array(field)
    if d.shape != frames.shape:
        raise DataError(f"field shape {d.shape} does not match video shape {frames.shape}")
    return np.stack([warp(f, dt) for f, dt in zip(frames, d)])


def resize(frame, shape):
    """Bilinear resize to ``shape = (H, W)`` with pixel-centre alignment.

    Works for real and complex arrays.
    """
    frame = np.asarray(frame)
    if not np.iscomplexobj(frame):
        frame = frame.astype(np.float64)
    h, w = frame.shape
    nh, nw = shape
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    return sample_bilinear(frame, xs[None, :], ys[:, None])


def center_crop_resize(frame, size=256):
    """Centre-crop to a square, then resize to ``size x size``."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape
    s = min(h, w)
    top = (h - s) // 2
    left = (w - s) // 2
    return resize(frame[top:top + s, left:left + s], (size, size))


def mean_frame(video):
    frames = frames_of(video)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise DataError("mean of an empty video")
    return frames.mean(axis=0)


def median_frame(video):
    frames = frames_of(video)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise DataError("median of an empty video")
    return np.median(frames, axis=0)


# --------------------------------------------------------------------------
# File I/O


def to_gray(image):
    """Convert an ``(H, W, 3)`` RGB image to luma with :data:`LUMA_WEIGHTS`."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    r, g, b = (image[..., i] for i in range(3))
    wr, wg, wb = LUMA_WEIGHTS
    return wr * r + wg * g + wb * b


def read_image(path):
    """Read one image file as a float frame in [0, 1].

    8- and 16-bit integer images are scaled by their full range; colour
    images are converted with :func:`to_gray`.  Floating-point images (e.g.
    32-bit TIFF) are taken as already normalised.
    """
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        img = raw.astype(np.float64)
    if img.ndim == 3:
        # cv2 returns BGR(A)
        img = to_gray(img[..., 2::-1][..., :3])
    if not np.all(np.isfinite(img)):
        raise DataError(f"image {path} contains non-finite values")
    return np.clip(img, 0.0, 1.0)


def write_image(path, frame, bit_depth=8):
    frame = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(frame * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        data = np.round(frame * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    if not cv2.imwrite(str(path), data):
        raise DataError(f"failed to write {path}")


def save_sequence(video, path, bit_depth=16):
    """Write a video as numbered PNG files plus ``manifest.json``."""
    if not isinstance(video, Video):
        video = Video(video)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        write_image(path / FRAME_PATTERN.format(i), frame, bit_depth)
    manifest = {
        "fps": video.fps,
        "count": len(video),
        "bit_depth": bit_depth,
        "pattern": FRAME_PATTERN,
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))


def load_sequence(path):
    """Read a frame-sequence directory written by :func:`save_sequence`.

    Without a manifest, files named ``frame_<n>.png`` are collected and must
    be numbered contiguously from 0; fps then defaults to 50.
    """
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path} is not a directory")
    manifest_path = path / MANIFEST_NAME
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text())
            count = int(manifest["count"])
            pattern = manifest.get("pattern", FRAME_PATTERN)
            fps = float(manifest.get("fps", 50.0))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"bad manifest {manifest_path}: {exc}") from exc
        files = [path / pattern.format(i) for i in range(count)]
    else:
        numbered = {}
        for p in path.iterdir():
            m = _FRAME_RE.match(p.name)
            if m:
                numbered[int(m.group(1))] = p
        if not numbered:
            raise DataError(f"no frame files in {path}")
        count = max(numbered) + 1
        files = [numbered.get(i, path / FRAME_PATTERN.format(i)) for i in range(count)]
        fps = 50.0
    frames = []
    for i, f in enumerate(files):
        if not f.exists():
            raise DataError(f"frame {i} missing ({f.name})")
        try:
            frames.append(read_image(f))
        except DataError as exc:
            raise DataError(f"frame {i}: {exc}") from exc
    if len({fr.shape for fr in frames}) > 1:
        raise DataError("frames have differing dimensions")
    return Video(np.stack(frames), fps=fps)


def save_field(field, path):
    """Write a :class:`MotionField` in the binary field format.

    Layout: 4 magic bytes ``UMVF``, then ``W, H, T`` as little-endian uint32,
    then ``(dx, dy)`` float32 pairs in row-major ``(t, y, x)`` order.
    """
    if not isinstance(field, MotionField):
        field = MotionField(field)
    w, h, t = field.dims
    pairs = np.empty(field.values.shape + (2,), dtype="<f4")
    pairs[..., 0] = field.dx
    pairs[..., 1] = field.dy
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<3I", w, h, t))
        fh.write(pairs.tobytes())


def load_field(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FIELD_MAGIC:
        raise DataError(f"{path} is not a motion-field file")
    w, h, t = struct.unpack("<3I", data[4:16])
    expected = 16 + w * h * t * 8
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
    pairs = np.frombuffer(data[16:], dtype="<f4").reshape(t, h, w, 2)
    return MotionField.from_components(pairs[..., 0], pairs[..., 1])
