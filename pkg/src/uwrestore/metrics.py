"""Image-quality and motion metrics for restored videos."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(restored, truth):
    """Relative error ``||restored - truth|| / ||truth||`` (Frobenius norms)."""
    a, t = _pair(restored, truth)
    denom = np.linalg.norm(t)
    if denom == 0:
        raise DataError("reference image is all zero")
    return float(np.linalg.norm(a - t) / denom)


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(a, b, bins=256):
    """Normalised mutual information ``(H(A) + H(B)) / H(A, B)``.

    Intensities are binned into ``bins`` equal-width bins over [0, 1]
    (values outside are clipped into the end bins).  Returns 2 for a pair
    of identical images and tends to 1 for independent ones.  Two constant
    images carry no information; by convention that gives 2 if they are
    equal and 1 otherwise.
    """
    a, b = _pair(a, b)
    ia = np.clip((a.ravel() * bins).astype(np.int64), 0, bins - 1)
    ib = np.clip((b.ravel() * bins).astype(np.int64), 0, bins - 1)
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).astype(np.float64)
    joint /= joint.sum()
    joint = joint.reshape(bins, bins)
    h_ab = _entropy(joint.ravel())
    if h_ab == 0:
        return 2.0 if np.array_equal(ia, ib) else 1.0
    return (_entropy(joint.sum(axis=1)) + _entropy(joint.sum(axis=0))) / h_ab


def ssim_map(a, b, data_range=1.0):
    """Local SSIM on the valid interior (a border of ``SSIM_WINDOW // 2`` pixels is dropped)."""
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise DataError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    truncate = (SSIM_WINDOW // 2) / SSIM_SIGMA

    def blur(x):
        return ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    pad = SSIM_WINDOW // 2
    return (num / den)[pad:-pad, pad:-pad]


def ssim(a, b, data_range=1.0):
    """Mean structural similarity (11x11 Gaussian window, sigma 1.5)."""
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        return 1.0
    return float(ssim_map(a, b, data_range).mean())


def motion_reduction(before, after):
    """Motion reduction in percent: ``100 * median_i ||after_i - before_i|| / ||before_i||``.

    ``before`` and ``after`` are displacement trajectories of the same points
    (matched by ``point_id``) tracked in the distorted and the restored video.
    Full removal of the motion (``after == 0``) gives 100.
    """
    before = {d.point_id: d for d in before}
    after = {d.point_id: d for d in after}
    if not before:
        raise DataError("no trajectories to compare")
    if set(before) != set(after):
        missing = sorted(set(before) ^ set(after))
        raise DataError(f"unmatched point ids: {missing[:10]}")
    ratios = []
    for pid, d in before.items():
        d0 = np.asarray(d.offsets, dtype=np.float64)
        d1 = np.asarray(after[pid].offsets, dtype=np.float64)
        if d0.shape != d1.shape:
            raise DataError(f"point {pid}: trajectories have different lengths")
        norm = np.linalg.norm(d0)
        if norm == 0:
            raise DataError(f"point {pid} has no motion in the reference trajectory")
        ratios.append(np.linalg.norm(d1 - d0) / norm)
    return 100.0 * float(np.median(ratios))


def sigma_motion(trajectories):
    """RMS deviation of tracked positions from their temporal means.

    Normalised by ``N*T - 1`` over all valid trajectories.
    """
    pts = [np.asarray(t.points, dtype=np.float64) for t in trajectories if getattr(t, "valid", True)]
    if not pts:
        raise DataError("no valid trajectories")
    total = 0.0
    count = 0
    for p in pts:
        total += float(np.sum((p - p.mean(axis=0)) ** 2))
        count += len(p)
    if count <= 1:
        raise DataError("need more than one sample")
    return float(np.sqrt(total / (count - 1)))


@dataclass
class QualityReport:
    rmse: float
    nmi: float
    ssim: float
    details: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"rmse={self.rmse:.6g}", f"nmi={self.nmi:.6g}", f"ssim={self.ssim:.6g}"]
        lines += [f"{k}={v}" for k, v in sorted(self.details.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        core = {k: float(values.pop(k)) for k in ("rmse", "nmi", "ssim")}
        return cls(details=values, **core)

    def csv_row(self, header=False):
        row = {"rmse": self.rmse, "nmi": self.nmi, "ssim": self.ssim}
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row))
        if header:
            writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()

    def as_dict(self):
        return asdict(self)


def evaluate(restored_mean, clean, bins=256):
    """All three image-quality scores of a restored mean against the clean frame."""
    return QualityReport(
        rmse=rmse(restored_mean, clean),
        nmi=nmi(restored_mean, clean, bins),
        ssim=ssim(restored_mean, clean),
        details={"nmi_bins": bins, "ssim_window": SSIM_WINDOW, "ssim_sigma": SSIM_SIGMA},
    )
