"""Polynomial-expansion optical flow.

Each image is locally approximated, around every pixel, by a quadratic

    f(u) ~ u^T A u + b^T u + c        (u = offset from the pixel)

fitted by Gaussian-weighted least squares.  If ``f2(x) = f1(x - d)`` then
``b2 = b1 - 2 A d``, so with ``A = (A1 + A2) / 2`` and
``db = (b1 - b2) / 2`` the displacement solves ``A d = db``; in practice the
normal equations are accumulated over a Gaussian neighbourhood.

Flow convention matches :func:`uwrestore.imaging.warp`: the flow ``d`` from
``src`` to ``dst`` satisfies ``src(x) ~ dst(x + d(x))``, so
``warp(dst, d) ~ src``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError
from .imaging import Video, frames_of, mean_frame, resize, warp

SINGULAR_EIG = 1e-9


@dataclass
class FlowParams:
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    iterations: int = 10
    poly_window: int = 11
    poly_sigma: float = 1.5
    avg_window: int = 15
    avg_sigma: float | None = None  # default: avg_window / 4
    outer_iters: int = 1

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0 < self.pyramid_scale < 1:
            raise ValueError("pyramid_scale must be in (0, 1)")
        if self.poly_window % 2 == 0 or self.avg_window % 2 == 0:
            raise ValueError("window sizes must be odd")
        if self.iterations < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be >= 1")

    @property
    def averaging_sigma(self):
        return self.avg_sigma if self.avg_sigma is not None else self.avg_window / 4.0


@dataclass
class PolyExpansion:
    """Per-pixel quadratic coefficients: ``A`` (H, W, 2, 2), ``b`` (H, W, 2), ``c`` (H, W)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def shape(self):
        return self.c.shape


# basis order: 1, x, y, x^2, y^2, xy  as (power of x, power of y)
_POWERS = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1))


def _applicability(window, sigma):
    n = window // 2
    r = np.arange(-n, n + 1, dtype=np.float64)
    return r, np.exp(-r ** 2 / (2.0 * sigma ** 2))


def _normal_matrix_inverse(window, sigma):
    r, g = _applicability(window, sigma)
    uy, ux = np.meshgrid(r, r, indexing="ij")
    a = np.outer(g, g)
    basis = np.stack([ux ** p * uy ** q for p, q in _POWERS], axis=-1).reshape(-1, 6)
    gram = basis.T @ (a.reshape(-1, 1) * basis)
    return np.linalg.inv(gram)


def poly_expand(frame, params=None):
    """Fit a local quadratic at every pixel of ``frame``.

    The projections onto the six basis functions are separable, so they
    are computed with 1-D correlations along x then y (clamped borders).
    """
    params = params or FlowParams()
    frame = np.asarray(frame, dtype=np.float64)
    if min(frame.shape) <= params.poly_window:
        raise DataError("frame must be larger than the polynomial window")
    r, g = _applicability(params.poly_window, params.poly_sigma)
    kernels = [g * r ** p for p in range(3)]
    along_x = [ndimage.correlate1d(frame, k, axis=1, mode="nearest") for k in kernels]
    proj = np.stack([ndimage.correlate1d(along_x[p], kernels[q], axis=0, mode="nearest")
                     for p, q in _POWERS], axis=-1)
    coef = proj @ _normal_matrix_inverse(params.poly_window, params.poly_sigma).T
    h, w = frame.shape
    A = np.empty((h, w, 2, 2))
    A[..., 0, 0] = coef[..., 3]
    A[..., 1, 1] = coef[..., 4]
    A[..., 0, 1] = A[..., 1, 0] = coef[..., 5] / 2.0
    return PolyExpansion(A, coef[..., 1:3].copy(), coef[..., 0].copy())


def _border_certainty(shape, band):
    cert = np.zeros(shape)
    h, w = shape
    if h > 2 * band and w > 2 * band:
        cert[band:h - band, band:w - band] = 1.0
    return cert


def flow_step(exp1, exp2, prior=None, params=None):
    """One displacement update from two expansions.

    ``exp2`` must be the expansion of the second image already warped by
    ``prior``; the prior then enters the right-hand side as ``A @ prior``.
    Where the accumulated 2x2 system has smallest eigenvalue below 1e-9
    the prior is returned unchanged.
    """
    params = params or FlowParams()
    if exp1.shape != exp2.shape:
        raise DataError("expansions come from different frame sizes")
    shape = exp1.shape
    prior = np.zeros(shape, dtype=np.complex128) if prior is None else np.asarray(prior, dtype=np.complex128)
    A = 0.5 * (exp1.A + exp2.A)
    db = 0.5 * (exp1.b - exp2.b)
    a11, a12, a22 = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
    px, py = prior.real, prior.imag
    r1 = db[..., 0] + a11 * px + a12 * py
    r2 = db[..., 1] + a12 * px + a22 * py

    cert = _border_certainty(shape, params.poly_window // 2)
    terms = [
        a11 * a11 + a12 * a12,          # G11
        a11 * a12 + a12 * a22,          # G12
        a12 * a12 + a22 * a22,          # G22
        a11 * r1 + a12 * r2,            # h1
        a12 * r1 + a22 * r2,            # h2
    ]
    sigma = params.averaging_sigma
    radius = params.avg_window // 2
    g11, g12, g22, h1, h2 = (ndimage.gaussian_filter(cert * term, sigma, mode="constant", truncate=radius / sigma)
                             for term in terms)
    det = g11 * g22 - g12 * g12
    min_eig = 0.5 * (g11 + g22) - np.sqrt(0.25 * (g11 - g22) ** 2 + g12 * g12)
    ok = min_eig >= SINGULAR_EIG
    safe = np.where(ok, det, 1.0)
    dx = (g22 * h1 - g12 * h2) / safe
    dy = (g11 * h2 - g12 * h1) / safe
    return np.where(ok, dx + 1j * dy, prior)


def _pyramid(frame, levels, scale):
    frame = np.asarray(frame, dtype=np.float64)
    out = [frame]
    h, w = frame.shape
    for k in range(1, levels):
        s = scale ** k
        sigma = (1.0 / s - 1.0) * 0.5
        size = (max(1, int(round(h * s))), max(1, int(round(w * s))))
        out.append(resize(ndimage.gaussian_filter(frame, sigma), size))
    return out


def estimate_flow(src, dst, params=None):
    """Dense flow from ``src`` to ``dst`` (complex ``(H, W)``), coarse to fine.

    Each pyramid level runs ``iterations`` rounds of: warp ``dst`` by the
    current flow, expand it, and update the flow with :func:`flow_step`.
    """
    params = params or FlowParams()
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise DataError(f"frame shapes differ: {src.shape} vs {dst.shape}")
    levels = params.pyramid_levels
    # skip levels too small for the polynomial window
    while levels > 1 and min(src.shape) * params.pyramid_scale ** (levels - 1) <= 2 * params.poly_window:
        levels -= 1
    pyr1 = _pyramid(src, levels, params.pyramid_scale)
    pyr2 = _pyramid(dst, levels, params.pyramid_scale)
    flow = None
    for f1, f2 in zip(reversed(pyr1), reversed(pyr2)):
        if flow is None:
            flow = np.zeros(f1.shape, dtype=np.complex128)
        else:
            (h0, w0), (h1, w1) = flow.shape, f1.shape
            up = resize(flow, f1.shape)
            flow = up.real * (w1 / w0) + 1j * up.imag * (h1 / h0)
        exp1 = poly_expand(f1, params)
        for _ in range(params.iterations):
            exp2 = poly_expand(warp(f2, flow), params)
            flow = flow_step(exp1, exp2, flow, params)
    return flow


def restore_video_peof(video, params=None, reference=None, return_flows=False):
    """Register every frame to the mean frame and warp it into place.

    With ``params.outer_iters > 1`` the reference is recomputed as the mean
    of the previous pass's output and the original frames registered again.
    """
    params = params or FlowParams()
    frames = frames_of(video)
    if frames.shape[0] < 2:
        raise DataError("need at least 2 frames")
    fps = video.fps if isinstance(video, Video) else 50.0
    ref = mean_frame(frames) if reference is None else np.asarray(reference, dtype=np.float64)
    flows = None
    for _ in range(params.outer_iters):
        flows = np.stack([estimate_flow(ref, f, params) for f in frames])
        restored = np.stack([warp(f, d) for f, d in zip(frames, flows)])
        ref = restored.mean(axis=0)
    out = Video(restored, fps=fps)
    if return_flows:
        return out, flows
    return out
