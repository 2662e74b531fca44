"""Dense motion fields from sparse displacement trajectories.

The motion field ``d = dx + 1j*dy`` over the ``(T, H, W)`` grid is modelled
as ``d = F theta`` with ``F`` the unitary 3-D inverse DFT and ``theta``
sparse.  Displacement trajectories sample ``d`` at a few grid sites, giving
``e = Phi F theta + noise`` with ``Phi`` a row subset of the identity.
``theta`` is estimated by minimising

    J(theta) = lam * sum |theta_k| + ||e - Phi F theta||^2

with accelerated proximal gradient (complex soft thresholding, monotone
variant with restart).  Work is done on a grid subsampled in x and y by
``downsample``; the coarse field is upsampled bilinearly afterwards.

Arrays are numpy-ordered: ``theta`` and fields have shape ``(T, Hc, Wc)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .imaging import MotionField, Video, sample_bilinear, warp_video

log = logging.getLogger(__name__)

ALLOWED_DOWNSAMPLE = (1, 2, 4, 8, 16)
MIN_SITES = 8


@dataclass
class SolverParams:
    lam: float | None = None  # None: choose by cross-validation
    max_iters: int = 2000
    tol: float = 1e-6
    downsample: int = 8
    cv_holdout: float = 0.10
    lambda_grid: tuple[float, ...] | None = None  # absolute values; None: relative default
    relative_grid: tuple[float, float, int] = (1e-4, 1e-1, 8)
    seed: int = 0

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0 < self.cv_holdout < 1:
            raise ValueError("cv_holdout must be in (0, 1)")
        if self.downsample not in ALLOWED_DOWNSAMPLE:
            raise ValueError(f"downsample must be one of {ALLOWED_DOWNSAMPLE}")


@dataclass
class SamplingPlan:
    """Measurement sites ``(t[i], iy[i], ix[i])`` and values ``e[i]`` on a grid of ``shape``."""

    shape: tuple[int, int, int]
    t: np.ndarray
    iy: np.ndarray
    ix: np.ndarray
    e: np.ndarray
    nodes: np.ndarray = field(default=None, repr=False)  # (n_nodes, 2) as (ix, iy)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.t = np.asarray(self.t, dtype=np.intp)
        self.iy = np.asarray(self.iy, dtype=np.intp)
        self.ix = np.asarray(self.ix, dtype=np.intp)
        self.e = np.asarray(self.e, dtype=np.complex128)
        n = len(self.e)
        if not (len(self.t) == len(self.iy) == len(self.ix) == n):
            raise DataError("site and measurement arrays differ in length")
        T, H, W = self.shape
        if n and (self.t.min() < 0 or self.t.max() >= T or self.iy.min() < 0 or self.iy.max() >= H
                  or self.ix.min() < 0 or self.ix.max() >= W):
            raise DataError("sampling site outside the grid")
        flat = self.flat_index
        if len(np.unique(flat)) != n:
            raise DataError("sampling sites must be unique")

    @property
    def flat_index(self):
        return np.ravel_multi_index((self.t, self.iy, self.ix), self.shape)

    def __len__(self):
        return len(self.e)

    def subset(self, mask):
        mask = np.asarray(mask)
        return SamplingPlan(self.shape, self.t[mask], self.iy[mask], self.ix[mask], self.e[mask], self.nodes)


def coarse_size(n, downsample):
    """Number of coarse nodes covering ``n`` pixels; node ``k`` sits at pixel ``k * downsample``."""
    return (n - 1) // downsample + 1


def build_plan(dts, shape, n_frames, downsample=8, min_sites=MIN_SITES):
    """Stack displacement trajectories into a :class:`SamplingPlan`.

    ``shape`` is the full-resolution ``(H, W)``.  Each anchor is rounded to
    the nearest coarse node; trajectories landing on the same node are
    averaged frame by frame.  Fewer than ``min_sites`` distinct nodes is
    treated as degenerate sampling.
    """
    if downsample not in ALLOWED_DOWNSAMPLE:
        raise ValueError(f"downsample must be one of {ALLOWED_DOWNSAMPLE}")
    dts = list(dts)
    if not dts:
        raise DataError("no displacement trajectories")
    h, w = shape
    hc, wc = coarse_size(h, downsample), coarse_size(w, downsample)
    sums = {}
    for dt in dts:
        off = np.asarray(dt.offsets, dtype=np.float64)
        if off.shape != (n_frames, 2):
            raise DataError(f"trajectory {dt.point_id} has offsets of shape {off.shape}, expected ({n_frames}, 2)")
        nx = int(np.clip(np.rint(dt.anchor[0] / downsample), 0, wc - 1))
        ny = int(np.clip(np.rint(dt.anchor[1] / downsample), 0, hc - 1))
        acc = sums.setdefault((ny, nx), [np.zeros(n_frames, dtype=np.complex128), 0])
        acc[0] += off[:, 0] + 1j * off[:, 1]
        acc[1] += 1
    if len(sums) < min_sites:
        raise DataError(f"anchors cover only {len(sums)} distinct coarse nodes; need at least {min_sites}")
    keys = sorted(sums)
    n_nodes = len(keys)
    tt = np.tile(np.arange(n_frames), n_nodes)
    iy = np.repeat([k[0] for k in keys], n_frames)
    ix = np.repeat([k[1] for k in keys], n_frames)
    e = np.concatenate([sums[k][0] / sums[k][1] for k in keys])
    nodes = np.array([(k[1], k[0]) for k in keys])
    return SamplingPlan((n_frames, hc, wc), tt, iy, ix, e, nodes)


# --------------------------------------------------------------------------
# Operators


def synthesize(theta):
    """Unitary inverse 3-D DFT: coefficients -> field."""
    return np.fft.ifftn(theta, norm="ortho")


def analyze(field):
    """Unitary forward 3-D DFT: field -> coefficients."""
    return np.fft.fftn(field, norm="ortho")


def forward(theta, plan):
    """``Phi F theta``: synthesise and keep the sampled sites."""
    if theta.shape != plan.shape:
        raise DataError(f"theta shape {theta.shape} does not match plan grid {plan.shape}")
    return synthesize(theta)[plan.t, plan.iy, plan.ix]


def adjoint(r, plan):
    """``F^H Phi^T r``: zero-fill at the sampled sites and analyse."""
    z = np.zeros(plan.shape, dtype=np.complex128)
    z[plan.t, plan.iy, plan.ix] = r
    return analyze(z)


def coherence(plan, max_sites=None):
    """Mutual coherence of ``Phi F`` scaled by ``sqrt(n)`` (lower bound 1).

    Rows of ``Phi F`` are conjugated DFT vectors of delta images, so this is
    evaluated directly on (up to ``max_sites``) sampled rows.
    """
    n = int(np.prod(plan.shape))
    sites = range(len(plan)) if max_sites is None else range(min(len(plan), max_sites))
    best = 0.0
    for i in sites:
        delta = np.zeros(plan.shape)
        delta[plan.t[i], plan.iy[i], plan.ix[i]] = 1.0
        best = max(best, float(np.abs(analyze(delta)).max()))
    return best * np.sqrt(n)


# --------------------------------------------------------------------------
# LASSO


def soft_threshold(z, tau):
    """Complex soft thresholding: shrink magnitudes by ``tau``, keep phases."""
    mag = np.abs(z)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    return z * scale


def objective(theta, plan, lam, residual=None):
    if residual is None:
        residual = plan.e - forward(theta, plan)
    return lam * float(np.abs(theta).sum()) + float(np.vdot(residual, residual).real)


@dataclass
class LassoResult:
    theta: np.ndarray
    lam: float
    objective: list[float]
    rel_change: list[float]
    n_iter: int
    converged: bool
    restarts: int = 0
    seconds: float = 0.0

    def write_log(self, path):
        """Plain-text log: ``iteration objective relative_change`` per accepted step."""
        with open(path, "w") as fh:
            fh.write(f"# lam={self.lam!r} iterations={self.n_iter} converged={self.converged} "
                     f"restarts={self.restarts}\n")
            fh.write("iteration objective relative_change\n")
            for k, (j, r) in enumerate(zip(self.objective, self.rel_change)):
                fh.write(f"{k} {j!r} {r!r}\n")


def max_correlation(plan):
    """``||adjoint(e)||_inf``; the LASSO solution is zero for ``lam >= 2x`` this."""
    return float(np.abs(adjoint(plan.e, plan)).max())


def solve_lasso(plan, lam, max_iters=2000, tol=1e-6, theta0=None):
    """Minimise ``lam*||theta||_1 + ||e - Phi F theta||^2``.

    FISTA with a unit step on the half-gradient ``A^H(A theta - e)`` (the
    operator norm is at most 1) and threshold ``lam / 2``.  A step that
    would raise the objective is rejected and momentum restarted, so the
    logged objective never increases.  Stops when the relative objective
    change of an accepted step falls below ``tol``.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    start = time.perf_counter()
    e = plan.e
    x = np.zeros(plan.shape, dtype=np.complex128) if theta0 is None else np.array(theta0, dtype=np.complex128)
    ax = forward(x, plan)
    j_old = objective(x, plan, lam, e - ax)
    if not np.isfinite(j_old):
        raise NumericalError("non-finite LASSO objective at start; measurements corrupted?")
    history = [j_old]
    changes = [0.0]
    y, ay = x, ax
    t = 1.0
    restarts = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        x_new = soft_threshold(y - adjoint(ay - e, plan), lam / 2.0)
        ax_new = forward(x_new, plan)
        j_new = objective(x_new, plan, lam, e - ax_new)
        if not np.isfinite(j_new):
            raise NumericalError(f"non-finite LASSO objective at iteration {it}")
        if j_new > j_old:
            if y is x:
                # a plain proximal step from x failed: x is optimal to rounding
                converged = True
                break
            # reject and restart momentum from the last accepted iterate
            restarts += 1
            y, ay, t = x, ax, 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        y = x_new + beta * (x_new - x)
        ay = ax_new + beta * (ax_new - ax)
        rel = (j_old - j_new) / max(abs(j_old), np.finfo(float).tiny)
        x, ax, t, j_old = x_new, ax_new, t_new, j_new
        history.append(j_new)
        changes.append(rel)
        if rel < tol:
            converged = True
            break
    return LassoResult(x, float(lam), history, changes, it, converged, restarts, time.perf_counter() - start)


def default_lambda_grid(plan, params=None):
    params = params or SolverParams()
    if params.lambda_grid is not None:
        return tuple(float(v) for v in params.lambda_grid)
    lo, hi, n = params.relative_grid
    scale = max_correlation(plan)
    return tuple(float(v) for v in np.logspace(np.log10(lo), np.log10(hi), int(n)) * scale)


@dataclass
class CVResult:
    lam: float
    result: LassoResult
    scores: dict[float, float]
    seconds: float = 0.0


def cross_validate(plan, params=None):
    """Pick ``lam`` on a random holdout of individual measurements, then refit on all.

    For every candidate the LASSO is fitted on ``1 - cv_holdout`` of the
    measurements and scored by the squared error on the rest.  Candidates
    are visited from largest to smallest with warm starts.
    """
    params = params or SolverParams()
    start = time.perf_counter()
    if len(plan) < 20:
        raise DataError("cross-validation needs at least 20 measurements")
    grid = default_lambda_grid(plan, params)
    if max(grid) == 0.0:
        # all-zero measurements: nothing to regularise
        result = solve_lasso(plan, 0.0, params.max_iters, params.tol)
        return CVResult(0.0, result, {0.0: 0.0}, time.perf_counter() - start)
    rng = np.random.default_rng(params.seed)
    n_test = max(1, int(round(params.cv_holdout * len(plan))))
    test = np.zeros(len(plan), dtype=bool)
    test[rng.choice(len(plan), size=n_test, replace=False)] = True
    train_plan = plan.subset(~test)
    test_plan = plan.subset(test)
    scores = {}
    theta = None
    for lam in sorted(grid, reverse=True):
        fit = solve_lasso(train_plan, lam, params.max_iters, params.tol, theta0=theta)
        theta = fit.theta
        resid = test_plan.e - forward(theta, test_plan)
        scores[lam] = float(np.vdot(resid, resid).real)
        log.debug("cv lam=%.3g holdout error=%.4g iters=%d", lam, scores[lam], fit.n_iter)
    best = min(sorted(scores), key=lambda k: scores[k])
    result = solve_lasso(plan, best, params.max_iters, params.tol)
    return CVResult(best, result, scores, time.perf_counter() - start)


def estimate_coefficients(plan, params=None):
    """LASSO coefficients with ``params.lam`` or, when unset, a cross-validated one."""
    params = params or SolverParams()
    if params.lam is None:
        return cross_validate(plan, params)
    start = time.perf_counter()
    result = solve_lasso(plan, params.lam, params.max_iters, params.tol)
    return CVResult(params.lam, result, {}, time.perf_counter() - start)


# --------------------------------------------------------------------------
# Fields and restoration


def reconstruct_field(theta, full_shape, downsample=8):
    """Synthesise the coarse field and upsample each frame bilinearly to ``full_shape = (H, W)``."""
    coarse = synthesize(theta)
    h, w = full_shape
    if downsample == 1:
        if coarse.shape[1:] != (h, w):
            raise DataError(f"coefficient grid {coarse.shape[1:]} does not match {full_shape}")
        return MotionField(coarse)
    if coarse.shape[1:] != (coarse_size(h, downsample), coarse_size(w, downsample)):
        raise DataError(f"coefficient grid {coarse.shape[1:]} inconsistent with {full_shape} / {downsample}")
    ys = np.arange(h, dtype=np.float64)[:, None] / downsample
    xs = np.arange(w, dtype=np.float64)[None, :] / downsample
    out = np.empty((coarse.shape[0], h, w), dtype=np.complex128)
    for t, frame in enumerate(coarse):
        out[t] = sample_bilinear(frame, xs, ys)
    return MotionField(out)


def restore_video_cs(video, field):
    """``I_r(x, t) = I_d(x + d(x, t), t)`` for every frame."""
    fps = video.fps if isinstance(video, Video) else 50.0
    return Video(warp_video(video, field), fps=fps)


def energy_fraction(theta, fraction=0.99):
    """Fraction of DFT bins needed to hold ``fraction`` of the squared magnitude."""
    power = np.sort(np.abs(np.asarray(theta)).ravel() ** 2)[::-1]
    total = power.sum()
    if total == 0:
        return 0.0
    count = int(np.searchsorted(np.cumsum(power), fraction * total) + 1)
    return min(count, power.size) / power.size
