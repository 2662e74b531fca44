"""End-to-end restoration and the benchmark harness.

Three variants are available:

``cs``
    detect and track salient points, turn their trajectories into sparse
    samples of the motion field, recover the dense field by LASSO in the
    3-D DFT basis and warp every frame back;
``peof``
    register every frame to the mean frame with polynomial-expansion flow;
``cs_peof``
    ``peof`` applied to the output of ``cs``.

The restored video is finally collapsed into one image by a temporal mean
or median.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import cs_mvf, metrics, tracking
from .errors import DataError
from .imaging import (Video, frames_of, load_sequence, mean_frame, median_frame, read_image,
                      save_field, save_sequence, write_image)
from .peof import FlowParams, restore_video_peof
from .tracking import TrackerParams

log = logging.getLogger(__name__)

MODES = ("cs", "peof", "cs_peof")
AGGREGATIONS = ("mean", "median")
MIN_FRAMES = 10
THREADS_ENV = "UWRESTORE_THREADS"

BENCH_COLUMNS = ["scene", "mode", "time_s", "cv_time_s", "nmi", "ssim", "rmse", "mr",
                 "sigma_motion", "n_points", "n_valid", "status"]


def configure_threads(default=None):
    """Apply the thread count from ``$UWRESTORE_THREADS`` (if set) to OpenCV."""
    import cv2

    value = os.environ.get(THREADS_ENV, default)
    if value in (None, ""):
        return None
    n = int(value)
    cv2.setNumThreads(n)
    return n


@dataclass
class PipelineConfig:
    mode: str = "cs_peof"
    tracker: TrackerParams = field(default_factory=TrackerParams)
    solver: cs_mvf.SolverParams = field(default_factory=cs_mvf.SolverParams)
    flow: FlowParams = field(default_factory=FlowParams)
    aggregation: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        # one seed drives every random choice
        if self.solver.seed != self.seed:
            self.solver = replace(self.solver, seed=self.seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sub = {"tracker": TrackerParams, "solver": cs_mvf.SolverParams, "flow": FlowParams}
        for key, kind in sub.items():
            if key in data:
                values = dict(data[key])
                bad = set(values) - {f.name for f in fields(kind)}
                if bad:
                    raise ValueError(f"unknown {key} keys: {sorted(bad)}")
                for k, v in values.items():
                    if isinstance(v, list):
                        values[k] = tuple(v)
                data[key] = kind(**values)
        return cls(**data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def aggregate(video, how="mean"):
    if how == "mean":
        return mean_frame(video)
    if how == "median":
        return median_frame(video)
    raise ValueError(f"unknown aggregation {how!r}")


def _tracked_points(video, cfg, report):
    frames = frames_of(video)
    t0 = time.perf_counter()
    seeds = tracking.detect_features(frames[0], cfg.tracker)
    report["n_points"] = int(len(seeds))
    if len(seeds) == 0:
        raise DataError("no salient points found in the first frame; use mode 'peof'")
    trajs = tracking.track(video, seeds, cfg.tracker)
    report["time_track_s"] = time.perf_counter() - t0
    return seeds, trajs


def restore_cs(video, cfg, report, run_dir=None, trajectories=None):
    """The compressed-sensing stage.  Fills ``report`` and returns the restored video."""
    frames = frames_of(video)
    n_frames, h, w = frames.shape
    if trajectories is None:
        _, trajectories = _tracked_points(video, cfg, report)
    else:
        report["n_points"] = len(trajectories)
    dts = tracking.displacement_trajectories(trajectories, cfg.tracker.anchor)
    report["n_valid"] = len(dts)
    report["n_rejected"] = len(trajectories) - len(dts)
    if not dts:
        raise DataError("every trajectory was rejected; the cs stage cannot run, use mode 'peof'")
    if run_dir is not None:
        tracking.save_trajectories(trajectories, run_dir / "trajectories.csv")

    t0 = time.perf_counter()
    plan = cs_mvf.build_plan(dts, (h, w), n_frames, cfg.solver.downsample)
    fit = cs_mvf.estimate_coefficients(plan, cfg.solver)
    report["time_solve_s"] = time.perf_counter() - t0
    report["time_cv_s"] = fit.seconds - fit.result.seconds if fit.scores else 0.0
    report["lambda"] = fit.lam
    report["solver_iters"] = fit.result.n_iter
    report["solver_converged"] = fit.result.converged
    report["n_sites"] = int(len(plan.nodes))

    t0 = time.perf_counter()
    motion = cs_mvf.reconstruct_field(fit.result.theta, (h, w), cfg.solver.downsample)
    restored = cs_mvf.restore_video_cs(video, motion)
    report["time_warp_s"] = time.perf_counter() - t0
    if run_dir is not None:
        fit.result.write_log(run_dir / "solver.log")
        np.save(run_dir / "coefficients.npy", fit.result.theta)
        save_field(motion, run_dir / "field_cs.umvf")
        save_sequence(restored, run_dir / "cs_restored")
    return restored


def run_restore(video, cfg=None, run_dir=None, trajectories=None):
    """Restore ``video`` according to ``cfg.mode``.

    Returns ``(restored_video, restored_image, report)`` where ``report`` is
    a dict with point counts, the chosen lambda, solver iterations and wall
    time per stage.  With ``run_dir`` every stage writes its artifacts there.
    Precomputed ``trajectories`` (from :func:`tracking.track`) skip tracking.
    """
    cfg = cfg or PipelineConfig()
    if not isinstance(video, Video):
        video = Video(frames_of(video))
    if video.frames.shape[0] < MIN_FRAMES:
        raise DataError(f"need at least {MIN_FRAMES} frames, got {video.frames.shape[0]}")
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.json")
    report = {"mode": cfg.mode, "n_frames": int(video.frames.shape[0])}
    start = time.perf_counter()
    restored = video
    if cfg.mode in ("cs", "cs_peof"):
        restored = restore_cs(video, cfg, report, run_dir, trajectories)
    if cfg.mode in ("peof", "cs_peof"):
        t0 = time.perf_counter()
        restored = restore_video_peof(restored, cfg.flow)
        report["time_peof_s"] = time.perf_counter() - t0
    image = aggregate(restored, cfg.aggregation)
    report["time_total_s"] = time.perf_counter() - start
    if run_dir is not None:
        save_sequence(restored, run_dir / "restored")
        write_image(run_dir / "restored_image.png", image, bit_depth=16)
        (run_dir / "report.json").write_text(json.dumps(report, indent=2, default=float))
    log.info("restore %s finished in %.1f s", cfg.mode, report["time_total_s"])
    return restored, image, report


# --------------------------------------------------------------------------
# Benchmark


@dataclass
class Scene:
    name: str
    clean: np.ndarray
    distorted: Video


def load_manifest(path):
    """Scenes listed in a JSON manifest.

    The manifest is a list of ``{"name": ..., "clean": image, "distorted": sequence_dir}``;
    relative paths are taken relative to the manifest.
    """
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise DataError("benchmark manifest must be a JSON list")
    scenes = []
    for i, entry in enumerate(entries):
        try:
            name = entry.get("name", f"scene{i}")
            clean, distorted = entry["clean"], entry["distorted"]
        except (AttributeError, KeyError) as exc:
            raise DataError(f"manifest entry {i} needs 'clean' and 'distorted'") from exc
        scenes.append((name, path.parent / clean, path.parent / distorted))
    return scenes


def _resolve_scene(scene):
    if isinstance(scene, Scene):
        return scene
    name, clean, distorted = scene
    return Scene(name, read_image(clean), load_sequence(distorted))


def retrack_motion_reduction(video, seeds, before, cfg=None):
    """Motion reduction (percent) of ``video`` relative to the trajectories ``before``.

    The ``seeds`` that produced ``before`` are tracked again in ``video``;
    points valid in both runs and moving in ``before`` are compared.
    """
    cfg = cfg or PipelineConfig()
    after = tracking.track(video, seeds, cfg.tracker)
    before_ok = {t.point_id: t for t in before if t.valid}
    common = [t.point_id for t in after if t.valid and t.point_id in before_ok]
    d0 = [tracking.to_displacement(before_ok[i], cfg.tracker.anchor) for i in common]
    d1 = [tracking.to_displacement(after[i], cfg.tracker.anchor) for i in common]
    moving = [k for k, d in enumerate(d0) if np.any(d.offsets != 0)]
    if not moving:
        return float("nan")
    return metrics.motion_reduction([d0[k] for k in moving], [d1[k] for k in moving])


def run_benchmark(scenes, modes=MODES, cfg=None, out_csv=None, run_dir=None):
    """One row per (scene, mode) with timing, image quality and motion reduction.

    ``scenes`` holds :class:`Scene` objects or ``(name, clean_path, sequence_dir)``
    tuples (see :func:`load_manifest`).  Failures are recorded in the
    ``status`` column and the run moves on.  ``time_s`` excludes the
    cross-validation time, which is reported separately as ``cv_time_s``.
    MR re-tracks the frame-0 seeds of the distorted video in the restored one.
    """
    cfg = cfg or PipelineConfig()
    rows = []
    for scene in scenes:
        name = scene.name if isinstance(scene, Scene) else scene[0]
        try:
            scene = _resolve_scene(scene)
            seeds = tracking.detect_features(scene.distorted.frames[0], cfg.tracker)
            if len(seeds) == 0:
                raise DataError("no salient points in the first frame")
            before = tracking.track(scene.distorted, seeds, cfg.tracker)
            sig = metrics.sigma_motion(before) if any(t.valid for t in before) else float("nan")
        except Exception as exc:  # noqa: BLE001 - a broken scene must not stop the run
            log.warning("scene %s failed to load or track: %s", name, exc)
            for mode in modes:
                rows.append({**dict.fromkeys(BENCH_COLUMNS, ""), "scene": name, "mode": mode,
                             "status": f"error: {exc}"})
            continue
        for mode in modes:
            row = dict.fromkeys(BENCH_COLUMNS, "")
            row.update(scene=name, mode=mode, sigma_motion=sig, n_points=len(seeds),
                       n_valid=sum(t.valid for t in before))
            try:
                mode_cfg = replace(cfg, mode=mode)
                sub = None if run_dir is None else Path(run_dir) / name / mode
                restored, image, report = run_restore(scene.distorted, mode_cfg, sub)
                cv_time = report.get("time_cv_s", 0.0)
                quality = metrics.evaluate(image, scene.clean)
                row.update(time_s=report["time_total_s"] - cv_time, cv_time_s=cv_time,
                           nmi=quality.nmi, ssim=quality.ssim, rmse=quality.rmse,
                           mr=retrack_motion_reduction(restored, seeds, before, cfg), status="ok")
            except Exception as exc:  # noqa: BLE001
                log.warning("scene %s mode %s failed: %s", name, mode, exc)
                row["status"] = f"error: {exc}"
            rows.append(row)
    if out_csv is not None:
        write_benchmark_csv(rows, out_csv)
    return rows


def write_benchmark_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
