"""Per-frame BEV encoding and sequence driver.

``run_frame`` executes one frame in a fixed stage order:

1. per camera: field prediction, offset sampling, pull-index update,
   covariance sampling, probabilistic projection;
2. camera merge;
3. merge with warped historical raw features;
4. memory selection and temporal fusion;
5. save (raw history with decay, fused map into the ring).
"""
from __future__ import annotations

import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .fields import (
    CombinedProvider,
    LoadedProvider,
    OccluderMaskProvider,
    SlopeOracleProvider,
    ZeroProvider,
    project_params,
    provide_fields,
)
from .fusion import (
    FusionConfig,
    HistoryState,
    merge_cameras,
    merge_history,
    select_memory,
    temporal_fuse,
    update_raw_history,
    warp_raw,
)
from .geometry import BevGridSpec, CameraRig, EgoPose, GroundPlane, PullMap, build_distance_mask, build_pull_map
from .projector import RawBev, prob_project, static_project
from .scenegen import (
    SceneSpec,
    ScoreReport,
    erode,
    feature_noise,
    occluder_image_mask,
    rasterize_bev_oracle,
    render_camera,
    score,
    within_range,
)
from .tensorio import read_tensor

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def checksum(array) -> int:
    """FNV-1a 64 over the little-endian float32 bytes of ``array``."""
    return fnv1a64(np.ascontiguousarray(np.asarray(array, dtype="<f4")).tobytes())


class Trace:
    """Collects ``(stage, camera, checksum)`` records in execution order."""

    def __init__(self):
        self.records: list[tuple[str, str | None, int]] = []

    def add(self, stage, array, camera=None):
        self.records.append((stage, camera, checksum(array)))

    @property
    def stages(self):
        return [r[0] for r in self.records]

    def lines(self):
        return [f"{s} {c or '-'} {h:016x}" for s, c, h in self.records]


@dataclass(frozen=True, eq=False)
class CameraGeometry:
    """Static per-camera products, computed once per calibration."""

    rig: CameraRig
    pull: PullMap
    dmask: np.ndarray


def prepare_geometry(rigs, grid: BevGridSpec, plane: GroundPlane | None = None) -> list[CameraGeometry]:
    plane = plane or GroundPlane.flat()
    return [CameraGeometry(r, build_pull_map(r, grid, plane), build_distance_mask(r, plane)) for r in rigs]


@dataclass(eq=False)
class FrameInput:
    features: list
    providers: list
    pose: EgoPose = field(default_factory=EgoPose)
    index: int = 0
    oracle: np.ndarray | None = None


@dataclass(eq=False)
class FrameOutput:
    B: np.ndarray
    raw: RawBev
    per_cam: list | None = None
    score: ScoreReport | None = None
    timings: dict = field(default_factory=dict)


def _project_camera(cam_idx, geom: CameraGeometry, F, provider, cfg: FusionConfig, stream: int, trace_on: bool):
    """Stages for one camera. Returns (RawBev, trace records, timings)."""
    recs = []
    times = defaultdict(float)
    name = geom.rig.name

    def rec(stage, arr):
        if trace_on:
            recs.append((stage, name, checksum(arr)))

    t0 = time.perf_counter()
    if cfg.use_gaussian:
        fields = provide_fields(provider, geom.rig, geom.dmask)
        rec("offset_prediction", fields.mu_prime)
        rec("cov_conf_prediction", np.concatenate([fields.sigma_prime, fields.alpha_prime[None]]))
        alpha = fields.alpha_prime if cfg.use_alpha else np.ones_like(fields.alpha_prime)
        t1 = time.perf_counter()
        params = project_params(fields, geom.pull)
        if trace_on:
            rec("offset_sampling", np.nan_to_num(params.mu - geom.pull.coords))
            rec("pull_update", np.nan_to_num(params.mu))
            rec("cov_sampling", np.nan_to_num(params.sigma))
        t2 = time.perf_counter()
        raw = prob_project(F, params, alpha, cfg.K, cfg.mode, stream)
        t3 = time.perf_counter()
        times["fields"] += t1 - t0
        times["params"] += t2 - t1
        times["project"] += t3 - t2
    else:
        alpha = None
        if cfg.use_alpha:
            alpha = provide_fields(provider, geom.rig, geom.dmask).alpha_prime
            rec("cov_conf_prediction", alpha)
        t1 = time.perf_counter()
        raw = static_project(F, geom.pull, alpha)
        times["fields"] += t1 - t0
        times["project"] += time.perf_counter() - t1
    rec("prob_projection", np.concatenate([raw.features, raw.conf[None]]))
    return raw, recs, times


def run_frame(frame: FrameInput, state: HistoryState, cfg: FusionConfig, geometry, grid: BevGridSpec,
              weights=None, trace: Trace | None = None, executor=None, keep_per_cam: bool = False,
              score_mask=None):
    """Encode one frame. Returns ``(FrameOutput, new HistoryState)``; ``state`` is left untouched."""
    n = len(geometry)
    if len(frame.features) != n or len(frame.providers) != n:
        raise ConfigurationError(
            f"frame has {len(frame.features)} feature maps / {len(frame.providers)} providers for {n} cameras")
    trace_on = trace is not None
    timings = defaultdict(float)

    def job(c):
        return _project_camera(c, geometry[c], frame.features[c], frame.providers[c], cfg,
                               frame.index * n + c, trace_on)

    if executor is None:
        results = [job(c) for c in range(n)]
    else:
        results = list(executor.map(job, range(n)))
    per_cam = []
    for raw, recs, times in results:
        per_cam.append(raw)
        if trace_on:
            trace.records.extend(recs)
        for k, v in times.items():
            timings[k] += v

    t = time.perf_counter()
    merged = merge_cameras(per_cam)
    if trace_on:
        trace.add("merge_cameras", np.concatenate([merged.features, merged.conf[None]]))
    timings["merge_cameras"] += time.perf_counter() - t

    t = time.perf_counter()
    if cfg.use_raw_hist and state.raw_hist is not None:
        hist = warp_raw(grid, state.raw_hist, state.pose_hist, frame.pose)
        merged = merge_history(merged, hist)
        if trace_on:
            trace.add("merge_history", np.concatenate([merged.features, merged.conf[None]]))
    timings["merge_history"] += time.perf_counter() - t

    t = time.perf_counter()
    C, h, w = merged.features.shape
    if state.ring:
        memory = select_memory(state, frame.pose, cfg, grid)
    else:
        memory = np.zeros((cfg.T, C, h, w), dtype=merged.features.dtype)
    B = temporal_fuse(merged, memory, weights)
    if trace_on:
        trace.add("temporal_fusion", B)
    timings["temporal_fusion"] += time.perf_counter() - t

    t = time.perf_counter()
    new_state = state
    if cfg.use_raw_hist:
        new_state = update_raw_history(new_state, merged, frame.pose, cfg.gamma)
    new_state = new_state.push(B, frame.pose, cfg.ring_size)
    if trace_on:
        trace.add("save", B)
    timings["save"] += time.perf_counter() - t

    rep = None
    if frame.oracle is not None:
        mask = merged.valid if score_mask is None else score_mask
        rep = score(B, frame.oracle, mask)
    out = FrameOutput(B=B, raw=merged, per_cam=per_cam if keep_per_cam else None, score=rep, timings=dict(timings))
    return out, new_state


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

def scene_providers(scene: SceneSpec, rigs, pose: EgoPose, kind: str = "oracle",
                    assumed: GroundPlane | None = None):
    """Field providers derived from scene knowledge.

    ``oracle`` corrects the ground plane exactly and masks occluders;
    ``slope`` and ``occluder`` apply one of the two; ``zero`` applies neither.
    """
    assumed = assumed or GroundPlane.flat()
    if kind not in ("oracle", "slope", "occluder", "zero"):
        raise ConfigurationError(f"unknown provider kind {kind!r}")
    out = []
    for rig in rigs:
        geo = SlopeOracleProvider(scene.plane, assumed) if kind in ("oracle", "slope") else ZeroProvider()
        if kind in ("oracle", "occluder") and scene.occluders:
            occ = OccluderMaskProvider(mask=occluder_image_mask(scene, rig, pose))
            out.append(CombinedProvider(geo, occ))
        else:
            out.append(geo)
    return out


def scene_frames(scene: SceneSpec, rigs, trajectory, grid: BevGridSpec, provider: str = "oracle",
                 noise: float = 0.0, noise_seed: int = 0, assumed: GroundPlane | None = None):
    """Render a trajectory through ``scene`` into frame inputs with oracles."""
    n = len(rigs)
    frames = []
    for t, pose in enumerate(trajectory):
        feats = []
        for c, rig in enumerate(rigs):
            img = render_camera(scene, rig, pose)
            if noise:
                img = img + feature_noise(img.shape, noise, noise_seed, t * n + c)
            feats.append(img)
        frames.append(FrameInput(
            features=feats,
            providers=scene_providers(scene, rigs, pose, provider, assumed),
            pose=pose,
            index=t,
            oracle=rasterize_bev_oracle(scene, grid, pose),
        ))
    return frames


def tensor_frames(directory, rigs, trajectory):
    """Frames from ``<dir>/<frame:04d>/<camera>.bvt`` feature files.

    Per-camera field files (``<camera>_mu_prime.bvt`` etc.) in the same
    directory select a :class:`LoadedProvider`; otherwise fields are zero.
    """
    directory = Path(directory)
    frames = []
    for t, pose in enumerate(trajectory):
        fdir = directory / f"{t:04d}"
        feats, provs = [], []
        for rig in rigs:
            F = read_tensor(fdir / f"{rig.name}.bvt")
            if F.ndim != 3 or F.shape[1:] != (rig.H, rig.W):
                raise ConfigurationError(f"{fdir / rig.name}.bvt: shape {F.shape} does not match camera {rig.H}x{rig.W}")
            feats.append(F)
            has_fields = (fdir / f"{rig.name}_mu_prime.bvt").exists()
            provs.append(LoadedProvider(fdir) if has_fields else ZeroProvider())
        frames.append(FrameInput(feats, provs, pose, t))
    return frames


@dataclass(eq=False)
class SequenceResult:
    outputs: list
    aggregate: ScoreReport | None
    timings: dict
    fps: float
    final_state: HistoryState


def default_score_mask(geometry, grid: BevGridSpec, radius: float | None = None, erosion: int = 1):
    cover = np.zeros(grid.shape, dtype=bool)
    for g in geometry:
        cover |= g.pull.valid
    mask = erode(cover, erosion)
    if radius is not None:
        mask &= within_range(grid, radius)
    return mask


def run_sequence(frames, geometry, grid: BevGridSpec, cfg: FusionConfig, weights=None, threads: int = 1,
                 trace: Trace | None = None, score_mask=None, keep_per_cam: bool = False) -> SequenceResult:
    """Run frames strictly in order, threading the history state through."""
    frames = list(frames)
    if not frames:
        raise ConfigurationError("empty sequence")
    names = [g.rig.name for g in geometry]
    for f in frames:
        if len(f.features) != len(names):
            raise ConfigurationError(f"frame {f.index}: camera set changed mid-sequence")
    if score_mask is None and any(f.oracle is not None for f in frames):
        score_mask = default_score_mask(geometry, grid)
    state = HistoryState()
    outputs = []
    timings = defaultdict(float)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    t0 = time.perf_counter()
    try:
        for f in frames:
            out, state = run_frame(f, state, cfg, geometry, grid, weights, trace, executor, keep_per_cam, score_mask)
            outputs.append(out)
            for k, v in out.timings.items():
                timings[k] += v
    finally:
        if executor is not None:
            executor.shutdown()
    elapsed = time.perf_counter() - t0
    reports = [o.score for o in outputs if o.score is not None]
    agg = ScoreReport.mean(reports) if reports else None
    per_frame_ms = {k: 1000.0 * v / len(frames) for k, v in timings.items()}
    return SequenceResult(outputs, agg, per_frame_ms, len(frames) / elapsed if elapsed > 0 else float("inf"), state)
