"""Throughput measurements emitted as ``key=value`` lines (timings only, no assertions)."""
from __future__ import annotations

import math
import time

import numpy as np

from .fields import ConstantProvider, project_params, provide_fields
from .fusion import FusionConfig, HistoryState
from .geometry import BevGridSpec, EgoPose, build_pull_map, surround_rig
from .pipeline import FrameInput, prepare_geometry, run_frame
from .projector import prob_project
from .sampling import Stochastic


def reference_frame_time(K: int = 8, C: int = 32, n_cams: int = 6, grid: BevGridSpec | None = None, repeats: int = 3):
    """Best-of wall time (s) for one full frame of the reference configuration."""
    grid = grid or BevGridSpec()
    rigs = surround_rig(H=48, W=112)[:n_cams]
    geom = prepare_geometry(rigs, grid)
    rng = np.random.default_rng(0)
    feats = [rng.standard_normal((C, 48, 112)).astype(np.float32) for _ in rigs]
    cfg = FusionConfig(K=K, mode=Stochastic(0))
    frame = FrameInput(feats, [ConstantProvider(0.5, -0.25, 1.0, 0.1, 1.0, 0.9)] * len(rigs), EgoPose(), 0)
    best = math.inf
    state = HistoryState()
    for _ in range(repeats):
        t = time.perf_counter()
        out, state = run_frame(frame, state, cfg, geom, grid)
        best = min(best, time.perf_counter() - t)
    return best, out.timings


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _project_all(rigs, grid, K, C, rng):
    prov = ConstantProvider(0.5, -0.25, 1.0, 0.1, 1.0, 0.9)
    setups = []
    for r in rigs:
        fs = provide_fields(prov, r)
        params = project_params(fs, build_pull_map(r, grid))
        F = rng.standard_normal((C, r.H, r.W)).astype(np.float32)
        setups.append((F, params, fs.alpha_prime))

    def run():
        for c, (F, params, alpha) in enumerate(setups):
            prob_project(F, params, alpha, K, Stochastic(0), stream=c)

    return run


def bench_lines(quick: bool = False, C: int = 32, Ks=(1, 4, 8, 16, 32)) -> list[str]:
    """Projection-stage timings across K, camera count and grid size."""
    repeats = 1 if quick else 3
    rng = np.random.default_rng(0)
    rigs = surround_rig(H=48, W=112)
    ref_grid = BevGridSpec()
    lines = []
    times = {}
    for K in Ks:
        times[K] = _time(_project_all(rigs, ref_grid, K, C, rng), repeats)
        lines.append(f"bench.project.K={K}.ms={1000 * times[K]:.3f}")
    if 1 in times and 8 in times:
        lines.append(f"bench.project.ratio_K8_K1={times[8] / times[1]:.3f}")
    cams = {}
    for n in (1, 6):
        cams[n] = _time(_project_all(rigs[:n], ref_grid, 8, C, rng), repeats)
        lines.append(f"bench.project.cameras={n}.ms={1000 * cams[n]:.3f}")
    lines.append(f"bench.project.ratio_cam6_cam1={cams[6] / cams[1]:.3f}")
    grids = {"120x60": ref_grid, "200x100": BevGridSpec((-50, 50), (-25, 25), 0.5)}
    gt = {}
    for name, g in grids.items():
        gt[name] = _time(_project_all(rigs, g, 8, C, rng), repeats)
        lines.append(f"bench.project.grid={name}.ms={1000 * gt[name]:.3f}")
    lines.append(f"bench.project.ratio_grid_200x100_120x60={gt['200x100'] / gt['120x60']:.3f}")
    return lines
