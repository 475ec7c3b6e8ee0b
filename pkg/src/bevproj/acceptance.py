"""Acceptance criteria, runnable from the CLI (``bevproj verify``) and pytest.

Each criterion returns ``(passed, detail)`` and carries a runtime budget;
exceeding the budget fails the criterion.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .fields import ConstantProvider, OccluderMaskProvider, ProjectedParams, ZeroProvider, project_params, provide_fields
from .fusion import FusionConfig, HistoryState, merge_cameras, merge_history
from .geometry import (
    BevGridSpec,
    CameraRig,
    EgoPose,
    GroundPlane,
    back_project,
    build_pull_map,
    surround_rig,
    warp_bev,
)
from .pipeline import FrameInput, default_score_mask, prepare_geometry, run_frame, run_sequence, scene_frames
from .projector import RawBev, prob_project, static_project
from .sampling import (
    SIGMA_MIN,
    Deterministic,
    Gauss2,
    Stochastic,
    bilinear_sample,
    draw_samples,
    gaussian_pdf2,
    gaussian_pdf2_many,
)
from .config import straight_trajectory
from .scenegen import demo_scene, occluder_image_mask, rasterize_bev_oracle, render_camera, score


@dataclass(frozen=True)
class Criterion:
    id: str
    title: str
    budget_s: float
    check: Callable[[], tuple[bool, str]]


def random_rig(rng, name="cam") -> CameraRig:
    H = int(rng.integers(32, 64))
    W = int(rng.integers(64, 128))
    f = float(rng.uniform(0.6, 1.2) * W)
    return CameraRig.looking(
        name, fx=f, fy=f * rng.uniform(0.9, 1.1), cx=rng.uniform(0.4, 0.6) * (W - 1), cy=rng.uniform(0.4, 0.6) * (H - 1),
        H=H, W=W, position=(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.2, 2.0)),
        yaw=rng.uniform(-math.pi, math.pi), pitch=math.radians(rng.uniform(0, 12)),
    )


# ---------------------------------------------------------------------------
# 1. static equivalence
# ---------------------------------------------------------------------------

def crit_static_equivalence():
    rng = np.random.default_rng(1)
    grids = [BevGridSpec((-30, 30), (-15, 15), 0.5), BevGridSpec((-50, 50), (-25, 25), 0.5)]
    provider = ConstantProvider(0.0, 0.0, SIGMA_MIN, 0.0, SIGMA_MIN, 1.0)
    worst = 0.0
    for r in range(3):
        rig = random_rig(rng, f"r{r}")
        F = rng.standard_normal((4, rig.H, rig.W)).astype(np.float32)
        for grid in grids:
            pull = build_pull_map(rig, grid)
            fs = provide_fields(provider, rig)
            params = project_params(fs, pull)
            a = prob_project(F, params, fs.alpha_prime, K=1, mode=Deterministic())
            b = static_project(F, pull)
            worst = max(worst, float(np.abs(a.features - b.features).max()), float(np.abs(a.conf - b.conf).max()))
            if not np.array_equal(a.valid, b.valid):
                return False, f"rig {r}: validity differs"
    return worst <= 1e-5, f"max |prob - static| = {worst:.2e} (tol 1e-5)"


# ---------------------------------------------------------------------------
# 2. weight algebra of the probabilistic projection
# ---------------------------------------------------------------------------

def _random_params(rng, h, w, H, W):
    mu = np.stack([rng.uniform(0, W - 1, (h, w)), rng.uniform(0, H - 1, (h, w))], axis=-1)
    sigma = np.stack([rng.uniform(0.3, 3.0, (h, w)), rng.uniform(-1.5, 1.5, (h, w)), rng.uniform(0.3, 3.0, (h, w))], axis=-1)
    return ProjectedParams(mu, sigma, np.ones((h, w), dtype=bool))


def crit_weight_algebra():
    rng = np.random.default_rng(2)
    H, W, K, C = 40, 60, 8, 3
    h = w = 100
    params = _random_params(rng, h, w, H, W)
    # float64 so that c * alpha' is exact; a float32 product would perturb
    # each pixel by its own rounding and break exact proportionality
    alpha = rng.uniform(0, 1, (H, W))
    F = rng.uniform(-1, 1, (C, H, W)).astype(np.float32)
    mode = Stochastic(seed=7)
    out = prob_project(F, params, alpha, K, mode)

    # independent scalar recomputation of the per-sample weights
    cells = [(i, j) for i in range(h) for j in range(w)]
    alpha_sum = np.empty(len(cells))
    alpha_max = np.empty(len(cells))
    for n, (i, j) in enumerate(cells):
        g = Gauss2(tuple(params.mu[i, j]), tuple(params.sigma[i, j]))
        locs = draw_samples(g, K, mode, cell_id=i * w + j)
        dens = np.array([gaussian_pdf2(p, g) for p in locs])
        a = np.array([bilinear_sample(alpha, p)[0][0] for p in locs])
        alpha_sum[n] = np.sum(dens / dens.sum() * a)
        alpha_max[n] = a.max()
    conf = out.conf.astype(np.float64).ravel()
    err_sum = float(np.abs(conf - alpha_sum).max())
    bound_ok = bool(np.all(conf >= 0) and np.all(conf <= alpha_max + 1e-6))

    worst_rel = 0.0
    for c in (0.25, 0.5, 0.9, 1.0):
        scaled = prob_project(F, params, alpha * c, K, mode)
        for got, ref in ((scaled.conf, out.conf), (scaled.features, out.features)):
            ref = ref.astype(np.float64) * c
            nz = ref != 0
            if np.any(got[~nz] != 0):
                worst_rel = math.inf
            rel = np.abs(got[nz] - ref[nz]) / np.abs(ref[nz])
            worst_rel = max(worst_rel, float(rel.max(initial=0.0)))
    ok = err_sum <= 1e-6 and bound_ok and worst_rel <= 1e-6
    return ok, (f"|alpha - sum w| = {err_sum:.2e}, bound {'ok' if bound_ok else 'VIOLATED'}, "
                f"scaling rel err = {worst_rel:.2e} over {len(cells)} cells")


# ---------------------------------------------------------------------------
# 3. camera merge
# ---------------------------------------------------------------------------

def _brute_merge(per_cam):
    C, h, w = per_cam[0].features.shape
    feats = np.zeros((C, h, w))
    conf = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            v = 0
            fsum = np.zeros(C)
            asum = 0.0
            for r in per_cam:
                if r.valid[i, j]:
                    v += 1
                fsum += r.features[:, i, j]
                asum += float(r.conf[i, j])
            feats[:, i, j] = fsum / max(1, v)
            conf[i, j] = asum / max(1, v)
    return feats, conf


def _random_raw(rng, C, h, w):
    valid = rng.uniform(size=(h, w)) < 0.6
    conf = np.where(valid, rng.uniform(0, 1, (h, w)), 0.0).astype(np.float32)
    feats = np.where(valid, rng.standard_normal((C, h, w)), 0.0).astype(np.float32)
    return RawBev(feats, conf, valid)


def crit_camera_merge():
    rng = np.random.default_rng(3)
    C, h, w = 4, 120, 60
    cams = [_random_raw(rng, C, h, w) for _ in range(6)]
    got = merge_cameras(cams)
    f_ref, a_ref = _brute_merge(cams)
    err = max(float(np.abs(got.features - f_ref).max()), float(np.abs(got.conf - a_ref).max()))
    perm_err = 0.0
    for _ in range(3):
        p = merge_cameras([cams[i] for i in rng.permutation(6)])
        perm_err = max(perm_err, float(np.abs(p.features - got.features).max()), float(np.abs(p.conf - got.conf).max()))
    ok = err <= 1e-6 and perm_err <= 1e-6
    return ok, f"vs brute force {err:.2e}, permutation {perm_err:.2e} (tol 1e-6)"


# ---------------------------------------------------------------------------
# 4. history merge
# ---------------------------------------------------------------------------

def _merge_scalars(a, ah, B, Bh):
    cur = RawBev(np.asarray(B, dtype=np.float64)[None], np.asarray(a, dtype=np.float64), np.ones(np.shape(a), bool))
    hist = RawBev(np.asarray(Bh, dtype=np.float64)[None], np.asarray(ah, dtype=np.float64), np.ones(np.shape(a), bool))
    out = merge_history(cur, hist)
    return out.features[0], out.conf


def crit_history_merge():
    rng = np.random.default_rng(4)
    n = 1_000_000
    a = rng.uniform(1e-3, 1.0, (1, n))
    ah = rng.uniform(1e-3, 1.0, (1, n))
    B = rng.uniform(-10, 10, (1, n))
    Bh = rng.uniform(-10, 10, (1, n))
    f1, c1 = _merge_scalars(a, ah, B, Bh)
    f2, c2 = _merge_scalars(ah, a, Bh, B)
    problems = []
    if not (np.array_equal(f1, f2) and np.array_equal(c1, c2)):
        problems.append("asymmetric")
    tol = 1e-12
    lo, hi = np.minimum(B, Bh), np.maximum(B, Bh)
    if not np.all((f1 >= lo - tol * (1 + np.abs(lo))) & (f1 <= hi + tol * (1 + np.abs(hi)))):
        problems.append("feature not convex")
    if not np.all(c1 >= (a + ah) / 2 - tol) or not np.all(c1 <= np.maximum(a, ah) + tol):
        problems.append("confidence bound violated")
    f0, c0 = _merge_scalars(a, np.zeros_like(a), B, Bh)
    if not (np.allclose(f0, B, rtol=1e-12, atol=0) and np.allclose(c0, a, rtol=1e-12, atol=0)):
        problems.append("alpha_hist = 0 not identity")
    worked = [((0.5, 0.5, 2.0, 4.0), (3.0, 0.5)), ((0.8, 0.2, 1.0, 0.0), (0.8, 0.68)), ((0.7, 0.0, 5.0, 9.0), (5.0, 0.7))]
    for (sa, sah, sb, sbh), (ef, ec) in worked:
        f, c = _merge_scalars(np.array([[sa]]), np.array([[sah]]), np.array([[sb]]), np.array([[sbh]]))
        if abs(f.item() - ef) > 1e-12 or abs(c.item() - ec) > 1e-12:
            problems.append(f"worked example {(sa, sah, sb, sbh)} -> {(f.item(), c.item())}")
    return not problems, ("all properties hold on 1e6 samples" if not problems else "; ".join(problems))


# ---------------------------------------------------------------------------
# 5. geometry round trips
# ---------------------------------------------------------------------------

def crit_geometry_round_trips():
    grid = BevGridSpec()
    worst = 0.0
    for plane in (GroundPlane.flat(), GroundPlane.pitched(3.0)):
        for rig in surround_rig():
            pull = build_pull_map(rig, grid, plane)
            uv = pull.coords[pull.valid]
            pts, _, hit = back_project(rig, plane, uv[:, 0], uv[:, 1])
            x, y = grid.centers()
            ref = np.stack([x[pull.valid], y[pull.valid], plane.height_at(x[pull.valid], y[pull.valid])], axis=-1)
            if not hit.all():
                return False, f"{rig.name}: back-projected ray missed the plane"
            worst = max(worst, float(np.linalg.norm(pts - ref, axis=-1).max()))
    x, y = grid.centers()
    # shortest length scale 12 m: double bilinear error ~ h^2 |f''| / 4 stays below 1e-3
    X = np.stack([np.sin(x / 15.4) * np.cos(y / 12.0), np.cos((x + y) / 18.9)]).astype(np.float64)
    delta = EgoPose(0.3, -0.2, math.radians(1.0))
    back = warp_bev(grid, delta.inverse(), warp_bev(grid, delta, X))
    interior = np.zeros(grid.shape, dtype=bool)
    interior[2:-2, 2:-2] = True
    warp_err = float(np.abs(back - X)[:, interior].max())
    ok = worst <= 1e-6 and warp_err <= 1e-3
    return ok, f"pull round trip {worst:.2e} m (tol 1e-6), warp round trip {warp_err:.2e} (tol 1e-3)"


# ---------------------------------------------------------------------------
# 6. Gaussian kernel
# ---------------------------------------------------------------------------

def crit_gaussian_kernel():
    problems = []
    cases = [
        (Gauss2((0.0, 0.0), (1.0, 0.0, 1.0)), (0.0, 0.0), 1 / (2 * math.pi)),
        (Gauss2((0.0, 0.0), (1.0, 0.0, 1.0)), (1.0, 0.0), math.exp(-0.5) / (2 * math.pi)),
        (Gauss2((0.0, 0.0), (2.0, 0.0, 2.0)), (0.0, 0.0), 1 / (8 * math.pi)),
    ]
    for g, loc, ref in cases:
        if abs(gaussian_pdf2(loc, g) - ref) > 1e-9:
            problems.append(f"pdf at {loc} with chol {g.chol}")
    rng = np.random.default_rng(6)
    worst_mass = 0.0
    worst_cov = 0.0
    for trial in range(4):
        g = Gauss2((rng.uniform(-5, 5), rng.uniform(-5, 5)), (rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0)))
        ev = np.linalg.eigvalsh(g.cov)
        s_lo, s_hi = math.sqrt(ev[0]), math.sqrt(ev[1])
        step = s_lo / 20
        ax_u = np.arange(g.mean[0] - 6 * s_hi, g.mean[0] + 6 * s_hi + step, step)
        ax_v = np.arange(g.mean[1] - 6 * s_hi, g.mean[1] + 6 * s_hi + step, step)
        U, V = np.meshgrid(ax_u, ax_v, indexing="ij")
        l11, l21, l22 = g.chol
        mass = float(gaussian_pdf2_many(U - g.mean[0], V - g.mean[1], l11, l21, l22).sum() * step * step)
        worst_mass = max(worst_mass, abs(mass - 1.0))
        draws = draw_samples(g, 100_000, Stochastic(seed=100 + trial), cell_id=trial)
        emp = np.cov(draws.T)
        worst_cov = max(worst_cov, float(np.linalg.norm(emp - g.cov) / np.linalg.norm(g.cov)))
    if worst_mass > 0.01:
        problems.append(f"mass error {worst_mass:.3e}")
    if worst_cov > 0.03:
        problems.append(f"covariance error {worst_cov:.3e}")
    detail = f"pdf values exact to 1e-9, mass error {worst_mass:.2e} (tol 1e-2), cov rel err {worst_cov:.2e} (tol 3e-2)"
    return not problems, detail if not problems else "; ".join(problems)


# ---------------------------------------------------------------------------
# scene experiments
# ---------------------------------------------------------------------------

def slope_experiment(seed: int = 0):
    """MSE of the static pull and of the slope-oracle probabilistic pull (within 20 m)."""
    grid = BevGridSpec()
    rigs = surround_rig()
    geom = prepare_geometry(rigs, grid)
    mask = default_score_mask(geom, grid, radius=20.0)
    scene = demo_scene(pitch_deg=3.0, seed=seed)
    frames = scene_frames(scene, rigs, [EgoPose()], grid, provider="slope")
    static = run_sequence(frames, geom, grid, FusionConfig.ablation("A"), score_mask=mask)
    prob = run_sequence(frames, geom, grid, FusionConfig.ablation("B2", mode=Stochastic(seed)), score_mask=mask)
    return static.aggregate, prob.aggregate


def crit_slope():
    s, p = slope_experiment()
    ratio = s.mse / p.mse
    return ratio >= 2.0, f"MSE static {s.mse:.4f} / oracle {p.mse:.4f} = {ratio:.2f} (need >= 2.0) on {s.count} cells"


def occluded_cells(geometry, masks):
    """BEV cells whose static pull lands on an occluder pixel in some camera."""
    out = np.zeros(geometry[0].pull.valid.shape, dtype=bool)
    for g, m in zip(geometry, masks):
        uv = g.pull.coords[g.pull.valid]
        ui = np.rint(uv[:, 0]).astype(int)
        vi = np.rint(uv[:, 1]).astype(int)
        hit = np.zeros_like(g.pull.valid)
        hit[g.pull.valid] = m[vi, ui]
        out |= hit
    return out


def occlusion_experiment(seed: int = 0):
    grid = BevGridSpec()
    rigs = surround_rig()
    geom = prepare_geometry(rigs, grid)
    scene = demo_scene(occluders=True, seed=seed)
    pose = EgoPose()
    feats = [render_camera(scene, r, pose) for r in rigs]
    masks = [occluder_image_mask(scene, r, pose) for r in rigs]
    region = occluded_cells(geom, masks)
    oracle = rasterize_bev_oracle(scene, grid, pose)
    cfg = FusionConfig.ablation("B2", mode=Stochastic(seed))
    results = {}
    for name, provs in (("ones", [ZeroProvider()] * len(rigs)), ("mask", [OccluderMaskProvider(mask=m) for m in masks])):
        out, _ = run_frame(FrameInput(feats, provs, pose), HistoryState(), cfg, geom, grid)
        results[name] = score(out.B, oracle, region)
    return results["ones"], results["mask"]


def crit_occlusion():
    ones, mask = occlusion_experiment()
    rel = 1.0 - mask.mse / ones.mse
    return rel >= 0.20, f"occluded-region MSE alpha'=1 {ones.mse:.4f} vs mask {mask.mse:.4f}: {100 * rel:.1f}% lower (need >= 20%) on {ones.count} cells"


def feature_std(scene, rigs, pose=None) -> float:
    """Pixel standard deviation of the rendered features (signal scale for 0 dB SNR noise)."""
    pose = pose or EgoPose()
    return float(np.concatenate([render_camera(scene, r, pose).ravel() for r in rigs]).std())


def temporal_experiment(frames: int = 10, noise: float | None = None, gamma: float = 0.9, seed: int = 0):
    """Mean scores with and without raw history; ``noise=None`` means 0 dB SNR."""
    grid = BevGridSpec()
    rigs = surround_rig()
    geom = prepare_geometry(rigs, grid)
    scene = demo_scene(seed=seed)
    if noise is None:
        noise = feature_std(scene, rigs)
    seq = scene_frames(scene, rigs, straight_trajectory(frames, 1.0), grid, provider="oracle", noise=noise, noise_seed=seed)
    mask = default_score_mask(geom, grid)
    with_h = run_sequence(seq, geom, grid, FusionConfig.ablation("E", gamma=gamma, mode=Stochastic(seed)), score_mask=mask)
    no_h = run_sequence(seq, geom, grid, FusionConfig.ablation("B2", gamma=gamma, mode=Stochastic(seed)), score_mask=mask)
    return with_h.aggregate, no_h.aggregate


def crit_temporal():
    w, n = temporal_experiment()
    gain = w.psnr - n.psnr
    return gain >= 1.0, f"mean PSNR with history {w.psnr:.2f} dB vs without {n.psnr:.2f} dB: gain {gain:.2f} dB (need >= 1)"


def crit_determinism():
    import contextlib
    import io

    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        runs = [("a", "1"), ("b", "1"), ("c", "8")]
        for tag, threads in runs:
            with contextlib.redirect_stdout(io.StringIO()):
                rc = main(["simulate", "--preset", "slope", "--frames", "3", "--seed", "1", "--threads", threads,
                           "--out", str(tmp / tag), "--no-preview", "--trace"])
            if rc != 0:
                return False, f"simulate exited {rc}"
        ref = {p.relative_to(tmp / "a"): p.read_bytes() for p in sorted((tmp / "a").rglob("*")) if p.is_file() and p.name != "timing.txt"}
        for tag, _ in runs[1:]:
            got = {p.relative_to(tmp / tag): p.read_bytes() for p in sorted((tmp / tag).rglob("*")) if p.is_file() and p.name != "timing.txt"}
            if got != ref:
                diff = sorted(str(k) for k in set(ref) | set(got) if ref.get(k) != got.get(k))
                return False, f"run {tag} differs in {diff[:3]}"
    return True, f"{len(ref)} output files (incl. stage trace) byte-identical across 2 runs and --threads 1/8"


def crit_throughput():
    from .bench import bench_lines, reference_frame_time

    t, _ = reference_frame_time()
    lines = bench_lines(quick=True)
    return t < 1.0 and bool(lines), f"reference frame {1000 * t:.1f} ms (need < 1000 ms); bench table {len(lines)} lines"


CRITERIA = [
    Criterion("static_equivalence", "probabilistic projection degenerates to the static pull", 10, crit_static_equivalence),
    Criterion("weight_algebra", "per-sample weights, confidence bound and linear scaling in alpha'", 10, crit_weight_algebra),
    Criterion("camera_merge", "camera averaging vs brute force, permutation invariance", 10, crit_camera_merge),
    Criterion("history_merge", "confidence-weighted history merge properties", 10, crit_history_merge),
    Criterion("geometry_round_trips", "pull-map back-projection and warp round trip", 10, crit_geometry_round_trips),
    Criterion("gaussian_kernel", "pdf values, normalisation, sample moments", 30, crit_gaussian_kernel),
    Criterion("slope", "3 deg slope: static / oracle MSE >= 2", 120, crit_slope),
    Criterion("occlusion", "occluder confidence masking lowers occluded-region MSE >= 20%", 120, crit_occlusion),
    Criterion("temporal", "raw history gains >= 1 dB PSNR on noisy 10-frame drive", 120, crit_temporal),
    Criterion("determinism", "simulate byte-identical across runs and thread counts", 60, crit_determinism),
    Criterion("throughput", "reference frame < 1 s on one core, bench table emitted", 60, crit_throughput),
]


def run_criterion(c: Criterion) -> tuple[bool, str, float]:
    t = time.perf_counter()
    try:
        ok, detail = c.check()
    except Exception as exc:  # a crash is a failed criterion, reported not raised
        ok, detail = False, f"error: {type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t
    if dt > c.budget_s:
        ok = False
        detail += f"; runtime {dt:.1f}s over budget {c.budget_s:.0f}s"
    return ok, detail, dt


def format_result(c: Criterion, ok: bool, detail: str, dt: float) -> str:
    return f"{'PASS' if ok else 'FAIL'} {c.id}: {detail} [{dt:.2f}s]"


def run_all(ids=None, out=print) -> bool:
    selected = [c for c in CRITERIA if ids is None or c.id in ids]
    all_ok = True
    for c in selected:
        ok, detail, dt = run_criterion(c)
        out(format_result(c, ok, detail, dt))
        all_ok &= ok
    return all_ok
