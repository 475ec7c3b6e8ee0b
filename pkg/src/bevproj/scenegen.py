"""Synthetic scenes: procedural ground textures, ray-cast camera rendering,
analytic BEV ground truth and scoring.

Textures live in world coordinates and are evaluated in closed form both by
the renderer and by the BEV oracle. Channel layout:

0. periodic bands (lane dividers, zebra stripes); background elsewhere
1. crossing rectangles; background elsewhere
2. background level

Occluders are axis-aligned vertical boxes standing on z = 0 and render
with :data:`OCCLUDER_SIGNATURE`. The ground plane is expressed in the ego
frame, so a pitched plane describes the road ahead of the vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import BevGridSpec, CameraRig, EgoPose, GroundPlane

N_CHANNELS = 3
OCCLUDER_SIGNATURE = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Bands:
    """Periodic bands along ``heading_deg``: on where ``(a + phase) mod period < width``."""

    period: float
    width: float
    heading_deg: float = 0.0
    phase: float = 0.0
    level: float = 1.0

    def mask(self, x, y):
        h = math.radians(self.heading_deg)
        a = x * math.cos(h) + y * math.sin(h) + self.phase
        return np.mod(a, self.period) < self.width


@dataclass(frozen=True)
class Crossing:
    """Axis-aligned rectangle ``center`` +- ``size / 2`` in world metres."""

    center: tuple[float, float]
    size: tuple[float, float]
    level: float = 1.0

    def mask(self, x, y):
        cx, cy = self.center
        sx, sy = self.size
        return (np.abs(x - cx) <= sx / 2) & (np.abs(y - cy) <= sy / 2)


@dataclass(frozen=True)
class Box:
    center: tuple[float, float]
    size: tuple[float, float]
    height: float

    def bounds(self):
        cx, cy = self.center
        sx, sy = self.size
        return np.array([cx - sx / 2, cy - sy / 2, 0.0]), np.array([cx + sx / 2, cy + sy / 2, self.height])

    def corners(self):
        lo, hi = self.bounds()
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


@dataclass(frozen=True, eq=False)
class SceneSpec:
    background: float = 0.2
    bands: tuple[Bands, ...] = ()
    crossings: tuple[Crossing, ...] = ()
    plane: GroundPlane = field(default_factory=GroundPlane.flat)
    occluders: tuple[Box, ...] = ()
    seed: int = 0

    def __post_init__(self):
        levels = [self.background] + [b.level for b in self.bands] + [c.level for c in self.crossings]
        if any(not 0.0 <= v <= 1.0 for v in levels):
            raise ValueError("texture levels must lie in [0, 1]")
        for name in ("bands", "crossings", "occluders"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def texture(self, x, y) -> np.ndarray:
        """Texture (3, ...) at world coordinates."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        bg = self.background
        out = np.full((N_CHANNELS,) + np.broadcast_shapes(x.shape, y.shape), bg)
        for b in self.bands:
            out[0] = np.where(b.mask(x, y), b.level, out[0])
        for c in self.crossings:
            out[1] = np.where(c.mask(x, y), c.level, out[1])
        return out


def demo_scene(pitch_deg: float = 0.0, occluders: bool = False, seed: int = 0) -> SceneSpec:
    """Stock scene: lane bands, zebra crossings, optional slope and boxes."""
    boxes = ()
    if occluders:
        boxes = (
            Box((8.0, 3.0), (2.0, 2.0), 1.6),
            Box((-7.0, -3.5), (3.0, 1.8), 1.6),
            Box((4.0, -6.0), (2.0, 2.0), 1.8),
        )
    return SceneSpec(
        background=0.2,
        bands=(Bands(period=7.0, width=2.0, heading_deg=90.0, phase=1.0, level=0.9),
               Bands(period=5.0, width=2.5, heading_deg=0.0, phase=0.5, level=0.7)),
        crossings=(Crossing((14.0, 0.0), (4.0, 12.0), 0.9), Crossing((-12.0, 2.0), (3.0, 10.0), 0.8)),
        plane=GroundPlane.pitched(pitch_deg) if pitch_deg else GroundPlane.flat(),
        occluders=boxes,
        seed=seed,
    )


def _ray_box(o, d, lo, hi):
    """Slab test. Returns entry distance (inf on miss), ``o`` (3,), ``d`` (..., 3)."""
    tmin = np.full(d.shape[:-1], -np.inf)
    tmax = np.full(d.shape[:-1], np.inf)
    for a in range(3):
        da = d[..., a]
        par = np.abs(da) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[a] - o[a]) / da
            t2 = (hi[a] - o[a]) / da
        near = np.where(par, -np.inf, np.minimum(t1, t2))
        far = np.where(par, np.inf, np.maximum(t1, t2))
        outside = par & ((o[a] < lo[a]) | (o[a] > hi[a]))
        far = np.where(outside, -np.inf, far)
        tmin = np.maximum(tmin, near)
        tmax = np.minimum(tmax, far)
    hit = (tmax >= np.maximum(tmin, 0.0)) & (tmax > 0)
    return np.where(hit, np.maximum(tmin, 0.0), np.inf)


def trace(scene: SceneSpec, rig: CameraRig, ego: EgoPose | None = None):
    """Ray-cast every pixel. Returns ``(image (3, H, W), occluder_hit (H, W))``."""
    ego = ego or EgoPose()
    u, v = rig.pixel_grid()
    d = rig.rays(u, v)
    s_ground = scene.plane.intersect(rig.t, d)

    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o_w = Rz @ rig.t + np.array([ego.x, ego.y, 0.0])
    d_w = d @ Rz.T
    s_box = np.full(s_ground.shape, np.inf)
    for box in scene.occluders:
        lo, hi = box.bounds()
        s_box = np.minimum(s_box, _ray_box(o_w, d_w, lo, hi))

    occ = s_box < s_ground
    ground = np.isfinite(s_ground) & ~occ
    img = np.zeros((N_CHANNELS,) + u.shape)
    if ground.any():
        p = rig.t + np.where(ground, s_ground, 0.0)[..., None] * d
        xw, yw = ego.apply(p[..., 0], p[..., 1])
        tex = scene.texture(xw[ground], yw[ground])
        img[:, ground] = tex
    for ch, val in enumerate(OCCLUDER_SIGNATURE):
        img[ch][occ] = val
    return img.astype(np.float32), occ


def render_camera(scene: SceneSpec, rig: CameraRig, ego: EgoPose | None = None) -> np.ndarray:
    """Point-sampled (3, H, W) camera image; sky pixels are 0."""
    return trace(scene, rig, ego)[0]


def occluder_image_mask(scene: SceneSpec, rig: CameraRig, ego: EgoPose | None = None) -> np.ndarray:
    """Pixels whose nearest surface is an occluder."""
    if not scene.occluders:
        return np.zeros((rig.H, rig.W), dtype=bool)
    return trace(scene, rig, ego)[1]


def rasterize_bev_oracle(scene: SceneSpec, grid: BevGridSpec, ego: EgoPose | None = None) -> np.ndarray:
    """Ground texture at every BEV cell centre, (3, h, w) float32."""
    ego = ego or EgoPose()
    x, y = grid.centers()
    xw, yw = ego.apply(x, y)
    return scene.texture(xw, yw).astype(np.float32)


def feature_noise(shape, sigma: float, seed: int, stream: int) -> np.ndarray:
    """Reproducible i.i.d. Gaussian noise keyed by ``(seed, stream)``."""
    if sigma == 0:
        return np.zeros(shape, dtype=np.float32)
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF]))
    return (sigma * rng.standard_normal(shape)).astype(np.float32)


@dataclass(frozen=True)
class ScoreReport:
    mse: float
    psnr: float
    iou: float
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0

    @classmethod
    def mean(cls, reports) -> "ScoreReport":
        reps = [r for r in reports if not r.empty]
        if not reps:
            return cls(math.nan, math.nan, math.nan, 0)
        mse = float(np.mean([r.mse for r in reps]))
        return cls(mse, float(np.mean([r.psnr for r in reps])), float(np.mean([r.iou for r in reps])),
                   int(round(np.mean([r.count for r in reps]))))


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def score(recon, oracle, valid, threshold: float = 0.5) -> ScoreReport:
    """MSE, PSNR (peak 1) and IoU of the thresholded maps over ``valid`` cells.

    IoU pools all channels; it is 1 when neither map has positives.
    """
    recon = np.asarray(recon, dtype=np.float64)
    oracle = np.asarray(oracle, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if recon.shape != oracle.shape or recon.shape[-2:] != valid.shape:
        raise ValueError(f"shape mismatch: {recon.shape}, {oracle.shape}, {valid.shape}")
    n = int(valid.sum())
    if n == 0:
        return ScoreReport(math.nan, math.nan, math.nan, 0)
    r = recon[..., valid]
    o = oracle[..., valid]
    mse = float(np.mean((r - o) ** 2))
    rp, op = r > threshold, o > threshold
    union = int(np.count_nonzero(rp | op))
    iou = 1.0 if union == 0 else np.count_nonzero(rp & op) / union
    return ScoreReport(mse, psnr_from_mse(mse), float(iou), n)


def erode(valid, cells: int = 1) -> np.ndarray:
    """Drop cells within ``cells`` of the mask border (point-sampling edge effects)."""
    if cells <= 0:
        return np.asarray(valid, dtype=bool)
    return ndimage.binary_erosion(valid, iterations=cells, border_value=0)


def within_range(grid: BevGridSpec, radius: float) -> np.ndarray:
    x, y = grid.centers()
    return np.hypot(x, y) <= radius
