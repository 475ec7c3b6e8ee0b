"""Camera model, BEV grid conventions, pull maps, distance masks and SE(2) warping.

Conventions used throughout the package:

* ego frame: x forward, y left, z up (metres);
* camera frame: x right, y down, z along the optical axis;
* image: u rightward, v downward, pixel centres at integer coordinates;
* BEV grid: row ``i`` has centre ``x = x_max - (i + 0.5) * cell`` and column
  ``j`` has centre ``y = y_max - (j + 0.5) * cell``, so row 0 is the far
  front edge and column 0 the far left edge (top-down view, forward up).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .sampling import bilinear_sample_many

MAX_DIST = 1e4

# camera axes expressed in a forward-looking, level body frame
_CAM_TO_BODY = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def nearest_rotation(R):
    """Project a 3x3 matrix onto SO(3) (SVD polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class CameraRig:
    """Pinhole camera with a camera-to-ego pose.

    ``H`` and ``W`` describe the feature-map resolution the intrinsics
    refer to. ``pose`` is a 4x4 homogeneous transform.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    H: int
    W: int
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "cam"

    def __post_init__(self):
        for key in ("fx", "fy"):
            val = getattr(self, key)
            if not (np.isfinite(val) and val > 0):
                raise ConfigurationError(f"{key} must be a positive focal length, got {val}")
        if int(self.H) < 1 or int(self.W) < 1:
            raise ConfigurationError(f"image size must be positive, got H={self.H}, W={self.W}")
        if not 0 <= self.cx < self.W:
            raise ConfigurationError(f"cx={self.cx} outside [0, W={self.W})")
        if not 0 <= self.cy < self.H:
            raise ConfigurationError(f"cy={self.cy} outside [0, H={self.H})")
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape == (3, 4):
            pose = np.vstack([pose, [0.0, 0.0, 0.0, 1.0]])
        if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
            raise ConfigurationError("pose must be a finite 4x4 or 3x4 matrix")
        R = pose[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9 or abs(np.linalg.det(R) - 1.0) >= 1e-9:
            raise ConfigurationError("pose rotation is not orthonormal with det 1")
        pose = pose.copy()
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "W", int(self.W))

    @classmethod
    def looking(cls, name, *, fx, fy, cx, cy, H, W, position, yaw=0.0, pitch=0.0, roll=0.0):
        """Build a rig from a mounting position and yaw/pitch/roll in radians.

        Yaw turns the optical axis left, positive pitch tilts it toward the
        ground, roll spins about the optical axis.
        """
        R = _rot_z(yaw) @ _rot_y(pitch) @ _rot_x(roll) @ _CAM_TO_BODY
        pose = np.eye(4)
        pose[:3, :3] = R
        pose[:3, 3] = position
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, H=H, W=W, pose=pose, name=name)

    @property
    def R(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points):
        """Project ego-frame points ``(..., 3)`` to ``(uv (..., 2), depth (...))``.

        Points with non-positive depth get NaN coordinates.
        """
        p = np.asarray(points, dtype=np.float64)
        pc = (p - self.t) @ self.R  # == R.T @ (p - t) per point
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            front = z > 0
            zs = np.where(front, z, np.nan)
            uv = np.stack([self.fx * pc[..., 0] / zs + self.cx, self.fy * pc[..., 1] / zs + self.cy], axis=-1)
        return uv, z

    def rays(self, u, v):
        """Ego-frame ray directions (not normalised) through pixel coordinates."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        dc = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones(np.broadcast_shapes(u.shape, v.shape))], axis=-1)
        return dc @ self.R.T

    def pixel_grid(self):
        """Pixel-centre coordinates ``(u, v)`` each of shape (H, W)."""
        v, u = np.mgrid[0 : self.H, 0 : self.W]
        return u.astype(np.float64), v.astype(np.float64)


@dataclass(frozen=True)
class BevGridSpec:
    """Metric BEV grid: ``x_range`` is longitudinal, ``y_range`` lateral."""

    x_range: tuple[float, float] = (-30.0, 30.0)
    y_range: tuple[float, float] = (-15.0, 15.0)
    cell: float = 0.5

    def __post_init__(self):
        if not self.cell > 0:
            raise ConfigurationError(f"cell size must be positive, got {self.cell}")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ConfigurationError("grid ranges must be increasing")
        if self.h < 1 or self.w < 1:
            raise ConfigurationError("grid must contain at least one cell")

    @classmethod
    def from_extent(cls, length: float, width: float, cell: float = 0.5):
        """Centred grid, e.g. ``from_extent(60, 30)`` for the 60 x 30 m range."""
        return cls((-length / 2, length / 2), (-width / 2, width / 2), cell)

    @property
    def h(self) -> int:
        return int(round((self.x_range[1] - self.x_range[0]) / self.cell))

    @property
    def w(self) -> int:
        return int(round((self.y_range[1] - self.y_range[0]) / self.cell))

    @property
    def shape(self) -> tuple[int, int]:
        return self.h, self.w

    def centers(self):
        """Cell-centre coordinates ``(x, y)``, each (h, w)."""
        i = np.arange(self.h, dtype=np.float64)
        j = np.arange(self.w, dtype=np.float64)
        x = self.x_range[1] - (i + 0.5) * self.cell
        y = self.y_range[1] - (j + 0.5) * self.cell
        return np.meshgrid(x, y, indexing="ij")

    def to_index(self, x, y):
        """Fractional ``(row, col)`` of metric points; inverse of :meth:`centers`."""
        row = (self.x_range[1] - np.asarray(x, dtype=np.float64)) / self.cell - 0.5
        col = (self.y_range[1] - np.asarray(y, dtype=np.float64)) / self.cell - 0.5
        return row, col


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """Plane ``normal . p = offset`` in the ego frame."""

    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if n.shape != (3,) or not np.isfinite(norm) or norm == 0:
            raise ConfigurationError("plane normal must be a finite non-zero 3-vector")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @classmethod
    def flat(cls, height: float = 0.0):
        return cls(np.array([0.0, 0.0, 1.0]), height)

    @classmethod
    def pitched(cls, degrees: float, height: float = 0.0):
        """Plane through ``(0, 0, height)`` rising ahead: ``z = height + x tan(theta)``."""
        th = math.radians(degrees)
        return cls(np.array([-math.sin(th), 0.0, math.cos(th)]), height * math.cos(th))

    def height_at(self, x, y):
        n = self.normal
        if abs(n[2]) < 1e-9:
            raise ConfigurationError("vertical plane has no height function")
        return (self.offset - n[0] * np.asarray(x) - n[1] * np.asarray(y)) / n[2]

    def intersect(self, origin, dirs):
        """Ray parameter ``s`` with ``origin + s * dirs`` on the plane.

        Rays parallel to the plane or hitting it behind the origin get ``inf``.
        """
        denom = dirs @ self.normal
        num = self.offset - float(np.dot(self.normal, origin))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
        return np.where((np.abs(denom) > 1e-12) & (s > 0), s, np.inf)

    def same_as(self, other: "GroundPlane", tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.normal, other.normal, atol=tol, rtol=0) and abs(self.offset - other.offset) <= tol)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class EgoPose:
    """Planar vehicle pose in the world frame."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.yaw)):
            raise ConfigurationError("pose must be finite")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def compose(self, other: "EgoPose") -> "EgoPose":
        """``self ∘ other``: apply ``other`` in this pose's local frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return EgoPose(self.x + c * other.x - s * other.y, self.y + s * other.x + c * other.y, self.yaw + other.yaw)

    def inverse(self) -> "EgoPose":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return EgoPose(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)

    def relative_to(self, ref: "EgoPose") -> "EgoPose":
        """This pose expressed in ``ref``'s local frame (``ref⁻¹ ∘ self``)."""
        return ref.inverse().compose(self)

    def apply(self, x, y):
        """Map local points into the parent frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.x + c * x - s * y, self.y + s * x + c * y

    def distance_to(self, other: "EgoPose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def is_identity(self) -> bool:
        return self.x == 0.0 and self.y == 0.0 and self.yaw == 0.0


@dataclass(frozen=True, eq=False)
class PullMap:
    """Per-cell image coordinates ``coords`` (h, w, 2) and validity mask (h, w)."""

    coords: np.ndarray
    valid: np.ndarray


def build_pull_map(rig: CameraRig, grid: BevGridSpec, plane: GroundPlane | None = None) -> PullMap:
    """Project every BEV cell centre, lifted onto ``plane``, into ``rig``."""
    if not (rig.fx > 0 and rig.fy > 0):
        raise ConfigurationError("degenerate rig: fx and fy must be positive")
    plane = plane or GroundPlane.flat()
    x, y = grid.centers()
    z = plane.height_at(x, y)
    uv, depth = rig.project(np.stack([x, y, z], axis=-1))
    with np.errstate(invalid="ignore"):
        valid = (
            (depth > 0)
            & (uv[..., 0] >= 0)
            & (uv[..., 0] <= rig.W - 1)
            & (uv[..., 1] >= 0)
            & (uv[..., 1] <= rig.H - 1)
        )
    coords = np.where(valid[..., None], uv, np.nan)
    return PullMap(coords=coords, valid=valid)


def back_project(rig: CameraRig, plane: GroundPlane, u, v):
    """Intersect pixel rays with ``plane``.

    Returns ``(points (..., 3), dist (...), hit (...))``; ``dist`` is the
    Euclidean range from the camera centre, ``inf`` where the ray misses.
    """
    d = rig.rays(u, v)
    s = plane.intersect(rig.t, d)
    hit = np.isfinite(s)
    sf = np.where(hit, s, 0.0)
    pts = rig.t + sf[..., None] * d
    dist = np.where(hit, sf * np.linalg.norm(d, axis=-1), np.inf)
    return pts, dist, hit


def build_distance_mask(rig: CameraRig, plane: GroundPlane | None = None) -> np.ndarray:
    """Per-pixel camera-to-ground range (H, W); ``MAX_DIST`` at or above the horizon."""
    plane = plane or GroundPlane.flat()
    u, v = rig.pixel_grid()
    _, dist, hit = back_project(rig, plane, u, v)
    return np.where(hit, np.minimum(dist, MAX_DIST), MAX_DIST)


def _snap(x, tol=1e-9):
    r = np.rint(x)
    return np.where(np.abs(x - r) < tol, r, x)


def warp_bev(grid: BevGridSpec, delta: EgoPose, tensor, conf=None):
    """Resample a BEV tensor from its own frame into the current ego frame.

    ``delta`` is the current ego pose expressed in the tensor's frame (the
    vehicle motion since the tensor was produced). Each output cell takes
    the bilinear sample of the input at its centre mapped through
    ``delta``; samples leaving the grid give zero feature and zero
    confidence.

    Args:
        grid: grid both tensors live on.
        delta: motion from source frame to current frame.
        tensor: (C, h, w) or (h, w) array.
        conf: optional (h, w) confidence warped alongside.

    Returns:
        The warped tensor, or ``(tensor, conf)`` when ``conf`` is given.
    """
    tensor = np.asarray(tensor)
    if tensor.shape[-2:] != grid.shape:
        raise ValueError(f"tensor spatial shape {tensor.shape[-2:]} != grid {grid.shape}")
    if delta.is_identity():
        out = tensor.copy()
        return out if conf is None else (out, np.asarray(conf).copy())

    x, y = grid.centers()
    xs, ys = delta.apply(x, y)
    row, col = grid.to_index(xs, ys)
    row, col = _snap(row), _snap(col)
    squeeze = tensor.ndim == 2
    src = tensor[None] if squeeze else tensor
    vals, _ = bilinear_sample_many(src, col, row)
    out = vals.astype(tensor.dtype, copy=False)
    out = out[0] if squeeze else out
    if conf is None:
        return out
    conf = np.asarray(conf)
    cvals, _ = bilinear_sample_many(conf[None], col, row)
    return out, cvals[0].astype(conf.dtype, copy=False)


def surround_rig(H: int = 48, W: int = 112, hfov_deg: float = 70.0, height: float = 1.5, pitch_deg: float = 4.0):
    """Six cameras around the vehicle (front, front-left/right, back, back-left/right)."""
    fx = (W / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    layout = [
        ("front", 1.5, 0.0, 0.0),
        ("front_left", 1.2, 0.8, 55.0),
        ("front_right", 1.2, -0.8, -55.0),
        ("back", -1.0, 0.0, 180.0),
        ("back_left", -0.5, 0.8, 110.0),
        ("back_right", -0.5, -0.8, -110.0),
    ]
    return [
        CameraRig.looking(
            name,
            fx=fx,
            fy=fx,
            cx=(W - 1) / 2.0,
            cy=(H - 1) / 2.0,
            H=H,
            W=W,
            position=(px, py, height),
            yaw=math.radians(yaw),
            pitch=math.radians(pitch_deg),
        )
        for name, px, py, yaw in layout
    ]
