"""Image-space projection parameter fields and their projection onto the BEV grid.

A provider stands in for the learned offset and confidence networks: it
returns offsets ``mu_prime`` (2, H, W) in absolute pixels, Cholesky
covariance entries ``sigma_prime`` (3, H, W) in pixels, and a confidence
map ``alpha_prime`` (H, W) in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ValidationError
from .geometry import CameraRig, GroundPlane, PullMap, back_project
from .sampling import SIGMA_MIN, bilinear_sample_many
from .tensorio import read_tensor, write_tensor

SIGMA0 = 1.0


@dataclass(frozen=True, eq=False)
class FieldSet:
    mu_prime: np.ndarray
    sigma_prime: np.ndarray
    alpha_prime: np.ndarray

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.alpha_prime.shape

    def validate(self, H: int | None = None, W: int | None = None) -> "FieldSet":
        """Check shapes, finiteness and ranges; returns ``self``."""
        if self.alpha_prime.ndim != 2:
            raise FormatError(f"alpha_prime must be (H, W), got {self.alpha_prime.shape}")
        h, w = self.alpha_prime.shape
        if (H, W) != (None, None) and (h, w) != (H, W):
            raise FormatError(f"fields are {h}x{w}, camera expects {H}x{W}")
        if self.mu_prime.shape != (2, h, w):
            raise FormatError(f"mu_prime must be (2, {h}, {w}), got {self.mu_prime.shape}")
        if self.sigma_prime.shape != (3, h, w):
            raise FormatError(f"sigma_prime must be (3, {h}, {w}), got {self.sigma_prime.shape}")
        for name in ("mu_prime", "sigma_prime", "alpha_prime"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite entries")
        if self.alpha_prime.min() < 0 or self.alpha_prime.max() > 1:
            raise ValidationError("alpha_prime outside [0, 1]")
        if self.sigma_prime[0].min() < SIGMA_MIN or self.sigma_prime[2].min() < SIGMA_MIN:
            raise ValidationError(f"Cholesky diagonal below {SIGMA_MIN}")
        return self


def _make_fields(mu, sigma, alpha) -> FieldSet:
    sigma = np.array(sigma, dtype=np.float32)
    sigma[0] = np.maximum(sigma[0], SIGMA_MIN)
    sigma[2] = np.maximum(sigma[2], SIGMA_MIN)
    return FieldSet(
        np.asarray(mu, dtype=np.float32),
        sigma,
        np.clip(np.asarray(alpha, dtype=np.float32), 0.0, 1.0),
    )


def _isotropic(H, W, sigma=SIGMA0):
    s = np.zeros((3, H, W), dtype=np.float32)
    s[0] = sigma
    s[2] = sigma
    return s


class ZeroProvider:
    """No correction: zero offsets, unit isotropic covariance, full confidence."""

    def provide(self, rig: CameraRig, dmask=None) -> FieldSet:
        H, W = rig.H, rig.W
        return _make_fields(np.zeros((2, H, W)), _isotropic(H, W), np.ones((H, W)))

    def __repr__(self):
        return "ZeroProvider()"


class ConstantProvider:
    def __init__(self, du=0.0, dv=0.0, l11=SIGMA0, l21=0.0, l22=SIGMA0, alpha=1.0):
        self.du, self.dv = du, dv
        self.l11, self.l21, self.l22 = l11, l21, l22
        self.alpha = alpha

    def provide(self, rig: CameraRig, dmask=None) -> FieldSet:
        H, W = rig.H, rig.W
        mu = np.empty((2, H, W))
        mu[0], mu[1] = self.du, self.dv
        sigma = np.empty((3, H, W))
        sigma[0], sigma[1], sigma[2] = self.l11, self.l21, self.l22
        return _make_fields(mu, sigma, np.full((H, W), self.alpha))

    def __repr__(self):
        return (f"ConstantProvider(du={self.du}, dv={self.dv}, l11={self.l11}, "
                f"l21={self.l21}, l22={self.l22}, alpha={self.alpha})")


def slope_offsets(rig: CameraRig, true_plane: GroundPlane, assumed_plane: GroundPlane) -> np.ndarray:
    """Exact per-pixel correction from an assumed ground plane to the true one.

    Each pixel is back-projected onto the assumed plane; the true-plane point
    with the same (x, y) is re-projected, and the offset is the difference
    between the two image locations. Pixels with no ground hit, or whose
    true point lies behind the camera, get a zero offset.
    """
    u, v = rig.pixel_grid()
    pts, _, hit = back_project(rig, assumed_plane, u, v)
    zt = true_plane.height_at(pts[..., 0], pts[..., 1])
    true_pts = np.stack([pts[..., 0], pts[..., 1], zt], axis=-1)
    uv, depth = rig.project(true_pts)
    ok = hit & (depth > 0)
    du = np.where(ok, uv[..., 0] - u, 0.0)
    dv = np.where(ok, uv[..., 1] - v, 0.0)
    return np.stack([du, dv])


class SlopeOracleProvider:
    """Offsets that move the flat-plane pull map onto a known true plane."""

    def __init__(self, true_plane: GroundPlane, assumed_plane: GroundPlane | None = None, sigma: float = SIGMA0):
        self.true_plane = true_plane
        self.assumed_plane = assumed_plane or GroundPlane.flat()
        self.sigma = sigma

    def provide(self, rig: CameraRig, dmask=None) -> FieldSet:
        H, W = rig.H, rig.W
        if self.true_plane.same_as(self.assumed_plane):
            mu = np.zeros((2, H, W))
        else:
            mu = slope_offsets(rig, self.true_plane, self.assumed_plane)
        return _make_fields(mu, _isotropic(H, W, self.sigma), np.ones((H, W)))

    def __repr__(self):
        return f"SlopeOracleProvider(true_plane={self.true_plane}, sigma={self.sigma})"


class OccluderMaskProvider:
    """Zero confidence inside image rectangles and/or an explicit boolean mask.

    Rectangles are ``(u0, v0, u1, v1)`` with inclusive pixel bounds.
    Masks may be a single (H, W) array or a mapping from camera name to mask.
    """

    def __init__(self, regions=(), mask=None):
        self.regions = [tuple(r) for r in regions]
        self.mask = mask

    def _mask_for(self, rig):
        if self.mask is None:
            return None
        if isinstance(self.mask, dict):
            return self.mask.get(rig.name)
        return self.mask

    def provide(self, rig: CameraRig, dmask=None) -> FieldSet:
        H, W = rig.H, rig.W
        alpha = np.ones((H, W))
        for u0, v0, u1, v1 in self.regions:
            alpha[max(int(v0), 0) : int(v1) + 1, max(int(u0), 0) : int(u1) + 1] = 0.0
        m = self._mask_for(rig)
        if m is not None:
            m = np.asarray(m, dtype=bool)
            if m.shape != (H, W):
                raise FormatError(f"occluder mask {m.shape} != image {(H, W)}")
            alpha[m] = 0.0
        return _make_fields(np.zeros((2, H, W)), _isotropic(H, W), alpha)

    def __repr__(self):
        return f"OccluderMaskProvider(regions={self.regions}, mask={'set' if self.mask is not None else None})"


class CombinedProvider:
    """Offsets and covariance from one provider, confidence from another."""

    def __init__(self, geometric, confidence):
        self.geometric = geometric
        self.confidence = confidence

    def provide(self, rig: CameraRig, dmask=None) -> FieldSet:
        g = self.geometric.provide(rig, dmask)
        c = self.confidence.provide(rig, dmask)
        return FieldSet(g.mu_prime, g.sigma_prime, c.alpha_prime)

    def __repr__(self):
        return f"CombinedProvider({self.geometric!r}, {self.confidence!r})"


FIELD_FILES = ("mu_prime", "sigma_prime", "alpha_prime")


class LoadedProvider:
    """Fields read from BVT1 files ``<dir>/<prefix>{mu_prime,sigma_prime,alpha_prime}.bvt``.

    The prefix defaults to ``"<camera name>_"``; a missing prefixed file
    falls back to the unprefixed name.
    """

    def __init__(self, directory, prefix: str | None = None):
        self.directory = Path(directory)
        self.prefix = prefix

    def _path(self, rig, name):
        prefix = f"{rig.name}_" if self.prefix is None else self.prefix
        p = self.directory / f"{prefix}{name}.bvt"
        if not p.exists() and self.prefix is None:
            p = self.directory / f"{name}.bvt"
        return p

    def provide(self, rig: CameraRig, dmask=None) -> FieldSet:
        H, W = rig.H, rig.W
        mu = read_tensor(self._path(rig, "mu_prime"), (2, H, W))
        sigma = read_tensor(self._path(rig, "sigma_prime"), (3, H, W))
        alpha = read_tensor(self._path(rig, "alpha_prime"), (H, W))
        fs = FieldSet(mu, sigma, alpha)
        for name in FIELD_FILES:
            if not np.all(np.isfinite(getattr(fs, name))):
                raise ValidationError(f"{name} contains non-finite entries")
        return _make_fields(mu, sigma, alpha).validate(H, W)

    def __repr__(self):
        return f"LoadedProvider({str(self.directory)!r})"


def save_fields(directory, fields: FieldSet, prefix: str = "") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in FIELD_FILES:
        write_tensor(directory / f"{prefix}{name}.bvt", getattr(fields, name))


def provide_fields(provider, rig: CameraRig, dmask=None) -> FieldSet:
    """Run ``provider`` for one camera and check the result against the rig."""
    if dmask is not None and np.shape(dmask) != (rig.H, rig.W):
        raise FormatError(f"distance mask {np.shape(dmask)} != image {(rig.H, rig.W)}")
    return provider.provide(rig, dmask).validate(rig.H, rig.W)


@dataclass(frozen=True, eq=False)
class ProjectedParams:
    """Per-cell Gaussian parameters on the BEV grid.

    ``mu`` (h, w, 2) and ``sigma`` (h, w, 3) are NaN where ``valid`` is False.
    """

    mu: np.ndarray
    sigma: np.ndarray
    valid: np.ndarray


def project_params(fields: FieldSet, pull: PullMap) -> ProjectedParams:
    """Move the per-pixel fields onto the BEV grid.

    Offsets are sampled at the static pull coordinates and added to them;
    covariance entries are then sampled at the *updated* coordinates.
    Cells whose updated location leaves the image are invalidated.
    """
    h, w = pull.valid.shape
    H, W = fields.image_shape
    valid = pull.valid.copy()
    mu = np.full((h, w, 2), np.nan)
    sigma = np.full((h, w, 3), np.nan)
    if valid.any():
        pu = pull.coords[valid]
        off, _ = bilinear_sample_many(fields.mu_prime, pu[:, 0], pu[:, 1])
        m = pu + off.T
        sig, inb = bilinear_sample_many(fields.sigma_prime, m[:, 0], m[:, 1])
        sig[0] = np.maximum(sig[0], SIGMA_MIN)
        sig[2] = np.maximum(sig[2], SIGMA_MIN)
        idx = np.flatnonzero(valid)
        keep = idx[inb]
        valid.flat[idx[~inb]] = False
        mu.reshape(-1, 2)[keep] = m[inb]
        sigma.reshape(-1, 3)[keep] = sig.T[inb]
    return ProjectedParams(mu=mu, sigma=sigma, valid=valid)
