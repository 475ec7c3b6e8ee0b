"""Low-level numerical kernels: bilinear sampling, 2-D Gaussian density,
and keyed sample generation.

Image coordinates follow the usual convention: ``u`` runs along columns
(rightward), ``v`` along rows (downward), and pixel centres sit at integer
coordinates. A field of shape ``(C, H, W)`` is in bounds on
``[0, W-1] x [0, H-1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

SIGMA_MIN = 1e-3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_CELL = np.uint64(0xA24BAED4963EE407)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV_2_53 = 1.0 / 9007199254740992.0


@dataclass(frozen=True)
class Gauss2:
    """Bivariate normal in pixel units, stored as its Cholesky factor.

    ``chol`` holds ``(l11, l21, l22)`` of the lower-triangular ``L`` with
    ``Sigma = L @ L.T``.
    """

    mean: tuple[float, float]
    chol: tuple[float, float, float] = (1.0, 0.0, 1.0)

    def __post_init__(self):
        l11, _, l22 = self.chol
        if l11 < SIGMA_MIN or l22 < SIGMA_MIN:
            raise ValueError(f"Cholesky diagonal must be >= {SIGMA_MIN}, got {self.chol}")

    @property
    def L(self) -> np.ndarray:
        l11, l21, l22 = self.chol
        return np.array([[l11, 0.0], [l21, l22]])

    @property
    def cov(self) -> np.ndarray:
        L = self.L
        return L @ L.T


@dataclass(frozen=True)
class Stochastic:
    """Pseudo-random draws keyed by ``(seed, stream, cell_id, k)``."""

    seed: int = 0


@dataclass(frozen=True)
class Deterministic:
    """Fixed sample pattern: the mean followed by K-1 points on the unit circle."""


SampleMode = Union[Stochastic, Deterministic]


def parse_mode(name: str, seed: int = 0) -> SampleMode:
    name = name.lower()
    if name in ("stochastic", "random"):
        return Stochastic(seed)
    if name in ("deterministic", "det"):
        return Deterministic()
    raise ValueError(f"unknown sample mode {name!r}")


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def _bilinear_setup(n, x):
    """Corner index and fractional weight along one axis of length ``n``."""
    if n == 1:
        i0 = np.zeros(x.shape, dtype=np.intp)
        return i0, i0, np.zeros(x.shape)
    i0 = np.clip(np.floor(x), 0, n - 2).astype(np.intp)
    return i0, i0 + 1, x - i0


def bilinear_sample_many(field, u, v):
    """Sample ``field`` (C, H, W) at arrays of locations ``u``, ``v``.

    Returns ``(values, in_bounds)`` where ``values`` has shape
    ``(C,) + u.shape`` in float64. Out-of-bounds locations yield 0.
    """
    field = np.asarray(field)
    if field.ndim == 2:
        field = field[None]
    C, H, W = field.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    shape = np.broadcast_shapes(u.shape, v.shape)
    u = np.broadcast_to(u, shape).ravel()
    v = np.broadcast_to(v, shape).ravel()

    inb = (u >= 0.0) & (u <= W - 1) & (v >= 0.0) & (v <= H - 1)
    out = np.zeros((C, u.size), dtype=np.float64)
    if inb.any():
        ui, vi = u[inb], v[inb]
        u0, u1, fu = _bilinear_setup(W, ui)
        v0, v1, fv = _bilinear_setup(H, vi)
        w00 = (1.0 - fu) * (1.0 - fv)
        w01 = fu * (1.0 - fv)
        w10 = (1.0 - fu) * fv
        w11 = fu * fv
        out[:, inb] = (
            w00 * field[:, v0, u0]
            + w01 * field[:, v0, u1]
            + w10 * field[:, v1, u0]
            + w11 * field[:, v1, u1]
        )
    return out.reshape((C,) + shape), inb.reshape(shape)


def bilinear_sample(field, loc):
    """Sample a ``(C, H, W)`` field at one ``(u, v)`` location.

    >>> bilinear_sample(np.array([[[0.0, 1.0], [2.0, 3.0]]]), (0.5, 0.5))
    (array([1.5]), True)
    """
    vals, inb = bilinear_sample_many(field, np.array(loc[0]), np.array(loc[1]))
    return vals, bool(inb)


# ---------------------------------------------------------------------------
# Gaussian density
# ---------------------------------------------------------------------------

def gaussian_pdf2_many(dx, dy, l11, l21, l22):
    """Density of offsets ``(dx, dy)`` from the mean under ``L = [[l11, 0], [l21, l22]]``.

    Whitens with a triangular solve, so Sigma is never inverted.
    """
    z1 = dx / l11
    z2 = (dy - l21 * z1) / l22
    return np.exp(-0.5 * (z1 * z1 + z2 * z2)) / (2.0 * math.pi * l11 * l22)


def gaussian_pdf2(loc, g: Gauss2) -> float:
    l11, l21, l22 = g.chol
    dx = loc[0] - g.mean[0]
    dy = loc[1] - g.mean[1]
    return float(gaussian_pdf2_many(dx, dy, l11, l21, l22))


# ---------------------------------------------------------------------------
# keyed random numbers
# ---------------------------------------------------------------------------

def _mix64(z):
    # SplitMix64 finaliser; uint64 arithmetic wraps modulo 2**64.
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _key(seed: int, stream: int) -> np.ndarray:
    s = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    t = np.array([stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return _mix64(_mix64(s + _GOLDEN) ^ (t * _STREAM))


def keyed_uniforms(seed: int, stream: int, cell_ids, counters) -> np.ndarray:
    """Uniforms in (0, 1) as a pure function of ``(seed, stream, cell_id, counter)``.

    ``cell_ids`` and ``counters`` broadcast against each other.
    """
    key = _key(seed, stream)
    cells = np.asarray(cell_ids, dtype=np.uint64)
    ctr = np.asarray(counters, dtype=np.uint64)
    x = _mix64(key ^ (cells * _CELL))
    x = _mix64(x + ctr * _GOLDEN)
    return ((x >> _S11).astype(np.float64) + 0.5) * _INV_2_53


def standard_normal_pairs(seed: int, stream: int, cell_ids, K: int) -> np.ndarray:
    """Standard-normal pairs of shape ``(N, K, 2)`` via Box-Muller on keyed uniforms."""
    cells = np.asarray(cell_ids, dtype=np.uint64).reshape(-1, 1)
    k = np.arange(K, dtype=np.uint64).reshape(1, -1)
    u1 = keyed_uniforms(seed, stream, cells, 2 * k)
    u2 = keyed_uniforms(seed, stream, cells, 2 * k + np.uint64(1))
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def unit_pattern(K: int) -> np.ndarray:
    """The deterministic pattern: origin, then K-1 evenly spaced unit vectors."""
    if K < 1:
        raise ValueError("K must be >= 1")
    pts = np.zeros((K, 2))
    if K > 1:
        ang = 2.0 * math.pi * np.arange(K - 1) / (K - 1)
        pts[1:, 0] = np.cos(ang)
        pts[1:, 1] = np.sin(ang)
    return pts


def draw_locations(mean, chol, K: int, mode: SampleMode, cell_ids, stream: int = 0):
    """Vectorised sampling for N cells.

    Args:
        mean: (N, 2) means in pixels.
        chol: (N, 3) Cholesky entries ``(l11, l21, l22)``.
        K: samples per cell.
        mode: :class:`Stochastic` or :class:`Deterministic`.
        cell_ids: (N,) integer keys for the counter-based generator.
        stream: extra key separating cameras or frames.

    Returns:
        (N, K, 2) sample locations.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    mean = np.asarray(mean, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    n = mean.shape[0]
    if isinstance(mode, Deterministic):
        z = np.broadcast_to(unit_pattern(K), (n, K, 2))
    elif isinstance(mode, Stochastic):
        z = standard_normal_pairs(mode.seed, stream, cell_ids, K)
    else:
        raise TypeError(f"unsupported sample mode {mode!r}")
    l11 = chol[:, 0:1]
    l21 = chol[:, 1:2]
    l22 = chol[:, 2:3]
    out = np.empty((n, K, 2))
    out[..., 0] = mean[:, 0:1] + l11 * z[..., 0]
    out[..., 1] = mean[:, 1:2] + l21 * z[..., 0] + l22 * z[..., 1]
    return out


def draw_samples(g: Gauss2, K: int, mode: SampleMode, cell_id: int = 0, stream: int = 0):
    """K sample locations (K, 2) from a single Gaussian."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return draw_locations(
        np.array([g.mean]), np.array([g.chol]), K, mode, np.array([cell_id]), stream
    )[0]
