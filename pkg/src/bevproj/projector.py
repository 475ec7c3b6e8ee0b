"""Per-camera feature projection onto the BEV grid.

``prob_project`` implements the confidence-weighted Gaussian projection;
``static_project`` is the plain bilinear pull it generalises.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ProjectedParams
from .geometry import PullMap
from .sampling import Deterministic, SampleMode, bilinear_sample_many, draw_locations, gaussian_pdf2_many


@dataclass(frozen=True, eq=False)
class RawBev:
    """Raw BEV features (C, h, w) with per-cell confidence (h, w).

    ``valid`` marks geometric coverage: the cells this camera (or merge)
    could project onto, independent of confidence.
    """

    features: np.ndarray
    conf: np.ndarray
    valid: np.ndarray

    @classmethod
    def empty(cls, C: int, h: int, w: int) -> "RawBev":
        return cls(
            np.zeros((C, h, w), dtype=np.float32),
            np.zeros((h, w), dtype=np.float32),
            np.zeros((h, w), dtype=bool),
        )

    @property
    def shape(self):
        return self.features.shape


def _check_feature_map(F) -> np.ndarray:
    F = np.asarray(F)
    if F.ndim == 2:
        F = F[None]
    if F.ndim != 3 or F.shape[0] < 1:
        raise ValueError(f"feature map must be (C, H, W), got {F.shape}")
    return F.astype(np.float32, copy=False)


def prob_project(F, params: ProjectedParams, alpha_prime, K: int = 8,
                 mode: SampleMode = Deterministic(), stream: int = 0) -> RawBev:
    """Probabilistic projection of one camera's features.

    For every valid cell, K locations are drawn from the cell's Gaussian.
    Their likelihoods are normalised over all K draws (out-of-image draws
    included), multiplied by the confidence sampled at each draw, and used
    to weight the sampled features. The cell confidence is the sum of
    weights.

    Args:
        F: (C, H, W) image features.
        params: per-cell Gaussian parameters from :func:`project_params`.
        alpha_prime: (H, W) image-space confidence in [0, 1].
        K: samples per cell.
        mode: sampling mode.
        stream: extra RNG key (e.g. camera and frame index).
    """
    F = _check_feature_map(F)
    C, H, W = F.shape
    alpha_prime = np.asarray(alpha_prime)
    if alpha_prime.shape != (H, W):
        raise ValueError(f"alpha_prime {alpha_prime.shape} != feature map {(H, W)}")
    if params.valid.ndim != 2 or params.mu.shape[:2] != params.valid.shape:
        raise ValueError("inconsistent projected parameter shapes")
    if K < 1:
        raise ValueError("K must be >= 1")
    h, w = params.valid.shape
    feats = np.zeros((C, h * w), dtype=np.float32)
    conf = np.zeros(h * w, dtype=np.float32)
    idx = np.flatnonzero(params.valid)
    if idx.size:
        mu = params.mu.reshape(-1, 2)[idx]
        chol = params.sigma.reshape(-1, 3)[idx]
        locs = draw_locations(mu, chol, K, mode, idx, stream)
        dx = locs[..., 0] - mu[:, 0:1]
        dy = locs[..., 1] - mu[:, 1:2]
        dens = gaussian_pdf2_many(dx, dy, chol[:, 0:1], chol[:, 1:2], chol[:, 2:3])
        total = dens.sum(axis=1, keepdims=True)
        assert np.all(total > 0), "Gaussian likelihoods vanished"
        a_s, _ = bilinear_sample_many(alpha_prime, locs[..., 0], locs[..., 1])
        wts = (dens / total) * a_s[0]
        vals, _ = bilinear_sample_many(F, locs[..., 0], locs[..., 1])
        feats[:, idx] = np.einsum("nk,cnk->cn", wts, vals)
        conf[idx] = wts.sum(axis=1)
    return RawBev(feats.reshape(C, h, w), conf.reshape(h, w), params.valid.copy())


def static_project(F, pull: PullMap, alpha_prime=None) -> RawBev:
    """Bilinear pull at the static coordinates.

    With ``alpha_prime`` the sampled confidence weights the feature and
    becomes the cell confidence (the single-sample limit of
    :func:`prob_project`); without it confidence is 1 on covered cells.
    """
    F = _check_feature_map(F)
    C = F.shape[0]
    h, w = pull.valid.shape
    feats = np.zeros((C, h * w), dtype=np.float32)
    conf = np.zeros(h * w, dtype=np.float32)
    idx = np.flatnonzero(pull.valid)
    if idx.size:
        uv = pull.coords.reshape(-1, 2)[idx]
        vals, _ = bilinear_sample_many(F, uv[:, 0], uv[:, 1])
        if alpha_prime is None:
            feats[:, idx] = vals
            conf[idx] = 1.0
        else:
            a, _ = bilinear_sample_many(np.asarray(alpha_prime), uv[:, 0], uv[:, 1])
            feats[:, idx] = vals * a
            conf[idx] = a[0]
    return RawBev(feats.reshape(C, h, w), conf.reshape(h, w), pull.valid.copy())
