"""scikit-learn style front end.

``fit`` caches the static geometry for a camera rig (pull maps and distance
masks); ``transform`` encodes frames. Hyper-parameters are plain
constructor arguments, so ``get_params`` / ``set_params`` / ``clone`` work
as with any estimator.

>>> from bevproj import BevEncoder, surround_rig
>>> enc = BevEncoder(rigs=surround_rig(), K=4).fit()
>>> enc.grid_.shape
(120, 60)
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError
from .fields import ZeroProvider
from .fusion import FusionConfig, HistoryState, check_fusion_weights, merge_cameras
from .geometry import BevGridSpec, CameraRig, EgoPose, GroundPlane
from .pipeline import FrameInput, prepare_geometry, run_frame
from .projector import RawBev
from .sampling import parse_mode


def check_feature_map(F, rig: CameraRig) -> np.ndarray:
    """Validate one camera's (C, H, W) feature map against its rig."""
    F = check_array(F, allow_nd=True, ensure_2d=False, dtype=np.float32, input_name="feature map")
    if F.ndim == 2:
        F = F[None]
    if F.ndim != 3 or F.shape[1:] != (rig.H, rig.W):
        raise ValueError(f"camera {rig.name!r}: feature map {F.shape} does not match (C, {rig.H}, {rig.W})")
    return F


def check_rigs(rigs) -> list[CameraRig]:
    if rigs is None:
        raise ConfigurationError("no camera rigs given")
    rigs = list(rigs)
    if not rigs or not all(isinstance(r, CameraRig) for r in rigs):
        raise ConfigurationError("rigs must be a non-empty sequence of CameraRig")
    return rigs


class BevEncoder(TransformerMixin, BaseEstimator):
    """Probabilistic camera-to-BEV encoder with confidence-based temporal fusion.

    Parameters
    ----------
    rigs : list of CameraRig
        Camera calibration; may also be passed to ``fit``.
    x_range, y_range : (float, float)
        Longitudinal and lateral BEV extent in metres.
    cell : float
        Cell size in metres.
    plane : GroundPlane, optional
        Assumed projection surface (default ``z = 0``).
    K : int
        Samples per cell.
    mode : {"stochastic", "deterministic"}
    seed : int
    gamma : float
        Confidence decay applied when saving raw history.
    targets : tuple of float
        Memory target displacements in metres; ``T = len(targets)``.
    ring_size : int
    use_gaussian, use_alpha, use_raw_hist : bool
        Ablation switches.
    fusion_weights : array of shape ((T+1)*C, C), optional
        Linear temporal fusion; identity pass-through when omitted.
    n_jobs : int
        Threads used across cameras within a frame.
    """

    def __init__(self, rigs=None, x_range=(-30.0, 30.0), y_range=(-15.0, 15.0), cell=0.5, plane=None,
                 K=8, mode="stochastic", seed=0, gamma=0.9, targets=(1.0, 4.0, 8.0, 12.0), ring_size=20,
                 use_gaussian=True, use_alpha=True, use_raw_hist=True, fusion_weights=None, n_jobs=1):
        self.rigs = rigs
        self.x_range = x_range
        self.y_range = y_range
        self.cell = cell
        self.plane = plane
        self.K = K
        self.mode = mode
        self.seed = seed
        self.gamma = gamma
        self.targets = targets
        self.ring_size = ring_size
        self.use_gaussian = use_gaussian
        self.use_alpha = use_alpha
        self.use_raw_hist = use_raw_hist
        self.fusion_weights = fusion_weights
        self.n_jobs = n_jobs

    def _config(self) -> FusionConfig:
        return FusionConfig(
            K=int(self.K), mode=parse_mode(self.mode, int(self.seed)), gamma=float(self.gamma),
            targets=tuple(self.targets), ring_size=int(self.ring_size), use_gaussian=bool(self.use_gaussian),
            use_alpha=bool(self.use_alpha), use_raw_hist=bool(self.use_raw_hist),
        )

    def fit(self, X=None, y=None):
        """Cache pull maps and distance masks. ``X`` optionally overrides ``rigs``."""
        rigs = check_rigs(X if X is not None else self.rigs)
        self.config_ = self._config()
        self.grid_ = BevGridSpec(tuple(self.x_range), tuple(self.y_range), float(self.cell))
        self.geometry_ = prepare_geometry(rigs, self.grid_, self.plane or GroundPlane.flat())
        self.n_cameras_ = len(rigs)
        self.camera_names_ = [r.name for r in rigs]
        self.reset()
        return self

    def reset(self):
        """Forget temporal state (start of a new sequence)."""
        self.state_ = HistoryState()
        self._frame_index = 0
        return self

    def _frame(self, item, index) -> FrameInput:
        if isinstance(item, FrameInput):
            frame = item
        else:
            if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], EgoPose):
                feats, pose = item
            else:
                feats, pose = item, EgoPose()
            frame = FrameInput(list(feats), [ZeroProvider()] * self.n_cameras_, pose, index)
        if len(frame.features) != self.n_cameras_:
            raise ValueError(f"expected {self.n_cameras_} feature maps, got {len(frame.features)}")
        frame.features = [check_feature_map(F, g.rig) for F, g in zip(frame.features, self.geometry_)]
        return frame

    def _weights(self, C):
        if self.fusion_weights is None:
            return None
        return check_fusion_weights(self.fusion_weights, C, self.config_.T)

    def partial_transform(self, frame):
        """Encode the next frame of the current sequence, advancing history.

        ``frame`` is a :class:`FrameInput`, a ``(features, pose)`` pair or a
        list of per-camera feature maps. Returns the fused (C, h, w) map.
        """
        check_is_fitted(self, "geometry_")
        f = self._frame(frame, self._frame_index)
        executor = ThreadPoolExecutor(self.n_jobs) if self.n_jobs and self.n_jobs > 1 else None
        try:
            out, self.state_ = run_frame(f, self.state_, self.config_, self.geometry_, self.grid_,
                                         self._weights(f.features[0].shape[0]), executor=executor)
        finally:
            if executor is not None:
                executor.shutdown()
        self._frame_index += 1
        self.last_output_ = out
        return out.B

    def transform(self, X):
        """Encode a sequence of frames from a fresh history; returns (n, C, h, w)."""
        check_is_fitted(self, "geometry_")
        self.reset()
        out = [self.partial_transform(item) for item in X]
        if not out:
            raise ValueError("empty sequence")
        return np.stack(out)

    def project(self, features, providers=None) -> RawBev:
        """Per-camera projection and camera merge only (no temporal stages)."""
        check_is_fitted(self, "geometry_")
        providers = providers or [ZeroProvider()] * self.n_cameras_
        f = self._frame(FrameInput(list(features), list(providers)), 0)
        cfg = self.config_
        single = FusionConfig(K=cfg.K, mode=cfg.mode, use_gaussian=cfg.use_gaussian, use_alpha=cfg.use_alpha,
                              use_raw_hist=False, targets=cfg.targets)
        out, _ = run_frame(f, HistoryState(), single, self.geometry_, self.grid_, keep_per_cam=True)
        return merge_cameras(out.per_cam)
