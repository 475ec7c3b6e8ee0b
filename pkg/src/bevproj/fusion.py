"""Multi-camera merging, confidence-weighted history merging, and the BEV memory."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, FormatError
from .geometry import BevGridSpec, EgoPose, warp_bev
from .projector import RawBev
from .sampling import SampleMode, Stochastic

EPS = 1e-6
RING_SIZE = 20


@dataclass(frozen=True)
class FusionConfig:
    """Pipeline knobs; the three ``use_*`` switches reproduce the ablation rows."""

    K: int = 8
    mode: SampleMode = field(default_factory=Stochastic)
    gamma: float = 0.9
    targets: tuple[float, ...] = (1.0, 4.0, 8.0, 12.0)
    ring_size: int = RING_SIZE
    use_gaussian: bool = True
    use_alpha: bool = True
    use_raw_hist: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        t = tuple(float(x) for x in self.targets)
        if len(t) < 1:
            raise ConfigurationError("need at least one memory target distance (T >= 1)")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigurationError(f"memory targets must be strictly increasing, got {t}")
        object.__setattr__(self, "targets", t)
        if self.ring_size < 1:
            raise ConfigurationError("ring_size must be >= 1")

    @property
    def T(self) -> int:
        return len(self.targets)

    @classmethod
    def ablation(cls, row: str, **kw) -> "FusionConfig":
        """Config for an ablation row: A, B1, B2, C1, C2, D or E."""
        try:
            g, a, r = ABLATIONS[row.upper()]
        except KeyError:
            raise ConfigurationError(f"unknown ablation row {row!r}; choose from {sorted(ABLATIONS)}") from None
        return cls(use_gaussian=g, use_alpha=a, use_raw_hist=r, **kw)


# row -> (use_gaussian, use_alpha, use_raw_hist)
ABLATIONS = {
    "A": (False, False, False),
    "B1": (True, False, False),
    "B2": (True, True, False),
    "C1": (False, False, True),
    "C2": (False, True, True),
    "D": (True, False, True),
    "E": (True, True, True),
}


@dataclass(frozen=True, eq=False)
class MemoryEntry:
    features: np.ndarray
    pose: EgoPose


@dataclass(frozen=True, eq=False)
class HistoryState:
    """Temporal state carried between frames; replaced, never mutated."""

    raw_hist: RawBev | None = None
    pose_hist: EgoPose | None = None
    ring: tuple[MemoryEntry, ...] = ()

    def push(self, features, pose: EgoPose, ring_size: int = RING_SIZE) -> "HistoryState":
        ring = (self.ring + (MemoryEntry(features, pose),))[-ring_size:]
        return replace(self, ring=ring)


def merge_cameras(per_cam) -> RawBev:
    """Average camera outputs over the cameras covering each cell.

    Cameras are accumulated in list order in float64.
    """
    per_cam = list(per_cam)
    if not per_cam:
        raise ValueError("merge_cameras needs at least one camera")
    shape = per_cam[0].features.shape
    if any(r.features.shape != shape for r in per_cam):
        raise ValueError("all cameras must share one BEV grid and channel count")
    feats = np.zeros(shape, dtype=np.float64)
    conf = np.zeros(shape[1:], dtype=np.float64)
    count = np.zeros(shape[1:], dtype=np.int64)
    for r in per_cam:
        feats += r.features
        conf += r.conf
        count += r.valid
    denom = np.maximum(1, count)
    return RawBev(
        (feats / denom).astype(np.float32),
        (conf / denom).astype(np.float32),
        count > 0,
    )


def merge_history(cur: RawBev, hist: RawBev) -> RawBev:
    """Confidence-weighted merge of current and (already warped) historical raw features.

    features = (a * B + a_h * B_h) / (a + a_h)
    conf     = (a**2 + a_h**2) / (a + a_h)

    Cells with ``a + a_h < EPS`` become empty.
    """
    a = np.asarray(cur.conf, dtype=np.float64)
    ah = np.asarray(hist.conf, dtype=np.float64)
    s = a + ah
    ok = s >= EPS
    safe = np.where(ok, s, 1.0)
    feats = (a * cur.features + ah * hist.features) / safe
    conf = (a * a + ah * ah) / safe
    feats = np.where(ok, feats, 0.0)
    conf = np.where(ok, conf, 0.0)
    return RawBev(feats.astype(cur.features.dtype), conf.astype(cur.conf.dtype), cur.valid | hist.valid)


def update_raw_history(state: HistoryState, merged: RawBev, pose: EgoPose, gamma: float) -> HistoryState:
    """Store the merged raw BEV with its confidence decayed by ``gamma``."""
    conf = (np.asarray(merged.conf, dtype=np.float64) * gamma).astype(merged.conf.dtype)
    return replace(state, raw_hist=RawBev(merged.features, conf, merged.valid), pose_hist=pose)


def warp_raw(grid: BevGridSpec, raw: RawBev, src_pose: EgoPose, pose: EgoPose) -> RawBev:
    """Bring a raw BEV from ``src_pose``'s frame into ``pose``'s frame."""
    delta = pose.relative_to(src_pose)
    feats, conf = warp_bev(grid, delta, raw.features, raw.conf)
    valid = warp_bev(grid, delta, raw.valid.astype(np.float32)) > 0
    return RawBev(feats, conf, valid)


def select_indices(displacements, targets) -> list[int]:
    """Ring indices (oldest first) chosen for each target displacement.

    Greedy over targets in order: the closest not-yet-chosen entry wins,
    ties go to the more recent entry; once every entry has been used,
    entries may repeat.
    """
    d = np.asarray(displacements, dtype=np.float64)
    n = d.size
    if n == 0:
        raise ValueError("empty memory ring")
    used = np.zeros(n, dtype=bool)
    chosen = []
    order = np.arange(n)[::-1]  # most recent first for tie-breaking
    for t in targets:
        pool = order[~used[order]] if not used.all() else order
        gaps = np.abs(d[pool] - t)
        pick = int(pool[int(np.argmin(gaps))])  # argmin keeps the first (most recent) tie
        used[pick] = True
        chosen.append(pick)
    return chosen


def select_memory(state: HistoryState, pose: EgoPose, cfg: FusionConfig, grid: BevGridSpec) -> np.ndarray:
    """T past fused BEV maps chosen by travelled distance, warped to ``pose``.

    Returns an array (T, C, h, w). Raises ``ValueError`` on an empty ring;
    callers substitute zeros on a cold start.
    """
    if not state.ring:
        raise ValueError("empty memory ring")
    disp = [e.pose.distance_to(pose) for e in state.ring]
    picks = select_indices(disp, cfg.targets)
    out = []
    for i in picks:
        e = state.ring[i]
        out.append(warp_bev(grid, pose.relative_to(e.pose), e.features))
    return np.stack(out)


def check_fusion_weights(weights, C: int, T: int) -> np.ndarray:
    W = np.asarray(weights)
    if W.shape != ((T + 1) * C, C):
        raise FormatError(f"fusion weights must be {((T + 1) * C, C)}, got {W.shape}")
    return W


def temporal_fuse(cur: RawBev, memory, weights=None) -> np.ndarray:
    """Per-cell linear fusion of the current raw features with the memory.

    The input vector at each cell is the concatenation
    ``[cur, memory[0], ..., memory[T-1]]`` along channels, and ``weights``
    has shape ``((T + 1) * C, C)``. Without weights, the current raw
    features pass through unchanged.
    """
    if weights is None:
        return cur.features
    C, h, w = cur.features.shape
    memory = np.asarray(memory)
    if memory.ndim != 4 or memory.shape[1:] != (C, h, w):
        raise ValueError(f"memory must be (T, {C}, {h}, {w}), got {memory.shape}")
    T = memory.shape[0]
    W = check_fusion_weights(weights, C, T).astype(np.float64)
    stacked = np.concatenate([cur.features[None], memory], axis=0).reshape((T + 1) * C, h * w)
    out = W.T @ stacked.astype(np.float64)
    return out.reshape(C, h, w).astype(cur.features.dtype)
