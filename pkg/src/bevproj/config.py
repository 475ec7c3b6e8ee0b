"""Readers and writers for the line-oriented text formats.

All configs share one grammar::

    # comment
    [kind optional-name]
    key = value ...

Values are whitespace-separated tokens. Errors carry the 1-based line
number of the offending entry.

Calibration files hold one ``[camera NAME]`` block per camera with keys
``fx fy cx cy H W pose``; ``pose`` is the 3x4 camera-to-ego matrix as 12
row-major numbers. Scene files use the blocks ``[scene]``, ``[plane]``,
``[bands]``, ``[crossing]`` and ``[occluder]``. Sequence files use a single
``[sequence]`` block (see :func:`read_sequence`). Trajectory files carry
one ``t x y yaw`` pose per line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .geometry import CameraRig, EgoPose, GroundPlane, nearest_rotation
from .scenegen import Bands, Box, Crossing, SceneSpec

ORTHO_TOL = 1e-6


class ConfigError(ConfigurationError):
    """Parse or validation error tied to a line of a config file."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


@dataclass
class Entry:
    tokens: list[str]
    line: int


@dataclass
class Block:
    kind: str
    name: str | None
    line: int
    entries: dict[str, Entry] = field(default_factory=dict)

    def has(self, key):
        return key in self.entries

    def numbers(self, key, n=None, cast=float, default=None, source=None):
        if key not in self.entries:
            if default is not None:
                return default
            raise ConfigError(f"[{self.kind}] block missing required key {key!r}", self.line, source)
        e = self.entries[key]
        try:
            vals = [cast(t) for t in e.tokens]
        except ValueError:
            raise ConfigError(f"{key}: expected {cast.__name__} values, got {' '.join(e.tokens)!r}", e.line, source) from None
        if any(isinstance(v, float) and not math.isfinite(v) for v in vals):
            raise ConfigError(f"{key}: non-finite value", e.line, source)
        if n is not None and len(vals) != n:
            raise ConfigError(f"{key}: expected {n} values, got {len(vals)}", e.line, source)
        return vals

    def number(self, key, cast=float, default=None, source=None):
        if key not in self.entries and default is not None:
            return default
        return self.numbers(key, 1, cast, source=source)[0]

    def text(self, key, default=None, source=None):
        if key not in self.entries:
            if default is not None:
                return default
            raise ConfigError(f"[{self.kind}] block missing required key {key!r}", self.line, source)
        return " ".join(self.entries[key].tokens)


def parse_blocks(text: str, source=None, allowed=None) -> list[Block]:
    blocks: list[Block] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated block header {raw.strip()!r}", lineno, source)
            parts = line[1:-1].split()
            if not parts:
                raise ConfigError("empty block header", lineno, source)
            if allowed is not None and parts[0] not in allowed:
                raise ConfigError(f"unknown block [{parts[0]}]", lineno, source)
            blocks.append(Block(parts[0], " ".join(parts[1:]) or None, lineno))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if not blocks:
            raise ConfigError("entry outside of any [block]", lineno, source)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("missing key before '='", lineno, source)
        if key in blocks[-1].entries:
            raise ConfigError(f"duplicate key {key!r}", lineno, source)
        blocks[-1].entries[key] = Entry(value.split(), lineno)
    return blocks


def _check_keys(block: Block, known, source):
    for key, e in block.entries.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{block.kind}]", e.line, source)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

_CAMERA_KEYS = ("fx", "fy", "cx", "cy", "H", "W", "pose")


def parse_calibration(text: str, source=None) -> list[CameraRig]:
    rigs = []
    for b in parse_blocks(text, source, allowed={"camera"}):
        _check_keys(b, _CAMERA_KEYS, source)
        vals = {}
        for key in ("fx", "fy", "cx", "cy"):
            vals[key] = b.number(key, source=source)
        for key in ("H", "W"):
            vals[key] = b.number(key, int, source=source)
        for key in ("fx", "fy"):
            if vals[key] <= 0:
                raise ConfigError(f"{key} must be positive, got {vals[key]}", b.entries[key].line, source)
        pose = np.array(b.numbers("pose", 12, source=source)).reshape(3, 4)
        R = pose[:, :3]
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ORTHO_TOL or np.linalg.det(R) <= 0:
            raise ConfigError(f"pose rotation not orthonormal (max error {err:.2e})", b.entries["pose"].line, source)
        pose[:, :3] = nearest_rotation(R)
        try:
            rigs.append(CameraRig(pose=pose, name=b.name or f"cam{len(rigs)}", **vals))
        except ConfigurationError as exc:
            raise ConfigError(str(exc), b.line, source) from None
    if not rigs:
        raise ConfigError("no [camera] blocks found", None, source)
    return rigs


def read_calibration(path) -> list[CameraRig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read calibration: {exc.strerror}", None, str(path)) from None
    return parse_calibration(text, str(path))


def format_calibration(rigs) -> str:
    out = []
    for r in rigs:
        pose = " ".join(repr(float(x)) for x in r.pose[:3].ravel())
        out.append(
            f"[camera {r.name}]\nfx = {r.fx!r}\nfy = {r.fy!r}\ncx = {r.cx!r}\ncy = {r.cy!r}\n"
            f"H = {r.H}\nW = {r.W}\npose = {pose}\n"
        )
    return "\n".join(out)


def write_calibration(path, rigs) -> None:
    Path(path).write_text(format_calibration(rigs))


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

def parse_scene(text: str, source=None) -> SceneSpec:
    blocks = parse_blocks(text, source, allowed={"scene", "plane", "bands", "crossing", "occluder"})
    kw = {"bands": [], "crossings": [], "occluders": []}
    for b in blocks:
        if b.kind == "scene":
            _check_keys(b, ("background", "seed"), source)
            kw["background"] = b.number("background", default=0.2, source=source)
            kw["seed"] = b.number("seed", int, default=0, source=source)
        elif b.kind == "plane":
            _check_keys(b, ("pitch_deg", "height", "normal", "offset"), source)
            if b.has("normal"):
                kw["plane"] = GroundPlane(np.array(b.numbers("normal", 3, source=source)), b.number("offset", default=0.0, source=source))
            else:
                kw["plane"] = GroundPlane.pitched(b.number("pitch_deg", default=0.0, source=source),
                                                  b.number("height", default=0.0, source=source))
        elif b.kind == "bands":
            _check_keys(b, ("period", "width", "heading_deg", "phase", "level"), source)
            period = b.number("period", source=source)
            if period <= 0:
                raise ConfigError("period must be positive", b.entries["period"].line, source)
            kw["bands"].append(Bands(period, b.number("width", source=source),
                                     b.number("heading_deg", default=0.0, source=source),
                                     b.number("phase", default=0.0, source=source),
                                     b.number("level", default=1.0, source=source)))
        elif b.kind == "crossing":
            _check_keys(b, ("center", "size", "level"), source)
            kw["crossings"].append(Crossing(tuple(b.numbers("center", 2, source=source)),
                                            tuple(b.numbers("size", 2, source=source)),
                                            b.number("level", default=1.0, source=source)))
        elif b.kind == "occluder":
            _check_keys(b, ("center", "size", "height"), source)
            kw["occluders"].append(Box(tuple(b.numbers("center", 2, source=source)),
                                       tuple(b.numbers("size", 2, source=source)),
                                       b.number("height", source=source)))
    try:
        return SceneSpec(**kw)
    except (ValueError, ConfigurationError) as exc:
        raise ConfigError(str(exc), None, source) from None


def read_scene(path) -> SceneSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scene: {exc.strerror}", None, str(path)) from None
    return parse_scene(text, str(path))


# ---------------------------------------------------------------------------
# trajectories and sequences
# ---------------------------------------------------------------------------

def parse_trajectory(text: str, source=None) -> list[EgoPose]:
    poses = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ConfigError(f"expected 't x y yaw', got {raw.strip()!r}", lineno, source)
        try:
            _, x, y, yaw = (float(p) for p in parts)
            poses.append(EgoPose(x, y, yaw))
        except (ValueError, ConfigurationError):
            raise ConfigError(f"bad pose {raw.strip()!r}", lineno, source) from None
    return poses


def read_trajectory(path) -> list[EgoPose]:
    path = Path(path)
    return parse_trajectory(path.read_text(), str(path))


def straight_trajectory(frames: int, step: float = 1.0, yaw: float = 0.0) -> list[EgoPose]:
    c, s = math.cos(yaw), math.sin(yaw)
    return [EgoPose(i * step * c, i * step * s, yaw) for i in range(frames)]


def format_trajectory(poses) -> str:
    return "".join(f"{i} {p.x!r} {p.y!r} {p.yaw!r}\n" for i, p in enumerate(poses))


_SEQUENCE_KEYS = ("calibration", "scene", "tensors", "trajectory", "K", "mode", "seed", "gamma",
                  "targets", "ablation", "cell", "noise", "weights", "provider")


def read_sequence(path) -> dict:
    """Sequence config: one ``[sequence]`` block.

    Path values are resolved relative to the config file. Recognised keys:
    ``calibration``, ``scene`` or ``tensors``, ``trajectory``, ``K``, ``mode``,
    ``seed``, ``gamma``, ``targets``, ``ablation``, ``cell``, ``noise``,
    ``weights``, ``provider``.
    """
    path = Path(path)
    src = str(path)
    blocks = parse_blocks(path.read_text(), src, allowed={"sequence"})
    if len(blocks) != 1:
        raise ConfigError("expected exactly one [sequence] block", None, src)
    b = blocks[0]
    _check_keys(b, _SEQUENCE_KEYS, src)
    out = {}
    for key in ("calibration", "scene", "tensors", "trajectory", "weights"):
        if b.has(key):
            out[key] = path.parent / b.text(key)
    for key, cast in (("K", int), ("seed", int), ("gamma", float), ("cell", float), ("noise", float)):
        if b.has(key):
            out[key] = b.number(key, cast, source=src)
    for key in ("mode", "ablation", "provider"):
        if b.has(key):
            out[key] = b.text(key)
    if b.has("targets"):
        out["targets"] = tuple(b.numbers("targets", source=src))
    return out
