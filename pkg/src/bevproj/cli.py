"""Command-line entry point: ``bevproj {pull,simulate,verify,bench}``.

Exit codes: 0 success, 1 failed verification, 2 bad input or configuration.
Reports are ``key=value`` lines; floats use a fixed six-decimal format
(``inf``/``nan`` spelled out), never locale-dependent.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, read_calibration, read_scene, read_sequence, read_trajectory, straight_trajectory
from .exceptions import ConfigurationError, FormatError, ValidationError
from .fusion import ABLATIONS, FusionConfig
from .geometry import BevGridSpec, GroundPlane, build_distance_mask, build_pull_map, surround_rig
from .pipeline import Trace, checksum, prepare_geometry, run_sequence, scene_frames, tensor_frames
from .sampling import parse_mode
from .scenegen import demo_scene
from .tensorio import read_tensor, write_pgm, write_tensor

SEED_ENV = "BEVPROJ_SEED"
PRESETS = ("flat", "slope", "occluders")


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def _default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_grid_args(p):
    p.add_argument("--cell", type=float, default=None, help="BEV cell size in metres (default 0.5)")
    p.add_argument("--x-range", type=float, nargs=2, default=(-30.0, 30.0), metavar=("MIN", "MAX"))
    p.add_argument("--y-range", type=float, nargs=2, default=(-15.0, 15.0), metavar=("MIN", "MAX"))


def _grid(args, cell=None) -> BevGridSpec:
    return BevGridSpec(tuple(args.x_range), tuple(args.y_range), cell or args.cell or 0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevproj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pull", help="export pull maps and distance masks")
    p.add_argument("--calib", required=True, help="camera calibration file")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--plane-pitch-deg", type=float, default=0.0, help="pitch of the assumed ground plane")
    p.add_argument("--no-preview", action="store_true", help="skip PGM previews")
    _add_grid_args(p)

    p = sub.add_parser("simulate", help="run the encoder over a synthetic scene or tensor directory")
    p.add_argument("--config", help="sequence config file; flags override its values")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scene", help="scene config file")
    src.add_argument("--preset", choices=PRESETS, help="built-in scene")
    src.add_argument("--tensors", help="directory of per-frame feature tensors")
    p.add_argument("--calib", help="calibration file (default: built-in six-camera rig)")
    p.add_argument("--trajectory", help="trajectory file, one 't x y yaw' per line")
    p.add_argument("--frames", type=int, default=None, help="frames of straight driving when no trajectory is given")
    p.add_argument("--step", type=float, default=1.0, help="metres per frame for --frames")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default=None)
    p.add_argument("--K", type=_positive_int, default=None, help="samples per cell (default 8)")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--mode", choices=("stochastic", "deterministic"), default=None)
    p.add_argument("--gamma", type=float, default=None, help="raw-history confidence decay (default 0.9)")
    p.add_argument("--targets", type=float, nargs="+", default=None, help="memory target distances (m)")
    p.add_argument("--T", type=_positive_int, default=None, help="memory size; truncates the default targets")
    p.add_argument("--noise", type=float, default=None, help="std of i.i.d. feature noise")
    p.add_argument("--provider", choices=("oracle", "slope", "occluder", "zero"), default=None)
    p.add_argument("--weights", help="BVT1 fusion weights ((T+1)*C x C)")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--no-preview", action="store_true")
    p.add_argument("--trace", action="store_true", help="write per-stage checksums to trace.txt")
    _add_grid_args(p)

    p = sub.add_parser("verify", help="run the acceptance criteria")
    p.add_argument("--list", action="store_true", help="list criterion ids without running")
    p.add_argument("--only", nargs="+", metavar="ID", help="run only these criteria")

    p = sub.add_parser("bench", help="throughput table")
    p.add_argument("--quick", action="store_true", help="single repetition per measurement")
    p.add_argument("--C", type=_positive_int, default=32, help="feature channels")
    p.add_argument("--K", type=_positive_int, nargs="+", default=[1, 4, 8, 16, 32])
    return parser


# ---------------------------------------------------------------------------

def cmd_pull(args) -> int:
    rigs = read_calibration(args.calib)
    grid = _grid(args)
    plane = GroundPlane.pitched(args.plane_pitch_deg) if args.plane_pitch_deg else GroundPlane.flat()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rig in rigs:
        pull = build_pull_map(rig, grid, plane)
        dmask = build_distance_mask(rig, plane)
        write_tensor(out / f"{rig.name}_pull.bvt", np.nan_to_num(pull.coords, nan=-1.0))
        write_tensor(out / f"{rig.name}_valid.bvt", pull.valid.astype(np.float32))
        write_tensor(out / f"{rig.name}_dmask.bvt", dmask)
        if not args.no_preview:
            write_pgm(out / f"{rig.name}_valid.pgm", pull.valid.astype(np.float32), 0.0, 1.0)
            write_pgm(out / f"{rig.name}_dmask.pgm", np.log1p(dmask))
        print(f"camera={rig.name} valid_cells={int(pull.valid.sum())} grid={grid.h}x{grid.w}")
    return 0


def _seed(args, seq) -> int:
    if args.seed is not None:
        return args.seed
    return seq["seed"] if "seed" in seq else _default_seed()


def _fusion_config(args, seq, seed) -> FusionConfig:
    mode = parse_mode(args.mode or seq.get("mode", "stochastic"), seed)
    row = args.ablation or seq.get("ablation", "E")
    targets = tuple(args.targets or seq.get("targets", (1.0, 4.0, 8.0, 12.0)))
    if args.T is not None:
        if args.targets is None and args.T <= len(targets):
            targets = targets[: args.T]
        elif len(targets) != args.T:
            raise UsageError(f"--T {args.T} does not match {len(targets)} target distances")
    return FusionConfig.ablation(
        row,
        K=args.K or seq.get("K", 8),
        mode=mode,
        gamma=args.gamma if args.gamma is not None else seq.get("gamma", 0.9),
        targets=targets,
    )


def cmd_simulate(args) -> int:
    seq = read_sequence(args.config) if args.config else {}
    seed = _seed(args, seq)
    cfg = _fusion_config(args, seq, seed)
    grid = _grid(args, seq.get("cell"))

    calib = args.calib or seq.get("calibration")
    rigs = read_calibration(calib) if calib else surround_rig()

    traj_path = args.trajectory or seq.get("trajectory")
    if traj_path:
        trajectory = read_trajectory(traj_path)
    else:
        trajectory = straight_trajectory(args.frames if args.frames is not None else 10, args.step)
    if args.frames is not None:
        if args.frames < 1:
            raise UsageError("--frames must be >= 1 (empty sequence)")
        trajectory = trajectory[: args.frames]
    if not trajectory:
        raise UsageError("empty sequence: no poses")

    noise = args.noise if args.noise is not None else seq.get("noise", 0.0)
    tensors = args.tensors or (seq.get("tensors") if not (args.scene or args.preset) else None)
    if tensors:
        frames = tensor_frames(tensors, rigs, trajectory)
        source = f"tensors:{Path(tensors).name}"
    else:
        if args.scene or (seq.get("scene") and not args.preset):
            scene = read_scene(args.scene or seq["scene"])
            source = f"scene:{Path(args.scene or seq['scene']).name}"
        else:
            preset = args.preset or "slope"
            scene = demo_scene(pitch_deg=3.0 if preset == "slope" else 0.0, occluders=preset == "occluders", seed=seed)
            source = f"preset:{preset}"
        frames = scene_frames(scene, rigs, trajectory, grid, provider=args.provider or seq.get("provider", "oracle"),
                              noise=noise, noise_seed=seed)

    weights = None
    wpath = args.weights or seq.get("weights")
    if wpath:
        weights = read_tensor(wpath)

    geometry = prepare_geometry(rigs, grid)
    trace = Trace() if args.trace else None
    res = run_sequence(frames, geometry, grid, cfg, weights=weights, threads=args.threads, trace=trace)

    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    report = [
        f"source={source}",
        f"frames={len(frames)}",
        f"cameras={len(rigs)}",
        f"grid={grid.h}x{grid.w}",
        f"cell={fmt(grid.cell)}",
        f"K={cfg.K}",
        f"mode={type(cfg.mode).__name__.lower()}",
        f"seed={seed}",
        f"gamma={fmt(cfg.gamma)}",
        f"T={cfg.T}",
        f"use_gaussian={fmt(cfg.use_gaussian)}",
        f"use_alpha={fmt(cfg.use_alpha)}",
        f"use_raw_hist={fmt(cfg.use_raw_hist)}",
        f"noise={fmt(noise)}",
    ]
    for i, o in enumerate(res.outputs):
        stem = out / "frames" / f"{i:04d}"
        write_tensor(f"{stem}_B.bvt", o.B)
        write_tensor(f"{stem}_raw.bvt", o.raw.features)
        write_tensor(f"{stem}_conf.bvt", o.raw.conf)
        if not args.no_preview:
            write_pgm(f"{stem}_B.pgm", o.B.mean(axis=0), 0.0, 1.0)
            write_pgm(f"{stem}_conf.pgm", o.raw.conf, 0.0, 1.0)
        report.append(f"frame.{i}.checksum={checksum(o.B):016x}")
        if o.score is not None:
            report += [f"frame.{i}.mse={fmt(o.score.mse)}", f"frame.{i}.psnr_db={fmt(o.score.psnr)}",
                       f"frame.{i}.iou={fmt(o.score.iou)}"]
    if res.aggregate is not None:
        report += [f"mse={fmt(res.aggregate.mse)}", f"psnr_db={fmt(res.aggregate.psnr)}",
                   f"iou={fmt(res.aggregate.iou)}", f"valid_cells={res.aggregate.count}"]
    timing = [f"fps={fmt(res.fps)}"] + [f"stage.{k}.ms={fmt(v)}" for k, v in sorted(res.timings.items())]
    (out / "report.txt").write_text("\n".join(report) + "\n")
    (out / "timing.txt").write_text("\n".join(timing) + "\n")
    if trace is not None:
        (out / "trace.txt").write_text("\n".join(trace.lines()) + "\n")
    print("\n".join(report + timing))
    return 0


def cmd_verify(args) -> int:
    from .acceptance import CRITERIA, run_all

    if args.list:
        for c in CRITERIA:
            print(f"{c.id}\t{c.title}")
        return 0
    if args.only:
        unknown = set(args.only) - {c.id for c in CRITERIA}
        if unknown:
            raise UsageError(f"unknown criteria: {', '.join(sorted(unknown))}")
    ok = run_all(args.only)
    print("ALL PASS" if ok else "SOME CRITERIA FAILED")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .bench import bench_lines, reference_frame_time

    t, stages = reference_frame_time(repeats=1 if args.quick else 3, C=args.C)
    print(f"frame.reference.ms={fmt(1000 * t)}")
    for k, v in sorted(stages.items()):
        print(f"frame.stage.{k}.ms={fmt(1000 * v)}")
    for line in bench_lines(quick=args.quick, C=args.C, Ks=tuple(args.K)):
        print(line)
    return 0


COMMANDS = {"pull": cmd_pull, "simulate": cmd_simulate, "verify": cmd_verify, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ConfigurationError, FormatError, ValidationError, UsageError) as exc:
        print(f"bevproj {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"bevproj {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
