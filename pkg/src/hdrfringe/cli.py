"""Command-line driver.

Capture directory (written by ``simulate``, read by later stages)::

    left/level<m>_<nn>.pgm   right/level<m>_<nn>.pgm
    truth_left.pfm  truth_right.pfm  truth.ply  cameras.txt

Stages write into ``--output``; each one reads what the previous one wrote,
so ``pipeline`` is exactly ``phase``, ``fuse``, ``match``, ``reconstruct``
run in order.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ConfigError, FringeError
from .hdr import (
    FusionReport,
    HdrConfig,
    fuse_levels,
    gen_phase_shifting,
    naive_phase,
    sat_map,
    temporal_unwrap,
)
from .imaging import (
    FringeStack,
    PhaseMap,
    SaturationMap,
    read_image_stack,
    read_pgm,
    read_phase_map,
    read_point_cloud,
    write_pgm,
    write_phase_map,
    write_point_cloud,
)
from .phase import uniform_shifts
from .simulator import (
    BUILTIN_SCENES,
    ProjectorModel,
    SensorModel,
    builtin_scene,
    default_cameras,
    load_scene,
    render_stacks,
)
from .stereo import RectifiedPair, load_cameras, load_matches, match_pair, save_cameras, save_matches, triangulate

VIEWS = ("left", "right")

DEFAULTS = {
    "scene": "plane",
    "width": 256,
    "height": 256,
    "extent_mm": 4.0,
    "reflectance_gain": 3.0,
    "levels": [
        {"period": 912.0, "steps": 12},
        {"period": 144.0, "steps": 12},
        {"period": 24.0, "steps": 12},
        {"period": 12.0, "steps": 12},
    ],
    "projector": {"intensity": 105.0, "modulation": 0.7, "blur": 4.5},
    "sensor": {"sigma": 1.0},
    "cameras": {"half_angle_deg": 15.0, "magnification": 0.296, "pixel_pitch_mm": 0.00345},
    "sat_thr": 255,
    "max_phase_gap": 2 * np.pi,
    "max_residual": 0.5,
    "camera_file": None,
    "input": "capture",
    "output": "result",
    "seed": 0,
    "naive": False,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, **overrides) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    periods = [float(lv["period"]) for lv in cfg["levels"]]
    if not periods or any(b >= a for a, b in zip(periods, periods[1:])):
        raise ConfigError(f"level periods must strictly decrease, got {periods}")
    if any(int(lv["steps"]) < 3 for lv in cfg["levels"]):
        raise ConfigError("every level needs at least 3 phase shifts")
    return cfg


def _periods(cfg) -> list[float]:
    return [float(lv["period"]) for lv in cfg["levels"]]


def _steps(cfg) -> list[int]:
    return [int(lv["steps"]) for lv in cfg["levels"]]


def _hdr(cfg) -> HdrConfig:
    try:
        return HdrConfig(sat_thr=cfg["sat_thr"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _camera_path(cfg) -> Path:
    if cfg["camera_file"]:
        return Path(cfg["camera_file"])
    return Path(cfg["input"]) / "cameras.txt"


def frame_path(root, view: str, level: int, n: int) -> Path:
    return Path(root) / view / f"level{level + 1}_{n:02d}.pgm"


# --- stages ----------------------------------------------------------------


def cmd_simulate(cfg, scene_name: str | None = None) -> Path:
    name = scene_name or cfg["scene"]
    if name in BUILTIN_SCENES or not Path(name).exists():
        scene = builtin_scene(name, extent=cfg["extent_mm"], gain=cfg["reflectance_gain"])
    else:
        scene = load_scene(name)
    proj = ProjectorModel(tuple(_periods(cfg)), tuple(_steps(cfg)), **cfg["projector"])
    sensor = SensorModel(sigma=cfg["sensor"]["sigma"])
    w, h = cfg["width"], cfg["height"]
    cam_l, cam_r = default_cameras(w, h, **cfg["cameras"])
    left, right, truth = render_stacks(scene, proj, sensor, cam_l, cam_r, cfg["seed"], w, h, _hdr(cfg))

    out = Path(cfg["output"])
    for view, mset in zip(VIEWS, (left, right)):
        (out / view).mkdir(parents=True, exist_ok=True)
        for m, stack in enumerate(mset.stacks):
            for n, img in enumerate(stack.samples):
                write_pgm(img, frame_path(out, view, m, n))
    write_phase_map(truth.phase_left, out / "truth_left.pfm")
    write_phase_map(truth.phase_right, out / "truth_right.pfm")
    write_point_cloud(truth.cloud, out / "truth.ply", provenance=True)
    save_cameras(cam_l, cam_r, out / "cameras.txt")
    return out


def load_view(cfg, view: str) -> list[FringeStack]:
    root = Path(cfg["input"])
    stacks = []
    for m, (period, steps) in enumerate(zip(_periods(cfg), _steps(cfg))):
        paths = [frame_path(root, view, m, n) for n in range(steps)]
        stacks.append(read_image_stack(paths, uniform_shifts(steps), period))
    return stacks


def cmd_phase(cfg) -> None:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    config = _hdr(cfg)
    for view in VIEWS:
        for m, stack in enumerate(load_view(cfg, view)):
            smap = sat_map(stack, config)
            wrapped = naive_phase(stack) if cfg["naive"] else gen_phase_shifting(stack, smap, config)
            write_phase_map(wrapped, out / f"wrapped_{view}_L{m + 1}.pfm")
            write_pgm(smap.counts.astype(np.uint8), out / f"satmap_{view}_L{m + 1}.pgm")


def cmd_fuse(cfg) -> None:
    out = Path(cfg["output"])
    config = _hdr(cfg)
    periods, steps = _periods(cfg), _steps(cfg)
    for view in VIEWS:
        wrapped, satmaps = [], []
        for m in range(len(periods)):
            wrapped.append(read_phase_map(out / f"wrapped_{view}_L{m + 1}.pfm", "wrapped"))
            satmaps.append(SaturationMap(read_pgm(out / f"satmap_{view}_L{m + 1}.pgm"), steps[m]))
        unwrapped = temporal_unwrap(wrapped, periods)
        if cfg["naive"]:
            last = unwrapped[-1]
            fused = PhaseMap(last.values, last.valid, "equivalent")
            report = FusionReport(replaced=[0] * (len(periods) - 1),
                                  from_densest=int(last.valid.sum()),
                                  unrecoverable=int((~last.valid).sum()),
                                  oversaturated=[0] * len(periods), total=last.valid.size)
        else:
            fused, report = fuse_levels(satmaps, periods, wrapped, config)
        densest = unwrapped[-1].valid & (satmaps[-1].counts <= steps[-1] - config.min_valid)
        write_phase_map(fused, out / f"fused_{view}.pfm")
        write_phase_map(PhaseMap(unwrapped[-1].values, densest, "equivalent"), out / f"densest_{view}.pfm")
        (out / f"fusion_{view}.txt").write_text(report.to_text())
        (out / f"fusion_{view}.kv").write_text(report.to_kv())


def cmd_match(cfg) -> None:
    out = Path(cfg["output"])
    pair = RectifiedPair(read_phase_map(out / "fused_left.pfm", "equivalent"),
                         read_phase_map(out / "fused_right.pfm", "equivalent"))
    save_matches(match_pair(pair, cfg["max_phase_gap"]), out / "matches.txt")


def cmd_reconstruct(cfg) -> None:
    out = Path(cfg["output"])
    cam_l, cam_r = load_cameras(_camera_path(cfg))
    matches = load_matches(out / "matches.txt")
    cloud, tri = triangulate(matches, cam_l, cam_r, cfg["max_residual"])
    write_point_cloud(cloud, out / "cloud.ply", provenance=True)

    metrics = {}
    for view in VIEWS:
        fused = read_phase_map(out / f"fused_{view}.pfm")
        densest = read_phase_map(out / f"densest_{view}.pfm")
        metrics[f"valid_fraction_{view}"] = fused.valid_fraction()
        metrics[f"densest_valid_fraction_{view}"] = densest.valid_fraction()
    metrics["matches"] = len(matches)
    metrics["points"] = len(cloud)
    metrics["rejected_rank"] = tri.rejected_rank
    metrics["rejected_residual"] = tri.rejected_residual
    root = Path(cfg["input"])
    for view in VIEWS:
        truth_path = root / f"truth_{view}.pfm"
        if truth_path.exists():
            err = analysis.phase_error(read_phase_map(out / f"fused_{view}.pfm"), read_phase_map(truth_path))
            metrics[f"phase_rms_{view}"] = analysis.rms(err)
    if (root / "truth.ply").exists():
        metrics["z_rms_mm"] = height_rms(cloud, read_point_cloud(root / "truth.ply"),
                                         (cfg["height"], cfg["width"]))
    text = "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in metrics.items())
    (out / "metrics.txt").write_text(text)


def height_rms(cloud, truth, shape) -> float:
    """RMS z difference against a truth cloud, paired by source pixel."""
    if len(cloud) == 0:
        return float("nan")
    grid = np.full(shape, np.nan)
    u, v = truth.provenance.T
    inside = (u >= 0) & (v >= 0) & (u < shape[1]) & (v < shape[0])
    grid[v[inside], u[inside]] = truth.points[inside, 2]
    u, v = cloud.provenance.T
    return analysis.rms(cloud.points[:, 2] - grid[v, u])


def cmd_pipeline(cfg) -> None:
    for stage in (cmd_phase, cmd_fuse, cmd_match, cmd_reconstruct):
        _run_stage(stage, cfg)


def cmd_compare(fused_path, naive_path, truth_path, output=None) -> str:
    report = analysis.compare_maps(read_phase_map(fused_path), read_phase_map(naive_path),
                                   read_phase_map(truth_path))
    if output:
        Path(output).mkdir(parents=True, exist_ok=True)
        (Path(output) / "compare.txt").write_text(report)
    return report


def _run_stage(stage, cfg):
    name = stage.__name__.removeprefix("cmd_")
    try:
        return stage(cfg)
    except FringeError as exc:
        exc.args = (f"[{name}] {exc}",)
        raise


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; missing keys take defaults")
    common.add_argument("--seed", type=int)
    common.add_argument("--naive", action="store_true", default=None,
                        help="use every sample and keep only the densest level")
    common.add_argument("--input", help="capture directory")
    common.add_argument("--output", help="output directory")

    parser = argparse.ArgumentParser(prog="hdrfringe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="render a synthetic capture")
    sim.add_argument("--scene", help=f"built-in ({', '.join(BUILTIN_SCENES)}) or scene file")
    for name, text in (("phase", "wrapped phase and saturation maps"),
                       ("fuse", "temporal unwrapping and HDR fusion"),
                       ("match", "row-wise phase matching"),
                       ("reconstruct", "triangulation and metrics"),
                       ("pipeline", "phase, fuse, match, reconstruct")):
        sub.add_parser(name, parents=[common], help=text)
    cmp_ = sub.add_parser("compare", parents=[common], help="compare fused and naive maps to truth")
    cmp_.add_argument("fused")
    cmp_.add_argument("naive")
    cmp_.add_argument("truth")
    sub.add_parser("print-config", parents=[common], help="dump the effective config as JSON")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, naive=args.naive,
                          input=args.input, output=args.output)
        if args.command == "print-config":
            print(json.dumps(cfg, indent=2, sort_keys=True))
        elif args.command == "simulate":
            try:
                cmd_simulate(cfg, args.scene)
            except FringeError as exc:
                exc.args = (f"[simulate] {exc}",)
                raise
        elif args.command == "compare":
            sys.stdout.write(cmd_compare(args.fused, args.naive, args.truth, args.output))
        else:
            stage = {"phase": cmd_phase, "fuse": cmd_fuse, "match": cmd_match,
                     "reconstruct": cmd_reconstruct, "pipeline": cmd_pipeline}[args.command]
            if stage is cmd_pipeline:
                stage(cfg)
            else:
                _run_stage(stage, cfg)
    except FringeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 14
    return 0


if __name__ == "__main__":
    sys.exit(main())
