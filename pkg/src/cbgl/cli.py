"""Command-line front end: ``cbgl {localize, bench, gen-map, rank-dump, time-profile}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .bench import (
    EnvSpec,
    InfeasibleSpecError,
    SensorModel,
    generate_environment,
    profile_to_csv,
    run_trials,
    timing_profile,
)
from .caer import psi_field, rank_field
from .grid_map import MapFormatError, NoFreeSpaceError, load_map_files, save_map_files
from .pipeline import CbglConfig, cbgl, disperse_hypotheses
from .pose import Pose
from .scan_geometry import NotInFreeSpaceError, ScanError, load_scan, save_scan, simulate_measurement

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ALGORITHM = 4

log = logging.getLogger("cbgl")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


# -- argument parsing --------------------------------------------------------------

def _pose_arg(text: str) -> Pose:
    try:
        x, y, th = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,theta, got {text!r}")
    return Pose(x, y, th)


def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_config_flags(p):
    g = p.add_argument_group("localisation")
    g.add_argument("--config", type=Path, help="JSON file with CbglConfig fields (and an 'icp' object)")
    g.add_argument("--dl", type=float, help="locations per m^2 of free space (default 40)")
    g.add_argument("--dalpha", type=int, help="headings per location (default 32)")
    g.add_argument("--k", type=int, help="hypotheses refined by scan matching (default 10)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--threads", type=int, help="worker threads; affects speed only")


def _add_sensor_flags(p):
    g = p.add_argument_group("simulated sensor")
    g.add_argument("--rays", type=int, default=360)
    g.add_argument("--fov", type=float, default=2 * math.pi, help="angular range in radians")
    g.add_argument("--rmax", type=float, default=10.0)
    g.add_argument("--noise", type=float, default=0.05, help="range noise sigma in metres")


def _add_env_flags(p):
    g = p.add_argument_group("generated environment")
    g.add_argument("--area", type=float, default=200.0)
    g.add_argument("--rooms", type=int, default=6)
    g.add_argument("--resolution", type=float, default=0.05)
    g.add_argument("--clutter", type=float, default=0.05, help="obstacles per m^2")
    g.add_argument("--env-seed", type=int, default=0)


def _add_thresholds(p):
    p.add_argument("--delta-l", type=float, default=0.5, help="location inlier threshold (m)")
    p.add_argument("--delta-theta", type=float, default=0.4, help="orientation inlier threshold (rad)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbgl", description="Single-shot global localisation in occupancy grids.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("localize", help="localise one scan within a map")
    p.add_argument("--map", type=Path, required=True, help="P5 graymap; metadata in <name>.map.txt")
    p.add_argument("--scan", type=Path, required=True, help="JSON scan file")
    p.add_argument("--out", type=Path, help="write result JSON here instead of stdout")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock timings from the JSON")
    _add_config_flags(p)

    p = sub.add_parser("rank-dump", help="CAER and rank of every dispersed hypothesis")
    p.add_argument("--map", type=Path, required=True)
    p.add_argument("--scan", type=Path, required=True)
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")
    _add_config_flags(p)

    p = sub.add_parser("bench", help="repeated localisation trials on a map or generated environment")
    p.add_argument("--map", type=Path, help="use this map instead of generating one")
    p.add_argument("--out", type=Path, required=True, help="per-trial CSV; the JSON aggregate goes next to it")
    p.add_argument("--poses", type=int, default=5)
    p.add_argument("--trials", type=int, default=5, help="trials per pose")
    p.add_argument("--no-timing", action="store_true", help="blank timing columns so outputs are reproducible")
    _add_thresholds(p)
    _add_config_flags(p)
    _add_sensor_flags(p)
    _add_env_flags(p)

    p = sub.add_parser("time-profile", help="runtime against environment area")
    p.add_argument("--areas", type=_float_list, default=[50.0, 100.0, 200.0, 400.0])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")
    _add_config_flags(p)
    _add_sensor_flags(p)
    p.add_argument("--resolution", type=float, default=0.05)

    p = sub.add_parser("gen-map", help="write a generated floorplan as P5 + sidecar")
    p.add_argument("--out", type=Path, required=True, help="output .pgm path")
    p.add_argument("--pose", type=_pose_arg, help="also simulate a scan from x,y,theta")
    p.add_argument("--scan-out", type=Path, help="where to write the simulated scan")
    p.add_argument("--seed", type=int, default=0, help="noise seed for --pose")
    _add_env_flags(p)
    _add_sensor_flags(p)
    return parser


# -- helpers -----------------------------------------------------------------------

def _config(args) -> CbglConfig:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: not valid JSON ({exc})")
        if not isinstance(base, dict):
            raise InputError(f"{args.config}: expected a JSON object")
    for key, flag in (("d_l", "dl"), ("d_alpha", "dalpha"), ("k", "k"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    try:
        return CbglConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}")


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    if n > limit:
        log.info("clamping --threads %d to %d", n, limit)
    numba.set_num_threads(min(n, limit))


def _load_map(path: Path):
    try:
        return load_map_files(path)
    except FileNotFoundError as exc:
        raise InputError(f"cannot read map: {exc.filename or path}")
    except (OSError, MapFormatError) as exc:
        raise InputError(f"{path}: {exc}")


def _load_scan(path: Path):
    try:
        return load_scan(path)
    except FileNotFoundError:
        raise InputError(f"cannot read scan: {path}")
    except (OSError, ScanError) as exc:
        raise InputError(f"{path}: {exc}")


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc}")


def _sensor(args) -> SensorModel:
    if args.rays < 1 or args.rmax <= 0 or args.noise < 0 or not 0 < args.fov <= 2 * math.pi + 1e-12:
        raise UsageError("sensor needs rays >= 1, rmax > 0, noise >= 0 and 0 < fov <= 2pi")
    return SensorModel(args.rays, args.fov, args.rmax, args.noise)


def _env_spec(args) -> EnvSpec:
    try:
        return EnvSpec(area=args.area, n_rooms=args.rooms, resolution=args.resolution,
                       clutter_density=args.clutter, seed=args.env_seed)
    except InfeasibleSpecError as exc:
        raise UsageError(str(exc))


# -- commands ----------------------------------------------------------------------

def cmd_localize(args) -> int:
    config = _config(args)
    _set_threads(args.threads)
    grid = _load_map(args.map)
    scan = _load_scan(args.scan)
    result = cbgl(scan, grid, config)
    d = result.to_dict()
    if args.no_timing:
        del d["timing_ms"]
    _emit(json.dumps(d, indent=2) + "\n", args.out)
    e = result.estimate
    print(f"estimate x={e.x:.4f} y={e.y:.4f} theta={e.theta:.4f}  psi={result.psi_of_estimate:.4f}  "
          f"|H|={result.hypothesis_count}", file=sys.stderr)
    print("timing [ms] " + "  ".join(f"{k}={v * 1e3:.1f}" for k, v in result.timing.items()), file=sys.stderr)
    return EXIT_OK


def cmd_rank_dump(args) -> int:
    config = _config(args)
    _set_threads(args.threads)
    grid = _load_map(args.map)
    scan = _load_scan(args.scan)
    hyps = disperse_hypotheses(grid, config.d_l, config.d_alpha, np.random.default_rng(config.seed))
    if hyps.shape[0] == 0:
        raise NoFreeSpaceError("no hypotheses could be dispersed (free area too small for d_l)")
    ranked = rank_field(psi_field(scan, grid, hyps))
    _emit(ranked.to_csv(), args.out)
    return EXIT_OK


_TIMING_COLUMNS = ("total_time", "dispersal", "field_evaluation", "ranking", "sm2", "final_selection")
_TIMING_KEYS = ("time_mean", "time_std", "time_p50", "time_p90", "time_max", "field_share")


def cmd_bench(args) -> int:
    config = _config(args)
    _set_threads(args.threads)
    sensor = _sensor(args)
    if args.poses < 1 or args.trials < 1:
        raise UsageError("--poses and --trials must be >= 1")
    if args.map is not None:
        grid = _load_map(args.map)
    else:
        try:
            grid = generate_environment(_env_spec(args))
        except InfeasibleSpecError as exc:
            raise UsageError(f"cannot generate environment: {exc}")
    if grid.n_free == 0:
        raise NoFreeSpaceError("map has no free space")

    def progress(rec):
        log.info("pose %d trial %d: location error %.3f m %s", rec.pose_index, rec.trial_index,
                 rec.location_error, rec.error)

    report = run_trials(grid, sensor, config, args.poses, args.trials, config.seed,
                        args.delta_l, args.delta_theta, progress=progress)
    if args.no_timing:
        for r in report.records:
            for c in _TIMING_COLUMNS:
                setattr(r, c, float("nan"))
        report.aggregates = report.recompute()
        for key in _TIMING_KEYS:
            report.aggregates.pop(key, None)
    _emit(report.to_csv(), args.out)
    _emit(report.to_json(indent=2) + "\n", args.out.with_suffix(".json"))
    print(report.summary_table() if not args.no_timing else _summary_without_time(report.aggregates))
    return EXIT_OK


def _summary_without_time(a) -> str:
    return (f"CBGL position err mean {a['location_error_mean']:.3f} m (std {a['location_error_std']:.3f})  "
            f"orientation err mean {a['orientation_error_mean']:.3f} rad (std {a['orientation_error_std']:.3f})\n"
            f"inliers (loc <= {a['delta_l']} m): {100 * a['location_inlier_proportion']:.1f}%   "
            f"inliers (loc <= {a['delta_l']} m, ori <= {a['delta_theta']} rad): {100 * a['inlier_proportion']:.1f}%   "
            f"trials: {a['n_trials']} (failed {a['n_failed']})")


def cmd_time_profile(args) -> int:
    config = _config(args)
    _set_threads(args.threads)
    sensor = _sensor(args)
    if not args.areas or args.trials < 1:
        raise UsageError("need at least one area and --trials >= 1")
    if any(a <= 0 for a in args.areas) or args.areas != sorted(args.areas):
        raise UsageError("--areas must be positive and ascending")
    try:
        rows = timing_profile(args.areas, sensor, config, config.seed, args.trials, args.resolution)
    except InfeasibleSpecError as exc:
        raise UsageError(str(exc))
    _emit(profile_to_csv(rows), args.out)
    return EXIT_OK


def cmd_gen_map(args) -> int:
    if args.pose is None and args.scan_out is not None or args.pose is not None and args.scan_out is None:
        raise UsageError("--pose and --scan-out go together")
    try:
        grid = generate_environment(_env_spec(args))
    except InfeasibleSpecError as exc:
        raise UsageError(f"cannot generate environment: {exc}")
    try:
        pgm, meta = save_map_files(grid, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}")
    print(f"wrote {pgm} and {meta}", file=sys.stderr)
    if args.pose is not None:
        sensor = _sensor(args)
        scan = simulate_measurement(grid, args.pose, sensor.n_rays, sensor.angular_range, sensor.r_max,
                                    sensor.noise_sigma, np.random.default_rng(args.seed))
        try:
            save_scan(scan, args.scan_out)
        except OSError as exc:
            raise InputError(f"cannot write {args.scan_out}: {exc}")
        print(f"wrote {args.scan_out}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "localize": cmd_localize,
    "rank-dump": cmd_rank_dump,
    "bench": cmd_bench,
    "time-profile": cmd_time_profile,
    "gen-map": cmd_gen_map,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cbgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"cbgl: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NoFreeSpaceError, NotInFreeSpaceError) as exc:
        print(f"cbgl: error: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM


if __name__ == "__main__":
    sys.exit(main())
