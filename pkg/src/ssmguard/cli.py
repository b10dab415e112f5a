"""Command-line entry point.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error. Errors print one
line ``error[CODE]: message`` to stderr. ``SSMGUARD_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, SsmGuardError

log = logging.getLogger("ssmguard")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(value)
    return out


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Apply ``key=value`` overrides to a scenario dict.

    ``ssm.<field>`` or a bare SsmConfig field name goes to the ``ssm`` block;
    anything else must be a top-level scenario key.
    """
    from .ssm import SsmConfig

    ssm_keys = {f.name for f in fields(SsmConfig)}
    data = json.loads(json.dumps(data))
    for key, value in overrides.items():
        name = key[4:] if key.startswith("ssm.") else key
        if key.startswith("ssm.") or name in ssm_keys:
            if name not in ssm_keys:
                raise ConfigError(f"unknown ssm key {name!r}")
            data.setdefault("ssm", {})[name] = value
        elif key.startswith("rates."):
            data.setdefault("rates", {})[key[6:]] = value
        else:
            data[key] = value
    return data


def _cmd_frames(args) -> int:
    from PIL import Image

    from .lidar_frames import (
        _write_png,
        load_recording,
        preprocess_frame,
        recording_indices,
    )

    frames = load_recording(args.input)
    indices = recording_indices(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for idx, frame in zip(indices, frames):
        pre = preprocess_frame(frame, args.resize_height, not args.no_equalize)
        for kind, img in pre.images.items():
            _write_png(out / f"{idx}_{kind}.png", img.pixels)
        Image.fromarray(pre.stacked.pixels).save(out / f"{idx}_stacked.png")
    log.info("preprocessed %d frames into %s", len(frames), out)
    print(f"preprocessed {len(frames)} frame(s) -> {out}")
    return 0


def _cmd_perceive(args) -> int:
    from .lidar_frames import load_recording, recording_indices
    from .perception import (
        HumanNotFound,
        PerceptionConfig,
        build_background,
        extract_human,
        load_annotations,
    )

    overrides = _parse_sets(args.set)
    known = {f.name for f in fields(PerceptionConfig)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown perception keys: {', '.join(sorted(bad))}")
    cfg = replace(PerceptionConfig(), **overrides)
    frames = load_recording(args.frames)
    indices = recording_indices(args.frames)
    boxes = load_annotations(args.annotations)
    empty = [f for i, f in zip(indices, frames) if not boxes.get(i)]
    bg = build_background((empty or frames)[: cfg.background_frames])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = {}
    for idx, frame in zip(indices, frames):
        frame_boxes = boxes.get(idx, [])
        pts = np.empty((0, 3))
        rows = cols = np.empty(0, dtype=np.int64)
        result = HumanNotFound("detection", int(frame.frame_timestamp))
        if frame_boxes:
            best = max(frame_boxes, key=lambda b: b.confidence)
            result = extract_human(frame, best, bg, cfg)
            if not isinstance(result, HumanNotFound):
                pts, rows, cols = result.points, result.cloud.rows, result.cloud.cols
        with open(out / f"{idx}_human.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "z", "row", "col"])
            for p, r, c in zip(pts, rows, cols):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), int(r), int(c)])
        status[str(idx)] = (f"not_found:{result.stage}" if isinstance(result, HumanNotFound)
                            else len(pts))
    (out / "summary.json").write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
    found = sum(1 for v in status.values() if isinstance(v, int))
    print(f"extracted humans in {found}/{len(status)} frame(s) -> {out}")
    return 0


def _cmd_simulate(args) -> int:
    from .errors import ScenarioError
    from .harness import export, run_scenario
    from .harness.scenario import Scenario

    path = Path(args.scenario)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    data = apply_overrides(data, _parse_sets(args.set))
    if args.seed is not None:
        data["seed"] = args.seed
    scn = Scenario.from_dict(data)
    result = run_scenario(scn)
    summary = export(result.log, args.out, {
        "seed": scn.seed,
        "sync_dropped": result.sync.dropped,
        "calibration_rms_m": result.calibration_rms,
        "perception_misses": result.perception_misses,
    })
    print(f"simulated {summary['ticks']} ticks, min rho {summary['min_rho']:.3f}, "
          f"violations {summary['violation_count']} -> {args.out}")
    return 0


def _read_series(path, column, prefer):
    p = Path(path)
    try:
        fh = open(p, newline="")
    except OSError as exc:
        raise FileNotFoundError(exc.errno, f"{p}: {exc.strerror}") from exc
    with fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        col = column or next((c for c in prefer if c in names), names[-1] if names else None)
        if col not in names:
            raise ConfigError(f"{p}: no column {col!r} (have {', '.join(names)})")
        rows = list(reader)
    keys = [int(r["t_ns"]) for r in rows] if "t_ns" in names else None
    ok = [r.get("valid", "1") != "0" for r in rows]
    return keys, np.array([float(r[col]) for r in rows]), np.array(ok)


def _cmd_metrics(args) -> int:
    from .harness.metrics import rmse

    km, m, ok_m = _read_series(args.measured, args.measured_column, ("min_distance_m",))
    kt, t, _ = _read_series(args.truth, args.truth_column, ("truth_min_distance_m", "min_distance_m"))
    if km is not None and kt is not None:
        index = {k: i for i, k in enumerate(kt)}
        pairs = [(i, index[k]) for i, k in enumerate(km) if k in index]
        m = m[[i for i, _ in pairs]]
        ok_m = ok_m[[i for i, _ in pairs]]
        t = t[[j for _, j in pairs]]
    elif len(m) != len(t):
        raise ConfigError(f"series lengths differ: {len(m)} vs {len(t)}")
    keep = ok_m & np.isfinite(m) & np.isfinite(t)
    value = rmse(m[keep], t[keep])
    print(f"rmse_m={value!r} n={int(keep.sum())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    frames = sub.add_parser("frames", help="lidar frame preprocessing")
    fsub = frames.add_subparsers(dest="action", required=True)
    pre = fsub.add_parser("preprocess", help="downsample, resize, auto-expose and equalize frames")
    pre.add_argument("--input", required=True)
    pre.add_argument("--output", required=True)
    pre.add_argument("--resize-height", type=int, default=256)
    pre.add_argument("--no-equalize", action="store_true")
    pre.set_defaults(func=_cmd_frames)

    perceive = sub.add_parser("perceive", help="human point-set extraction")
    psub = perceive.add_subparsers(dest="action", required=True)
    ext = psub.add_parser("extract", help="extract human points using COCO boxes")
    ext.add_argument("--frames", required=True)
    ext.add_argument("--annotations", required=True)
    ext.add_argument("--out", required=True)
    ext.add_argument("--set", action="append", metavar="KEY=VALUE")
    ext.set_defaults(func=_cmd_perceive)

    sim = sub.add_parser("simulate", help="run a scenario and write its logs")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--set", action="append", metavar="KEY=VALUE")
    sim.set_defaults(func=_cmd_simulate)

    metrics = sub.add_parser("metrics", help="error metrics")
    msub = metrics.add_subparsers(dest="action", required=True)
    rm = msub.add_parser("rmse", help="RMSE between two CSV series")
    rm.add_argument("--measured", required=True)
    rm.add_argument("--truth", required=True)
    rm.add_argument("--measured-column")
    rm.add_argument("--truth-column")
    rm.set_defaults(func=_cmd_metrics)
    return parser


def _setup_logging(verbose: int):
    level = os.environ.get("SSMGUARD_LOG", "").upper()
    if verbose:
        level = "DEBUG" if verbose > 1 else "INFO"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except SsmGuardError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
    except OSError as exc:
        where = f"{exc.filename}: " if exc.filename else ""
        print(f"error[E_IO]: {where}{exc.strerror or exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error[E_VALUE]: {exc}", file=sys.stderr)
    return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
