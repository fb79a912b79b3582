"""Command-line front end: ``stmd generate | run | roc | sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import io as sio
from .config import ConfigError, dump_config, gamma_grid, load_config, parse_config
from .evaluation import dr_at_fa, extract_detections, roc_sweep
from .layers import VARIANTS, Pipeline, run_variants, warmup_horizon
from .scenegen import InvalidSceneError, generate_sequence, iter_frames, ground_truth

log = logging.getLogger("stmd")


class CommandError(RuntimeError):
    pass


def tool_version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _load(path):
    """Config from an INI file, or from the ``config`` snapshot of a run manifest."""
    if path is not None and str(path).endswith(".json"):
        with open(path) as fh:
            return parse_config(json.load(fh)["config"])
    return load_config(path)


def _manifest(out_dir, command, config_text, seed, outputs, started, **extra):
    payload = {
        "command": command,
        "config": config_text,
        "seed": seed,
        "tool_version": tool_version(),
        "outputs": {k: str(v) for k, v in outputs.items()},
        "wall_clock_s": round(time.time() - started, 3),
        **extra,
    }
    sio.write_json_atomic(Path(out_dir) / "manifest.json", payload)


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(config=None, out="sequence", seed=None):
    started = time.time()
    scene, model, ev, _ = _load(config)
    if seed is not None:
        scene = scene.replace(seed=seed)
    out = Path(out)
    _mkdir(out)
    gt = ground_truth(scene)
    for i, frame in enumerate(iter_frames(scene, gt)):
        sio.write_pgm(out / sio.frame_name(i), frame)
    sio.write_ground_truth(out / "ground_truth.csv", gt)
    _manifest(out, "generate", dump_config(scene, model, ev), scene.seed,
              {"frames": out, "ground_truth": out / "ground_truth.csv"}, started,
              n_frames=scene.n_frames)
    log.info("wrote %d frames to %s", scene.n_frames, out)
    return out


def cmd_run(sequence, config=None, variant="feedback", out="run", gamma=None):
    started = time.time()
    scene, model, ev, _ = _load(config)
    if variant not in VARIANTS:
        raise CommandError(f"variant must be one of {VARIANTS}")
    gamma = ev.gamma if gamma is None else gamma
    paths = sio.list_frames(sequence)
    out = Path(out)
    _mkdir(out)

    pipe = Pipeline(model, variant)
    warmup = pipe.warmup if ev.warmup is None else ev.warmup
    detections = []
    shape = None
    writer = None
    try:
        for i, p in enumerate(paths):
            if p.name != sio.frame_name(i):
                raise CommandError(f"missing frame {sio.frame_name(i)} in {sequence}")
            frame = sio.read_pgm(p)
            if shape is None:
                shape = frame.shape
                writer = sio.ResponseWriter(out / "responses.f32", shape, warmup)
            elif frame.shape != shape:
                raise CommandError(f"{p.name} has shape {frame.shape}, expected {shape}")
            F = pipe.step(frame).F
            # the stream is float32, so anything beyond its range is a failure too
            with np.errstate(over="ignore"):
                as_f32 = F.astype(np.float32)
            if not np.all(np.isfinite(as_f32)):
                raise CommandError(f"non-finite response at frame {i}; the feedback loop diverged "
                                   f"(reduce |k|)")
            writer.write(F)
            if gamma is not None and i >= warmup:
                detections.extend(extract_detections(F, gamma, i))
    finally:
        if writer is not None:
            writer.close()

    outputs = {"responses": out / "responses.f32"}
    if gamma is not None:
        sio.write_detections(out / "detections.csv", detections)
        outputs["detections"] = out / "detections.csv"
    _manifest(out, "run", dump_config(scene, model, ev), scene.seed, outputs, started,
              variant=variant, sequence=str(Path(sequence).resolve()), warmup=warmup,
              gamma=gamma, n_frames=len(paths))
    return out


def _responses_path(responses):
    p = Path(responses)
    return p / "responses.f32" if p.is_dir() else p


def _default_gt(responses):
    manifest = _responses_path(responses).parent / "manifest.json"
    if manifest.exists():
        seq = json.loads(manifest.read_text()).get("sequence")
        if seq:
            return Path(seq) / "ground_truth.csv"
    raise CommandError("no ground truth given and none recorded in the run manifest")


def cmd_roc(responses, gt=None, gammas=None, out=None, config=None, target_fa=None):
    """Write ``gamma,dr,fa`` rows; returns ``(points, dr_at_fa)``."""
    started = time.time()
    scene, model, ev, _ = _load(config)
    rpath = _responses_path(responses)
    data, meta = sio.read_responses(rpath)
    track = sio.read_ground_truth(gt or _default_gt(responses))
    if len(track) != meta["count"]:
        raise CommandError(f"{meta['count']} response frames but {len(track)} ground-truth rows")
    warmup = meta.get("warmup", 0) if ev.warmup is None else ev.warmup
    if warmup >= meta["count"]:
        raise CommandError("every frame falls inside the warm-up period")
    peak = float(np.max(data[warmup:])) if meta["count"] else 0.0
    grid = gamma_grid(gammas if gammas is not None else ev.gammas, peak, ev.span)
    points = roc_sweep((np.asarray(f) for f in data), track, grid, warmup, ev.radius)
    target_fa = ev.target_fa if target_fa is None else target_fa
    out = Path(out) if out else rpath.parent / "roc.csv"
    sio.write_roc(out, points)
    dr = dr_at_fa(points, target_fa)
    sio.write_json_atomic(out.with_suffix(".json"), {
        "responses": str(rpath), "warmup": warmup, "target_fa": target_fa, "dr_at_fa": dr,
        "n_gammas": len(grid), "wall_clock_s": round(time.time() - started, 3),
        "tool_version": tool_version()})
    return points, dr


def _apply_sweep_value(scene, parameter, value):
    if parameter == "target_luminance":
        return scene.replace(target_luminance=float(value))
    if parameter == "target_size":
        return scene.replace(target_size=int(round(value)), target_height=None)
    if parameter == "target_velocity":
        return scene.replace(V_T=float(value))
    if parameter == "background_velocity":
        sign = -1.0 if scene.V_B < 0 else 1.0
        return scene.replace(V_B=sign * abs(float(value)))
    if parameter == "background_direction":
        # the target moves leftwards for V_T > 0; "opposite" scrolls the background rightwards
        v = str(value).strip().lower()
        if v not in ("same", "opposite"):
            raise CommandError(f"background_direction must be 'same' or 'opposite', got {value!r}")
        toward_left = scene.V_T >= 0
        opposite_sign = 1.0 if toward_left else -1.0
        sign = opposite_sign if v == "opposite" else -opposite_sign
        return scene.replace(V_B=sign * abs(scene.V_B))
    raise CommandError(f"unknown sweep parameter {parameter!r}")


def evaluate_scene(scene, model, ev, workdir=None):
    """Run both variants on one scene and return ``{variant: dr_at_fa}``.

    Responses are staged as float32 streams so the ROC grid can be fitted
    to the observed peak; the staging directory is removed afterwards
    unless ``workdir`` is given.
    """
    gt = ground_truth(scene)
    warmup = warmup_horizon(model) if ev.warmup is None else ev.warmup
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="stmd-sweep-")
        workdir = tmp.name
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    try:
        writers = {v: sio.ResponseWriter(workdir / f"{v}.f32", (scene.height, scene.width), warmup)
                   for v in VARIANTS}
        try:
            for _, out in run_variants(iter_frames(scene, gt), model, VARIANTS):
                for v, F in out.items():
                    writers[v].write(F)
        finally:
            for w in writers.values():
                w.close()
        result = {}
        for v in VARIANTS:
            data, _ = sio.read_responses(workdir / f"{v}.f32")
            post = np.asarray(data[warmup:])
            if not np.all(np.isfinite(post)):  # float32 overflow lands here as inf
                raise CommandError(f"{v}: non-finite responses; the feedback loop diverged")
            grid = gamma_grid(ev.gammas, float(post.max()), ev.span)
            pts = roc_sweep((np.asarray(f) for f in data), gt, grid, warmup, ev.radius)
            result[v] = dr_at_fa(pts, ev.target_fa)
            del data, post
        return result
    finally:
        if tmp is not None:
            tmp.cleanup()


def _sweep_job(args):
    scene, model, ev, workdir = args
    return evaluate_scene(scene, model, ev, workdir)


def worker_count():
    try:
        return max(1, int(os.environ.get("STMD_THREADS", "1")))
    except ValueError:
        return 1


def cmd_sweep(config, out="sweep", seed=None, target_fa=None, keep_responses=False):
    """Rows ``(parameter, value, variant, dr_at_fa)``; also written to ``sweep.csv``."""
    started = time.time()
    scene, model, ev, sweep = _load(config)
    if sweep is None:
        raise CommandError("config has no [sweep] section")
    if seed is not None:
        scene = scene.replace(seed=seed)
    if target_fa is not None:
        ev = type(ev)(**{**ev.__dict__, "target_fa": target_fa})
    out = Path(out)
    _mkdir(out)
    jobs = []
    for i, value in enumerate(sweep.values):
        s = _apply_sweep_value(scene, sweep.parameter, value)
        jobs.append((s, model, ev, out / f"run_{i:03d}" if keep_responses else None))

    n_workers = min(worker_count(), len(jobs))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    rows = []
    for value, res in zip(sweep.values, results):
        for v in VARIANTS:
            rows.append((sweep.parameter, value, v, res[v]))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value", "variant", "dr_at_fa"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], repr(float(r[3]))])
    _manifest(out, "sweep", dump_config(scene, model, ev, sweep), scene.seed,
              {"table": out / "sweep.csv"}, started, target_fa=ev.target_fa, workers=n_workers)
    return rows


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="stmd", description="Small target motion detection toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesise a target sequence with ground truth")
    g.add_argument("--config", help="INI file with a [scene] section")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run a model variant over a PGM sequence")
    r.add_argument("sequence", help="directory of frame_*.pgm files")
    r.add_argument("--config", help="INI file with a [model] section")
    r.add_argument("--variant", choices=VARIANTS, default="feedback")
    r.add_argument("--gamma", type=float, help="detection threshold for detections.csv")
    r.add_argument("--out", required=True)

    c = sub.add_parser("roc", help="ROC curve of a response stream")
    c.add_argument("responses", help="run directory or responses.f32 file")
    c.add_argument("--gt", help="ground-truth CSV (default: from the run manifest)")
    c.add_argument("--gamma", help="threshold grid: comma list or auto:<n>")
    c.add_argument("--config")
    c.add_argument("--fa", type=float, help="false alarm rate for the reported detection rate")
    c.add_argument("--out")

    s = sub.add_parser("sweep", help="detection rate at fixed false alarm rate across a parameter")
    s.add_argument("--config", required=True, help="INI file with a [sweep] section")
    s.add_argument("--seed", type=int)
    s.add_argument("--fa", type=float)
    s.add_argument("--keep-responses", action="store_true")
    s.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            cmd_generate(args.config, args.out, args.seed)
        elif args.command == "run":
            cmd_run(args.sequence, args.config, args.variant, args.out, args.gamma)
        elif args.command == "roc":
            _, dr = cmd_roc(args.responses, args.gt, args.gamma, args.out, args.config, args.fa)
            print(f"dr_at_fa={dr:.6g}")
        elif args.command == "sweep":
            for param, value, variant, dr in cmd_sweep(args.config, args.out, args.seed, args.fa,
                                                       args.keep_responses):
                print(f"{param}={value} {variant} dr_at_fa={dr:.6g}")
    except (CommandError, ConfigError, InvalidSceneError, sio.FormatError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"stmd: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
