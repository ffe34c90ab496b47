"""Command line interface.

Every subcommand takes ``--config`` (JSON), ``--seed``, ``--out`` and ``--layout``.
Failures exit with status 1 and a message tagged with the failing stage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibration as calib
from . import features as feat
from .geometry import CameraParams, Extrinsics, load_calibration, save_calibration
from .harness.pipeline import PipelineError, dump_json, run_pipeline
from .harness.synth import SceneConfig, generate_scene, save_scene
from .numopt import LsqOptions
from .skeldata import Frame, SkeletonSequence, load_sequence, save_sequence
from .tracking import TrackerConfig, track_sequence, tracks_to_frames
from .triangulation import DEFAULT_MIN_CONF, match_persons, triangulate_skeleton


class CommandError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _load_config(args) -> tuple[dict, Path]:
    if not args.config:
        return {}, Path.cwd()
    path = Path(args.config)
    with open(path) as fh:
        return json.load(fh), path.resolve().parent


def _path(p, base: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args, cfg, base):
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.layout:
        cfg["layout"] = args.layout
    scene = generate_scene(SceneConfig.from_dict(cfg))
    save_scene(scene, _out(args))


def cmd_calibrate_intrinsics(args, cfg, base):
    cams = cfg["cameras"]
    inits = cfg.get("initial_intrinsics")
    lsq = LsqOptions.from_dict(cfg.get("lsq"))
    results, report = [], {}
    for i, c in enumerate(cams):
        s2 = load_sequence(_path(c["skeleton2d"], base), args.layout)
        s3 = load_sequence(_path(c["skeleton3d"], base), args.layout)
        pairs = [calib.CalibFramePair(f2.skeletons[0], f3.skeletons[0], c["name"], f2.time_index)
                 for f2, f3 in zip(s2, s3) if len(f2.skeletons) == 1 and len(f3.skeletons) == 1]
        init = calib.DEFAULT_INTRINSICS
        if inits is not None:
            entry = inits[i] if isinstance(inits, list) else inits
            init = calib.Intrinsics(entry["fx"], entry["fy"], entry["cx"], entry["cy"],
                                    tuple(entry.get("dist", [0.0] * 5)))
        intr, rep = calib.estimate_intrinsics(pairs, init, lsq)
        results.append(CameraParams(c["name"], intr, Extrinsics()))
        report[c["name"]] = {"final_cost": rep.final_cost, "iterations": rep.iterations,
                             "converged": rep.converged,
                             "termination": rep.termination_reason.value}
    out = _out(args)
    save_calibration(results, out / "calibration.json")
    dump_json(report, out / "intrinsics_report.json")


def cmd_calibrate_extrinsics(args, cfg, base):
    cams = load_calibration(_path(cfg["calibration"], base))
    seqs = [load_sequence(_path(c["skeleton3d"], base), args.layout) for c in cfg["cameras"]]
    seqs = calib.synchronize_streams(seqs)
    rig = calib.RigConfig.from_dict(cfg.get("rig"))
    exts, rep = calib.estimate_extrinsics(
        seqs, calib.initial_extrinsics(rig),
        calib.OutlierSchedule.from_dict(cfg.get("outlier_schedule")),
        LsqOptions.from_dict(cfg.get("lsq")), rig.reference_index)
    out = _out(args)
    save_calibration([CameraParams(c.name, c.intrinsics, e) for c, e in zip(cams, exts)],
                     out / "calibration.json")
    dump_json({"frames_per_round": rep.frames_per_round, "final_cost": rep.final_cost,
               "alignment_error_m": rep.final_alignment_error}, out / "extrinsics_report.json")


def cmd_sync(args, cfg, base):
    paths = [_path(p, base) for p in cfg["streams"]]
    seqs = calib.synchronize_streams([load_sequence(p, args.layout) for p in paths])
    out = _out(args)
    for p, s in zip(paths, seqs):
        save_sequence(s, out / f"{p.stem}_sync.jsonl")


def cmd_triangulate(args, cfg, base):
    cams = load_calibration(_path(cfg["calibration"], base))
    views = [load_sequence(_path(p, base), args.layout) for p in cfg["views"]]
    min_conf = float(cfg.get("min_conf", DEFAULT_MIN_CONF))
    frames = []
    for per_cam in zip(*views):
        dets = [list(f.skeletons) for f in per_cam]
        skels = []
        for group in match_persons(dets, cams, min_conf):
            vs = [None if k is None else dets[v][k] for v, k in enumerate(group)]
            sk = triangulate_skeleton(vs, cams, min_conf)
            if sk.valid.any():
                skels.append(sk)
        frames.append(Frame(per_cam[0].time_index, skels))
    save_sequence(SkeletonSequence(tuple(frames)), _out(args) / "detections.jsonl")


def cmd_track(args, cfg, base):
    seq = load_sequence(_path(cfg["detections"], base), args.layout)
    tracks = track_sequence(((f.time_index, f.skeletons) for f in seq),
                            TrackerConfig.from_dict(cfg.get("tracker")))
    save_sequence(tracks_to_frames(tracks), _out(args) / "tracks.jsonl")


def cmd_features(args, cfg, base):
    seq = load_sequence(_path(cfg["tracks"], base), args.layout)
    modalities = cfg.get("modalities", list(feat.MODALITIES))
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.get("seed", 0))
    by_id: dict = {}
    for f in seq:
        for sk in f.skeletons:
            by_id.setdefault(sk.person_id, []).append(sk)
    out = _out(args)
    for pid, skels in sorted(by_id.items(), key=lambda kv: (kv[0] is None, kv[0] or 0)):
        x = feat.as_array(skels)
        aug = cfg.get("augment")
        if aug:
            x = feat.augment(x, aug.get("rotation_range", 0.0),
                             tuple(aug.get("scale_range", (1.0, 1.0))), rng)
        if "window" in cfg:
            x = feat.sample_window(x, int(cfg["window"]), rng)
        elif "sample_count" in cfg:
            x = feat.sample_uniform(x, int(cfg["sample_count"]), rng)
        tensor = feat.modality_tensor(x, skels[0].layout, modalities)
        np.save(out / f"track{pid}_{'+'.join(modalities)}.npy", tensor.data)


def cmd_fewshot(args, cfg, base):
    gallery = feat.load_gallery(_path(cfg["gallery"], base))
    queries = feat.load_gallery(_path(cfg["queries"], base))
    method = cfg.get("method", "nn")
    k = int(cfg.get("k", 5))
    classify = {"nn": lambda q: feat.nn_classify(q, gallery),
                "knn": lambda q: feat.knn_classify(q, gallery, k),
                "prototype": lambda q: feat.prototype_classify(q, gallery)}[method]
    preds = [classify(q.vector) for q in queries]
    truth = [q.label for q in queries]
    acc = float(np.mean(np.array(preds) == np.array(truth))) if preds else 0.0
    dump_json({"method": method, "predictions": preds, "accuracy": acc}, _out(args) / "fewshot.json")


def cmd_evaluate(args, cfg, base):
    preds = feat.load_predictions(_path(cfg["predictions"], base))
    truth = cfg["truth"]
    if isinstance(truth, str):
        with open(_path(truth, base)) as fh:
            truth = json.load(fh)
    n_classes = int(cfg.get("n_classes", len(preds[0]) if preds else 0))
    acc, cm = feat.evaluate(preds, truth, n_classes)
    out = _out(args)
    dump_json({"accuracy": acc, "n_samples": len(truth)}, out / "evaluation.json")
    with open(out / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *range(n_classes)])
        for i, row in enumerate(cm):
            w.writerow([i, *(f"{v:.6f}" for v in row)])


def cmd_pipeline(args, cfg, base):
    if not args.config:
        raise CommandError("config", "pipeline needs --config")
    run_pipeline(args.config, args.out, seed=args.seed, layout=args.layout)


COMMANDS = {
    "synth": cmd_synth,
    "calibrate-intrinsics": cmd_calibrate_intrinsics,
    "calibrate-extrinsics": cmd_calibrate_extrinsics,
    "sync": cmd_sync,
    "triangulate": cmd_triangulate,
    "track": cmd_track,
    "features": cmd_features,
    "fewshot": cmd_fewshot,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvskel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--layout", help="joint layout name (body, wb25, wb31, wb69, wb137)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        try:
            cfg, base = _load_config(args)
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError("config", f"{type(exc).__name__}: {exc}") from exc
        try:
            COMMANDS[args.command](args, cfg, base)
        except (PipelineError, CommandError):
            raise
        except Exception as exc:
            raise CommandError(args.command, f"{type(exc).__name__}: {exc}") from exc
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CommandError as exc:
        print(f"error: stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
