"""End-to-end driver: calibration, synchronization, triangulation and tracking.

Config (JSON)::

    {
      "layout": "wb25",
      "synth": {"calibration": [SceneConfig, ...], "target": SceneConfig},
      "calibration_groups": [{"cameras": [{"name", "skeleton2d", "skeleton3d"}, ...]}],
      "target": {"cameras": [{"name", "skeleton2d"}, ...]},
      "initial_intrinsics": {"fx", "fy", "cx", "cy", "dist"} | [one per camera],
      "rig": RigConfig, "outlier_schedule": OutlierSchedule, "lsq": LsqOptions,
      "tracker": TrackerConfig, "min_conf": 0.1
    }

With ``synth`` the scenes are generated first and written under ``<out>/synth``;
their files then serve as ``calibration_groups`` and ``target``. Relative paths
resolve against the config file's directory.

Outputs in ``<out>``: ``calibration.json``, ``tracks.jsonl``, ``metrics.json``
(deterministic) and ``timings.json`` (wall clock, not deterministic).
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from ..calibration import (DEFAULT_INTRINSICS, CalibFramePair, OutlierSchedule, RigConfig,
                           estimate_extrinsics, estimate_intrinsics, initial_extrinsics,
                           select_calibration_sequences, synchronize_streams)
from ..geometry import CameraParams, Intrinsics, save_calibration
from ..numopt import LsqOptions
from ..skeldata import Frame, SkeletonSequence, load_sequence, resolve_layout, save_sequence
from ..tracking import TrackerConfig, track_sequence, tracks_to_frames
from ..triangulation import DEFAULT_MIN_CONF, match_persons, reprojection_rmse, triangulate_skeleton
from .synth import SceneConfig, generate_scene, save_scene

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def dump_json(obj, path) -> None:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _resolve(path, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _initial_intrinsics(value, n_cams: int) -> list[Intrinsics]:
    if value is None:
        return [DEFAULT_INTRINSICS] * n_cams
    entries = value if isinstance(value, list) else [value] * n_cams
    return [Intrinsics(s["fx"], s["fy"], s["cx"], s["cy"], tuple(s.get("dist", [0.0] * 5)))
            for s in entries]


def _concat(seqs: list[SkeletonSequence], source: str) -> SkeletonSequence:
    frames, t = [], 0
    for seq in seqs:
        for f in seq:
            frames.append(Frame(t, f.skeletons))
            t += 1
    return SkeletonSequence(tuple(frames), source=source)


def run_pipeline(config: dict | str | Path, out_dir, seed: int | None = None,
                 layout: str | None = None) -> dict:
    """Run every stage and write the artifacts. Returns the metrics dict.

    Raises:
        PipelineError: tagged with the failing stage.
    """
    timings: dict[str, float] = {}
    base = Path.cwd()
    with stage("config", timings):
        if not isinstance(config, dict):
            base = Path(config).resolve().parent
            with open(config) as fh:
                config = json.load(fh)
        config = dict(config)
        if layout is not None:
            config["layout"] = layout
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rig_cfg = config.get("rig")
        schedule = OutlierSchedule.from_dict(config.get("outlier_schedule"))
        lsq = LsqOptions.from_dict(config.get("lsq"))
        tracker_cfg = TrackerConfig.from_dict(config.get("tracker"))
        min_conf = float(config.get("min_conf", DEFAULT_MIN_CONF))

    if "synth" in config:
        with stage("synth", timings):
            syn = config["synth"]
            scene_layout = config.get("layout", "wb25")
            base_seed = syn.get("seed", 0) if seed is None else seed
            calib_cfgs = syn.get("calibration", [{}])
            groups = []
            for i, c in enumerate(calib_cfgs):
                c = {"layout": scene_layout, "camera_seed": base_seed, "seed": base_seed + 1 + i,
                     **c}
                if rig_cfg is not None:
                    c["rig"] = rig_cfg
                files = save_scene(generate_scene(SceneConfig.from_dict(c)),
                                   out / "synth" / f"calib{i}")
                groups.append(files)
            t = {"layout": scene_layout, "camera_seed": base_seed, "seed": base_seed + 1000,
                 **syn.get("target", {})}
            if rig_cfg is not None:
                t["rig"] = rig_cfg
            target_scene = generate_scene(SceneConfig.from_dict(t))
            target_files = save_scene(target_scene, out / "synth" / "target")
            config["calibration_groups"] = groups
            config["target"] = {"cameras": [{"name": c["name"], "skeleton2d": c["skeleton2d"]}
                                            for c in target_files["cameras"]]}
            if rig_cfg is None:
                rig_cfg = target_scene.config.rig.to_dict()
            base = Path.cwd()

    with stage("load", timings):
        layout_obj = resolve_layout(config.get("layout", "wb25"))
        rig = RigConfig.from_dict(rig_cfg)
        calib_groups = []
        for g in config.get("calibration_groups", []):
            cams2d = [load_sequence(_resolve(c["skeleton2d"], base), layout_obj, c["name"])
                      for c in g["cameras"]]
            cams3d = [load_sequence(_resolve(c["skeleton3d"], base), layout_obj, c["name"])
                      for c in g["cameras"]]
            calib_groups.append((cams2d, cams3d))
        target_cams = config["target"]["cameras"]
        target_views = [load_sequence(_resolve(c["skeleton2d"], base), layout_obj, c["name"])
                        for c in target_cams]
        names = [c["name"] for c in target_cams]
        n_cams = len(names)
        if rig.n_cameras != n_cams:
            raise ValueError(f"rig has {rig.n_cameras} cameras, target has {n_cams}")

    with stage("select", timings):
        kept = select_calibration_sequences([c2 + c3 for c2, c3 in calib_groups])
        kept_ids = {id(g[0]) for g in kept}
        selected = [(c2, c3) for c2, c3 in calib_groups if id(c2[0]) in kept_ids]
        if not selected:
            raise ValueError("no calibration group has a single person with equal lengths")
        for c2, c3 in selected:
            if len(c2) != n_cams:
                raise ValueError(f"calibration group has {len(c2)} cameras, expected {n_cams}")

    metrics: dict = {"n_calibration_groups": len(calib_groups),
                     "n_selected_groups": len(selected)}

    with stage("intrinsics", timings):
        inits = _initial_intrinsics(config.get("initial_intrinsics"), n_cams)
        intrinsics, intr_rmse = [], []
        for c in range(n_cams):
            pairs = [CalibFramePair(f2.skeletons[0], f3.skeletons[0], names[c], f2.time_index)
                     for c2, c3 in selected for f2, f3 in zip(c2[c], c3[c])]
            intr, rep = estimate_intrinsics(pairs, inits[c], lsq)
            intrinsics.append(intr)
            intr_rmse.append(float(np.sqrt(rep.final_cost / max(rep.n_residuals // 2, 1))))
        metrics["intrinsics_rmse_px"] = intr_rmse

    with stage("sync", timings):
        synced = [synchronize_streams(c3) for _, c3 in selected]
        per_camera = [_concat([g[c] for g in synced], names[c]) for c in range(n_cams)]
        target_views = synchronize_streams(target_views)

    with stage("extrinsics", timings):
        init_ext = initial_extrinsics(rig)
        extrinsics, ext_rep = estimate_extrinsics(per_camera, init_ext, schedule, lsq,
                                                  rig.reference_index)
        cams = [CameraParams(n, i, e) for n, i, e in zip(names, intrinsics, extrinsics)]
        metrics["extrinsics_alignment_error_m"] = ext_rep.final_alignment_error
        metrics["extrinsics_frames_per_round"] = ext_rep.frames_per_round

    with stage("triangulate", timings):
        detections, sq, n = [], 0.0, 0
        for frames in zip(*target_views):
            t = frames[0].time_index
            views = [list(f.skeletons) for f in frames]
            dets = []
            for group in match_persons(views, cams, min_conf):
                vs = [None if k is None else views[v][k] for v, k in enumerate(group)]
                sk = triangulate_skeleton(vs, cams, min_conf)
                if not sk.valid.any():
                    continue
                dets.append(sk)
                rmse = reprojection_rmse(sk, vs, cams)
                pairs = sum(int((sk.valid & v.valid).sum()) for v in vs if v is not None)
                sq += rmse ** 2 * pairs
                n += pairs
            detections.append((t, dets))
        metrics["triangulation_reprojection_rmse_px"] = float(np.sqrt(sq / n)) if n else None
        metrics["n_frames"] = len(detections)

    with stage("track", timings):
        tracks = track_sequence(detections, tracker_cfg)
        metrics["n_tracks"] = len(tracks)
        metrics["track_lengths"] = [len(tr) for tr in tracks]

    with stage("write", timings):
        save_calibration(cams, out / "calibration.json")
        save_sequence(tracks_to_frames(tracks), out / "tracks.jsonl")
        dump_json(metrics, out / "metrics.json")
        dump_json({k: round(v, 6) for k, v in timings.items()}, out / "timings.json")
    return metrics
