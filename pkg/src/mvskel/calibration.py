"""Camera calibration from paired 2D/3D skeletons, and stream synchronization.

Intrinsics are fitted per camera by minimizing the reprojection error of the
camera-frame 3D skeletons against the 2D skeletons of the same camera.
Extrinsics are fitted by aligning the camera-frame 3D skeletons of all cameras
in a shared world frame, with one reference camera held fixed and a frame-level
outlier removal between rounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (Extrinsics, Intrinsics, _project_unchecked, cam_to_world,
                       look_at, rotation_matrix)
from .numopt import LsqOptions, LsqReport, solve_least_squares
from .skeldata import Frame, Skeleton2D, Skeleton3D, SkeletonSequence

log = logging.getLogger(__name__)

DEFAULT_INTRINSICS = Intrinsics(1050.0, 1050.0, 960.0, 540.0, (0.0, 0.0, 0.0, 0.0, 0.0))


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibFramePair:
    cam2d: Skeleton2D
    cam3d: Skeleton3D
    camera: str = ""
    time_index: int = 0

    def __post_init__(self):
        if self.cam2d.layout != self.cam3d.layout:
            raise ValueError("2D and 3D skeletons of a pair must share a layout")


@dataclass(frozen=True)
class RigConfig:
    """Circle placement of the cameras used to initialize extrinsics."""

    n_cameras: int = 3
    reference_index: int = 0
    circle_radius: float = 3.0
    camera_height: float = 1.5
    angles: tuple = (0.0, -np.pi / 4, np.pi / 4)
    target_height: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.n_cameras < 2:
            raise ValueError("a rig needs at least 2 cameras")
        if not 0 <= self.reference_index < self.n_cameras:
            raise ValueError("reference_index out of range")
        if len(self.angles) != self.n_cameras:
            raise ValueError(f"expected {self.n_cameras} angles, got {len(self.angles)}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RigConfig":
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return {"n_cameras": self.n_cameras, "reference_index": self.reference_index,
                "circle_radius": self.circle_radius, "camera_height": self.camera_height,
                "angles": list(self.angles), "target_height": self.target_height}


@dataclass(frozen=True)
class OutlierSchedule:
    drop_fraction: float = 0.30
    rounds: int = 2

    def __post_init__(self):
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError("drop_fraction must be in [0, 1)")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "OutlierSchedule":
        return cls(**(d or {}))


@dataclass
class ExtrinsicsReport(LsqReport):
    """Report of the last optimization round plus the outlier bookkeeping."""

    frames_per_round: list[int] = field(default_factory=list)
    kept_frames: list[int] = field(default_factory=list)
    round_reports: list[LsqReport] = field(default_factory=list)
    final_alignment_error: float = float("nan")


# ---------------------------------------------------------------------------
# intrinsics


def estimate_intrinsics(pairs: Sequence[CalibFramePair], init: Intrinsics = DEFAULT_INTRINSICS,
                        opts: LsqOptions | None = None) -> tuple[Intrinsics, LsqReport]:
    """Fit fx, fy, cx, cy and the five distortion coefficients of one camera.

    Each joint contributes its pixel residual scaled by min(conf_2d, conf_3d);
    joints with zero weight or behind the camera are ignored.
    """
    if not pairs:
        raise CalibrationError("no calibration pairs given")
    pts3, pts2, weights = [], [], []
    for pair in pairs:
        w = np.minimum(pair.cam2d.confidence, pair.cam3d.confidence)
        xyz, uv = pair.cam3d.coords, pair.cam2d.coords
        mask = w > 0
        if not (np.all(np.isfinite(xyz[mask])) and np.all(np.isfinite(uv[mask]))):
            raise CalibrationError("non-finite joint coordinates with positive confidence")
        mask &= np.nan_to_num(xyz[:, 2], nan=-1.0) > 0
        pts3.append(xyz[mask])
        pts2.append(uv[mask])
        weights.append(w[mask])
    P3 = np.concatenate(pts3)
    UV = np.concatenate(pts2)
    W = np.concatenate(weights)[:, None]
    if len(W) < 6:
        raise CalibrationError(f"need at least 6 weighted joints, got {len(W)}")

    def residual(v):
        return ((_project_unchecked(P3, v) - UV) * W).ravel()

    report = solve_least_squares(residual, init.to_vector(), opts)
    return Intrinsics.from_vector(report.final_params), report


# ---------------------------------------------------------------------------
# extrinsics


def initial_extrinsics(rig: RigConfig) -> list[Extrinsics]:
    """Cameras on a circle around the origin, all looking at (0, 0, target_height)."""
    if rig.circle_radius <= 0:
        raise CalibrationError("circle_radius must be positive")
    target = np.array([0.0, 0.0, rig.target_height])
    out = []
    for theta in rig.angles:
        pos = np.array([rig.circle_radius * np.cos(theta),
                        rig.circle_radius * np.sin(theta), rig.camera_height])
        out.append(look_at(pos, target))
    return out


def _pair_distance(a: Skeleton3D, b: Skeleton3D) -> float | None:
    both = a.valid & b.valid
    if not both.any():
        return None
    return float(np.mean(np.linalg.norm(a.coords[both] - b.coords[both], axis=1)))


def alignment_error(frame: Sequence[Skeleton3D | None], reference: int = 0) -> float:
    """Mean over non-reference cameras of the mean joint distance to the reference skeleton.

    ``frame`` holds one world-frame skeleton per camera (``None`` for a missing view).
    Cameras without jointly valid joints are skipped.
    """
    if len(frame) < 2:
        raise CalibrationError("alignment needs at least 2 cameras")
    ref = frame[reference]
    if ref is None:
        raise CalibrationError("reference camera has no skeleton")
    dists = []
    for c, sk in enumerate(frame):
        if c == reference or sk is None:
            continue
        d = _pair_distance(ref, sk)
        if d is not None:
            dists.append(d)
    if not dists:
        raise CalibrationError("no jointly valid joints between reference and other cameras")
    return float(np.mean(dists))


def _stack_single_person(seq: SkeletonSequence) -> tuple[np.ndarray, np.ndarray]:
    coords, valid = [], []
    for frame in seq:
        if len(frame.skeletons) != 1:
            raise CalibrationError(
                f"stream {seq.source!r} frame {frame.time_index}: expected exactly one "
                f"person, got {len(frame.skeletons)}"
            )
        sk = frame.skeletons[0]
        coords.append(np.where(sk.valid[:, None], sk.coords, 0.0))
        valid.append(sk.valid)
    return np.array(coords).reshape(len(seq), -1, 3), np.array(valid).reshape(len(seq), -1)


def _per_frame_errors(world: list[np.ndarray], valid: list[np.ndarray], reference: int) -> np.ndarray:
    """Vectorized ``alignment_error`` for every frame; inf where nothing overlaps."""
    n = world[0].shape[0]
    sums = np.zeros(n)
    counts = np.zeros(n)
    for c in range(len(world)):
        if c == reference:
            continue
        both = valid[c] & valid[reference]
        d = np.linalg.norm(world[c] - world[reference], axis=2)
        k = both.sum(axis=1)
        has = k > 0
        sums[has] += np.where(both, d, 0.0).sum(axis=1)[has] / k[has]
        counts += has
    out = np.full(n, np.inf)
    ok = counts > 0
    out[ok] = sums[ok] / counts[ok]
    return out


def estimate_extrinsics(sequences: Sequence[SkeletonSequence], init: Sequence[Extrinsics],
                        schedule: OutlierSchedule | None = None, opts: LsqOptions | None = None,
                        reference_index: int = 0) -> tuple[list[Extrinsics], ExtrinsicsReport]:
    """Align camera-frame skeletons of all cameras in the world frame.

    The reference camera keeps its initial extrinsics. All other cameras are
    optimized jointly (6 parameters each). Residuals are the 3D offsets between
    each camera's world-frame joints and the reference camera's joints, scaled
    by 1/sqrt(n_joints) so every (frame, camera) term weighs like a mean. After
    every round but the last, floor(drop_fraction * N) frames with the highest
    alignment error are removed.
    """
    schedule = schedule or OutlierSchedule()
    n_cams = len(sequences)
    if n_cams < 2:
        raise CalibrationError("extrinsics estimation needs at least 2 cameras")
    if len(init) != n_cams:
        raise CalibrationError(f"{len(init)} initial extrinsics for {n_cams} cameras")
    if not 0 <= reference_index < n_cams:
        raise CalibrationError("reference_index out of range")
    lengths = {len(s) for s in sequences}
    if len(lengths) != 1:
        raise CalibrationError(f"sequences differ in length: {sorted(len(s) for s in sequences)}")
    n_frames = lengths.pop()
    if n_frames == 0:
        raise CalibrationError("sequences are empty")

    stacked = [_stack_single_person(s) for s in sequences]
    X = [s[0] for s in stacked]
    V = [s[1] for s in stacked]
    side = [c for c in range(n_cams) if c != reference_index]
    ref_ext = init[reference_index]
    ref_world = cam_to_world(X[reference_index], ref_ext)

    def unpack(params) -> list[Extrinsics]:
        exts = list(init)
        for i, c in enumerate(side):
            exts[c] = Extrinsics.from_vector(params[6 * i:6 * i + 6])
        exts[reference_index] = ref_ext
        return exts

    weights = []
    for c in side:
        both = V[c] & V[reference_index]
        k = both.sum(axis=1, keepdims=True)
        weights.append(np.where(both, 1.0 / np.sqrt(np.maximum(k, 1)), 0.0))

    def make_residual(frames: np.ndarray):
        ref_w = ref_world[frames]
        parts_x = [X[c][frames] for c in side]
        parts_w = [w[frames][..., None] for w in weights]

        def residual(params):
            out = []
            for i in range(len(side)):
                R = rotation_matrix(params[6 * i:6 * i + 3])
                t = params[6 * i + 3:6 * i + 6]
                world = (parts_x[i] - t) @ R
                out.append(((world - ref_w) * parts_w[i]).ravel())
            return np.concatenate(out)
        return residual

    params = np.concatenate([init[c].to_vector() for c in side])
    active = np.arange(n_frames)
    frames_per_round, round_reports = [], []
    report = None
    for rnd in range(schedule.rounds):
        if active.size == 0:
            raise CalibrationError("all frames were removed as outliers")
        frames_per_round.append(int(active.size))
        report = solve_least_squares(make_residual(active), params, opts)
        params = report.final_params
        round_reports.append(report)
        log.debug("extrinsics round %d: %d frames, cost %.6g", rnd + 1, active.size,
                  report.final_cost)
        if rnd < schedule.rounds - 1:
            errs = _per_frame_errors(
                [cam_to_world(X[c][active], e) for c, e in enumerate(unpack(params))],
                [v[active] for v in V], reference_index)
            n_drop = int(np.floor(schedule.drop_fraction * active.size))
            if n_drop:
                # highest error first; ties resolved towards later frames
                order = np.lexsort((-active, -errs))
                active = np.sort(active[order[n_drop:]])

    exts = unpack(params)
    final_err = _per_frame_errors(
        [cam_to_world(X[c][active], e) for c, e in enumerate(exts)],
        [v[active] for v in V], reference_index)
    finite = final_err[np.isfinite(final_err)]
    out = ExtrinsicsReport(
        report.final_params, report.final_cost, round_reports[0].initial_cost,
        sum(r.iterations for r in round_reports), report.converged, report.termination_reason,
        [c for r in round_reports for c in r.cost_history], report.n_residuals,
        frames_per_round=frames_per_round, kept_frames=active.tolist(),
        round_reports=round_reports,
        final_alignment_error=float(finite.mean()) if finite.size else float("nan"),
    )
    return exts, out


# ---------------------------------------------------------------------------
# sequence selection and synchronization


def select_calibration_sequences(dataset: Sequence[Sequence[SkeletonSequence]]) -> list:
    """Keep groups with exactly one person in every frame and equal per-camera lengths."""
    kept = []
    for group in dataset:
        if not group:
            continue
        lengths = {len(seq) for seq in group}
        if len(lengths) != 1 or 0 in lengths:
            continue
        if all(len(f.skeletons) == 1 for seq in group for f in seq):
            kept.append(group)
    return kept


def sync_index_map(length: int, target: int) -> list[int]:
    """Source frame for each of ``target`` output frames, round-half-up."""
    if length < 1 or target < 1:
        raise ValueError("length and target must be >= 1")
    if target == 1:
        return [0]
    num, den = length - 1, target - 1
    # floor(j * num / den + 1/2) in exact integer arithmetic
    return [(2 * j * num + den) // (2 * den) for j in range(target)]


def synchronize_streams(streams: Sequence[SkeletonSequence]) -> list[SkeletonSequence]:
    """Resample all streams to the rounded mean length by skipping or duplicating frames."""
    if not streams:
        raise ValueError("no streams given")
    lengths = [len(s) for s in streams]
    if min(lengths) == 0:
        raise ValueError("cannot synchronize an empty stream")
    n = len(lengths)
    target = (2 * sum(lengths) + n) // (2 * n)
    out = []
    for seq in streams:
        idx = sync_index_map(len(seq), target)
        frames = tuple(Frame(j, seq.frames[i].skeletons) for j, i in enumerate(idx))
        out.append(SkeletonSequence(frames, source=seq.source))
    return out
