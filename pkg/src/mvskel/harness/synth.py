"""Synthetic multi-camera scenes with known ground truth.

A scene places one or two animated stick figures in front of a camera rig,
projects them through the true cameras (with optional pixel noise and joint
dropout) and emits the paired camera-frame 3D skeletons that a depth camera
would provide. Everything derives from ``SceneConfig.seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..calibration import RigConfig, initial_extrinsics
from ..geometry import (CameraParams, Extrinsics, Intrinsics, _project_unchecked, look_at,
                        rotation_matrix, save_calibration, world_to_cam)
from ..skeldata import (Frame, JointLayout, Skeleton2D, Skeleton3D, SkeletonSequence,
                        builtin_layout, save_sequence)
from ..tracking import Track, tracks_to_frames

MOTION_MODELS = ("static", "linear-walk", "circular-walk")

# left-side and central joint positions of a 1.7 m figure facing +y (x = its left)
_REST = {
    "nose": (0.0, 0.10, 1.60), "left_eye": (0.03, 0.08, 1.65), "left_ear": (0.08, 0.0, 1.62),
    "left_shoulder": (0.18, 0.0, 1.42), "left_elbow": (0.22, 0.02, 1.15),
    "left_wrist": (0.24, 0.08, 0.90), "left_hand": (0.25, 0.10, 0.83),
    "left_hand_tip": (0.26, 0.12, 0.73), "left_thumb": (0.21, 0.15, 0.80),
    "left_hip": (0.10, 0.0, 0.92), "left_knee": (0.11, 0.03, 0.50),
    "left_ankle": (0.12, 0.0, 0.08), "left_foot": (0.12, 0.10, 0.03),
    "left_big_toe": (0.11, 0.16, 0.02), "left_small_toe": (0.15, 0.13, 0.02),
    "left_heel": (0.12, -0.05, 0.03),
    "spine_base": (0.0, 0.0, 0.95), "spine_mid": (0.0, 0.0, 1.20),
    "spine_shoulder": (0.0, 0.0, 1.42), "neck": (0.0, 0.0, 1.50), "head": (0.0, 0.02, 1.68),
    "hip_middle": (0.0, 0.0, 0.92), "spine": (0.0, 0.0, 1.20), "shoulder_middle": (0.0, 0.0, 1.42),
}
_LIMB_ROOTS = ("left_shoulder", "right_shoulder", "left_hip", "right_hip")


@dataclass(frozen=True)
class SceneConfig:
    n_cameras: int = 3
    rig: RigConfig = field(default_factory=RigConfig)
    n_frames: int = 200
    n_persons: int = 1
    motion_model: str = "circular-walk"
    joint_noise_2d: float = 0.0
    joint_noise_3d: float = 0.0
    confidence_dropout: float = 0.0
    seed: int = 0
    camera_seed: int | None = None
    layout: str = "wb25"
    extrinsics_jitter: float = 0.1
    image_size: tuple = (1920, 1080)
    shuffle_persons: bool = True

    def __post_init__(self):
        if isinstance(self.rig, dict):
            object.__setattr__(self, "rig", RigConfig.from_dict(self.rig))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if self.n_cameras != self.rig.n_cameras:
            raise ValueError("n_cameras must equal rig.n_cameras")
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")
        if self.n_persons not in (1, 2):
            raise ValueError("n_persons must be 1 or 2")
        if self.motion_model not in MOTION_MODELS:
            raise ValueError(f"motion_model must be one of {MOTION_MODELS}")
        if not 0.0 <= self.confidence_dropout <= 1.0:
            raise ValueError("confidence_dropout must lie in [0, 1]")
        if self.joint_noise_2d < 0 or self.joint_noise_3d < 0:
            raise ValueError("noise levels must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SceneConfig":
        d = dict(d or {})
        if "rig" in d:
            d["rig"] = RigConfig.from_dict(d["rig"])
        elif "n_cameras" in d:
            n = d["n_cameras"]
            d["rig"] = RigConfig(n_cameras=n, angles=tuple(np.linspace(-np.pi / 4, np.pi / 4, n)))
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rig"] = self.rig.to_dict()
        d["image_size"] = list(self.image_size)
        return d


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: SceneConfig
    true_cameras: list[CameraParams]
    true_tracks: list[Track]
    views: list[SkeletonSequence]
    paired_camframe_3d: list[SkeletonSequence]
    true_world: np.ndarray    # (n_persons, T, J, 3)


def rest_pose(layout: JointLayout) -> np.ndarray:
    """Neutral standing pose for any layout; unknown joints hang off their parent."""
    pos = np.zeros((layout.count, 3))
    done = np.zeros(layout.count, dtype=bool)

    def place(j):
        if done[j]:
            return pos[j]
        name = layout.joint_names[j]
        mirrored = name.replace("right_", "left_", 1) if name.startswith("right_") else name
        if mirrored in _REST:
            p = np.array(_REST[mirrored], dtype=float)
            if name.startswith("right_"):
                p[0] = -p[0]
        else:
            parent = layout.parents[j]
            base = place(parent) if parent >= 0 else np.array([0.0, 0.0, 1.0])
            d = np.random.default_rng(j + 7919).normal(size=3)
            d[2] = -abs(d[2])
            p = base + 0.03 * d / np.linalg.norm(d)
        pos[j] = p
        done[j] = True
        return p

    for j in range(layout.count):
        place(j)
    return pos


def _limb_structure(layout: JointLayout):
    """Nearest limb-root ancestor (or self) per joint and its swing sign."""
    roots = {layout.index(n): n for n in _LIMB_ROOTS if n in layout.joint_names}
    anchor = np.full(layout.count, -1)
    sign = np.zeros(layout.count)
    for j in range(layout.count):
        k = j
        while k >= 0 and k not in roots:
            k = layout.parents[k]
        if k >= 0:
            anchor[j] = k
            name = roots[k]
            # arms and legs on the same side swing in opposite phase
            s = 1.0 if name.startswith("left") else -1.0
            sign[j] = s if "shoulder" in name else -s
    return anchor, sign


def animate(layout: JointLayout, n_frames: int, model: str, person: int,
            rng: np.random.Generator) -> np.ndarray:
    """World-frame joint trajectories (T, J, 3) of one walking figure."""
    rest = rest_pose(layout)
    anchor, sign = _limb_structure(layout)
    t = np.arange(n_frames)
    phase0 = rng.uniform(0, 2 * np.pi)
    swing = 0.35 * np.sin(2 * np.pi * t / 30.0 + phase0)

    if model == "static":
        center = np.array([[0.6, 0.0] if person else [-0.6, 0.0]] * n_frames)
        center += 0.02 * np.stack([np.sin(t / 10.0), np.cos(t / 13.0)], axis=1)
        heading = np.full(n_frames, rng.uniform(-0.5, 0.5))
    elif model == "linear-walk":
        s = np.linspace(-1.0, 1.0, n_frames)
        lateral = 0.75 if person else -0.75
        center = np.stack([s * 0.8, np.full(n_frames, lateral)], axis=1)
        heading = np.full(n_frames, -np.pi / 2)
    else:
        ang = 2 * np.pi * t / max(n_frames, 1) + (np.pi if person else 0.0)
        radius = 1.0
        center = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        heading = ang + np.pi / 2  # facing along the tangent

    out = np.empty((n_frames, layout.count, 3))
    for f in range(n_frames):
        pose = rest.copy()
        moving = anchor >= 0
        if moving.any():
            a = swing[f] * sign[moving]
            rel = pose[moving] - rest[anchor[moving]]
            c, s_ = np.cos(a), np.sin(a)
            # pendulum about the lateral (x) axis through each limb root
            y = c * rel[:, 1] - s_ * rel[:, 2]
            z = s_ * rel[:, 1] + c * rel[:, 2]
            pose[moving] = rest[anchor[moving]] + np.stack([rel[:, 0], y, z], axis=1)
        pose[:, 2] += 0.02 * np.sin(4 * np.pi * f / 30.0)
        R = rotation_matrix([0.0, 0.0, heading[f] - np.pi / 2])
        out[f] = pose @ R.T + np.array([center[f, 0], center[f, 1], 0.0])
    return out


def make_cameras(cfg: SceneConfig) -> list[CameraParams]:
    """True cameras: reference camera exactly at its circle placement, others jittered."""
    seed = cfg.seed if cfg.camera_seed is None else cfg.camera_seed
    rng = np.random.default_rng([seed, 0])
    rig = cfg.rig
    base = initial_extrinsics(rig)
    cams = []
    for i in range(cfg.n_cameras):
        intr = Intrinsics(
            1000.0 + rng.uniform(0.0, 100.0), 1000.0 + rng.uniform(0.0, 100.0),
            cfg.image_size[0] / 2 + rng.uniform(-15.0, 15.0),
            cfg.image_size[1] / 2 + rng.uniform(-15.0, 15.0),
            (rng.uniform(-0.05, 0.05), rng.uniform(-0.02, 0.02),
             rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), 0.0),
        )
        jitter = rng.uniform(-1.0, 1.0, size=6) * cfg.extrinsics_jitter
        if i == rig.reference_index:
            ext = base[i]
        else:
            pos = base[i].center + jitter[:3]
            target = np.array([0.0, 0.0, rig.target_height]) + jitter[3:]
            ext = look_at(pos, target)
        cams.append(CameraParams(f"cam{i}", intr, ext))
    return cams


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    layout = builtin_layout(cfg.layout)
    cams = make_cameras(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    world = np.stack([animate(layout, cfg.n_frames, cfg.motion_model, p, rng)
                      for p in range(cfg.n_persons)])

    tracks = []
    for p in range(cfg.n_persons):
        entries = [(t, Skeleton3D(world[p, t], np.ones(layout.count), layout, "world", p))
                   for t in range(cfg.n_frames)]
        tracks.append(Track(p, tuple(entries)))

    W, H = cfg.image_size
    views, paired = [], []
    for cam in cams:
        frames2d, frames3d = [], []
        for t in range(cfg.n_frames):
            order = list(range(cfg.n_persons))
            if cfg.shuffle_persons:
                rng.shuffle(order)
            sk2, sk3 = [], []
            for p in order:
                pc = world_to_cam(world[p, t], cam.extrinsics)
                front = pc[:, 2] > 0.05
                safe = np.where(front[:, None], pc, [0.0, 0.0, 1.0])
                uv = _project_unchecked(safe, cam.intrinsics.to_vector())
                uv = uv + rng.normal(0.0, 1.0, uv.shape) * cfg.joint_noise_2d
                keep = rng.random(layout.count) >= cfg.confidence_dropout
                inside = front & (uv[:, 0] >= 0) & (uv[:, 0] < W) & (uv[:, 1] >= 0) & (uv[:, 1] < H)
                conf2 = (keep & inside).astype(float)
                uv = np.where(conf2[:, None] > 0, uv, np.nan)
                sk2.append(Skeleton2D(uv, conf2, layout, person_id=None))
                pc3 = pc + rng.normal(0.0, 1.0, pc.shape) * cfg.joint_noise_3d
                sk3.append(Skeleton3D(pc3, np.ones(layout.count), layout, "camera"))
            frames2d.append(Frame(t, sk2))
            frames3d.append(Frame(t, sk3))
        views.append(SkeletonSequence(tuple(frames2d), source=f"{cam.name}_2d"))
        paired.append(SkeletonSequence(tuple(frames3d), source=f"{cam.name}_3d"))
    return SyntheticScene(cfg, cams, tracks, views, paired, world)


def save_scene(scene: SyntheticScene, out_dir) -> dict:
    """Write the scene as skeleton files plus the true calibration. Returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"cameras": []}
    for cam, v2, v3 in zip(scene.true_cameras, scene.views, scene.paired_camframe_3d):
        p2 = out / f"{cam.name}_2d.jsonl"
        p3 = out / f"{cam.name}_3d.jsonl"
        save_sequence(v2, p2)
        save_sequence(v3, p3)
        files["cameras"].append({"name": cam.name, "skeleton2d": str(p2.resolve()),
                                 "skeleton3d": str(p3.resolve())})
    save_calibration(scene.true_cameras, out / "calibration_true.json")
    save_sequence(tracks_to_frames(scene.true_tracks), out / "tracks_true.jsonl")
    with open(out / "scene_config.json", "w") as fh:
        json.dump(scene.config.to_dict(), fh, indent=2, sort_keys=True)
    return files


def perturb_intrinsics(intr: Intrinsics, fraction: float, rng: np.random.Generator) -> Intrinsics:
    """Scale fx, fy, cx, cy by 1 +- fraction (random sign) and zero the distortion."""
    signs = rng.choice([-1.0, 1.0], size=4)
    v = np.array([intr.fx, intr.fy, intr.cx, intr.cy]) * (1.0 + fraction * signs)
    return Intrinsics(*v, dist=(0.0,) * 5)


def perturb_extrinsics(ext: Extrinsics, degrees: float, meters: float,
                       rng: np.random.Generator) -> Extrinsics:
    """Rotate the camera by ``degrees`` about a random axis and shift its center by ``meters``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    R = rotation_matrix(axis * np.deg2rad(degrees)) @ ext.R
    center = ext.center + meters * direction
    return Extrinsics.from_matrix(R, -R @ center)
