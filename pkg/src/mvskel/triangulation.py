"""Confidence-weighted DLT triangulation and cross-view person matching."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CameraParams, _project_unchecked, pixel_to_normalized, world_to_cam
from .numopt import LsqOptions, solve_least_squares
from .skeldata import LayoutMismatchError, Skeleton2D, Skeleton3D

DEFAULT_MIN_CONF = 0.1


@dataclass(frozen=True)
class Observation:
    camera: CameraParams
    pixel: tuple
    confidence: float

    def __post_init__(self):
        px = tuple(float(v) for v in self.pixel)
        object.__setattr__(self, "pixel", px)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.confidence > 0 and not all(np.isfinite(px)):
            raise ValueError("observation with positive confidence needs a finite pixel")


@dataclass(frozen=True, eq=False)
class TriangulatedJoint:
    point: np.ndarray
    confidence: float
    residual_px: float

    @property
    def valid(self) -> bool:
        return self.confidence > 0


INVALID_JOINT = TriangulatedJoint(np.full(3, np.nan), 0.0, 0.0)


DLT_REWEIGHT_PASSES = 2


def _dlt(P: np.ndarray, xy: np.ndarray, w: np.ndarray, focal: np.ndarray,
         passes: int = DLT_REWEIGHT_PASSES) -> np.ndarray:
    """Batched homogeneous DLT.

    P: (V, 3, 4) normalized projection matrices; xy: (B, V, 2) undistorted normalized
    points; w: (B, V) row weights (0 drops a view); focal: (V, 2) focal lengths.
    Rows are scaled by focal length so the algebraic error is in pixel units, then
    re-solved ``passes`` times with rows divided by the previous solution's depth,
    which brings the algebraic error close to the reprojection error.
    Returns homogeneous (B, 4).
    """
    rows_x = xy[..., 0:1] * P[None, :, 2, :] - P[None, :, 0, :]
    rows_y = xy[..., 1:2] * P[None, :, 2, :] - P[None, :, 1, :]
    wx = w * focal[None, :, 0]
    wy = w * focal[None, :, 1]
    scale = np.ones_like(w)
    for i in range(passes + 1):
        A = np.concatenate([rows_x * (wx * scale)[..., None], rows_y * (wy * scale)[..., None]],
                           axis=1)
        h = np.linalg.svd(A)[2][:, -1, :]
        if i == passes:
            break
        depth = np.einsum("vk,bk->bv", P[:, 2, :], h)
        ok = np.abs(h[:, 3:4]) > 1e-12
        depth = np.where(ok, depth / np.where(ok, h[:, 3:4], 1.0), 1.0)
        scale = np.where(np.abs(depth) > 1e-9, 1.0 / np.maximum(np.abs(depth), 1e-9), 1.0)
        # keep the overall magnitude stable across passes
        scale = scale / np.max(scale, axis=1, keepdims=True)
    return h


def _reprojection(points: np.ndarray, cams: Sequence[CameraParams], uv: np.ndarray,
                  use: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-point RMSE over used views and a front-of-camera flag.

    points: (B, 3); uv: (B, V, 2); use: (B, V) bool.
    """
    sq = np.zeros(points.shape[0])
    in_front = np.ones(points.shape[0], dtype=bool)
    for v, cam in enumerate(cams):
        pc = world_to_cam(points, cam.extrinsics)
        front = pc[:, 2] > 1e-9
        in_front &= front | ~use[:, v]
        safe = np.where(front[:, None], pc, [0.0, 0.0, 1.0])
        px = _project_unchecked(safe, cam.intrinsics.to_vector())
        err = np.where(use[:, v], np.sum((px - np.nan_to_num(uv[:, v])) ** 2, axis=1), 0.0)
        sq += err
    n = np.maximum(use.sum(axis=1), 1)
    return np.sqrt(sq / n), in_front


def _triangulate_batch(uv: np.ndarray, conf: np.ndarray, cams: Sequence[CameraParams],
                       min_conf: float):
    """Triangulate B joints seen by V cameras. Returns (points, confidence, residual)."""
    B, V = conf.shape
    use = (conf >= min_conf) & (conf > 0) & np.all(np.isfinite(uv), axis=2)
    points = np.full((B, 3), np.nan)
    out_conf = np.zeros(B)
    residual = np.zeros(B)
    enough = use.sum(axis=1) >= 2
    if not enough.any():
        return points, out_conf, residual
    xy = np.zeros((B, V, 2))
    for v, cam in enumerate(cams):
        xy[:, v] = pixel_to_normalized(np.nan_to_num(uv[:, v]), cam.intrinsics)
    P = np.stack([cam.projection_matrix() for cam in cams])
    focal = np.array([[cam.intrinsics.fx, cam.intrinsics.fy] for cam in cams])
    w = np.where(use, conf, 0.0)
    h = _dlt(P, xy[enough], w[enough], focal)
    ok = np.abs(h[:, 3]) > 1e-12
    pts = np.full((h.shape[0], 3), np.nan)
    pts[ok] = h[ok, :3] / h[ok, 3:4]
    res, front = _reprojection(np.nan_to_num(pts), cams, uv[enough], use[enough])
    ok &= front
    idx = np.flatnonzero(enough)[ok]
    points[idx] = pts[ok]
    residual[idx] = res[ok]
    sums = np.where(use, conf, 0.0).sum(axis=1)
    out_conf[idx] = sums[idx] / use.sum(axis=1)[idx]
    return points, out_conf, residual


def _refine_point(point, obs: list[Observation], opts: LsqOptions | None) -> np.ndarray:
    uv = np.array([o.pixel for o in obs])
    w = np.array([o.confidence for o in obs])[:, None]

    def residual(p):
        out = []
        for o in obs:
            pc = world_to_cam(p, o.camera.extrinsics)
            pc = np.where(pc[2] > 1e-9, pc, [pc[0], pc[1], 1e-9])
            out.append(_project_unchecked(pc, o.camera.intrinsics.to_vector()))
        return ((np.array(out) - uv) * w).ravel()

    return solve_least_squares(residual, point, opts).final_params


def triangulate_point(obs: Sequence[Observation], min_conf: float = DEFAULT_MIN_CONF,
                      refine: bool = False, refine_opts: LsqOptions | None = None) -> TriangulatedJoint:
    """Triangulate one joint from its observations.

    Observations below ``min_conf`` are ignored; fewer than two remaining views
    give an invalid joint (confidence 0). Each view's DLT rows are scaled by its
    confidence. With ``refine`` the DLT point is polished by minimizing the
    confidence-weighted reprojection error.
    """
    used = [o for o in obs if o.confidence >= min_conf and o.confidence > 0]
    if len(used) < 2:
        return INVALID_JOINT
    # canonical order makes the result independent of the input order
    used.sort(key=lambda o: (o.camera.name, o.pixel, o.confidence))
    cams = [o.camera for o in used]
    uv = np.array([[o.pixel for o in used]])
    conf = np.array([[o.confidence for o in used]])
    pts, c, res = _triangulate_batch(uv, conf, cams, min_conf)
    if c[0] == 0:
        return INVALID_JOINT
    point = pts[0]
    if refine:
        point = _refine_point(point, used, refine_opts)
        res, front = _reprojection(point[None], cams, uv, np.ones((1, len(used)), dtype=bool))
        if not front[0]:
            return INVALID_JOINT
    point = np.array(point)
    point.setflags(write=False)
    return TriangulatedJoint(point, float(c[0]), float(res[0]))


def _check_views(views: Sequence[Skeleton2D | None], cams: Sequence[CameraParams]):
    if len(views) != len(cams):
        raise ValueError(f"{len(views)} views for {len(cams)} cameras")
    layouts = {v.layout for v in views if v is not None}
    if len(layouts) > 1:
        raise LayoutMismatchError("views use different layouts")
    if not layouts:
        raise ValueError("no views given")
    return layouts.pop()


def triangulate_skeleton(views: Sequence[Skeleton2D | None], cams: Sequence[CameraParams],
                         min_conf: float = DEFAULT_MIN_CONF, person_id: int | None = None,
                         return_residuals: bool = False):
    """Triangulate every joint of one person seen in several cameras.

    ``views[i]`` is the person's 2D skeleton in ``cams[i]`` or ``None``.
    Returns a world-frame Skeleton3D (and per-joint residuals if requested).
    """
    layout = _check_views(views, cams)
    J = layout.count
    V = len(cams)
    uv = np.full((J, V, 2), np.nan)
    conf = np.zeros((J, V))
    for v, sk in enumerate(views):
        if sk is not None:
            uv[:, v] = sk.coords
            conf[:, v] = sk.confidence
    pts, c, res = _triangulate_batch(uv, conf, cams, min_conf)
    sk3 = Skeleton3D(pts, c, layout, frame="world", person_id=person_id)
    return (sk3, res) if return_residuals else sk3


def reprojection_rmse(sk: Skeleton3D, views: Sequence[Skeleton2D | None],
                      cams: Sequence[CameraParams]) -> float:
    """Pixel RMSE over all (joint, view) pairs valid in both the 3D and 2D skeleton."""
    _check_views(views, cams)
    sq, n = 0.0, 0
    for view, cam in zip(views, cams):
        if view is None:
            continue
        if view.layout != sk.layout:
            raise LayoutMismatchError("3D skeleton and view use different layouts")
        use = sk.valid & view.valid
        if not use.any():
            continue
        px = cam.project(sk.coords[use])
        sq += float(np.sum((px - view.coords[use]) ** 2))
        n += int(use.sum())
    if n == 0:
        raise ValueError("no valid (joint, view) pairs")
    return float(np.sqrt(sq / n))


def _slot_choices(n: int) -> list[tuple]:
    """Ways to map n detections of one view into person slots 0/1 (None = unmatched)."""
    opts = []
    for combo in itertools.product((None, 0, 1), repeat=n):
        slots = [s for s in combo if s is not None]
        if len(slots) == len(set(slots)):
            opts.append(combo)
    return opts


def match_persons(views: Sequence[Sequence[Skeleton2D]], cams: Sequence[CameraParams],
                  min_conf: float = DEFAULT_MIN_CONF, unmatched_penalty: float = 50.0) -> list[tuple]:
    """Group per-view detections that belong to the same person.

    Every cross-view assignment of at most two persons is evaluated. A group
    needs at least two views and costs the mean joint reprojection residual of
    its triangulation; each detection left out of all groups costs
    ``unmatched_penalty`` pixels. The cheapest assignment wins.

    Returns one tuple per person with a detection index (or None) per camera.
    """
    if len(views) != len(cams):
        raise ValueError(f"{len(views)} views for {len(cams)} cameras")
    for i, dets in enumerate(views):
        if len(dets) > 2:
            raise ValueError(f"camera {i} has {len(dets)} persons; at most 2 are supported")

    cache: dict[tuple, float] = {}

    def group_cost(key: tuple) -> float:
        if key not in cache:
            vs = [None if k is None else views[v][k] for v, k in enumerate(key)]
            sk, res = triangulate_skeleton(vs, cams, min_conf, return_residuals=True)
            cache[key] = float(np.mean(res[sk.valid])) if sk.valid.any() else np.inf
        return cache[key]

    best, best_cost = [], np.inf
    for choice in itertools.product(*[_slot_choices(len(d)) for d in views]):
        groups = [[None] * len(views), [None] * len(views)]
        for v, combo in enumerate(choice):
            for det, slot in enumerate(combo):
                if slot is not None:
                    groups[slot][v] = det
        cost, kept, matched = 0.0, [], 0
        for g in groups:
            n = sum(k is not None for k in g)
            if n >= 2:
                cost += group_cost(tuple(g))
                kept.append(tuple(g))
                matched += n
        cost += unmatched_penalty * (sum(len(d) for d in views) - matched)
        if cost < best_cost:
            best_cost, best = cost, kept
    best.sort(key=lambda g: tuple(len(views) if k is None else k for k in g))
    return best
