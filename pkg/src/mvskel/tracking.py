"""Distance-based assembly of per-frame 3D skeletons into person tracks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .skeldata import Frame, LayoutMismatchError, Skeleton3D, SkeletonSequence

ACTIVE = "active"
CLOSED = "closed"


@dataclass(frozen=True)
class TrackerConfig:
    distance_threshold: float = 0.5
    min_track_length: int = 10
    max_persons: int = 2
    max_gap: int = 30

    def __post_init__(self):
        for name in ("distance_threshold", "min_track_length", "max_persons", "max_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrackerConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class Track:
    id: int
    entries: tuple[tuple[int, Skeleton3D], ...] = ()
    status: str = ACTIVE

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        times = self.times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"track {self.id}: time indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def times(self) -> list[int]:
        return [t for t, _ in self.entries]

    @property
    def start(self) -> int:
        return self.entries[0][0]

    @property
    def end(self) -> int:
        return self.entries[-1][0]

    @property
    def last(self) -> Skeleton3D:
        return self.entries[-1][1]

    def to_sequence(self) -> SkeletonSequence:
        frames = [Frame(t, (replace(sk, person_id=self.id),)) for t, sk in self.entries]
        return SkeletonSequence(tuple(frames), source=f"track{self.id}")


def skeleton_distance(a: Skeleton3D, b: Skeleton3D) -> float:
    """Mean joint distance over joints valid in both skeletons; inf if none are shared."""
    if a.layout != b.layout:
        raise LayoutMismatchError("skeletons use different layouts")
    both = a.valid & b.valid
    if not both.any():
        return float("inf")
    return float(np.mean(np.linalg.norm(a.coords[both] - b.coords[both], axis=1)))


def assign_frame(tracks: Sequence[Track], detections: Sequence[Skeleton3D], t: int,
                 cfg: TrackerConfig | None = None) -> list[Track]:
    """Add one frame of detections to the tracks.

    Active tracks idle for more than ``max_gap`` frames are closed first. The
    remaining (track, detection) pairs are matched greedily by increasing
    distance, ignoring pairs at or above the threshold; leftover detections open
    new tracks with consecutive ids.
    """
    cfg = cfg or TrackerConfig()
    if any(len(tr) and tr.end >= t for tr in tracks):
        raise ValueError(f"time index {t} is not after the existing track entries")

    tracks = [
        replace(tr, status=CLOSED) if tr.status == ACTIVE and len(tr) and t - tr.end > cfg.max_gap
        else tr
        for tr in tracks
    ]
    candidates = []
    for i, tr in enumerate(tracks):
        if tr.status != ACTIVE or not len(tr):
            continue
        for j, det in enumerate(detections):
            d = skeleton_distance(tr.last, det)
            if d < cfg.distance_threshold:
                candidates.append((d, tr.id, j, i))
    candidates.sort()

    used_tracks, used_dets, appended = set(), set(), {}
    for d, _, j, i in candidates:
        if i in used_tracks or j in used_dets:
            continue
        used_tracks.add(i)
        used_dets.add(j)
        appended[i] = j

    out = [
        replace(tr, entries=tr.entries + ((t, detections[appended[i]]),)) if i in appended else tr
        for i, tr in enumerate(tracks)
    ]
    next_id = max((tr.id for tr in tracks), default=-1) + 1
    for j, det in enumerate(detections):
        if j not in used_dets:
            out.append(Track(next_id, ((t, det),)))
            next_id += 1
    return out


def _overlap(a: Track, b: Track) -> bool:
    return not (a.end < b.start or b.end < a.start)


def finalize_tracks(tracks: Sequence[Track], cfg: TrackerConfig | None = None) -> list[Track]:
    """Drop short tracks, merge temporally disjoint ones, keep the longest ``max_persons``.

    Merging picks the non-overlapping pair with the smallest temporal gap
    (lowest ids on ties) and repeats until every pair overlaps. The merged track
    keeps the lower id.
    """
    cfg = cfg or TrackerConfig()
    alive = [tr for tr in tracks if len(tr) >= cfg.min_track_length]

    while True:
        best = None
        for a_i in range(len(alive)):
            for b_i in range(a_i + 1, len(alive)):
                a, b = alive[a_i], alive[b_i]
                if _overlap(a, b):
                    continue
                gap = b.start - a.end if a.end < b.start else a.start - b.end
                key = (gap, min(a.id, b.id), max(a.id, b.id))
                if best is None or key < best[0]:
                    best = (key, a_i, b_i)
        if best is None:
            break
        _, a_i, b_i = best
        a, b = alive[a_i], alive[b_i]
        entries = tuple(sorted(a.entries + b.entries, key=lambda e: e[0]))
        status = ACTIVE if ACTIVE in (a.status, b.status) else CLOSED
        merged = Track(min(a.id, b.id), entries, status)
        alive = [tr for k, tr in enumerate(alive) if k not in (a_i, b_i)] + [merged]

    alive.sort(key=lambda tr: (-len(tr), tr.id))
    return sorted(alive[:cfg.max_persons], key=lambda tr: tr.id)


def track_sequence(frames: Iterable[tuple[int, Sequence[Skeleton3D]]],
                   cfg: TrackerConfig | None = None) -> list[Track]:
    """Run ``assign_frame`` over (time_index, detections) pairs, then ``finalize_tracks``."""
    cfg = cfg or TrackerConfig()
    tracks: list[Track] = []
    for t, dets in frames:
        tracks = assign_frame(tracks, dets, t, cfg)
    return finalize_tracks(tracks, cfg)


def tracks_to_frames(tracks: Sequence[Track]) -> SkeletonSequence:
    """Interleave tracks into one multi-person sequence with person ids set."""
    by_time: dict[int, list[Skeleton3D]] = {}
    for tr in sorted(tracks, key=lambda tr: tr.id):
        for t, sk in tr.entries:
            by_time.setdefault(t, []).append(replace(sk, person_id=tr.id))
    return SkeletonSequence(tuple(Frame(t, by_time[t]) for t in sorted(by_time)), source="tracks")
