import numpy as np
import pytest

from mvskel.skeldata import LayoutMismatchError, Skeleton3D, builtin_layout
from mvskel.tracking import (CLOSED, Track, TrackerConfig, assign_frame, finalize_tracks,
                             skeleton_distance, track_sequence, tracks_to_frames)

LAYOUT = builtin_layout("wb25")
BASE = np.random.default_rng(0).normal(0.0, 0.3, (25, 3))


def sk(offset=(0.0, 0.0, 0.0), conf=None):
    return Skeleton3D(BASE + offset, np.ones(25) if conf is None else conf, LAYOUT)


def track(tid, start, end):
    return Track(tid, tuple((t, sk((0.01 * t, 0, 0))) for t in range(start, end + 1)))


def test_skeleton_distance_examples():
    assert skeleton_distance(sk(), sk()) == 0.0
    assert skeleton_distance(sk(), sk((1.0, 0, 0))) == pytest.approx(1.0)
    a = np.zeros(25)
    a[:10] = 1
    assert skeleton_distance(sk(conf=a), sk(conf=1 - a)) == float("inf")
    body = Skeleton3D(np.zeros((17, 3)), np.ones(17), builtin_layout("body"))
    with pytest.raises(LayoutMismatchError):
        skeleton_distance(sk(), body)


def test_assign_new_tracks():
    out = assign_frame([], [sk(), sk((3.0, 0, 0))], 0)
    assert [t.id for t in out] == [0, 1]
    assert all(len(t) == 1 for t in out)


def test_assign_close_and_far():
    tracks = assign_frame([], [sk()], 0)
    near = assign_frame(tracks, [sk((0.1, 0, 0))], 1)
    assert len(near) == 1 and len(near[0]) == 2
    far = assign_frame(tracks, [sk((0.9, 0, 0))], 1)
    assert len(far) == 2 and [len(t) for t in far] == [1, 1]


def test_assign_greedy_global_minimum():
    tracks = assign_frame([], [sk(), sk((0.6, 0, 0))], 0)
    # detection at 0.35 is 0.35 from track 0 and 0.25 from track 1: track 1 wins
    out = assign_frame(tracks, [sk((0.35, 0, 0))], 1)
    assert [len(t) for t in out] == [1, 2]


def test_assign_time_must_increase():
    tracks = assign_frame([], [sk()], 5)
    with pytest.raises(ValueError):
        assign_frame(tracks, [sk()], 5)


def test_idle_tracks_close():
    cfg = TrackerConfig(max_gap=3)
    tracks = assign_frame([], [sk()], 0, cfg)
    out = assign_frame(tracks, [sk()], 10, cfg)
    assert out[0].status == CLOSED and len(out[0]) == 1
    assert len(out) == 2


def test_finalize_removes_short():
    assert finalize_tracks([track(0, 0, 2)], TrackerConfig(min_track_length=10)) == []


def test_finalize_merges_disjoint():
    out = finalize_tracks([track(0, 0, 50), track(1, 60, 100)])
    assert len(out) == 1
    assert out[0].times == list(range(0, 51)) + list(range(60, 101))
    assert out[0].id == 0


def test_finalize_keeps_longest():
    tracks = [track(0, 0, 79), track(1, 0, 59), track(2, 0, 39)]
    out = finalize_tracks(tracks, TrackerConfig(max_persons=2))
    assert sorted(len(t) for t in out) == [60, 80]


def test_finalize_merge_order_smallest_gap_first():
    # track 2 fits after either 0 (gap 5) or 1 (gap 25); 0 and 1 overlap
    a, b, c = track(0, 0, 40), track(1, 0, 20), track(2, 45, 70)
    out = finalize_tracks([a, b, c], TrackerConfig(max_persons=3))
    lens = {t.id: len(t) for t in out}
    assert lens == {0: 67, 1: 21}


def _two_person_frames(scene, rng):
    frames = []
    for t in range(scene.true_world.shape[1]):
        dets = [Skeleton3D(scene.true_world[p, t], np.ones(25), LAYOUT, person_id=p) for p in range(2)]
        order = rng.permutation(2)
        frames.append((t, [dets[i] for i in order]))
    return frames


def test_two_person_identity_purity(two_person_scene, rng):
    s = two_person_scene
    frames = _two_person_frames(s, rng)
    tracks = track_sequence(frames)
    assert len(tracks) == 2
    for tr in tracks:
        assert len({det.person_id for _, det in tr.entries}) == 1
        assert len(tr) == s.true_world.shape[1]
    # every output skeleton is one of the inputs
    inputs = {id(d) for _, dets in frames for d in dets}
    assert all(id(det) in inputs for tr in tracks for _, det in tr.entries)


def test_tracking_deterministic(two_person_scene):
    frames = _two_person_frames(two_person_scene, np.random.default_rng(3))
    a, b = track_sequence(frames), track_sequence(frames)
    assert [t.id for t in a] == [t.id for t in b]
    assert all(x.times == y.times for x, y in zip(a, b))


def test_tracks_to_frames():
    seq = tracks_to_frames([track(3, 0, 4), track(1, 2, 6)])
    assert seq.time_indices == list(range(7))
    assert [s.person_id for s in seq[3].skeletons] == [1, 3]


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(distance_threshold=0.0)
    with pytest.raises(ValueError):
        Track(0, ((1, sk()), (1, sk())))
