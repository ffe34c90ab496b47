import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvskel.features import (LabeledEmbedding, augment, baseline_embedding, bone_modality,
                             evaluate, fuse_predictions, knn_classify, load_gallery,
                             modality_tensor, motion_modality, nn_classify, prototype_classify,
                             sample_uniform, sample_window, save_gallery, uniform_indices,
                             window_start, z_rotation)
from mvskel.skeldata import JointLayout, builtin_layout

LAYOUT = builtin_layout("wb25")
CHAIN = JointLayout("chain", ("root", "child"), (-1, 0))


def _seq(rng, T=20):
    return rng.normal(0.0, 0.5, (T, 25, 3))


def _gallery(points, labels):
    return [LabeledEmbedding(p, l) for p, l in zip(points, labels)]


# --- modalities ------------------------------------------------------------

def test_bone_examples(rng):
    x = np.array([[[0.0, 0.0, 0.0], [0.0, 0.0, 0.3]]])
    b = bone_modality(x, CHAIN)
    np.testing.assert_array_equal(b[0, 0], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(b[0, 1], [0.0, 0.0, 0.3])
    s = _seq(rng)
    np.testing.assert_allclose(bone_modality(s + [1.0, -2.0, 0.5], LAYOUT), bone_modality(s, LAYOUT),
                               atol=1e-12)


def test_motion_examples():
    const = np.ones((5, 25, 3))
    assert not motion_modality(const).any()
    v = np.array([0.1, 0.0, -0.2])
    lin = np.arange(6)[:, None, None] * v + np.zeros((6, 25, 3))
    m = motion_modality(lin)
    np.testing.assert_allclose(m[:-1], np.broadcast_to(v, (5, 25, 3)), atol=1e-12)
    assert not m[-1].any()
    assert motion_modality(np.ones((1, 25, 3))).shape == (1, 25, 3)
    assert not motion_modality(np.ones((1, 25, 3))).any()
    with pytest.raises(ValueError):
        motion_modality(np.zeros((0, 25, 3)))


def test_modality_tensor_channels(rng):
    s = _seq(rng, 12)
    t = modality_tensor(s, LAYOUT)
    assert t.data.shape == (12, 25, 12)
    np.testing.assert_array_equal(t.channels("J"), s)
    np.testing.assert_array_equal(t.channels("BM"), motion_modality(bone_modality(s, LAYOUT)))
    assert modality_tensor(s, LAYOUT, ("J", "B")).data.shape == (12, 25, 6)
    with pytest.raises(ValueError):
        modality_tensor(s, LAYOUT, ("J", "K"))


# --- augmentation ----------------------------------------------------------

def _pairwise(x):
    flat = x.reshape(-1, 3)
    return np.linalg.norm(flat[:, None] - flat[None], axis=2)


def test_augment_identity(rng):
    s = _seq(rng)
    np.testing.assert_array_equal(augment(s, 0.0, (1.0, 1.0), rng), s)


def test_augment_rotation_is_isometry(rng):
    s = _seq(rng, 6)
    out = augment(s, np.pi, (1.0, 1.0), rng)
    np.testing.assert_allclose(_pairwise(out), _pairwise(s), atol=1e-9)
    np.testing.assert_allclose(out[..., 2], s[..., 2], atol=1e-12)


def test_augment_scale_doubles_bones(rng):
    s = _seq(rng)
    out = augment(s, 0.0, (2.0, 2.0), rng)
    np.testing.assert_allclose(np.linalg.norm(bone_modality(out, LAYOUT), axis=2),
                               2 * np.linalg.norm(bone_modality(s, LAYOUT), axis=2), atol=1e-12)


def test_augment_bones_equivariant():
    s = _seq(np.random.default_rng(0))
    out = augment(s, 1.0, (0.5, 1.5), np.random.default_rng(5))
    # recover the draws with the same generator state
    g = np.random.default_rng(5)
    angle, scale = g.uniform(-1.0, 1.0), g.uniform(0.5, 1.5)
    want = scale * bone_modality(s, LAYOUT) @ z_rotation(angle).T
    np.testing.assert_allclose(bone_modality(out, LAYOUT), want, atol=1e-12)


def test_augment_rejects_bad_scale(rng):
    with pytest.raises(ValueError):
        augment(_seq(rng), 0.0, (0.0, 1.0), rng)


# --- sampling --------------------------------------------------------------

def test_sample_uniform_examples(rng):
    s = _seq(rng, 100)
    np.testing.assert_array_equal(sample_uniform(s, 100, rng), s)
    idx = uniform_indices(10, 100, rng)
    assert len(idx) == 100 and idx.min() >= 0 and idx.max() <= 9
    assert np.all(np.diff(idx) >= 0)
    with pytest.raises(ValueError):
        uniform_indices(0, 5, rng)


@settings(max_examples=50)
@given(st.integers(1, 200), st.integers(1, 150), st.integers(0, 2 ** 32 - 1))
def test_sample_uniform_sorted(length, count, seed):
    idx = uniform_indices(length, count, np.random.default_rng(seed))
    assert len(idx) == count and np.all(np.diff(idx) >= 0)
    if length >= count:
        assert len(set(idx.tolist())) == count


def test_sample_window_examples(rng):
    s = _seq(rng, 100)
    np.testing.assert_array_equal(sample_window(s[:20], 30, rng), s[:20])
    w = sample_window(s, 30, rng)
    assert len(w) == 30
    start = int(np.flatnonzero(np.all(s == w[0], axis=(1, 2)))[0])
    np.testing.assert_array_equal(w, s[start:start + 30])


def test_window_start_covers_range():
    rng = np.random.default_rng(0)
    starts = [window_start(100, 90, rng) for _ in range(2000)]
    assert set(starts) == set(range(11))


# --- fusion ----------------------------------------------------------------

def test_fuse_examples():
    p = [0.2, 0.5, 0.3]
    np.testing.assert_allclose(fuse_predictions([p]), p)
    np.testing.assert_allclose(fuse_predictions([[1, 0, 0], [0, 1, 0]]), [0.5, 0.5, 0.0])
    np.testing.assert_allclose(fuse_predictions([[1, 0], [0, 1]], [2, 1]), [2 / 3, 1 / 3])
    with pytest.raises(ValueError):
        fuse_predictions([[1, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        fuse_predictions([[1, 0], [0, 1]], [0, 0])


dist_lists = st.integers(2, 8).flatmap(lambda c: st.lists(
    st.lists(st.floats(0.0, 1.0), min_size=c, max_size=c).filter(lambda v: sum(v) > 1e-6),
    min_size=1, max_size=5))


@settings(max_examples=100)
@given(dist_lists, st.randoms(use_true_random=False))
def test_fuse_sums_to_one_and_permutation_invariant(raw, rnd):
    dists = [np.array(d) / np.sum(d) for d in raw]
    fused = fuse_predictions(dists)
    assert abs(fused.sum() - 1.0) <= 1e-9
    shuffled = list(dists)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(fuse_predictions(shuffled), fused, atol=1e-12)


# --- classifiers -----------------------------------------------------------

def test_nn_examples():
    g = _gallery([[0, 0], [10, 0], [5, 5]], [3, 1, 2])
    assert nn_classify([5, 5], g) == 2
    assert nn_classify([0.1, 0], g) == 3
    # equidistant from index 0 and index 1
    assert nn_classify([5, 0], _gallery([[0, 0], [10, 0]], [7, 4])) == 7
    with pytest.raises(ValueError):
        nn_classify([0, 0], [])
    with pytest.raises(ValueError):
        nn_classify([0, 0, 0], g)


def test_knn_majority():
    # label 1 has 3 of the 5 nearest even though label 0 holds the single closest point
    g = _gallery([[0.5, 0], [1, 0], [1.1, 0], [1.2, 0], [1.3, 0], [50, 0]], [0, 1, 1, 1, 0, 0])
    assert knn_classify([0, 0], g, k=5) == 1


def test_knn_two_two_one_tie():
    # labels 0 and 1 each get two votes; label 0's pair is closer in total
    g = _gallery([[1, 0], [2, 0], [1.5, 0], [3, 0], [0, 1.2]], [0, 0, 1, 1, 2])
    assert knn_classify([0, 0], g, k=5) == 0
    # mirrored: label 1's pair is closer
    g = _gallery([[1.5, 0], [3, 0], [1, 0], [2, 0], [0, 1.2]], [0, 0, 1, 1, 2])
    assert knn_classify([0, 0], g, k=5) == 1


def test_knn_full_tie_lowest_label():
    g = _gallery([[1, 0], [-1, 0]], [5, 2])
    assert knn_classify([0, 0], g, k=2) == 2


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_knn_k1_equals_nn(seed):
    rng = np.random.default_rng(seed)
    g = _gallery(rng.normal(size=(12, 4)), rng.integers(0, 4, 12))
    for q in rng.normal(size=(5, 4)):
        assert knn_classify(q, g, k=1) == nn_classify(q, g)


def test_prototype_examples():
    g = _gallery([[0, 0], [2, 0], [10, 0]], [0, 0, 1])
    assert prototype_classify([1.4, 0], g) == 0
    assert prototype_classify([1.0, 0], g) == 0
    rng = np.random.default_rng(2)
    single = _gallery(rng.normal(size=(6, 3)), range(6))
    for q in rng.normal(size=(20, 3)):
        assert prototype_classify(q, single) == nn_classify(q, single)


def test_scaling_invariance(rng):
    g = _gallery(rng.normal(size=(30, 5)), np.repeat(np.arange(6), 5))
    for q in rng.normal(size=(10, 5)):
        for lam in (0.01, 3.0, 1e3):
            scaled = [LabeledEmbedding(lam * e.vector, e.label) for e in g]
            for fn in (nn_classify, prototype_classify, knn_classify):
                assert fn(lam * q, scaled) == fn(q, g)


def test_clusters_fully_separated(rng):
    n_classes, dim, sigma = 30, 16, 1.0
    centers = rng.normal(0.0, 20.0, (n_classes, dim))
    gallery, queries = [], []
    for c in range(n_classes):
        gallery += _gallery(centers[c] + rng.normal(0, sigma, (5, dim)), [c] * 5)
        queries += [(centers[c] + rng.normal(0, sigma, dim), c) for _ in range(3)]
    for fn in (nn_classify, knn_classify, prototype_classify):
        assert all(fn(q, gallery) == c for q, c in queries)


# --- evaluation and embedding ------------------------------------------------

def test_evaluate_examples():
    acc, cm = evaluate([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert acc == 1.0
    np.testing.assert_array_equal(cm, np.eye(3))
    acc, cm = evaluate([[0.9, 0.1]] * 4, [0, 0, 1, 1], 2)
    assert acc == 0.5
    np.testing.assert_allclose(cm.sum(axis=1), [1.0, 1.0])
    acc, cm = evaluate([0, 0], [0, 0], 3)
    np.testing.assert_array_equal(cm.sum(axis=1), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        evaluate([0], [0, 1], 2)


def test_baseline_embedding_translation_invariant(rng):
    s = _seq(rng)
    a = baseline_embedding(s, LAYOUT)
    b = baseline_embedding(s + [3.0, 1.0, 0.0], LAYOUT)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.shape == (25 * 3 * 2 + 25 * 2,)


def test_gallery_file_roundtrip(tmp_path, rng):
    g = _gallery(rng.normal(size=(4, 3)), [0, 1, 1, 2])
    save_gallery(g, tmp_path / "g.json")
    back = load_gallery(tmp_path / "g.json")
    assert [e.label for e in back] == [0, 1, 1, 2]
    np.testing.assert_array_equal(np.stack([e.vector for e in back]), np.stack([e.vector for e in g]))
