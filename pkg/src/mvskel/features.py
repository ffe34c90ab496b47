"""Action-model inputs: modalities, augmentation, frame sampling, score fusion
and few-shot classification of embeddings."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .skeldata import JointLayout, Skeleton3D, SkeletonSequence

MODALITIES = ("J", "B", "JM", "BM")

SequenceLike = Union[np.ndarray, SkeletonSequence, Sequence[Skeleton3D]]


def as_array(seq: SequenceLike) -> np.ndarray:
    """(T, J, C) coordinate array from an array, a track, a sequence or a list of skeletons.

    Invalid joints become NaN. Sequences must hold one person per frame.
    """
    if isinstance(seq, np.ndarray):
        return np.asarray(seq, dtype=float)
    if hasattr(seq, "entries"):  # Track
        seq = [sk for _, sk in seq.entries]
    elif isinstance(seq, SkeletonSequence):
        skels = []
        for f in seq:
            if len(f.skeletons) != 1:
                raise ValueError(f"frame {f.time_index}: expected one person")
            skels.append(f.skeletons[0])
        seq = skels
    arrs = [np.where(sk.valid[:, None], sk.coords, np.nan) for sk in seq]
    if not arrs:
        return np.zeros((0, 0, 3))
    return np.stack(arrs)


@dataclass(frozen=True, eq=False)
class ModalityTensor:
    data: np.ndarray          # (T, J, 3 * len(modalities))
    modalities: tuple[str, ...]
    layout: JointLayout | None = None

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] % len(self.modalities):
            raise ValueError("channel count must be a multiple of the modality count")

    def channels(self, modality: str) -> np.ndarray:
        k = self.modalities.index(modality)
        c = self.data.shape[2] // len(self.modalities)
        return self.data[..., k * c:(k + 1) * c]


def bone_modality(seq: SequenceLike, layout: JointLayout) -> np.ndarray:
    """bone[j] = joint[j] - joint[parent(j)]; roots get zeros."""
    x = as_array(seq)
    if x.shape[1] != layout.count:
        raise ValueError(f"{x.shape[1]} joints for layout {layout.name!r}")
    parents = np.array(layout.parents)
    bones = x - x[:, np.where(parents < 0, np.arange(layout.count), parents)]
    bones[:, parents < 0] = 0.0
    return bones


def motion_modality(seq: SequenceLike) -> np.ndarray:
    """Frame-to-frame differences, zero-padded at the end to keep the length."""
    x = as_array(seq)
    if x.shape[0] == 0:
        raise ValueError("motion of an empty sequence")
    out = np.zeros_like(x)
    out[:-1] = x[1:] - x[:-1]
    return out


def modality_tensor(seq: SequenceLike, layout: JointLayout,
                    modalities: Sequence[str] = MODALITIES) -> ModalityTensor:
    """Concatenate the requested modalities along the channel axis."""
    x = as_array(seq)
    cache = {"J": x}
    if "B" in modalities or "BM" in modalities:
        cache["B"] = bone_modality(x, layout)
    if "JM" in modalities:
        cache["JM"] = motion_modality(x)
    if "BM" in modalities:
        cache["BM"] = motion_modality(cache["B"])
    unknown = set(modalities) - set(MODALITIES)
    if unknown:
        raise ValueError(f"unknown modalities {sorted(unknown)}")
    data = np.concatenate([cache[m] for m in modalities], axis=2)
    return ModalityTensor(data, tuple(modalities), layout)


def z_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment(seq: SequenceLike, rotation_range: float, scale_range: tuple[float, float],
            rng: np.random.Generator) -> np.ndarray:
    """Rotate the whole sequence about the world z-axis and scale it about its centroid.

    One angle in [-rotation_range, rotation_range] and one scale in
    ``scale_range`` are drawn per sequence.
    """
    lo, hi = scale_range
    if lo <= 0 or hi <= 0 or hi < lo:
        raise ValueError("scale_range must be positive with lo <= hi")
    x = as_array(seq)
    angle = rng.uniform(-rotation_range, rotation_range) if rotation_range > 0 else 0.0
    scale = rng.uniform(lo, hi) if hi > lo else lo
    rotated = x @ z_rotation(angle).T
    if scale == 1.0:
        return rotated
    centroid = np.nanmean(rotated.reshape(-1, rotated.shape[-1]), axis=0)
    return centroid + scale * (rotated - centroid)


def uniform_indices(length: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted random frame indices: without replacement if possible, else with."""
    if length < 1:
        raise ValueError("cannot sample from an empty sequence")
    if count < 1:
        raise ValueError("count must be >= 1")
    replace = length < count
    return np.sort(rng.choice(length, size=count, replace=replace))


def sample_uniform(seq: SequenceLike, count: int, rng: np.random.Generator) -> np.ndarray:
    x = as_array(seq)
    return x[uniform_indices(x.shape[0], count, rng)]


def window_start(length: int, window_len: int, rng: np.random.Generator) -> int:
    if length < 1:
        raise ValueError("cannot sample from an empty sequence")
    return int(rng.integers(0, max(0, length - window_len) + 1))


def sample_window(seq: SequenceLike, window_len: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous window at a uniformly random start; short sequences come back whole."""
    x = as_array(seq)
    start = window_start(x.shape[0], window_len, rng)
    return x[start:start + window_len]


# ---------------------------------------------------------------------------
# prediction fusion


def fuse_predictions(dists: Sequence[Sequence[float]], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted mean of class distributions, renormalized to sum to 1."""
    P = np.array([np.asarray(d, dtype=float) for d in dists]) if len(dists) else None
    if P is None or P.ndim != 2:
        raise ValueError("distributions must be non-empty and share one class count")
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(P),):
        raise ValueError("one weight per distribution is required")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with a positive sum")
    fused = (w[:, None] * P).sum(axis=0) / w.sum()
    return fused / fused.sum()


# ---------------------------------------------------------------------------
# few-shot classification


@dataclass(frozen=True, eq=False)
class LabeledEmbedding:
    vector: np.ndarray
    label: int

    def __post_init__(self):
        v = np.array(self.vector, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "label", int(self.label))


def _gallery_arrays(query, gallery: Sequence[LabeledEmbedding]):
    if not len(gallery):
        raise ValueError("gallery is empty")
    G = np.stack([g.vector for g in gallery])
    labels = np.array([g.label for g in gallery])
    q = np.asarray(query, dtype=float).reshape(-1)
    if G.shape[1] != q.shape[0]:
        raise ValueError(f"query dimension {q.shape[0]} != gallery dimension {G.shape[1]}")
    return q, G, labels


def _distances(q: np.ndarray, G: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((G - q) ** 2, axis=1))


def nn_classify(query, gallery: Sequence[LabeledEmbedding]) -> int:
    """Label of the Euclidean-nearest gallery entry (lowest index on ties)."""
    q, G, labels = _gallery_arrays(query, gallery)
    return int(labels[int(np.argmin(_distances(q, G)))])


def knn_classify(query, gallery: Sequence[LabeledEmbedding], k: int = 5) -> int:
    """Majority label among the k nearest entries.

    Ties between labels go to the smaller summed distance, then the lower label.
    """
    q, G, labels = _gallery_arrays(query, gallery)
    if k < 1 or k > len(gallery):
        raise ValueError(f"k must lie in [1, {len(gallery)}]")
    d = _distances(q, G)
    nearest = np.argsort(d, kind="stable")[:k]
    votes = Counter()
    dist_sum: dict[int, float] = {}
    for i in nearest:
        lab = int(labels[i])
        votes[lab] += 1
        dist_sum[lab] = dist_sum.get(lab, 0.0) + float(d[i])
    return min(votes, key=lambda lab: (-votes[lab], dist_sum[lab], lab))


def prototypes(gallery: Sequence[LabeledEmbedding]) -> tuple[np.ndarray, np.ndarray]:
    """Per-class mean embeddings, classes in ascending label order."""
    G = np.stack([g.vector for g in gallery])
    labels = np.array([g.label for g in gallery])
    classes = np.unique(labels)
    return classes, np.stack([G[labels == c].mean(axis=0) for c in classes])


def prototype_classify(query, gallery: Sequence[LabeledEmbedding]) -> int:
    q, _, _ = _gallery_arrays(query, gallery)
    classes, protos = prototypes(gallery)
    return int(classes[int(np.argmin(_distances(q, protos)))])


def baseline_embedding(seq: SequenceLike, layout: JointLayout) -> np.ndarray:
    """Hand-crafted sequence descriptor.

    Concatenates the per-joint mean and standard deviation of root-relative joint
    positions and the mean and standard deviation of every bone length.
    """
    x = as_array(seq)
    root = layout.roots[0]
    rel = x - x[:, root:root + 1]
    lengths = np.linalg.norm(bone_modality(x, layout), axis=2)
    parts = [np.nanmean(rel, axis=0).ravel(), np.nanstd(rel, axis=0).ravel(),
             np.nanmean(lengths, axis=0), np.nanstd(lengths, axis=0)]
    return np.nan_to_num(np.concatenate(parts))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(preds, truth: Sequence[int], n_classes: int) -> tuple[float, np.ndarray]:
    """Top-1 accuracy and row-normalized confusion matrix (rows = true class).

    ``preds`` holds either labels or per-class distributions. Rows of classes
    without support stay zero.
    """
    truth = np.asarray(truth, dtype=int)
    if len(preds) != len(truth):
        raise ValueError(f"{len(preds)} predictions for {len(truth)} labels")
    labels = np.array([int(np.argmax(p)) if np.ndim(p) else int(p) for p in preds], dtype=int)
    cm = np.zeros((n_classes, n_classes))
    np.add.at(cm, (truth, labels), 1.0)
    support = cm.sum(axis=1, keepdims=True)
    cm = np.divide(cm, support, out=np.zeros_like(cm), where=support > 0)
    acc = float(np.mean(labels == truth)) if len(truth) else 0.0
    return acc, cm


# ---------------------------------------------------------------------------
# file formats


def load_gallery(path) -> list[LabeledEmbedding]:
    with open(path) as fh:
        return [LabeledEmbedding(e["vector"], e["label"]) for e in json.load(fh)]


def save_gallery(gallery: Sequence[LabeledEmbedding], path) -> None:
    with open(path, "w") as fh:
        json.dump([{"label": g.label, "vector": [float(v) for v in g.vector]} for g in gallery], fh)


def load_predictions(path) -> list[np.ndarray]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(np.asarray(json.loads(line), dtype=float))
    return out


def save_predictions(dists, path) -> None:
    with open(path, "w") as fh:
        for d in dists:
            fh.write(json.dumps([float(v) for v in d]) + "\n")
