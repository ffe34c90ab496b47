"""Skeleton data model and the JSON-lines skeleton file format.

A skeleton file holds one frame per line::

    {"t": 0, "persons": [{"id": 1, "layout": "wb25", "dims": 3,
                          "joints": [[x, y, z, c], ...]}]}

Coordinates are pixels for 2D skeletons and meters for 3D skeletons. Missing
joints are stored as ``null`` (or with non-finite coordinates) and are loaded
with confidence 0, so joint arrays always have the layout's fixed size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .layouts import BUILTIN_DEFINITIONS


class SkeletonFormatError(ValueError):
    """Raised when a skeleton file line cannot be parsed."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class JointLayout:
    """Named keypoint set with a parent forest.

    ``parents[j]`` is the index of joint ``j``'s parent, or -1 for a root.
    """

    name: str
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        n = len(self.joint_names)
        if len(self.parents) != n:
            raise ValueError(
                f"layout {self.name!r}: {len(self.parents)} parents for {n} joints"
            )
        if len(set(self.joint_names)) != n:
            raise ValueError(f"layout {self.name!r}: duplicate joint names")
        for j, p in enumerate(self.parents):
            if p < -1 or p >= n or p == j:
                raise ValueError(f"layout {self.name!r}: bad parent {p} for joint {j}")
        # every walk towards the root must terminate within n steps
        for j in range(n):
            k, steps = j, 0
            while k != -1:
                k = self.parents[k]
                steps += 1
                if steps > n:
                    raise ValueError(f"layout {self.name!r}: cycle through joint {j}")

    @property
    def count(self) -> int:
        return len(self.joint_names)

    @property
    def roots(self) -> list[int]:
        return [j for j, p in enumerate(self.parents) if p < 0]

    def index(self, joint_name: str) -> int:
        return self.joint_names.index(joint_name)

    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) pairs."""
        return [(p, j) for j, p in enumerate(self.parents) if p >= 0]

    @classmethod
    def from_pairs(cls, name: str, pairs: Sequence[tuple[str, str | None]]) -> "JointLayout":
        names = [n for n, _ in pairs]
        lookup = {n: i for i, n in enumerate(names)}
        parents = [-1 if p is None else lookup[p] for _, p in pairs]
        return cls(name, tuple(names), tuple(parents))

    def to_dict(self) -> dict:
        return {"name": self.name, "joint_names": list(self.joint_names),
                "parents": list(self.parents)}

    @classmethod
    def from_dict(cls, data: dict) -> "JointLayout":
        parents = [-1 if p is None else p for p in data["parents"]]
        return cls(data["name"], tuple(data["joint_names"]), tuple(parents))


_BUILTIN_CACHE: dict[str, JointLayout] = {}


def builtin_layout(name: str) -> JointLayout:
    """Return one of the built-in layouts: body, wb25, wb31, wb69 or wb137."""
    if name not in BUILTIN_DEFINITIONS:
        raise KeyError(
            f"unknown layout {name!r}; expected one of {sorted(BUILTIN_DEFINITIONS)}"
        )
    if name not in _BUILTIN_CACHE:
        _BUILTIN_CACHE[name] = JointLayout.from_pairs(name, BUILTIN_DEFINITIONS[name])
    return _BUILTIN_CACHE[name]


def load_layout(path) -> JointLayout:
    with open(path) as fh:
        return JointLayout.from_dict(json.load(fh))


def save_layout(layout: JointLayout, path) -> None:
    with open(path, "w") as fh:
        json.dump(layout.to_dict(), fh, indent=2)


def resolve_layout(layout: Union[str, JointLayout]) -> JointLayout:
    return layout if isinstance(layout, JointLayout) else builtin_layout(layout)


def _frozen(a, shape_tail: int, what: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != shape_tail:
        raise ValueError(f"{what}: expected shape (J, {shape_tail}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


class _SkeletonBase:
    dims: int = 0
    coords: np.ndarray
    confidence: np.ndarray
    layout: JointLayout

    def _validate(self):
        coords = _frozen(self.coords, self.dims, type(self).__name__)
        conf = np.array(self.confidence, dtype=float).reshape(-1)
        conf.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "confidence", conf)
        n = self.layout.count
        if coords.shape[0] != n or conf.shape[0] != n:
            raise LayoutMismatchError(
                f"{type(self).__name__}: {coords.shape[0]} joints for layout "
                f"{self.layout.name!r} with {n}"
            )
        if not np.all((conf >= 0.0) & (conf <= 1.0)):
            raise ValueError("confidence must lie in [0, 1]")
        bad = ~np.all(np.isfinite(coords), axis=1) & (conf > 0)
        if bad.any():
            raise ValueError(
                f"non-finite coordinates with positive confidence at joints "
                f"{np.flatnonzero(bad).tolist()}"
            )

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of joints with confidence > 0."""
        return self.confidence > 0

    @property
    def joints(self) -> np.ndarray:
        """(J, dims + 1) array of coordinates followed by confidence."""
        return np.column_stack([self.coords, self.confidence])

    def __len__(self) -> int:
        return self.layout.count


@dataclass(frozen=True, eq=False)
class Skeleton2D(_SkeletonBase):
    coords: np.ndarray
    confidence: np.ndarray
    layout: JointLayout
    person_id: int | None = None
    dims = 2

    def __post_init__(self):
        self._validate()


@dataclass(frozen=True, eq=False)
class Skeleton3D(_SkeletonBase):
    coords: np.ndarray
    confidence: np.ndarray
    layout: JointLayout
    frame: str = "world"
    person_id: int | None = None
    dims = 3

    def __post_init__(self):
        if self.frame not in ("camera", "world"):
            raise ValueError(f"frame must be 'camera' or 'world', got {self.frame!r}")
        self._validate()


Skeleton = Union[Skeleton2D, Skeleton3D]


@dataclass(frozen=True)
class Frame:
    time_index: int
    skeletons: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "time_index", int(self.time_index))
        object.__setattr__(self, "skeletons", tuple(self.skeletons))


@dataclass(frozen=True)
class SkeletonSequence:
    frames: tuple[Frame, ...] = ()
    source: str = ""

    def __post_init__(self):
        frames = tuple(
            f if isinstance(f, Frame) else Frame(*f) for f in self.frames
        )
        object.__setattr__(self, "frames", frames)
        times = [f.time_index for f in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("time_index must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def time_indices(self) -> list[int]:
        return [f.time_index for f in self.frames]


def _parse_person(obj, expected_layout: JointLayout | None, path, line_no):
    try:
        layout_name = obj.get("layout")
        dims = int(obj["dims"])
        rows = obj["joints"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SkeletonFormatError(path, line_no, f"malformed person entry: {exc}") from exc
    if dims not in (2, 3):
        raise SkeletonFormatError(path, line_no, f"dims must be 2 or 3, got {dims}")

    if expected_layout is not None:
        layout = expected_layout
        if layout_name is not None and layout_name != layout.name:
            raise LayoutMismatchError(
                f"{path}:{line_no}: layout {layout_name!r} does not match "
                f"expected {layout.name!r}"
            )
    else:
        try:
            layout = builtin_layout(layout_name)
        except KeyError as exc:
            raise SkeletonFormatError(path, line_no, str(exc)) from exc
    if len(rows) != layout.count:
        raise LayoutMismatchError(
            f"{path}:{line_no}: {len(rows)} joints, layout {layout.name!r} "
            f"expects {layout.count}"
        )

    coords = np.full((layout.count, dims), np.nan)
    conf = np.zeros(layout.count)
    for j, row in enumerate(rows):
        if row is None:
            continue
        if len(row) != dims + 1:
            raise SkeletonFormatError(
                path, line_no, f"joint {j}: expected {dims + 1} values, got {len(row)}"
            )
        vals = [math.nan if v is None else float(v) for v in row]
        coords[j] = vals[:dims]
        c = vals[dims]
        if math.isfinite(c) and all(math.isfinite(v) for v in vals[:dims]):
            conf[j] = c
    conf = np.clip(conf, 0.0, 1.0)

    pid = obj.get("id")
    pid = None if pid is None else int(pid)
    if dims == 2:
        return Skeleton2D(coords, conf, layout, person_id=pid)
    return Skeleton3D(coords, conf, layout, frame=obj.get("frame", "world"), person_id=pid)


def load_sequence(path, expected_layout: JointLayout | str | None = None,
                  source: str | None = None) -> SkeletonSequence:
    """Read a JSON-lines skeleton file.

    Raises:
        FileNotFoundError: the file does not exist.
        SkeletonFormatError: a line is not valid JSON or misses fields.
        LayoutMismatchError: a person's joint count differs from the layout.
    """
    path = Path(path)
    if expected_layout is not None:
        expected_layout = resolve_layout(expected_layout)
    frames = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                t = int(obj["t"])
                persons = obj.get("persons", [])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SkeletonFormatError(path, line_no, str(exc)) from exc
            skels = [_parse_person(p, expected_layout, path, line_no) for p in persons]
            frames.append(Frame(t, skels))
    try:
        return SkeletonSequence(tuple(frames), source=source if source is not None else path.stem)
    except ValueError as exc:
        raise SkeletonFormatError(path, 0, str(exc)) from exc


def _finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None


def skeleton_to_dict(sk: Skeleton) -> dict:
    rows = []
    for xyz, c in zip(sk.coords, sk.confidence):
        if c > 0:
            rows.append([float(v) for v in xyz] + [float(c)])
        else:
            rows.append([_finite_or_none(v) for v in xyz] + [0.0])
    out = {"id": sk.person_id, "layout": sk.layout.name, "dims": sk.dims, "joints": rows}
    if isinstance(sk, Skeleton3D) and sk.frame != "world":
        out["frame"] = sk.frame
    return out


def frame_to_json(frame: Frame) -> str:
    obj = {"t": frame.time_index, "persons": [skeleton_to_dict(s) for s in frame.skeletons]}
    return json.dumps(obj, allow_nan=False, sort_keys=True)


def save_sequence(seq: SkeletonSequence | Iterable[Frame], path) -> None:
    with open(path, "w") as fh:
        for frame in seq:
            fh.write(frame_to_json(frame))
            fh.write("\n")


def sequence_from_arrays(coords: np.ndarray, confidence: np.ndarray | None,
                         layout: JointLayout, frame: str = "world",
                         time_indices: Sequence[int] | None = None,
                         source: str = "", person_id: int | None = None) -> SkeletonSequence:
    """Build a single-person sequence from a (T, J, D) array."""
    coords = np.asarray(coords, dtype=float)
    T, _, D = coords.shape
    if confidence is None:
        confidence = np.ones(coords.shape[:2])
    if time_indices is None:
        time_indices = range(T)
    frames = []
    for t, xyz, c in zip(time_indices, coords, confidence):
        if D == 2:
            sk = Skeleton2D(xyz, c, layout, person_id=person_id)
        else:
            sk = Skeleton3D(xyz, c, layout, frame=frame, person_id=person_id)
        frames.append(Frame(t, (sk,)))
    return SkeletonSequence(tuple(frames), source=source)
