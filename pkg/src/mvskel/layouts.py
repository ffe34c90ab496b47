"""Built-in joint layouts.

Five layouts ship with the toolkit:

- ``body``   17 COCO body joints, rooted at the nose.
- ``wb25``   25 joints in the Kinect v2 / NTU ordering, rooted at the spine base.
- ``wb31``   ``wb25`` plus index, ring and pinky tips on both hands (the hand tip
             joint of ``wb25`` is treated as the middle finger tip).
- ``wb137``  17 COCO body joints, 4 torso joints (hip middle, spine, shoulder
             middle, head), 6 foot joints, 68 face landmarks and 2 x 21 hand joints.
- ``wb69``   ``wb137`` without the 68 face landmarks.

Joint names are opaque identifiers. Parent maps are a toolkit convention: every
algorithm only relies on joint counts, parents and coordinates.
"""

from __future__ import annotations

_COCO = [
    ("nose", None),
    ("left_eye", "nose"),
    ("right_eye", "nose"),
    ("left_ear", "left_eye"),
    ("right_ear", "right_eye"),
    ("left_shoulder", "nose"),
    ("right_shoulder", "nose"),
    ("left_elbow", "left_shoulder"),
    ("right_elbow", "right_shoulder"),
    ("left_wrist", "left_elbow"),
    ("right_wrist", "right_elbow"),
    ("left_hip", "left_shoulder"),
    ("right_hip", "right_shoulder"),
    ("left_knee", "left_hip"),
    ("right_knee", "right_hip"),
    ("left_ankle", "left_knee"),
    ("right_ankle", "right_knee"),
]

_NTU25 = [
    ("spine_base", None),
    ("spine_mid", "spine_base"),
    ("neck", "spine_shoulder"),
    ("head", "neck"),
    ("left_shoulder", "spine_shoulder"),
    ("left_elbow", "left_shoulder"),
    ("left_wrist", "left_elbow"),
    ("left_hand", "left_wrist"),
    ("right_shoulder", "spine_shoulder"),
    ("right_elbow", "right_shoulder"),
    ("right_wrist", "right_elbow"),
    ("right_hand", "right_wrist"),
    ("left_hip", "spine_base"),
    ("left_knee", "left_hip"),
    ("left_ankle", "left_knee"),
    ("left_foot", "left_ankle"),
    ("right_hip", "spine_base"),
    ("right_knee", "right_hip"),
    ("right_ankle", "right_knee"),
    ("right_foot", "right_ankle"),
    ("spine_shoulder", "spine_mid"),
    ("left_hand_tip", "left_hand"),
    ("left_thumb", "left_hand"),
    ("right_hand_tip", "right_hand"),
    ("right_thumb", "right_hand"),
]

_NTU31_EXTRA = [
    (f"{side}_{finger}_tip", f"{side}_hand")
    for side in ("left", "right")
    for finger in ("index", "ring", "pinky")
]


def _wholebody(with_face: bool) -> list[tuple[str, str | None]]:
    joints = [(name, parent) for name, parent in _COCO]
    joints[0] = ("nose", "head")
    # torso spine, reroots the tree at the hip middle
    joints[5] = ("left_shoulder", "shoulder_middle")
    joints[6] = ("right_shoulder", "shoulder_middle")
    joints[11] = ("left_hip", "hip_middle")
    joints[12] = ("right_hip", "hip_middle")
    joints += [
        ("hip_middle", None),
        ("spine", "hip_middle"),
        ("shoulder_middle", "spine"),
        ("head", "shoulder_middle"),
    ]
    for side in ("left", "right"):
        joints += [
            (f"{side}_big_toe", f"{side}_ankle"),
            (f"{side}_small_toe", f"{side}_ankle"),
            (f"{side}_heel", f"{side}_ankle"),
        ]
    if with_face:
        joints += [(f"face_{i}", "nose") for i in range(68)]
    for side in ("left", "right"):
        root = f"{side}_hand_root"
        joints.append((root, f"{side}_wrist"))
        for finger in ("thumb", "index", "middle", "ring", "pinky"):
            prev = root
            for k in range(1, 5):
                name = f"{side}_{finger}_{k}"
                joints.append((name, prev))
                prev = name
    return joints


BUILTIN_DEFINITIONS: dict[str, list[tuple[str, str | None]]] = {
    "body": _COCO,
    "wb25": _NTU25,
    "wb31": _NTU25 + _NTU31_EXTRA,
    "wb69": _wholebody(with_face=False),
    "wb137": _wholebody(with_face=True),
}
