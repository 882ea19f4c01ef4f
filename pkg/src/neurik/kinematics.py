"""Skeleton, 6D rotations, forward kinematics and the keypoint regressor.

Numpy functions serve data synthesis, evaluation and streaming; the ``*_t``
variants build the same computation on the autodiff tape for the losses.

Conventions: Z is up; a joint's local rotation is applied in its parent's
frame, so ``world_R[child] = world_R[parent] @ local_R[child]`` and
``pos[child] = pos[parent] + world_R[parent] @ offset[child]``.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import kernels
from . import tensorcore as tc
from .errors import ContractViolation, DegenerateRotation

GS_EPS = 1e-8
ACOS_CLAMP = 1e-7


@dataclass
class Skeleton:
    names: list
    parents: np.ndarray  # (J,), root has -1
    rest_offsets: np.ndarray  # (J, 3) metres, child in parent frame
    shape_blend: np.ndarray  # (J*3, S)
    regressor: np.ndarray  # (K, J)
    keypoint_names: list = None
    version: str = "1"

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.rest_offsets = np.asarray(self.rest_offsets, dtype=np.float64).reshape(-1, 3)
        J = len(self.parents)
        self.shape_blend = np.asarray(self.shape_blend, dtype=np.float64).reshape(J * 3, -1)
        self.regressor = np.asarray(self.regressor, dtype=np.float64).reshape(-1, J)
        if self.keypoint_names is None:
            self.keypoint_names = [f"kp{i}" for i in range(self.regressor.shape[0])]
        self.validate()

    def validate(self):
        J = len(self.parents)
        if J < 1 or self.regressor.shape[0] < 1:
            raise ContractViolation("skeleton needs at least one joint and one keypoint")
        if (self.parents == -1).sum() != 1 or self.parents[0] != -1:
            raise ContractViolation("skeleton must have exactly one root, at index 0")
        if any(self.parents[j] >= j for j in range(1, J)):
            raise ContractViolation("joints must be topologically sorted (parent index < child index)")
        if len(self.names) != J or self.rest_offsets.shape != (J, 3):
            raise ContractViolation("names/rest_offsets do not match the joint count")
        if not np.isfinite(self.regressor).all() or not np.isfinite(self.shape_blend).all():
            raise ContractViolation("regressor and shape blend must be finite")

    @property
    def J(self):
        return len(self.parents)

    @property
    def K(self):
        return self.regressor.shape[0]

    @property
    def S(self):
        return self.shape_blend.shape[1]

    def children(self, j):
        return [c for c in range(self.J) if self.parents[c] == j]

    def is_leaf(self, j):
        return not (self.parents == j).any()

    def offsets(self, shape):
        """Bone offsets for shape vector(s): (..., S) -> (..., J, 3)."""
        shape = np.asarray(shape, dtype=np.float64)
        delta = shape @ self.shape_blend.T
        return self.rest_offsets + delta.reshape(shape.shape[:-1] + (self.J, 3))

    def height(self, shape=None):
        """Vertical extent of the rest pose keypoints."""
        shape = np.zeros(self.S) if shape is None else shape
        joints = forward_kinematics(self, shape, Pose(np.zeros(3), identity_rot6d(self.J)))
        kp = regress_keypoints(self, joints)
        return float(kp[:, 2].max() - kp[:, 2].min())

    # -- file I/O --

    def to_dict(self):
        return {
            "meta": {"version": self.version},
            "joints": [
                {"name": n, "parent": int(p), "rest_offset": [float(v) for v in o]}
                for n, p, o in zip(self.names, self.parents, self.rest_offsets)
            ],
            "shape_blend": self.shape_blend.tolist(),
            "regressor": self.regressor.tolist(),
            "keypoints": list(self.keypoint_names),
        }

    @classmethod
    def from_dict(cls, d):
        joints = d["joints"]
        return cls(
            names=[j["name"] for j in joints],
            parents=[j["parent"] if j["parent"] is not None else -1 for j in joints],
            rest_offsets=[j["rest_offset"] for j in joints],
            shape_blend=d["shape_blend"],
            regressor=d["regressor"],
            keypoint_names=d.get("keypoints"),
            version=str(d.get("meta", {}).get("version", "1")),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls):
        """24-joint, 10-shape, 25-keypoint desk-scale body."""
        text = resources.files("neurik.data").joinpath("skeleton_default.json").read_text()
        return cls.from_dict(json.loads(text))


@dataclass
class Pose:
    translation: np.ndarray  # (..., 3)
    rotations: np.ndarray  # (..., J, 6)


# -- rotations (numpy) --------------------------------------------------------


def identity_rot6d(J=None):
    r = np.array([1.0, 0, 0, 0, 1.0, 0])
    return r if J is None else np.tile(r, (J, 1))


def rot6d_to_matrix(r6):
    """Gram-Schmidt: (..., 6) -> (..., 3, 3) with columns [c1, c2, c1 x c2]."""
    r6 = np.asarray(r6, dtype=np.float64) if not isinstance(r6, np.ndarray) else r6
    lead = r6.shape[:-1]
    mats, smallest = kernels.gram_schmidt(r6.reshape(-1, 6))
    if smallest.size and smallest.min() < GS_EPS:
        raise DegenerateRotation("6D rotation has a vanishing or parallel column")
    return mats.reshape(lead + (3, 3))


def matrix_to_rot6d(R):
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axis_angle_to_matrix(aa):
    """Rodrigues: (..., 3) axis*angle -> (..., 3, 3)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    k = aa / np.where(theta > 0, theta, 1.0)
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    Kx = np.stack([zero, -kz, ky, kz, zero, -kx, -ky, kx, zero], axis=-1).reshape(aa.shape[:-1] + (3, 3))
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), Kx.shape)
    return eye + s * Kx + (1 - c) * (Kx @ Kx)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def geodesic_distance(Rp, Rt):
    """Angle of Rp Rt^T in radians, arccos argument clamped by 1e-7."""
    tr = (np.asarray(Rp) * np.asarray(Rt)).sum(axis=(-2, -1))
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP))


# -- FK and regressor (numpy) -------------------------------------------------


def forward_kinematics(skel, shape, pose):
    """World joint positions (..., J, 3).

    ``pose.rotations`` may be 6D (..., J, 6) or matrices (..., J, 3, 3).
    ``shape`` is (S,) or broadcastable to the pose's leading dims.
    """
    rot = np.asarray(pose.rotations, dtype=np.float64)
    if rot.shape[-1] == 6:
        rot = rot6d_to_matrix(rot)
    if rot.shape[-3] != skel.J:
        raise ContractViolation(f"pose has {rot.shape[-3]} joints, skeleton has {skel.J}")
    lead = rot.shape[:-3]
    trans = np.broadcast_to(np.asarray(pose.translation, dtype=np.float64), lead + (3,))
    offsets = np.broadcast_to(skel.offsets(shape), lead + (skel.J, 3))
    pos = kernels.forward_kinematics(
        skel.parents,
        offsets.reshape(-1, skel.J, 3),
        rot.reshape(-1, skel.J, 3, 3),
        trans.reshape(-1, 3),
    )
    return pos.reshape(lead + (skel.J, 3))


def regress_keypoints(skel, joints):
    """(..., J, 3) joint positions -> (..., K, 3) keypoints."""
    return skel.regressor @ np.asarray(joints)


# -- tape versions ------------------------------------------------------------


def rot6d_to_matrix_t(r6):
    """Differentiable Gram-Schmidt on a Tensor (..., 6) -> (..., 3, 3)."""
    a = r6[..., 0:3]
    b = r6[..., 3:6]
    na = tc.sqrt((a * a).sum(axis=-1, keepdims=True))
    if na.data.min() < GS_EPS:
        raise DegenerateRotation("6D rotation has a vanishing first column")
    c1 = a / na
    u = b - (c1 * b).sum(axis=-1, keepdims=True) * c1
    nu = tc.sqrt((u * u).sum(axis=-1, keepdims=True))
    if nu.data.min() < GS_EPS:
        raise DegenerateRotation("6D rotation columns are parallel")
    c2 = u / nu
    c3 = tc.cross(c1, c2)
    return tc.stack([c1, c2, c3], axis=-1)


def forward_kinematics_t(skel, shape, trans, rotmats):
    """Tape FK.

    shape (B, S), trans (B, T, 3), rotmats (B, T, J, 3, 3) -> (B, T, J, 3).
    """
    B, T = rotmats.shape[0], rotmats.shape[1]
    dtype = rotmats.dtype
    blend = tc.Tensor(skel.shape_blend.T.astype(dtype))
    rest = tc.Tensor(skel.rest_offsets.astype(dtype))
    offsets = rest + (shape @ blend).reshape(B, skel.J, 3)
    world = [rotmats[:, :, 0]]
    pos = [trans]
    for j in range(1, skel.J):
        p = skel.parents[j]
        off = offsets[:, j].reshape(B, 1, 3, 1)
        pos.append(pos[p] + (world[p] @ off).reshape(B, T, 3))
        world.append(None if skel.is_leaf(j) else world[p] @ rotmats[:, :, j])
    return tc.stack(pos, axis=2)


def regress_keypoints_t(skel, joints):
    return tc.Tensor(skel.regressor.astype(joints.dtype)) @ joints


# -- default skeleton construction --------------------------------------------

_SMPL_LIKE = [
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("l_hip", 0, (0.09, 0.0, -0.09)),
    ("r_hip", 0, (-0.09, 0.0, -0.09)),
    ("spine1", 0, (0.0, -0.02, 0.11)),
    ("l_knee", 1, (0.01, 0.01, -0.38)),
    ("r_knee", 2, (-0.01, 0.01, -0.38)),
    ("spine2", 3, (0.0, 0.01, 0.13)),
    ("l_ankle", 4, (-0.01, -0.03, -0.40)),
    ("r_ankle", 5, (0.01, -0.03, -0.40)),
    ("spine3", 6, (0.0, 0.0, 0.06)),
    ("l_foot", 7, (0.02, 0.12, -0.06)),
    ("r_foot", 8, (-0.02, 0.12, -0.06)),
    ("neck", 9, (0.0, -0.02, 0.21)),
    ("l_collar", 9, (0.08, -0.01, 0.12)),
    ("r_collar", 9, (-0.08, -0.01, 0.12)),
    ("head", 12, (0.0, 0.05, 0.09)),
    ("l_shoulder", 13, (0.11, -0.01, 0.03)),
    ("r_shoulder", 14, (-0.11, -0.01, 0.03)),
    ("l_elbow", 16, (0.26, -0.01, -0.01)),
    ("r_elbow", 17, (-0.26, -0.01, -0.01)),
    ("l_wrist", 18, (0.25, 0.02, 0.0)),
    ("r_wrist", 19, (-0.25, 0.02, 0.0)),
    ("l_hand", 20, (0.08, -0.02, -0.02)),
    ("r_hand", 21, (-0.08, -0.02, -0.02)),
]

# First 19 rows follow BODY25 ordering; the last six are body-model extras
# that keep every joint position recoverable from the keypoints.
_BODY25 = [
    ("nose", {"head": 0.8, "neck": 0.2}),
    ("neck", {"neck": 0.7, "spine3": 0.3}),
    ("r_shoulder", {"r_shoulder": 1.0}),
    ("r_elbow", {"r_elbow": 1.0}),
    ("r_wrist", {"r_wrist": 1.0}),
    ("l_shoulder", {"l_shoulder": 1.0}),
    ("l_elbow", {"l_elbow": 1.0}),
    ("l_wrist", {"l_wrist": 1.0}),
    ("mid_hip", {"pelvis": 1.0}),
    ("r_hip", {"r_hip": 1.0}),
    ("r_knee", {"r_knee": 1.0}),
    ("r_ankle", {"r_ankle": 1.0}),
    ("l_hip", {"l_hip": 1.0}),
    ("l_knee", {"l_knee": 1.0}),
    ("l_ankle", {"l_ankle": 1.0}),
    ("r_eye", {"head": 0.85, "r_collar": 0.15}),
    ("l_eye", {"head": 0.85, "l_collar": 0.15}),
    ("r_ear", {"head": 0.6, "r_collar": 0.4}),
    ("l_ear", {"head": 0.6, "l_collar": 0.4}),
    ("l_big_toe", {"l_foot": 1.0}),
    ("r_big_toe", {"r_foot": 1.0}),
    ("l_hand", {"l_hand": 1.0}),
    ("r_hand", {"r_hand": 1.0}),
    ("spine_low", {"spine1": 1.0}),
    ("chest", {"spine2": 1.0}),
]


SHAPE_UNIT = 0.032  # metres of offset change per unit shape coefficient

# relative bone-length change along the stature direction
_STATURE = {
    "l_hip": 0.4, "r_hip": 0.4, "spine1": 0.6, "spine2": 0.6, "spine3": 0.6,
    "neck": 0.3, "head": 0.2, "l_collar": 0.4, "r_collar": 0.4,
    "l_shoulder": 0.5, "r_shoulder": 0.5, "l_knee": 1.0, "r_knee": 1.0,
    "l_ankle": 1.0, "r_ankle": 1.0, "l_foot": 0.6, "r_foot": 0.6,
    "l_elbow": 0.8, "r_elbow": 0.8, "l_wrist": 0.8, "r_wrist": 0.8,
    "l_hand": 0.7, "r_hand": 0.7,
}


def build_default_skeleton(seed=7):
    names = [n for n, _, _ in _SMPL_LIKE]
    idx = {n: i for i, n in enumerate(names)}
    parents = [p for _, p, _ in _SMPL_LIKE]
    rest = np.array([o for _, _, o in _SMPL_LIKE])
    J, S = len(names), 10
    # candidate deformations: segment lengths, a non-uniform stature change
    # and a few seeded random ones
    groups = [
        ("l_knee", "r_knee", "l_ankle", "r_ankle"),  # legs
        ("l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand"),  # arms
        ("spine1", "spine2", "spine3", "neck"),  # torso
        ("l_collar", "r_collar", "l_shoulder", "r_shoulder"),  # shoulders
        ("l_hip", "r_hip"),  # hips
        ("neck", "head"),  # head
        ("l_foot", "r_foot"),  # feet
    ]
    cands = []
    stature = np.zeros((J, 3))
    for name, f in _STATURE.items():
        stature[idx[name]] = f * rest[idx[name]]
    cands.append(stature)
    for g in groups:
        c = np.zeros((J, 3))
        ids = [idx[n] for n in g]
        c[ids] = rest[ids]
        cands.append(c)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        c = np.zeros((J, 3))
        c[1:] = rng.normal(0.0, 0.1, size=(J - 1, 3))
        cands.append(c)
    M = np.stack([c.ravel() for c in cands], axis=1)
    # Standardized keypoints cannot reveal overall size, so the basis keeps
    # proportions only: remove uniform scaling, then orthonormalize.
    u = rest.ravel() / np.linalg.norm(rest)
    M = M - np.outer(u, u @ M)
    U, _, _ = np.linalg.svd(M, full_matrices=False)
    blend = U[:, :S] * SHAPE_UNIT
    W = np.zeros((len(_BODY25), J))
    for r, (_, weights) in enumerate(_BODY25):
        for name, w in weights.items():
            W[r, idx[name]] = w
    return Skeleton(
        names=names,
        parents=parents,
        rest_offsets=rest,
        shape_blend=blend,
        regressor=W,
        keypoint_names=[n for n, _ in _BODY25],
    )
