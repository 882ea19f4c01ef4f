"""Motion/keypoint files, resampling, chunking, standardization, Z-rotation
augmentation and the synthetic motion generator."""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateFrame, NeurikError, UpsampleUnsupported
from .kinematics import (
    Pose,
    axis_angle_to_matrix,
    forward_kinematics,
    matrix_to_rot6d,
    regress_keypoints,
    rot6d_to_matrix,
    rot_z,
)

FILE_VERSION = "1"
SCALE_FLOOR = kernels.SCALE_FLOOR


class DataFileError(NeurikError, OSError):
    pass


@dataclass
class MotionSequence:
    fps: float
    shape: np.ndarray  # (S,)
    translations: np.ndarray  # (T, 3)
    rotations: np.ndarray  # (T, J, 6)

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        self.shape = np.asarray(self.shape, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if len(self.rotations) != len(self.translations):
            raise ValueError("translations and rotations disagree on frame count")

    def __len__(self):
        return len(self.translations)

    def frame(self, t):
        return Pose(self.translations[t], self.rotations[t])


@dataclass
class KeypointSequence:
    fps: float
    frames: np.ndarray  # (T, K, 3) world metres

    def __len__(self):
        return len(self.frames)


@dataclass
class Targets:
    shape: np.ndarray  # (S,)
    rotmats: np.ndarray  # (T, J, 3, 3)
    rel_translations: np.ndarray  # (T, 3) root translation minus keypoint centroid


@dataclass
class KeypointChunk:
    keypoints: np.ndarray  # (L, K, 3) standardized
    centroid: np.ndarray  # (L, 3)
    scale: np.ndarray  # (L,)


@dataclass
class ChunkerConfig:
    L: int = 16
    stride: int = None
    min_keep: int = None

    def __post_init__(self):
        if self.stride is None:
            self.stride = max(self.L // 2, 1)
        if self.min_keep is None:
            self.min_keep = max(self.L // 2, 1)
        if not (0 < self.stride <= self.L) or not (0 < self.min_keep <= self.L):
            raise ValueError(f"invalid chunker config {self}")


# -- resampling and chunking --------------------------------------------------


def resample_indices(n_frames, src_fps, target_fps):
    if target_fps > src_fps:
        raise UpsampleUnsupported(f"cannot resample {src_fps} fps up to {target_fps} fps")
    if n_frames == 0:
        return np.zeros(0, dtype=np.int64)
    ratio = src_fps / target_fps
    count = int(math.floor((n_frames - 1) / ratio + 1e-9)) + 1
    return np.floor(np.arange(count) * ratio + 0.5).astype(np.int64)


def resample(m, target_fps):
    """Nearest-index decimation; no interpolation."""
    if isinstance(m, KeypointSequence):
        idx = resample_indices(len(m), m.fps, target_fps)
        return KeypointSequence(target_fps, m.frames[idx])
    idx = resample_indices(len(m), m.fps, target_fps)
    return MotionSequence(target_fps, m.shape, m.translations[idx], m.rotations[idx])


def chunk_spans(T, cfg):
    """(start, valid_length) of each window; the first partial window is the
    final one and is kept only if it has at least ``min_keep`` frames."""
    spans = []
    start = 0
    while start + cfg.L <= T:
        spans.append((start, cfg.L))
        start += cfg.stride
    if start < T and T - start >= cfg.min_keep:
        spans.append((start, T - start))
    return spans


def chunk(seq, cfg):
    """Length-L windows over the leading axis, tails padded with the last frame."""
    seq = np.asarray(seq)
    out = []
    for start, n in chunk_spans(len(seq), cfg):
        w = seq[start : start + n]
        if n < cfg.L:
            w = np.concatenate([w, np.repeat(w[-1:], cfg.L - n, axis=0)], axis=0)
        out.append(w)
    return out


# -- standardization ----------------------------------------------------------


def standardize_frames(frames):
    """(T, K, 3) -> (standardized, centroids (T, 3), scales (T,))."""
    frames = np.asarray(frames, dtype=np.float64)
    out, centroid, scale = kernels.standardize_frames(frames)
    if (scale < SCALE_FLOOR).any():
        warnings.warn("coincident keypoints; scale clamped", DegenerateFrame, stacklevel=2)
    return out, centroid, scale


def standardize(frame):
    """One K x 3 frame: zero per-axis mean, unit combined std."""
    out, c, s = standardize_frames(np.asarray(frame)[None])
    return out[0], c[0], float(s[0])


def scale_only(frame):
    """Divide by the standardization scale without subtracting the mean."""
    frame = np.asarray(frame, dtype=np.float64)
    _, _, s = standardize(frame)
    return frame / max(s, SCALE_FLOOR)


def make_chunk(frames):
    std, c, s = standardize_frames(frames)
    return KeypointChunk(std, c, s)


# -- augmentation -------------------------------------------------------------


def rotate_z(x, angle):
    """Rotate about +Z. Arrays are treated as (..., 3) points; motions have
    their translations rotated and their root rotation pre-multiplied."""
    Rz = rot_z(angle)
    if isinstance(x, MotionSequence):
        rots = x.rotations.copy()
        rots[:, 0] = matrix_to_rot6d(Rz @ rot6d_to_matrix(rots[:, 0]))
        return MotionSequence(x.fps, x.shape, x.translations @ Rz.T, rots)
    if isinstance(x, KeypointSequence):
        return KeypointSequence(x.fps, x.frames @ Rz.T)
    x = np.asarray(x)
    return x @ Rz.T.astype(x.dtype)


# -- synthesis ----------------------------------------------------------------


@dataclass
class SynthConfig:
    amplitude: float = 1.2  # max axis-angle norm per joint, rad
    max_freq: float = 0.8  # Hz
    min_freq: float = 0.1
    shape_bound: float = 1.0
    root_tilt: float = 0.25  # rad, about X/Y
    yaw_range: tuple = (0.0, 2 * math.pi)  # initial heading
    yaw_swing: float = 1.0  # rad, heading oscillation amplitude
    root_amplitude: float = 0.8  # m, horizontal path amplitude
    bob: float = 0.03  # m, vertical oscillation
    extra: dict = field(default_factory=dict)


def _sinusoids(rng, T, fps, cfg, amp, dims):
    """Sum of 1-3 sinusoids per output dim; |value| <= amp per dim."""
    t = np.arange(T) / fps
    out = np.zeros((T, dims))
    for d in range(dims):
        n = rng.integers(1, 4)
        weights = rng.dirichlet(np.ones(n)) * amp * rng.uniform(0.3, 1.0)
        freqs = rng.uniform(cfg.min_freq, cfg.max_freq, size=n)
        phases = rng.uniform(0, 2 * math.pi, size=n)
        out[:, d] = (weights[None] * np.sin(2 * math.pi * freqs[None] * t[:, None] + phases[None])).sum(axis=1)
    return out


def synthesize_motion(skel, seed, T, fps=30.0, cfg=None):
    """Deterministic smooth random motion.

    Joints whose rotation cannot move any keypoint are held still: leaf joints
    entirely, and joints whose only child is a leaf lose the twist about that
    bone.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    J = skel.J
    shape = rng.uniform(-cfg.shape_bound, cfg.shape_bound, size=skel.S)
    offsets = skel.offsets(shape)

    per_axis = cfg.amplitude / math.sqrt(3.0)
    aa = np.zeros((T, J, 3))
    for j in range(1, J):
        if skel.is_leaf(j):
            continue
        a = _sinusoids(rng, T, fps, cfg, per_axis, 3)
        kids = skel.children(j)
        if len(kids) == 1 and skel.is_leaf(kids[0]):
            u = offsets[kids[0]] / np.linalg.norm(offsets[kids[0]])
            a = a - (a @ u)[:, None] * u[None]
        aa[:, j] = a
    local = axis_angle_to_matrix(aa)

    yaw0 = rng.uniform(*cfg.yaw_range)
    yaw = yaw0 + _sinusoids(rng, T, fps, cfg, cfg.yaw_swing, 1)[:, 0]
    tilt = _sinusoids(rng, T, fps, cfg, cfg.root_tilt, 2)
    tilt_m = axis_angle_to_matrix(np.concatenate([tilt, np.zeros((T, 1))], axis=1))
    yaw_m = np.stack([rot_z(a) for a in yaw])
    local[:, 0] = yaw_m @ tilt_m

    rest = forward_kinematics(skel, shape, Pose(np.zeros(3), np.tile(np.eye(3), (J, 1, 1))))
    ground = -rest[:, 2].min()
    trans = np.zeros((T, 3))
    trans[:, :2] = _sinusoids(rng, T, fps, cfg, cfg.root_amplitude, 2) + rng.uniform(-1, 1, size=2)
    trans[:, 2] = ground + _sinusoids(rng, T, fps, cfg, cfg.bob, 1)[:, 0]
    return MotionSequence(fps, shape, trans, matrix_to_rot6d(local))


def motion_keypoints(m, skel):
    joints = forward_kinematics(skel, m.shape, Pose(m.translations, m.rotations))
    return regress_keypoints(skel, joints)


def make_training_pairs(m, skel, noise_std=0.0, rng=None):
    """Keypoints via FK + regressor, and targets with the translation
    re-expressed relative to each frame's keypoint centroid."""
    kp = motion_keypoints(m, skel)
    centroid = kp.mean(axis=1)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        kp = kp + rng.normal(0.0, noise_std, size=kp.shape)
    targets = Targets(m.shape.copy(), rot6d_to_matrix(m.rotations), m.translations - centroid)
    return KeypointSequence(m.fps, kp), targets


# -- file I/O -----------------------------------------------------------------


def _meta(fps):
    return {"version": FILE_VERSION, "fps": float(fps)}


def save_motion(path, m, ndjson=False):
    frames = [{"trans": t.tolist(), "rot6d": r.tolist()} for t, r in zip(m.translations, m.rotations)]
    with open(path, "w") as fh:
        if ndjson:
            fh.write(json.dumps({"meta": _meta(m.fps), "shape": m.shape.tolist()}) + "\n")
            for f in frames:
                fh.write(json.dumps(f) + "\n")
        else:
            json.dump({"meta": _meta(m.fps), "shape": m.shape.tolist(), "frames": frames}, fh)


def save_keypoints(path, k, ndjson=False):
    with open(path, "w") as fh:
        if ndjson:
            fh.write(json.dumps({"meta": _meta(k.fps)}) + "\n")
            for f in k.frames:
                fh.write(json.dumps(f.tolist()) + "\n")
        else:
            json.dump({"meta": _meta(k.fps), "frames": k.frames.tolist()}, fh)


def _read_doc(fh, path):
    """Whole-document JSON, or header line + one frame per line."""
    text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    lines = text.splitlines()
    try:
        doc = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as e:
        raise DataFileError(f"{path}: unreadable header line 1: {e}") from None
    frames = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            frames.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataFileError(f"{path}: line {i} (frame {len(frames)}): {e}") from None
    doc["frames"] = frames
    return doc


def load_motion(path):
    with open(path) as fh:
        doc = _read_doc(fh, path)
    frames = doc["frames"]
    return MotionSequence(
        fps=doc["meta"]["fps"],
        shape=doc["shape"],
        translations=np.array([f["trans"] for f in frames], dtype=np.float64).reshape(-1, 3),
        rotations=np.array([f["rot6d"] for f in frames], dtype=np.float64),
    )


def load_keypoints(path):
    with open(path) as fh:
        doc = _read_doc(fh, path)
    frames = doc["frames"]
    arr = np.array(frames, dtype=np.float64)
    if len(frames) == 0:
        arr = np.zeros((0, 0, 3))
    elif arr.ndim != 3 or arr.shape[2] != 3:
        raise DataFileError(f"{path}: frames must be K x 3 arrays, got shape {arr.shape}")
    return KeypointSequence(doc["meta"]["fps"], arr)


def iter_keypoint_frames(fh, name="<stream>"):
    """Yield K x 3 frames from a keypoint stream (either layout), reading
    newline-delimited input incrementally."""
    first = fh.readline()
    if not first.strip():
        return
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        doc = json.loads(first + fh.read())
        for f in doc["frames"]:
            yield np.asarray(f, dtype=np.float64)
        return
    if "frames" in head:
        for f in head["frames"]:
            yield np.asarray(f, dtype=np.float64)
        return
    for i, line in enumerate(fh, start=2):
        if not line.strip():
            continue
        try:
            frame = np.asarray(json.loads(line), dtype=np.float64)
        except (json.JSONDecodeError, ValueError) as e:
            raise DataFileError(f"{name}: line {i}: {e}") from None
        if frame.ndim != 2 or frame.shape[1] != 3:
            raise DataFileError(f"{name}: line {i}: expected K x 3 frame, got shape {frame.shape}")
        yield frame
