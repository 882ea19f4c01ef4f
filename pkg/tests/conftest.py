import math
import sys

import numpy as np
import pytest

from neurik.kinematics import Skeleton
from neurik.model import ROT6D_IDENTITY

MARKER_STEP = 0.1
_PATTERN = np.array([[1.0, 0.0, 0.2], [-0.4, 0.7, -0.1], [-0.3, -0.5, 0.3], [-0.3, -0.2, -0.4]])


@pytest.fixture(scope="session")
def body():
    return Skeleton.default()


@pytest.fixture
def toy_skel():
    """3 joints, 4 keypoints, 2 shape dims."""
    rng = np.random.default_rng(11)
    return Skeleton(
        names=["root", "mid", "tip"],
        parents=[-1, 0, 1],
        rest_offsets=[[0, 0, 0], [0.05, 0.1, 0.5], [0.3, -0.05, 0.4]],
        shape_blend=rng.normal(0, 0.05, (9, 2)),
        regressor=rng.uniform(0.1, 1.0, (4, 3)),
    )


def chain_skeleton(offsets, S=0):
    J = len(offsets)
    return Skeleton(
        names=[f"j{i}" for i in range(J)],
        parents=[-1] + list(range(J - 1)),
        rest_offsets=offsets,
        shape_blend=np.zeros((J * 3, S)),
        regressor=np.eye(J),
    )


def random_rotations(rng, n):
    """Uniform random rotation matrices from normalized Gaussian quaternions."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=1,
    )


def marker_frame(t):
    """Zero-centroid keypoint frame whose heading encodes the frame index."""
    a = MARKER_STEP * t
    c, s = math.cos(a), math.sin(a)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    pts = _PATTERN - _PATTERN.mean(axis=0)
    return pts @ R.T


def decode_marker(std_frame):
    ref = _PATTERN - _PATTERN.mean(axis=0)
    a = math.atan2(std_frame[0, 1], std_frame[0, 0]) - math.atan2(ref[0, 1], ref[0, 0])
    return round((a % (2 * math.pi)) / MARKER_STEP)


class EchoStub:
    """Reports, for every window slot, the marker of the frame in that slot
    as the x translation."""

    def __init__(self, J=2, S=1, noise=0.0, seed=0):
        self.J, self.S = J, S
        self.noise = noise
        self.rng = np.random.default_rng(seed)
        self.calls = 0

    def __call__(self, window):
        self.calls += 1
        T = len(window)
        trans = np.zeros((T, 3))
        trans[:, 0] = [decode_marker(f) for f in window]
        if self.noise:
            trans[:, 0] += self.rng.normal(0.0, self.noise, size=T)
        rot = np.tile(ROT6D_IDENTITY, (T, self.J, 1)).reshape(T, self.J, 6)
        return trans, rot, np.zeros(self.S)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
