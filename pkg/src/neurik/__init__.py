"""Neural inverse kinematics: 3D keypoint streams to joint rotations, root
translations and body shape."""

__version__ = "0.1.0"
