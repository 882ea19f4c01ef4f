"""Training objectives: geodesic, orthonormality, cycle consistency, and
their unit-weighted sum."""

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .kinematics import (
    ACOS_CLAMP,
    forward_kinematics_t,
    regress_keypoints_t,
    rot6d_to_matrix_t,
)

NORM_EPS = 1e-12


def _const(x, dtype):
    return x if isinstance(x, tc.Tensor) else tc.Tensor(np.asarray(x, dtype=dtype))


def geodesic_loss(pred6d, true_rotmats, pred_rotmats=None):
    """Mean angle between predicted (6D) and true rotation matrices."""
    Rp = rot6d_to_matrix_t(pred6d) if pred_rotmats is None else pred_rotmats
    Rt = _const(true_rotmats, pred6d.dtype)
    tr = (Rp * Rt).sum(axis=-1).sum(axis=-1)
    cos = tc.clamp((tr - 1.0) * 0.5, -1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP)
    return tc.arccos(cos).mean()


def orthonormality_loss(pred6d):
    a = pred6d[..., 0:3]
    b = pred6d[..., 3:6]
    aa = (a * a).sum(axis=-1)
    bb = (b * b).sum(axis=-1)
    ab = (a * b).sum(axis=-1)
    per = tc.square(aa - 1.0) + tc.square(bb - 1.0) + tc.square(ab) / (aa * bb + NORM_EPS)
    return per.mean()


def scale_only_t(kp, floor=1e-8):
    """Per-frame standardization scale applied without centering; kp is (..., K, 3)."""
    centered = kp - kp.mean(axis=-2, keepdims=True)
    var = tc.square(centered).mean(axis=-1, keepdims=True).mean(axis=-2, keepdims=True)
    return kp / tc.clamp(tc.sqrt(var), lo=floor)


def predicted_keypoints_t(skel, shape, trans, rotmats):
    return regress_keypoints_t(skel, forward_kinematics_t(skel, shape, trans, rotmats))


def cycle_consistency_loss(
    skel, shape, trans, pred6d, target_kp, pred_rotmats=None, scale_source="self", target_scale=None
):
    """MSE between regenerated keypoints (scaled, not centred) and the
    standardized input keypoints.

    ``scale_source="target"`` divides by the input frames' own scale
    (``target_scale``, shape (B, T)) instead of the prediction's.
    """
    Rp = rot6d_to_matrix_t(pred6d) if pred_rotmats is None else pred_rotmats
    kp = predicted_keypoints_t(skel, shape, trans, Rp)
    if scale_source == "self":
        kp = scale_only_t(kp)
    elif scale_source == "target":
        s = np.maximum(np.asarray(target_scale, dtype=kp.dtype), 1e-8)
        kp = kp / tc.Tensor(s[..., None, None])
    else:
        raise ValueError(f"unknown cycle scale source {scale_source!r}")
    diff = kp - _const(target_kp, kp.dtype)
    return tc.square(diff).mean()


@dataclass
class LossBreakdown:
    geodesic: object
    orthonormality: object
    cycle: object
    total: object

    def as_floats(self):
        def f(v):
            return v.item() if isinstance(v, tc.Tensor) else float(v)

        return {
            "geodesic": f(self.geodesic),
            "orthonormality": f(self.orthonormality),
            "cycle": f(self.cycle),
            "total": f(self.total),
        }


def combine(geodesic, orthonormality, cycle, weights=(1.0, 1.0, 1.0)):
    wg, wo, wc = weights
    total = geodesic * wg + orthonormality * wo + cycle * wc
    return LossBreakdown(geodesic, orthonormality, cycle, total)


def total_loss(skel, pred, true_rotmats, target_kp, weights=(1.0, 1.0, 1.0), scale_source="self", target_scale=None):
    """All three terms for a model prediction (``model.PoseEstimate``)."""
    Rp = rot6d_to_matrix_t(pred.rotations)
    g = geodesic_loss(pred.rotations, true_rotmats, pred_rotmats=Rp)
    o = orthonormality_loss(pred.rotations)
    c = cycle_consistency_loss(
        skel,
        pred.shape,
        pred.translation,
        pred.rotations,
        target_kp,
        pred_rotmats=Rp,
        scale_source=scale_source,
        target_scale=target_scale,
    )
    return combine(g, o, c, weights)
