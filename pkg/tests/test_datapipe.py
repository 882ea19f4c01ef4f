import io
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from neurik import datapipe as dp
from neurik.errors import DegenerateFrame, UpsampleUnsupported
from neurik.kinematics import Pose, forward_kinematics, geodesic_distance, identity_rot6d, rot6d_to_matrix, rot_z

from .conftest import random_rotations


def brute_windows(T, L):
    """Enumerate windows from the rule: full windows every L/2 frames, then a
    remainder that is kept (padded with its last frame) only if it has at
    least L/2 frames."""
    stride = half = L // 2
    frames = list(range(T))
    out = []
    k = 0
    while k * stride + L <= T:
        out.append(frames[k * stride : k * stride + L])
        k += 1
    rest = frames[k * stride :]
    if rest and len(rest) >= half:
        out.append(rest + [rest[-1]] * (L - len(rest)))
    return out


# -- resampling ------------------------------------------------------------------


def _motion(T, fps=60.0, J=2):
    rot = np.tile(identity_rot6d(J), (T, 1, 1))
    return dp.MotionSequence(fps, np.zeros(1), np.arange(T * 3.0).reshape(T, 3), rot)


def test_resample_halves_frames():
    out = dp.resample(_motion(10), 30.0)
    np.testing.assert_array_equal(out.translations[:, 0], np.arange(0, 10, 2) * 3.0)
    assert out.fps == 30.0


def test_resample_same_rate_is_identity():
    m = _motion(7, 30.0)
    out = dp.resample(m, 30.0)
    np.testing.assert_array_equal(out.translations, m.translations)


def test_resample_empty():
    assert len(dp.resample(_motion(0, 30.0), 30.0)) == 0


def test_resample_refuses_upsampling():
    with pytest.raises(UpsampleUnsupported):
        dp.resample(_motion(5, 30.0), 60.0)


def test_resample_nearest_index_non_integer_ratio():
    # 50 -> 30 fps: ratio 5/3, indices floor(i * 5/3 + 0.5)
    np.testing.assert_array_equal(dp.resample_indices(10, 50.0, 30.0), [0, 2, 3, 5, 7, 8])


# -- chunking --------------------------------------------------------------------


def test_chunk_exact_length():
    out = dp.chunk(np.arange(16), dp.ChunkerConfig(16))
    np.testing.assert_array_equal(out[0], np.arange(16))
    # the half-length remainder after the first stride is kept, as for T=40
    assert len(out) == 2
    np.testing.assert_array_equal(out[1], list(range(8, 16)) + [15] * 8)


def test_chunk_half_tail_is_kept_and_padded():
    out = dp.chunk(np.arange(40), dp.ChunkerConfig(16))
    assert [w[0] for w in out] == [0, 8, 16, 24, 32]
    np.testing.assert_array_equal(out[-1], list(range(32, 40)) + [39] * 8)


def test_chunk_too_short():
    assert dp.chunk(np.arange(7), dp.ChunkerConfig(16)) == []


@pytest.mark.parametrize("L", [4, 8, 16])
def test_chunk_matches_enumeration(L):
    for T in range(1, 101):
        got = [w.tolist() for w in dp.chunk(np.arange(T), dp.ChunkerConfig(L))]
        assert got == brute_windows(T, L), (T, L)


@settings(max_examples=100)
@given(T=st.integers(0, 300), L=st.integers(1, 32))
def test_chunk_spans_cover_with_stride(T, L):
    cfg = dp.ChunkerConfig(L)
    spans = dp.chunk_spans(T, cfg)
    starts = [s for s, _ in spans]
    assert starts == list(range(0, cfg.stride * len(spans), cfg.stride))
    for s, n in spans[:-1]:
        assert n == L
    if spans and spans[-1][1] < L:
        assert spans[-1][1] >= cfg.min_keep
        assert spans[-1][0] + spans[-1][1] == T


def test_chunk_keeps_trailing_axes():
    x = np.random.default_rng(0).normal(size=(20, 5, 3))
    out = dp.chunk(x, dp.ChunkerConfig(8))
    assert all(w.shape == (8, 5, 3) for w in out)


# -- standardization -----------------------------------------------------------------


def test_standardize_two_points():
    out, c, s = dp.standardize(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
    np.testing.assert_allclose(c, [1, 0, 0])
    assert s == pytest.approx(math.sqrt(2 / 6))
    assert s == pytest.approx(0.57735, abs=1e-5)
    np.testing.assert_allclose(out, [[-1.73205, 0, 0], [1.73205, 0, 0]], atol=1e-5)


def test_standardize_idempotent():
    f = np.random.default_rng(1).normal(size=(25, 3))
    once, _, _ = dp.standardize(f)
    twice, c, s = dp.standardize(once)
    np.testing.assert_allclose(twice, once, atol=1e-12)
    assert s == pytest.approx(1.0, abs=1e-12)


def test_standardize_degenerate_warns():
    with pytest.warns(DegenerateFrame):
        out, _, _ = dp.standardize(np.ones((4, 3)))
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(out, 0.0)


def test_scale_only_examples():
    np.testing.assert_allclose(
        dp.scale_only(np.array([[0.0, 0, 0], [2.0, 0, 0]])), [[0, 0, 0], [3.4641, 0, 0]], atol=1e-4
    )
    f = np.random.default_rng(2).normal(size=(6, 3))
    f -= f.mean(axis=0)
    np.testing.assert_allclose(dp.scale_only(f), dp.standardize(f)[0], atol=1e-12)
    with pytest.warns(DegenerateFrame):
        np.testing.assert_array_equal(dp.scale_only(np.zeros((3, 3))), 0.0)


frames = arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)), elements=st.floats(-50, 50))


@settings(max_examples=200)
@given(frames)
def test_standardize_invariants(f):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFrame)
        out, _, s = dp.standardize(f)
    if s < 1e-6:
        return
    assert np.abs(out.mean(axis=0)).max() <= 1e-9
    assert abs(np.sqrt((out**2).mean()) - 1) <= 1e-9


@settings(max_examples=200)
@given(frames, st.floats(-10, 10))
def test_rotation_commutes_with_standardize(f, theta):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFrame)
        a, _, s = dp.standardize(dp.rotate_z(f, theta))
        b = dp.rotate_z(dp.standardize(f)[0], theta)
    if s < 1e-6:
        return
    np.testing.assert_allclose(a, b, atol=1e-9)


# -- rotation about Z -------------------------------------------------------------


def test_rotate_z_examples():
    x = np.random.default_rng(3).normal(size=(5, 3))
    np.testing.assert_array_equal(dp.rotate_z(x, 0.0), x)
    np.testing.assert_allclose(dp.rotate_z(x, 2 * math.pi), x, atol=1e-12)
    np.testing.assert_allclose(dp.rotate_z(np.array([1.0, 0, 0]), math.pi / 2), [0, 1, 0], atol=1e-15)


@settings(max_examples=100)
@given(st.floats(-7, 7), st.floats(-7, 7))
def test_rotate_z_composes(a, b):
    x = np.random.default_rng(4).normal(size=(4, 3))
    np.testing.assert_allclose(dp.rotate_z(dp.rotate_z(x, a), b), dp.rotate_z(x, a + b), atol=1e-9)


# -- synthesis and targets -----------------------------------------------------------


def test_synth_deterministic(body):
    a = dp.synthesize_motion(body, 5, 50, 30.0)
    b = dp.synthesize_motion(body, 5, 50, 30.0)
    np.testing.assert_array_equal(a.rotations, b.rotations)
    np.testing.assert_array_equal(a.translations, b.translations)
    np.testing.assert_array_equal(a.shape, b.shape)


def test_synth_zero_amplitude_is_constant(body):
    cfg = dp.SynthConfig(amplitude=0.0, root_tilt=0.0, root_amplitude=0.0, yaw_swing=0.0, bob=0.0)
    m = dp.synthesize_motion(body, 1, 30, 30.0, cfg)
    np.testing.assert_allclose(m.rotations, np.broadcast_to(m.rotations[0], m.rotations.shape), atol=1e-12)
    np.testing.assert_allclose(m.translations, np.broadcast_to(m.translations[0], m.translations.shape), atol=1e-12)


def test_synth_smooth(body):
    m = dp.synthesize_motion(body, 0, 200, 30.0)
    assert len(m) == 200 and m.rotations.shape == (200, body.J, 6)
    R = rot6d_to_matrix(m.rotations)
    assert geodesic_distance(R[1:], R[:-1]).max() < 0.3


def test_training_pairs_identity_pose(body):
    T = 3
    trans = np.array([[0.0, 0, 1], [0.5, 0, 1], [1.0, 0.2, 1]])
    m = dp.MotionSequence(30.0, np.zeros(body.S), trans, np.tile(identity_rot6d(body.J), (T, 1, 1)))
    kp, _ = dp.make_training_pairs(m, body)
    cum = np.zeros((body.J, 3))
    for j in range(1, body.J):
        cum[j] = cum[body.parents[j]] + body.rest_offsets[j]
    for t in range(T):
        np.testing.assert_allclose(kp.frames[t], body.regressor @ (cum + trans[t]), atol=1e-12)


def test_training_pairs_translation_roundtrip(body):
    m = dp.synthesize_motion(body, 2, 40, 30.0)
    kp, tg = dp.make_training_pairs(m, body)
    np.testing.assert_allclose(tg.rel_translations + kp.frames.mean(axis=1), m.translations, atol=1e-9)


def test_training_pairs_equivariant_under_z_rotation(body):
    m = dp.synthesize_motion(body, 4, 20, 30.0)
    theta = 0.7
    _, a = dp.make_training_pairs(m, body)
    kp_b, b = dp.make_training_pairs(dp.rotate_z(m, theta), body)
    Rz = rot_z(theta)
    np.testing.assert_allclose(b.rotmats[:, 0], Rz @ a.rotmats[:, 0], atol=1e-12)
    np.testing.assert_allclose(b.rotmats[:, 1:], a.rotmats[:, 1:], atol=1e-12)
    np.testing.assert_allclose(b.rel_translations, a.rel_translations @ Rz.T, atol=1e-12)


def test_motion_keypoints_agree_with_fk(body):
    m = dp.synthesize_motion(body, 6, 5, 30.0)
    R = random_rotations(np.random.default_rng(0), body.J)
    m.rotations[2] = np.concatenate([R[..., 0], R[..., 1]], axis=-1)
    joints = forward_kinematics(body, m.shape, Pose(m.translations[2], R))
    np.testing.assert_allclose(dp.motion_keypoints(m, body)[2], body.regressor @ joints, atol=1e-12)


# -- files -----------------------------------------------------------------------------


@pytest.mark.parametrize("ndjson", [False, True])
def test_motion_file_roundtrip(tmp_path, body, ndjson):
    m = dp.synthesize_motion(body, 8, 12, 30.0)
    p = tmp_path / "m.json"
    dp.save_motion(p, m, ndjson=ndjson)
    back = dp.load_motion(p)
    assert back.fps == 30.0
    np.testing.assert_array_equal(back.rotations, m.rotations)
    np.testing.assert_array_equal(back.translations, m.translations)
    np.testing.assert_array_equal(back.shape, m.shape)


@pytest.mark.parametrize("ndjson", [False, True])
def test_keypoint_file_roundtrip_and_stream(tmp_path, ndjson):
    k = dp.KeypointSequence(25.0, np.random.default_rng(0).normal(size=(6, 4, 3)))
    p = tmp_path / "k.json"
    dp.save_keypoints(p, k, ndjson=ndjson)
    np.testing.assert_array_equal(dp.load_keypoints(p).frames, k.frames)
    with open(p) as fh:
        streamed = list(dp.iter_keypoint_frames(fh, str(p)))
    np.testing.assert_array_equal(np.stack(streamed), k.frames)


def test_stream_reports_bad_line():
    text = json.dumps({"meta": {"version": "1", "fps": 30}}) + "\n[[0,0,0]]\n[[1,2\n"
    with pytest.raises(dp.DataFileError, match="line 3"):
        list(dp.iter_keypoint_frames(io.StringIO(text), "feed"))


def test_stream_rejects_wrong_frame_shape():
    text = json.dumps({"meta": {"version": "1", "fps": 30}}) + "\n[1, 2, 3]\n"
    with pytest.raises(dp.DataFileError, match="line 2"):
        list(dp.iter_keypoint_frames(io.StringIO(text)))


def test_empty_stream_yields_nothing():
    assert list(dp.iter_keypoint_frames(io.StringIO(""))) == []
