import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurik import tensorcore as tc
from neurik.errors import CheckpointMismatch, ChunkTooLong, ContractViolation, NumericalFault
from neurik.losses import total_loss
from neurik.model import IKModel, ModelConfig, init_weights, param_shapes, positional_encoding

from .conftest import random_rotations

TOY = dict(K=4, J=3, S=2, d_model=16, layers=2, heads=2, max_len=8, precision=64)


def toy_batch(skel, B=2, T=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, T, 3 * skel.K))
    true = random_rotations(rng, B * T * skel.J).reshape(B, T, skel.J, 3, 3)
    return x, true


def param_loss(model, skel, name, x, true):
    def f(p):
        saved = model.params[name]
        model.params[name] = p
        try:
            pred = model.forward(x)
            return total_loss(skel, pred, true, x.reshape(x.shape[0], x.shape[1], skel.K, 3)).total
        finally:
            model.params[name] = saved

    return f


# -- positional code --------------------------------------------------------------


def test_positional_encoding_values():
    pe = positional_encoding(10, 8)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    np.testing.assert_allclose(pe[:, 0], np.sin(np.arange(10)), atol=1e-15)
    np.testing.assert_allclose(pe[3, 5], math.cos(3 / 10000 ** (4 / 8)), atol=1e-15)
    assert np.abs(pe).max() <= 1.0


def test_positional_encoding_too_long():
    with pytest.raises(ChunkTooLong):
        positional_encoding(65, 8, max_len=64)


def test_forward_rejects_long_chunk():
    m = IKModel(ModelConfig(**TOY))
    with pytest.raises(ChunkTooLong):
        m.forward(np.zeros((1, 9, 12)))


# -- forward ---------------------------------------------------------------------


def test_single_frame_chunk():
    m = IKModel(ModelConfig(**TOY), seed=1)
    out = m.forward(np.random.default_rng(0).normal(size=(3, 1, 12)))
    assert out.translation.shape == (3, 1, 3)
    np.testing.assert_array_equal(out.attention.data, 1.0)


def test_batch_permutation():
    m = IKModel(ModelConfig(**TOY), seed=2)
    x = np.random.default_rng(1).normal(size=(4, 5, 12))
    perm = [2, 0, 3, 1]
    a, b = m.forward(x), m.forward(x[perm])
    for fa, fb in ((a.translation, b.translation), (a.rotations, b.rotations), (a.shape, b.shape)):
        np.testing.assert_allclose(fb.data, fa.data[perm], atol=1e-12)


def test_zero_weights():
    cfg = ModelConfig(**TOY)
    m = IKModel(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})
    out = m.forward(np.random.default_rng(2).normal(size=(2, 5, 12)))
    for t in (out.translation, out.rotations, out.shape):
        np.testing.assert_array_equal(t.data, 0.0)
    np.testing.assert_allclose(out.attention.data, 0.2)


@settings(max_examples=15, deadline=None)
@given(B=st.integers(1, 3), T=st.integers(1, 8), J=st.integers(1, 5), S=st.integers(0, 4), K=st.integers(1, 6))
def test_output_shapes(B, T, J, S, K):
    cfg = ModelConfig(K=K, J=J, S=S, d_model=8, layers=1, heads=2, max_len=8)
    out = IKModel(cfg).forward(np.random.default_rng(0).normal(size=(B, T, 3 * K)))
    assert out.translation.shape == (B, T, 3)
    assert out.rotations.shape == (B, T, J, 6)
    assert out.shape.shape == (B, S)
    w = out.attention.data
    assert w.shape == (B, T) and (w >= 0).all()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)


def test_forward_is_deterministic():
    m = IKModel(ModelConfig(**TOY), seed=3)
    x = np.random.default_rng(3).normal(size=(2, 4, 12))
    np.testing.assert_array_equal(m.forward(x).rotations.data, m.forward(x).rotations.data)


def test_wrong_input_width():
    with pytest.raises(ContractViolation):
        IKModel(ModelConfig(**TOY)).forward(np.zeros((1, 2, 11)))


def test_nonfinite_activation_reports_layer():
    cfg = ModelConfig(**TOY)
    w = init_weights(cfg, 0)
    w["encoder.layer1.ff.w1"][0, 0] = np.nan
    with pytest.raises(NumericalFault) as info:
        IKModel(cfg, w).forward(np.random.default_rng(0).normal(size=(1, 3, 12)))
    assert info.value.layer == 1


def test_dropout_rejected():
    with pytest.raises(ContractViolation):
        ModelConfig(dropout=0.1)


# -- init ------------------------------------------------------------------------


def test_init_deterministic_in_seed():
    cfg = ModelConfig(**TOY)
    a, b, c = init_weights(cfg, 5), init_weights(cfg, 5), init_weights(cfg, 6)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    assert any(not np.array_equal(a[k], c[k]) for k in a if a[k].any())


def test_init_is_near_identity(body):
    cfg = ModelConfig()
    out = IKModel(cfg, seed=0).forward(np.random.default_rng(4).normal(size=(2, 16, 75)))
    dev = np.abs(out.rotations.data - np.array([1, 0, 0, 0, 1, 0]))
    assert dev.max() < 0.5


def test_init_biases_zero_except_rotation():
    cfg = ModelConfig(**TOY)
    w = init_weights(cfg, 0)
    for k, v in w.items():
        if k.endswith(".b") and "ln" not in k or k.split(".")[-1] in ("b1", "bq", "bk", "bv", "bo"):
            assert not v.any(), k
    np.testing.assert_array_equal(w["readout.b2"][:3], 0.0)
    np.testing.assert_array_equal(w["readout.b2"][3:].reshape(cfg.J, 6), np.tile([1, 0, 0, 0, 1, 0], (cfg.J, 1)))


# -- gradients -------------------------------------------------------------------


@pytest.mark.parametrize(
    "name",
    ["readin.w", "encoder.layer0.attn.wq", "encoder.layer1.ff.w2", "encoder.layer0.ln1.g", "readout.b2", "pool.query", "shape.w"],
)
def test_full_loss_gradient(toy_skel, name):
    model = IKModel(ModelConfig(**TOY), seed=4)
    x, true = toy_batch(toy_skel)
    f = param_loss(model, toy_skel, name, x, true)
    assert tc.grad_check(f, model.params[name]) < 1e-4


# -- checkpoints ----------------------------------------------------------------------


@pytest.mark.parametrize("precision", [32, 64])
def test_checkpoint_roundtrip(tmp_path, precision):
    cfg = ModelConfig(**{**TOY, "precision": precision})
    m = IKModel(cfg, seed=7)
    p = tmp_path / "m.nik"
    m.save(p, {"epoch": 3})
    back = IKModel.load(p)
    assert back.cfg == cfg
    x = np.random.default_rng(0).normal(size=(1, 3, 12))
    np.testing.assert_array_equal(back.forward(x).rotations.data, m.forward(x).rotations.data)


def test_checkpoint_precision_override(tmp_path):
    m = IKModel(ModelConfig(**TOY), seed=1)
    m.save(tmp_path / "m.nik")
    back = IKModel.load(tmp_path / "m.nik", precision=32)
    assert back.params["readin.w"].dtype == np.float32


def test_checkpoint_mismatch():
    cfg = ModelConfig(**TOY)
    w = init_weights(cfg, 0)
    w["readin.w"] = np.zeros((3, 3))
    with pytest.raises(CheckpointMismatch, match="readin.w"):
        IKModel(cfg, w)
    w = init_weights(cfg, 0)
    del w["shape.b"]
    with pytest.raises(CheckpointMismatch):
        IKModel(cfg, w)
