"""Keypoint-to-pose transformer.

Per frame: affine read-in of the flattened standardized keypoints, additive
sinusoidal position code, pre-norm encoder layers attending over time, and a
two-layer MLP read-out to root translation plus one 6D rotation per joint.
Shape comes from single-query attention pooling over all frames.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensorcore as tc
from .errors import CheckpointMismatch, ChunkTooLong, ContractViolation, NumericalFault

ROT6D_IDENTITY = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
READOUT_GAIN = 0.1


@dataclass
class ModelConfig:
    K: int = 25
    J: int = 24
    S: int = 10
    d_model: int = 128
    layers: int = 6
    heads: int = 4
    ff_dim: int = None
    max_len: int = 64
    dropout: float = 0.0
    precision: int = 32

    def __post_init__(self):
        if self.ff_dim is None:
            self.ff_dim = 4 * self.d_model
        if self.d_model % self.heads:
            raise ContractViolation(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.dropout != 0.0:
            raise ContractViolation("dropout is not implemented; use 0")

    @property
    def dtype(self):
        return tc.DTYPES[self.precision]

    @property
    def out_dim(self):
        return 3 + 6 * self.J


@dataclass
class PoseEstimate:
    translation: object  # (B, T, 3) relative to each frame's keypoint centroid
    rotations: object  # (B, T, J, 6)
    shape: object  # (B, S)
    attention: object  # (B, T) pooling weights


def positional_encoding(T, d_model, max_len=None):
    if max_len is not None and T > max_len:
        raise ChunkTooLong(f"chunk of {T} frames exceeds max_len {max_len}")
    pos = np.arange(T)[:, None]
    i = np.arange(0, d_model, 2)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((T, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def param_shapes(cfg):
    d, f = cfg.d_model, cfg.ff_dim
    shapes = {"readin.w": (3 * cfg.K, d), "readin.b": (d,)}
    for i in range(cfg.layers):
        p = f"encoder.layer{i}."
        shapes.update(
            {
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "attn.wq": (d, d),
                p + "attn.bq": (d,),
                p + "attn.wk": (d, d),
                p + "attn.bk": (d,),
                p + "attn.wv": (d, d),
                p + "attn.bv": (d,),
                p + "attn.wo": (d, d),
                p + "attn.bo": (d,),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "ff.w1": (d, f),
                p + "ff.b1": (f,),
                p + "ff.w2": (f, d),
                p + "ff.b2": (d,),
            }
        )
    shapes.update(
        {
            "encoder.ln_f.g": (d,),
            "encoder.ln_f.b": (d,),
            "readout.w1": (d, d),
            "readout.b1": (d,),
            "readout.w2": (d, cfg.out_dim),
            "readout.b2": (cfg.out_dim,),
            "pool.query": (d,),
            "pool.wk": (d, d),
            "pool.wv": (d, d),
            "shape.w": (d, cfg.S),
            "shape.b": (cfg.S,),
        }
    )
    return shapes


def init_weights(cfg, seed=0):
    """Glorot-uniform matrices (gain 1, read-out output gain 0.1), zero biases,
    unit layer-norm gains, identity rotation bias on the read-out."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if len(shape) == 2:
            gain = READOUT_GAIN if name == "readout.w2" else 1.0
            a = gain * math.sqrt(6.0 / (shape[0] + shape[1]))
            w = rng.uniform(-a, a, size=shape)
        elif name == "pool.query":
            a = math.sqrt(3.0 / shape[0])
            w = rng.uniform(-a, a, size=shape)
        elif leaf == "g":
            w = np.ones(shape)
        else:
            w = np.zeros(shape)
        out[name] = w.astype(cfg.dtype)
    out["readout.b2"][3:] = np.tile(ROT6D_IDENTITY, cfg.J).astype(cfg.dtype)
    return out


class IKModel:
    def __init__(self, cfg, weights=None, seed=0):
        self.cfg = cfg
        weights = init_weights(cfg, seed) if weights is None else weights
        expected = param_shapes(cfg)
        for name, shape in expected.items():
            if name not in weights:
                raise CheckpointMismatch(f"missing parameter {name!r}")
            if tuple(np.shape(weights[name])) != shape:
                raise CheckpointMismatch(f"{name!r}: shape {np.shape(weights[name])} != expected {shape}")
        extra = set(weights) - set(expected)
        if extra:
            raise CheckpointMismatch(f"unexpected parameters: {sorted(extra)}")
        self.params = {
            k: tc.Tensor(np.asarray(weights[k], dtype=cfg.dtype), requires_grad=True, name=k) for k in expected
        }
        self._pe = positional_encoding(cfg.max_len, cfg.d_model).astype(cfg.dtype)

    def weights(self):
        return {k: t.data for k, t in self.params.items()}

    def copy_weights(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def _attention(self, h, p, B, T):
        P = self.params
        H, dh = self.cfg.heads, self.cfg.d_model // self.cfg.heads

        def split(x):
            return x.reshape(B, T, H, dh).permute((0, 2, 1, 3))

        q = split(tc.linear(h, P[p + "wq"], P[p + "bq"]))
        k = split(tc.linear(h, P[p + "wk"], P[p + "bk"]))
        v = split(tc.linear(h, P[p + "wv"], P[p + "bv"]))
        att = tc.softmax((q @ k.transpose()) * (1.0 / math.sqrt(dh)), axis=-1)
        ctx = (att @ v).permute((0, 2, 1, 3)).reshape(B, T, self.cfg.d_model)
        return tc.linear(ctx, P[p + "wo"], P[p + "bo"])

    def forward(self, x):
        """x: (B, T, 3K) standardized, flattened keypoints."""
        cfg, P = self.cfg, self.params
        x = x if isinstance(x, tc.Tensor) else tc.Tensor(np.asarray(x, dtype=cfg.dtype))
        if x.ndim != 3 or x.shape[2] != 3 * cfg.K:
            raise ContractViolation(f"model input must be (B, T, {3 * cfg.K}), got {x.shape}")
        B, T = x.shape[0], x.shape[1]
        if T < 1 or T > cfg.max_len:
            raise ChunkTooLong(f"chunk of {T} frames outside [1, {cfg.max_len}]")
        try:
            h = tc.linear(x, P["readin.w"], P["readin.b"]) + tc.Tensor(self._pe[:T])
        except NumericalFault as e:
            raise NumericalFault(str(e), layer="readin") from None
        for i in range(cfg.layers):
            p = f"encoder.layer{i}."
            try:
                a = tc.layer_norm(h, P[p + "ln1.g"], P[p + "ln1.b"])
                h = h + self._attention(a, p + "attn.", B, T)
                f = tc.layer_norm(h, P[p + "ln2.g"], P[p + "ln2.b"])
                f = tc.linear(tc.silu(tc.linear(f, P[p + "ff.w1"], P[p + "ff.b1"])), P[p + "ff.w2"], P[p + "ff.b2"])
                h = h + f
            except NumericalFault as e:
                raise NumericalFault(str(e), layer=i) from None
        try:
            h = tc.layer_norm(h, P["encoder.ln_f.g"], P["encoder.ln_f.b"])
            y = tc.linear(tc.silu(tc.linear(h, P["readout.w1"], P["readout.b1"])), P["readout.w2"], P["readout.b2"])
            trans = y[:, :, 0:3]
            rots = y[:, :, 3:].reshape(B, T, cfg.J, 6)

            keys = tc.linear(h, P["pool.wk"])
            vals = tc.linear(h, P["pool.wv"])
            q = P["pool.query"].reshape(cfg.d_model, 1)
            scores = (keys @ q).reshape(B, T) * (1.0 / math.sqrt(cfg.d_model))
            w = tc.softmax(scores, axis=-1)
            pooled = (w.reshape(B, 1, T) @ vals).reshape(B, cfg.d_model)
            shape = tc.linear(pooled, P["shape.w"], P["shape.b"])
        except NumericalFault as e:
            raise NumericalFault(str(e), layer="readout") from None
        return PoseEstimate(trans, rots, shape, w)

    __call__ = forward

    def predict(self, window):
        """Untaped forward on one (T, K, 3) standardized window.

        Returns numpy (translation (T, 3), rot6d (T, J, 6), shape (S,)).
        """
        window = np.asarray(window, dtype=self.cfg.dtype)
        out = self.forward(window.reshape(1, window.shape[0], -1))
        return out.translation.data[0], out.rotations.data[0], out.shape.data[0]

    def save(self, path, extra=None):
        meta = {"model_config": asdict(self.cfg)}
        meta.update(extra or {})
        tc.save_tensors(path, self.weights(), precision=self.cfg.precision, extra=meta)

    @classmethod
    def load(cls, path, precision=None):
        arrays, header = tc.load_tensors(path)
        try:
            cfg_dict = dict(header["extra"]["model_config"])
        except KeyError:
            raise CheckpointMismatch(f"{path}: no embedded model config") from None
        if precision is not None:
            cfg_dict["precision"] = precision
        cfg = ModelConfig(**cfg_dict)
        return cls(cfg, arrays)
