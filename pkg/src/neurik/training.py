"""Training loop: motion-level train/val split, per-batch Z rotation, Adam
with a warm phase followed by geometric decay."""

import json
import math
import os
import shutil
import time
from dataclasses import dataclass, field

import numpy as np

from . import datapipe as dp
from . import tensorcore as tc
from .errors import ContractViolation, DataEmpty, NumericalFault
from .kinematics import rot_z
from .losses import total_loss
from .model import IKModel


@dataclass
class TrainConfig:
    epochs: int = 100
    lr_warm: float = 1e-3
    warm_epochs: int = 10
    lr_hi: float = 1e-4
    lr_lo: float = 1e-5
    batch_size: int = 64
    L: int = 16
    val_fraction: float = 0.05
    seed: int = 0
    checkpoint_every: int = 10
    augment_rotation: bool = True
    clip_norm: float = None
    loss_weights: tuple = (1.0, 1.0, 1.0)
    cycle_scale_source: str = "self"
    keypoint_noise: float = 0.0
    max_steps: int = None

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ContractViolation("val_fraction must lie in (0, 1)")
        if not 0 <= self.warm_epochs < self.epochs:
            raise ContractViolation("warm_epochs must be smaller than epochs")
        self.loss_weights = tuple(self.loss_weights)


def lr_schedule(epoch, cfg):
    if not 0 <= epoch < cfg.epochs:
        raise ContractViolation(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warm_epochs:
        return cfg.lr_warm
    span = cfg.epochs - cfg.warm_epochs - 1
    if span == 0:
        return cfg.lr_hi
    return cfg.lr_hi * (cfg.lr_lo / cfg.lr_hi) ** ((epoch - cfg.warm_epochs) / span)


def split_motions(n, val_fraction, rng):
    """Motion ids for (train, val). At least one motion stays in training."""
    n_val = min(math.ceil(n * val_fraction - 1e-9), n - 1)
    order = rng.permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


@dataclass
class ChunkSet:
    keypoints: np.ndarray  # (N, L, K, 3) standardized
    scale: np.ndarray  # (N, L)
    rotmats: np.ndarray  # (N, L, J, 3, 3)
    rel_trans: np.ndarray  # (N, L, 3)
    shape: np.ndarray  # (N, S)
    motion_id: np.ndarray  # (N,)

    def __len__(self):
        return len(self.keypoints)

    def subset(self, idx):
        return ChunkSet(*(a[idx] for a in self._arrays()))

    def _arrays(self):
        return self.keypoints, self.scale, self.rotmats, self.rel_trans, self.shape, self.motion_id


def build_chunks(motions, skel, L, ids=None, noise_std=0.0, seed=0):
    cfg = dp.ChunkerConfig(L)
    ids = range(len(motions)) if ids is None else ids
    rng = np.random.default_rng(seed)
    parts = {k: [] for k in ("kp", "scale", "rot", "trans", "shape", "mid")}
    for i in ids:
        m = motions[i]
        kp, tg = dp.make_training_pairs(m, skel, noise_std=noise_std, rng=rng)
        std, _, scale = dp.standardize_frames(kp.frames)
        for arr, key in ((std, "kp"), (scale, "scale"), (tg.rotmats, "rot"), (tg.rel_translations, "trans")):
            parts[key].extend(dp.chunk(arr, cfg))
        n = len(dp.chunk_spans(len(m), cfg))
        parts["shape"].extend([tg.shape] * n)
        parts["mid"].extend([i] * n)
    if not parts["kp"]:
        K, J = skel.K, skel.J
        return ChunkSet(
            np.zeros((0, L, K, 3)), np.zeros((0, L)), np.zeros((0, L, J, 3, 3)),
            np.zeros((0, L, 3)), np.zeros((0, skel.S)), np.zeros(0, dtype=np.int64),
        )
    return ChunkSet(
        np.stack(parts["kp"]),
        np.stack(parts["scale"]),
        np.stack(parts["rot"]),
        np.stack(parts["trans"]),
        np.stack(parts["shape"]),
        np.asarray(parts["mid"], dtype=np.int64),
    )


def rotate_batch(batch, angle):
    """Rotate keypoints and targets of a chunk batch coherently about Z."""
    Rz = rot_z(angle)
    rot = batch.rotmats.copy()
    rot[:, :, 0] = Rz @ rot[:, :, 0]
    return ChunkSet(
        batch.keypoints @ Rz.T, batch.scale, rot, batch.rel_trans @ Rz.T, batch.shape, batch.motion_id
    )


def batch_loss(model, skel, batch, cfg):
    dtype = model.cfg.dtype
    n, L = batch.keypoints.shape[:2]
    x = batch.keypoints.reshape(n, L, -1).astype(dtype)
    pred = model.forward(x)
    lb = total_loss(
        skel,
        pred,
        batch.rotmats.astype(dtype),
        batch.keypoints.astype(dtype),
        weights=cfg.loss_weights,
        scale_source=cfg.cycle_scale_source,
        target_scale=batch.scale,
    )
    return lb, pred


def evaluate(model, skel, chunks, cfg):
    """Mean loss breakdown over a chunk set (no tape), weighted by chunk count."""
    if len(chunks) == 0:
        return None
    sums, total = {}, 0
    for start in range(0, len(chunks), cfg.batch_size):
        b = chunks.subset(slice(start, start + cfg.batch_size))
        lb, _ = batch_loss(model, skel, b, cfg)
        for k, v in lb.as_floats().items():
            sums[k] = sums.get(k, 0.0) + v * len(b)
        total += len(b)
    return {k: v / total for k, v in sums.items()}


@dataclass
class TrainResult:
    model: IKModel
    history: list
    train_ids: np.ndarray
    val_ids: np.ndarray
    out_dir: str = None
    steps: int = 0
    checkpoints: list = field(default_factory=list)


def train(model_cfg, cfg, motions, skel, out_dir=None, log=None, init_seed=None):
    """Fit a fresh model on ``motions``.

    Writes ``metrics.jsonl``, periodic ``epoch_XXXX.nik`` checkpoints,
    ``last.nik`` and ``best.val.nik`` into ``out_dir`` when given.
    """
    if not motions:
        raise DataEmpty("no motions to train on")
    rng = np.random.default_rng(cfg.seed)
    train_ids, val_ids = split_motions(len(motions), cfg.val_fraction, rng)
    train_set = build_chunks(motions, skel, cfg.L, train_ids, cfg.keypoint_noise, seed=cfg.seed)
    val_set = build_chunks(motions, skel, cfg.L, val_ids, cfg.keypoint_noise, seed=cfg.seed + 1)
    if len(train_set) == 0:
        raise DataEmpty("training motions yield no chunks")
    assert not set(train_set.motion_id.tolist()) & set(val_ids.tolist())

    model = IKModel(model_cfg, seed=cfg.seed if init_seed is None else init_seed)
    opt = tc.Adam(model.params)
    result = TrainResult(model, [], train_ids, val_ids, out_dir)
    metrics_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")
    best_val = math.inf
    good = model.copy_weights()
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            sums, count = {}, 0
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                    break
                batch = train_set.subset(order[start : start + cfg.batch_size])
                if cfg.augment_rotation:
                    batch = rotate_batch(batch, rng.uniform(0.0, 2 * math.pi))
                opt.zero_grad()
                with tc.Tape() as tape:
                    lb, _ = batch_loss(model, skel, batch, cfg)
                tc.backward(tape, lb.total)
                if not all(np.isfinite(t.grad).all() for t in model.params.values()):
                    raise NumericalFault(f"non-finite gradient at epoch {epoch}")
                opt.step(lr, clip_norm=cfg.clip_norm)
                result.steps += 1
                for k, v in lb.as_floats().items():
                    sums[k] = sums.get(k, 0.0) + v * len(batch)
                count += len(batch)
            if count == 0:
                break
            train_losses = {k: v / count for k, v in sums.items()}
            val_losses = evaluate(model, skel, val_set, cfg)
            good = model.copy_weights()
            record = {
                "epoch": epoch,
                "lr": lr,
                "train": train_losses,
                "val": val_losses,
                "steps": result.steps,
                "wall": time.perf_counter() - t0,
            }
            result.history.append(record)
            if log:
                log(record)
            if out_dir:
                metrics_fh.write(json.dumps(record) + "\n")
                metrics_fh.flush()
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    path = os.path.join(out_dir, f"epoch_{epoch + 1:04d}.nik")
                    model.save(path, {"epoch": epoch})
                    result.checkpoints.append(path)
                model.save(os.path.join(out_dir, "last.nik"), {"epoch": epoch})
                score = val_losses["total"] if val_losses else train_losses["total"]
                if score < best_val:
                    best_val = score
                    shutil.copyfile(os.path.join(out_dir, "last.nik"), os.path.join(out_dir, "best.val.nik"))
    except NumericalFault:
        if out_dir:
            IKModel(model_cfg, good).save(os.path.join(out_dir, "last.nik"))
        raise
    finally:
        if metrics_fh:
            metrics_fh.close()
    return result
