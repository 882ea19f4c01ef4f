"""Chunk-length and rotation-augmentation ablations at desk scale."""

import math
from dataclasses import replace

from . import datapipe as dp
from .training import train


def orientation_biased_config(band=0.3, swing=0.15):
    """Synthetic motions that all face roughly the same way."""
    return dp.SynthConfig(yaw_range=(0.0, band), yaw_swing=swing)


def synth_dataset(skel, n, frames, fps=30.0, seed=0, cfg=None):
    lo, hi = frames
    out = []
    for i in range(n):
        T = lo if lo == hi else lo + (seed * 7919 + i * 104729) % (hi - lo + 1)
        out.append(dp.synthesize_motion(skel, seed * 100003 + i, T, fps, cfg))
    return out


def ablate_chunk(motions, skel, lengths, model_cfg, train_cfg, batch_frames=None, log=None):
    """One run per chunk length, same seed and initial weights.

    With ``batch_frames`` set, each run uses ``batch_frames // L`` chunks per
    batch so every length sees the same number of frames per step.
    Returns {L: [val total per epoch]} and the full histories.
    """
    curves, histories = {}, {}
    for L in lengths:
        cfg = replace(train_cfg, L=L)
        if batch_frames:
            cfg = replace(cfg, batch_size=max(1, batch_frames // L))
        mcfg = replace(model_cfg, max_len=max(model_cfg.max_len, L))
        res = train(mcfg, cfg, motions, skel, log=(lambda r, L=L: log(L, r)) if log else None)
        histories[L] = res.history
        curves[L] = [r["val"]["total"] if r["val"] else math.nan for r in res.history]
    return curves, histories


def ablate_rotation(motions, skel, model_cfg, train_cfg, runs=("on", "off"), log=None):
    """Two runs differing only in the augmentation flag.

    Returns {run: {"train": [...], "val": [...]}} of per-epoch totals.
    """
    out = {}
    for run in runs:
        cfg = replace(train_cfg, augment_rotation=(run == "on"))
        res = train(model_cfg, cfg, motions, skel, log=(lambda r, run=run: log(run, r)) if log else None)
        out[run] = {
            "train": [r["train"]["total"] for r in res.history],
            "val": [r["val"]["total"] if r["val"] else math.nan for r in res.history],
            "initial_weights_seed": cfg.seed,
        }
    return out


def final_gap(curve):
    return curve["val"][-1] - curve["train"][-1]


def write_columns(path, columns):
    """Tab-separated, one header row, equal-length columns (NaN-padded)."""
    names = list(columns)
    n = max(len(c) for c in columns.values())
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for i in range(n):
            row = []
            for k in names:
                c = columns[k]
                v = c[i] if i < len(c) else math.nan
                row.append(str(v) if isinstance(v, int) else f"{v:.6g}")
            fh.write("\t".join(row) + "\n")


def read_columns(path):
    with open(path) as fh:
        names = fh.readline().rstrip("\n").split("\t")
        cols = {k: [] for k in names}
        for line in fh:
            for k, v in zip(names, line.rstrip("\n").split("\t")):
                cols[k].append(float(v))
    return cols
