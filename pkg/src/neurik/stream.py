"""Online inference over a frame-by-frame keypoint feed.

Three engines share one sliding window of standardized frames:

* ``one_by_one``: run on the current (possibly short) window, emit its last slot.
* ``lookahead``: once the window is full, emit slot ``L - d - 1``.
* ``averaging``: once full, file every slot's estimate under its frame and emit
  the aggregate for frame ``t - d``.

A predictor maps a standardized (T, K, 3) window to numpy
``(translation (T, 3), rot6d (T, J, 6), shape (S,))``; ``IKModel.predict``
is one.
"""

import resource
import sys
import time
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .datapipe import iter_keypoint_frames, standardize_frames
from .errors import ContractViolation, DegenerateFrame
from .kinematics import matrix_to_rot6d, rot6d_to_matrix

MODES = ("one_by_one", "lookahead", "averaging")


@dataclass
class StreamConfig:
    mode: str = "averaging"
    L: int = 16
    d: int = 0
    weighting: str = "uniform"  # or "center"
    shape_smoothing: float = None  # EMA factor in (0, 1), off by default

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.L < 1 or not 0 <= self.d < self.L:
            raise ContractViolation(f"need L >= 1 and 0 <= d < L, got L={self.L}, d={self.d}")
        if self.weighting not in ("uniform", "center"):
            raise ContractViolation(f"unknown weighting {self.weighting!r}")


@dataclass
class FrameOutput:
    t: int
    translation: np.ndarray  # (3,) world
    rotations: np.ndarray  # (J, 3, 3)
    shape: np.ndarray  # (S,)
    provenance: int = 1
    degenerate: bool = False

    def to_record(self):
        return {
            "frame": self.t,
            "trans": self.translation.tolist(),
            "rot6d": matrix_to_rot6d(self.rotations).tolist(),
            "shape": self.shape.tolist(),
            "provenance": self.provenance,
            **({"degenerate": True} if self.degenerate else {}),
        }


@dataclass
class _Slot:
    t: int
    keypoints: np.ndarray
    centroid: np.ndarray
    degenerate: bool


class StreamEngine:
    def __init__(self, predictor, cfg):
        self.predictor = predictor
        self.cfg = cfg
        self.window = deque(maxlen=cfg.L)
        self.t = -1
        self.forward_times = []
        self._queue = deque()
        self._bins = {}
        self._next_emit = 0
        self._shape_ema = None
        L = cfg.L
        if cfg.weighting == "center":
            self._weights = np.minimum(np.arange(1, L + 1), np.arange(L, 0, -1)).astype(np.float64)
        else:
            self._weights = np.ones(L)

    def push(self, frame):
        """Feed one raw (K, 3) frame; returns the frames emitted by this push."""
        self.t += 1
        frame = np.asarray(frame, dtype=np.float64)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateFrame)
            std, centroid, _ = standardize_frames(frame[None])
        degenerate = any(issubclass(w.category, DegenerateFrame) for w in caught)
        self.window.append(_Slot(self.t, std[0], centroid[0], degenerate))
        mode = self.cfg.mode
        if mode == "one_by_one":
            return self._push_one_by_one()
        if mode == "lookahead":
            return self._push_lookahead()
        return self._push_averaging()

    def flush(self):
        """End of stream. Emits nothing further and resets the engine."""
        self.window.clear()
        self._queue.clear()
        self._bins.clear()
        self._next_emit = self.t + 1
        return []

    def _run(self):
        x = np.stack([s.keypoints for s in self.window])
        t0 = time.perf_counter()
        trans, rot6d, shape = self.predictor(x)
        self.forward_times.append(time.perf_counter() - t0)
        return np.asarray(trans, dtype=np.float64), np.asarray(rot6d, dtype=np.float64), np.asarray(shape, dtype=np.float64)

    def _smooth(self, shape):
        a = self.cfg.shape_smoothing
        if a is None:
            return shape
        self._shape_ema = shape if self._shape_ema is None else a * self._shape_ema + (1 - a) * shape
        return self._shape_ema

    def _single(self, slot_index, trans, rot6d, shape):
        slot = self.window[slot_index]
        return FrameOutput(
            t=slot.t,
            translation=trans[slot_index] + slot.centroid,
            rotations=rot6d_to_matrix(rot6d[slot_index]),
            shape=self._smooth(shape),
            provenance=1,
            degenerate=slot.degenerate,
        )

    def _push_one_by_one(self):
        trans, rot6d, shape = self._run()
        return [self._single(len(self.window) - 1, trans, rot6d, shape)]

    def _push_lookahead(self):
        L, d = self.cfg.L, self.cfg.d
        if len(self.window) == L:
            trans, rot6d, shape = self._run()
            self._queue.append(self._single(L - d - 1, trans, rot6d, shape))
        return [self._queue.popleft()] if self._queue else []

    def _push_averaging(self):
        L, d = self.cfg.L, self.cfg.d
        if len(self.window) == L:
            trans, rot6d, shape = self._run()
            for i, slot in enumerate(self.window):
                if slot.t < self._next_emit:
                    continue  # already emitted
                b = self._bins.setdefault(slot.t, [])
                b.append((self._weights[i], trans[i] + slot.centroid, rot6d[i], shape, slot.degenerate))
        out = []
        # the first full window also releases the start-of-stream frames before t - d
        while self._next_emit <= self.t - d and self._next_emit in self._bins:
            out.append(self._aggregate(self._next_emit, self._bins.pop(self._next_emit)))
            self._next_emit += 1
        return out

    def _aggregate(self, t, estimates):
        w = np.array([e[0] for e in estimates])
        w = w / w.sum()
        trans = np.einsum("n,na->a", w, np.stack([e[1] for e in estimates]))
        rot6d = np.einsum("n,nja->ja", w, np.stack([e[2] for e in estimates]))
        shape = np.einsum("n,ns->s", w, np.stack([e[3] for e in estimates]))
        return FrameOutput(
            t=t,
            translation=trans,
            rotations=rot6d_to_matrix(rot6d),
            shape=self._smooth(shape),
            provenance=len(estimates),
            degenerate=any(e[4] for e in estimates),
        )

    @property
    def pending_estimates(self):
        return sum(len(b) for b in self._bins.values())


@dataclass
class TimingReport:
    mode: str
    frames: int = 0
    emitted: int = 0
    forwards: int = 0
    forward_mean: float = 0.0
    forward_p95: float = 0.0
    push_mean: float = 0.0
    total: float = 0.0
    peak_rss_mb: float = None
    push_times: list = field(default_factory=list, repr=False)

    def rows(self):
        mem = "unavailable" if self.peak_rss_mb is None else f"{self.peak_rss_mb:.1f} MB (peak RSS)"
        return [
            ("Memory consumption", mem),
            ("Forward pass duration per chunk", f"{self.forward_mean:.4f} seconds"),
            (f"Whole-sequence duration ({self.mode})", f"{self.total:.2f} seconds"),
        ]

    def table(self):
        rows = self.rows()
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:>{width}} | {value}" for name, value in rows)

    def to_dict(self):
        return {
            "mode": self.mode,
            "frames": self.frames,
            "emitted": self.emitted,
            "forwards": self.forwards,
            "forward_mean": self.forward_mean,
            "forward_p95": self.forward_p95,
            "push_mean": self.push_mean,
            "total": self.total,
            "peak_rss_mb": self.peak_rss_mb,
        }


def peak_rss_mb():
    try:
        kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    except (AttributeError, OSError):
        return None
    return kb / 1024.0 if sys.platform != "darwin" else kb / (1024.0 * 1024.0)


def run_offline(predictor, frames, cfg, on_output=None):
    """Replay frames (a path, an open stream, or an iterable of K x 3 arrays)
    through one engine. Returns (outputs, TimingReport)."""
    if isinstance(frames, str):
        with open(frames) as fh:
            return run_offline(predictor, iter_keypoint_frames(fh, frames), cfg, on_output)
    if hasattr(frames, "readline"):
        frames = iter_keypoint_frames(frames, getattr(frames, "name", "<stream>"))
    engine = StreamEngine(predictor, cfg)
    outputs, push_times = [], []
    start = time.perf_counter()
    for frame in frames:
        t0 = time.perf_counter()
        emitted = engine.push(frame)
        push_times.append(time.perf_counter() - t0)
        for o in emitted:
            outputs.append(o)
            if on_output:
                on_output(o)
    total = time.perf_counter() - start if push_times else 0.0
    ft = np.asarray(engine.forward_times)
    report = TimingReport(
        mode=cfg.mode,
        frames=len(push_times),
        emitted=len(outputs),
        forwards=len(ft),
        forward_mean=float(ft.mean()) if len(ft) else 0.0,
        forward_p95=float(np.percentile(ft, 95)) if len(ft) else 0.0,
        push_mean=float(np.mean(push_times)) if push_times else 0.0,
        total=total,
        peak_rss_mb=peak_rss_mb(),
        push_times=push_times,
    )
    return outputs, report
