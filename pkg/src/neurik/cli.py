"""``neurik`` command line: synth, train, infer, bench, ablate-chunk,
ablate-rotation.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical fault.
"""

import argparse
import glob
import json
import os
import sys
import time
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__
from . import ablation as ab
from . import datapipe as dp
from .errors import CheckpointMismatch, ContractViolation, DataEmpty, NumericalFault
from .kinematics import Skeleton
from .model import IKModel, ModelConfig
from .stream import StreamConfig, run_offline
from .training import TrainConfig, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _pick(cls, d):
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in (d or {}).items() if k in names}


def load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def write_manifest(out_dir, command, config, seed, outputs, wall):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": outputs,
        "wall_time": wall,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)
    return manifest


def _skeleton(args, data_dir=None):
    if getattr(args, "skeleton", None):
        return Skeleton.load(args.skeleton)
    if data_dir and os.path.exists(os.path.join(data_dir, "skeleton.json")):
        return Skeleton.load(os.path.join(data_dir, "skeleton.json"))
    return Skeleton.default()


def _load_motions(data_dir):
    paths = sorted(glob.glob(os.path.join(data_dir, "motion_*.json")))
    if not paths:
        raise DataEmpty(f"no motion_*.json files in {data_dir}")
    return [dp.load_motion(p) for p in paths]


def _model_config(args, conf, skel):
    d = _pick(ModelConfig, conf.get("model"))
    for key in ("d_model", "layers", "heads", "max_len"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    d.update(K=skel.K, J=skel.J, S=skel.S, precision=args.precision)
    return ModelConfig(**d)


def _train_config(args, conf):
    d = _pick(TrainConfig, conf.get("train"))
    for key in ("epochs", "batch_size", "L", "max_steps", "val_fraction", "warm_epochs"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "no_augment", False):
        d["augment_rotation"] = False
    d["seed"] = args.seed
    return TrainConfig(**d)


def _print_epoch(tag=""):
    def log(r):
        val = r["val"]["total"] if r["val"] else float("nan")
        print(
            f"{tag}epoch {r['epoch']:4d} lr {r['lr']:.2e} "
            f"train {r['train']['total']:.5f} (geo {r['train']['geodesic']:.4f} "
            f"on {r['train']['orthonormality']:.4f} cc {r['train']['cycle']:.4f}) val {val:.5f}",
            flush=True,
        )

    return log


# -- commands -----------------------------------------------------------------


def cmd_synth(args, conf):
    t0 = time.perf_counter()
    skel = _skeleton(args)
    scfg = dp.SynthConfig(**_pick(dp.SynthConfig, conf.get("synth")))
    if args.biased:
        scfg = replace(scfg, yaw_range=(0.0, 0.3), yaw_swing=0.15)
    os.makedirs(args.out, exist_ok=True)
    motions = ab.synth_dataset(skel, args.n, tuple(args.frames), args.fps, args.seed, scfg)
    outputs = []
    for i, m in enumerate(motions):
        mp = os.path.join(args.out, f"motion_{i:04d}.json")
        kp = os.path.join(args.out, f"keypoints_{i:04d}.json")
        dp.save_motion(mp, m)
        dp.save_keypoints(kp, dp.KeypointSequence(m.fps, dp.motion_keypoints(m, skel)), ndjson=args.ndjson)
        outputs += [mp, kp]
    skel.save(os.path.join(args.out, "skeleton.json"))
    outputs.append(os.path.join(args.out, "skeleton.json"))
    cfg = {"n": args.n, "frames": args.frames, "fps": args.fps, "synth": asdict(scfg)}
    write_manifest(args.out, "synth", cfg, args.seed, outputs, time.perf_counter() - t0)
    print(f"wrote {len(motions)} motion and keypoint file pairs to {args.out}")
    return 0


def cmd_train(args, conf):
    t0 = time.perf_counter()
    skel = _skeleton(args, args.data)
    motions = _load_motions(args.data)
    mcfg = _model_config(args, conf, skel)
    tcfg = _train_config(args, conf)
    if mcfg.max_len < tcfg.L:
        mcfg = replace(mcfg, max_len=tcfg.L)
    res = train(mcfg, tcfg, motions, skel, out_dir=args.out, log=_print_epoch())
    cfg = {"model": asdict(mcfg), "train": asdict(tcfg), "data": args.data}
    outs = [os.path.join(args.out, n) for n in ("metrics.jsonl", "last.nik", "best.val.nik")] + res.checkpoints
    write_manifest(args.out, "train", cfg, args.seed, outs, time.perf_counter() - t0)
    return 0


def _stream_config(args, model):
    L = args.L if args.L is not None else 16
    if L > model.cfg.max_len:
        raise CheckpointMismatch(f"window L={L} exceeds the checkpoint's max_len {model.cfg.max_len}")
    return StreamConfig(mode=args.mode, L=L, d=args.d, weighting=args.weighting)


def _check_frames(frames, model):
    for i, f in enumerate(frames):
        if f.shape != (model.cfg.K, 3):
            raise CheckpointMismatch(f"frame {i} has shape {f.shape}, checkpoint expects ({model.cfg.K}, 3)")
        yield f


def _run_stream(args, timing_only):
    t0 = time.perf_counter()
    model = IKModel.load(args.checkpoint, precision=args.precision)
    scfg = _stream_config(args, model)
    out_fh = None
    if not timing_only:
        out_fh = sys.stdout if args.output in (None, "-") else open(args.output, "w")

    def emit(o):
        out_fh.write(json.dumps(o.to_record()) + "\n")

    src = sys.stdin if args.input == "-" else open(args.input)
    try:
        frames = _check_frames(dp.iter_keypoint_frames(src, args.input), model)
        _, report = run_offline(model.predict, frames, scfg, on_output=None if timing_only else emit)
    finally:
        if src is not sys.stdin:
            src.close()
        if out_fh not in (None, sys.stdout):
            out_fh.close()
    print(report.table(), file=sys.stderr if not timing_only else sys.stdout)
    if timing_only:
        print(json.dumps(report.to_dict()))
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    if args.output not in (None, "-") or args.report:
        anchor = args.output if args.output not in (None, "-") else args.report
        write_manifest(
            os.path.dirname(os.path.abspath(anchor)),
            "bench" if timing_only else "infer",
            {"stream": asdict(scfg), "checkpoint": args.checkpoint, "input": args.input},
            args.seed,
            [p for p in (args.output, args.report) if p not in (None, "-")],
            time.perf_counter() - t0,
        )
    return 0


def cmd_infer(args, conf):
    return _run_stream(args, timing_only=False)


def cmd_bench(args, conf):
    return _run_stream(args, timing_only=True)


def _ablation_data(args, skel, biased):
    if args.data:
        return _load_motions(args.data)
    scfg = ab.orientation_biased_config() if biased else None
    return ab.synth_dataset(skel, args.n, tuple(args.frames), 30.0, args.seed, scfg)


def cmd_ablate_chunk(args, conf):
    t0 = time.perf_counter()
    skel = _skeleton(args, args.data)
    motions = _ablation_data(args, skel, biased=False)
    lengths = [int(x) for x in args.lengths.split(",")]
    mcfg = _model_config(args, conf, skel)
    mcfg = replace(mcfg, max_len=max(mcfg.max_len, max(lengths)))
    tcfg = _train_config(args, conf)
    if args.noise is not None:
        tcfg = replace(tcfg, keypoint_noise=args.noise)
    curves, _ = ab.ablate_chunk(
        motions, skel, lengths, mcfg, tcfg, batch_frames=args.batch_frames,
        log=lambda L, r: print(f"L={L:3d} epoch {r['epoch']:3d} val {r['val']['total']:.5f}", flush=True),
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablate_chunk.tsv")
    cols = {"epoch": list(range(len(next(iter(curves.values())))))}
    cols.update({f"val_L{L}": c for L, c in curves.items()})
    ab.write_columns(path, cols)
    print("final validation loss by chunk length:")
    for L, c in curves.items():
        print(f"  L={L:3d}  {c[-1]:.5f}")
    write_manifest(
        args.out, "ablate-chunk",
        {"lengths": lengths, "model": asdict(mcfg), "train": asdict(tcfg), "batch_frames": args.batch_frames},
        args.seed, [path], time.perf_counter() - t0,
    )
    return 0


def cmd_ablate_rotation(args, conf):
    t0 = time.perf_counter()
    skel = _skeleton(args, args.data)
    motions = _ablation_data(args, skel, biased=True)
    runs = tuple(args.runs.split(","))
    mcfg = _model_config(args, conf, skel)
    tcfg = _train_config(args, conf)
    out = ab.ablate_rotation(
        motions, skel, mcfg, tcfg, runs=runs,
        log=lambda run, r: print(
            f"rotation {run:3s} epoch {r['epoch']:3d} train {r['train']['total']:.5f} val {r['val']['total']:.5f}",
            flush=True,
        ),
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablate_rotation.tsv")
    cols = {"epoch": list(range(len(next(iter(out.values()))["train"])))}
    for run, c in out.items():
        cols[f"train_{run}"] = c["train"]
        cols[f"val_{run}"] = c["val"]
    ab.write_columns(path, cols)
    for run, c in out.items():
        print(f"  augmentation {run:3s}: final train/val gap {ab.final_gap(c):.5f}")
    write_manifest(
        args.out, "ablate-rotation", {"runs": runs, "model": asdict(mcfg), "train": asdict(tcfg)},
        args.seed, [path], time.perf_counter() - t0,
    )
    return 0


# -- parser -------------------------------------------------------------------


def _frames_pair(s):
    parts = [int(x) for x in s.split(",")]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or parts[0] < 1 or parts[0] > parts[1]:
        raise argparse.ArgumentTypeError("expected T or TMIN,TMAX with 1 <= TMIN <= TMAX")
    return parts


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file with optional model/train/synth sections")
    common.add_argument("--precision", type=int, choices=(32, 64), default=32)
    common.add_argument("--skeleton", help="skeleton JSON (default: bundled 24-joint body)")

    p = argparse.ArgumentParser(
        prog="neurik",
        description="Learned inverse kinematics from 3D keypoints.",
        epilog="exit codes: 0 success, 2 usage error, 3 data error, 4 numerical fault",
        parents=[common],
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic motion/keypoint files")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--frames", type=_frames_pair, default=[200, 200], help="T or TMIN,TMAX")
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--out", required=True)
    s.add_argument("--ndjson", action="store_true", help="keypoints as one frame per line")
    s.add_argument("--biased", action="store_true", help="all motions face a narrow band of headings")
    s.set_defaults(func=cmd_synth)

    def model_args(q):
        q.add_argument("--d-model", dest="d_model", type=int)
        q.add_argument("--layers", type=int)
        q.add_argument("--heads", type=int)
        q.add_argument("--max-len", dest="max_len", type=int)

    def train_args(q):
        q.add_argument("--epochs", type=int)
        q.add_argument("--warm-epochs", dest="warm_epochs", type=int)
        q.add_argument("--batch-size", dest="batch_size", type=int)
        q.add_argument("--max-steps", dest="max_steps", type=int)
        q.add_argument("--val-fraction", dest="val_fraction", type=float)
        q.add_argument("--no-augment", dest="no_augment", action="store_true")

    t = sub.add_parser("train", parents=[common], help="train a model on a synth directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--L", type=int)
    model_args(t)
    train_args(t)
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (
        ("infer", cmd_infer, "stream a keypoint file through a checkpoint"),
        ("bench", cmd_bench, "timing-only variant of infer"),
    ):
        q = sub.add_parser(name, parents=[common], help=help_)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--input", required=True, help="keypoint file, or - for stdin")
        q.add_argument("--mode", choices=("one_by_one", "lookahead", "averaging"), default="averaging")
        q.add_argument("--L", type=int)
        q.add_argument("--d", type=int, default=0)
        q.add_argument("--weighting", choices=("uniform", "center"), default="uniform")
        q.add_argument("--report", help="write the timing report as JSON")
        if name == "infer":
            q.add_argument("--output", help="NDJSON output path (default stdout)")
        else:
            q.set_defaults(output=None)
        q.set_defaults(func=func)

    ablations = (
        ("ablate-chunk", cmd_ablate_chunk, "validation loss curves for several chunk lengths"),
        ("ablate-rotation", cmd_ablate_rotation, "train/val gap with and without rotation augmentation"),
    )
    for name, func, help_ in ablations:
        q = sub.add_parser(name, parents=[common], help=help_)
        q.add_argument("--data", help="synth directory (default: generate in memory)")
        q.add_argument("--out", required=True)
        q.add_argument("--n", type=int, default=24, help="motions to generate when --data is absent")
        q.add_argument("--frames", type=_frames_pair, default=[90, 150])
        model_args(q)
        train_args(q)
        if name == "ablate-chunk":
            q.add_argument("--lengths", default="2,4,8,16,32")
            q.add_argument("--batch-frames", dest="batch_frames", type=int, default=256)
            q.add_argument("--noise", type=float, help="keypoint noise std in metres")
        else:
            q.add_argument("--runs", default="on,off")
        q.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "d", None) is not None and args.command in ("infer", "bench"):
        L = args.L if args.L is not None else 16
        if not 0 <= args.d < L:
            parser.error(f"--d must satisfy 0 <= d < L (got d={args.d}, L={L})")
    try:
        conf = load_config(args.config)
        return args.func(args, conf)
    except NumericalFault as e:
        print(f"numerical fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataEmpty, CheckpointMismatch, dp.DataFileError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
