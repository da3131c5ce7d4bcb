"""Command-line interface.

Exit codes: 0 success, 2 usage error (argparse), 3 data/format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch
from PIL import Image

from . import ablation, metrics
from .bitstream import BitstreamError
from .config import load_train_config
from .data import SyntheticClipSpec, load_clip, save_clip
from .model import load_checkpoint
from .pipeline import decode_video, encode_video, train_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxcodec",
                                     description="toy contextual video codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--lambda", dest="lam", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--steps", dest="T", type=int, default=None,
                   help="decode steps T (default 8)")
    p.add_argument("--train-steps", dest="steps", type=int, default=None,
                   help="optimizer steps (overrides config file)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=Path, default=None, help="JSON TrainConfig file")
    p.add_argument("--out", type=Path, required=True, help="checkpoint output path")
    p.add_argument("--init-from", type=Path, default=None,
                   help="previous stage checkpoint (stages 2 and 3)")
    p.add_argument("--resume", type=Path, default=None)

    p = sub.add_parser("encode", help="encode a clip directory to a bitstream")
    p.add_argument("input", type=Path, help="clip directory")
    p.add_argument("output", type=Path, help="bitstream file (.cgt)")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--steps", dest="T", type=int, default=8)
    p.add_argument("--alpha", type=float, default=None)

    p = sub.add_parser("decode", help="decode a bitstream to a frame directory")
    p.add_argument("input", type=Path, help="bitstream file (.cgt)")
    p.add_argument("output", type=Path, help="output directory")
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("eval", help="BD-rate between two RD-curve CSVs")
    p.add_argument("--anchor", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)

    p = sub.add_parser("gen", help="generate a synthetic clip directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bench", help="entropy-model timing for one context variant")
    p.add_argument("--variant", choices=("tcr", "full"), required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--frames", type=int, default=30)

    p = sub.add_parser("rd", help="sweep lambda checkpoints into an RD curve CSV")
    p.add_argument("--lambdas", type=str, default="256,512,1024,2048")
    p.add_argument("--checkpoint-dir", type=Path, required=True,
                   help="directory holding lambda{L}.pt checkpoints")
    p.add_argument("--data", type=Path, required=True,
                   help="clip directory, or directory of clip directories")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _load_clips(path: Path):
    if (path / "manifest.json").exists() or list(path.glob("*.png")):
        return [load_clip(path)]
    subdirs = sorted(p for p in path.iterdir() if p.is_dir())
    if not subdirs:
        raise FileNotFoundError(f"no clips found under {path}")
    return [load_clip(p) for p in subdirs]


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config, stage=args.stage, lam=args.lam,
                            alpha=args.alpha, T=args.T, steps=args.steps,
                            seed=args.seed)
    path = train_stage(cfg, args.out, init_from=args.init_from,
                       resume_from=args.resume,
                       on_log=lambda line: print(
                           f"step {line['step']}: total {line['total']:.1f} "
                           f"(rate_y {line['rate_y']:.1f} rate_z {line['rate_z']:.1f} "
                           f"mse {line['distortion']:.5f})"))
    print(f"checkpoint written to {path}")
    return 0


def _checkpoint_lambda(payload) -> int:
    lam = payload.get("lam")
    if lam is None and payload.get("train_config"):
        lam = payload["train_config"].get("lam")
    if lam is None:
        raise ValueError("checkpoint does not record its lambda")
    return lam


def _cmd_encode(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    lam = _checkpoint_lambda(payload)
    frames = torch.from_numpy(load_clip(args.input)).permute(0, 3, 1, 2)
    result = encode_video(model, frames, lam=lam, t_steps=args.T, alpha=args.alpha)
    args.output.write_bytes(result.stream)
    rate = metrics.bpp(len(result.stream), frames.shape[-2], frames.shape[-1],
                       frames.shape[0])
    print(f"{len(result.stream)} bytes, {frames.shape[0]} frames, {rate:.4f} bpp")
    return 0


def _cmd_decode(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    lam = _checkpoint_lambda(payload)
    result = decode_video(model, args.input.read_bytes(), lam=lam)
    args.output.mkdir(parents=True, exist_ok=True)
    frames = (result.frames.clamp(0, 1) * 255).round().byte().permute(0, 2, 3, 1).numpy()
    for t, frame in enumerate(frames):
        Image.fromarray(frame).save(args.output / f"frame_{t:04d}.png")
    print(f"decoded {len(frames)} frames to {args.output}")
    return 0


def _cmd_eval(args) -> int:
    anchor = ablation.read_curve_csv(args.anchor)
    test = ablation.read_curve_csv(args.test)
    print(f"BD-rate: {metrics.bd_rate(anchor, test):+.2f}%")
    return 0


def _cmd_gen(args) -> int:
    spec = SyntheticClipSpec(seed=args.seed, frames=args.frames, size=args.size)
    save_clip(args.out, spec)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    report = ablation.bench_entropy_time(args.checkpoint, args.variant,
                                         frames=args.frames)
    print(f"{report['variant']}: entropy {report['entropy_ms']:.1f} ms/frame, "
          f"encode {report['encode_ms']:.1f} ms/frame, "
          f"decode {report['decode_ms']:.1f} ms/frame "
          f"(median over {report['frames']} frames)")
    return 0


def _cmd_rd(args) -> int:
    lambdas = [int(v) for v in args.lambdas.split(",") if v]
    checkpoints = {}
    for lam in lambdas:
        path = args.checkpoint_dir / f"lambda{lam}.pt"
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}")
        checkpoints[lam] = path
    clips = _load_clips(args.data)
    rows = ablation.rd_points(checkpoints, [torch.from_numpy(c).permute(0, 3, 1, 2)
                                            for c in clips])
    ablation.write_curve_csv(args.out, rows)
    for row in rows:
        print(f"lambda {row['lambda']}: {row['bpp']:.4f} bpp, {row['psnr']:.2f} dB")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "gen": _cmd_gen,
    "bench": _cmd_bench,
    "rd": _cmd_rd,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (BitstreamError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
