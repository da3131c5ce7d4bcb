"""Encode/decode orchestration and the staged training loop.

Encoding replays exactly the decoder's selection loop: at every step the
shared decoder is run on the current partial latent (quantized symbols at
revealed positions only), the dependency scores rank the still-masked
positions, and the chosen positions' symbols are coded under their predicted
Gaussian tables before being revealed to the model state. Decoding performs
the identical walk, reading symbols instead of writing them, so both sides
stay in lockstep as long as they share the checkpoint and host.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .bitstream import BitstreamError, FrameChunk, StreamHeader, read_stream, write_stream
from .coder import (RangeDecoder, RangeEncoder, decode_value, discretized_gaussian_pmf,
                    encode_value, quantize_pmf, table_bits)
from .codec import gaussian_likelihood, quantize_latents
from .config import ModelConfig, TrainConfig, lambda_index
from .dwsca import (attention_importance, certainty_map, dependency_scores, hard_topk,
                    random_mask, select_and_unmask)
from .model import VideoCodec, load_checkpoint, save_checkpoint
from .schedule import sinusoidal_schedule

LOG2E = float(np.log2(np.e))


# ---------------------------------------------------------------------------
# ordering strategies
# ---------------------------------------------------------------------------

def ordering_plan(strategy: str, h: int, w: int, t_steps: int, frame_index: int,
                  seed: int = 0):
    """Pre-planned reveal order for non-dependency strategies, or None.

    "random" chunks a fixed-seed permutation by the sinusoidal schedule;
    "checkerboard" covers all anchor-parity positions (row-major) in the first
    half of the steps and the rest in the second half, each half on its own
    sinusoidal schedule.
    """
    if strategy == "dependency":
        return None
    n = h * w
    if strategy == "random":
        sched = sinusoidal_schedule(n, t_steps)
        perm = np.random.default_rng([seed, frame_index]).permutation(n)
        return _chunk(perm, sched.steps)
    if strategy == "checkerboard":
        if t_steps < 2:
            raise ValueError("checkerboard ordering needs at least two steps")
        idx = np.arange(n)
        parity = (idx // w + idx % w) % 2
        anchors, others = idx[parity == 0], idx[parity == 1]
        t_a = (t_steps + 1) // 2
        plan = _chunk(anchors, sinusoidal_schedule(len(anchors), t_a).steps)
        plan += _chunk(others, sinusoidal_schedule(len(others), t_steps - t_a).steps)
        return plan
    raise ValueError(f"unknown ordering strategy {strategy!r}")


def _chunk(indices, counts):
    out, pos = [], 0
    for k in counts:
        out.append(indices[pos:pos + k])
        pos += k
    return out


# ---------------------------------------------------------------------------
# frame-level selection loop (shared by encoder and decoder)
# ---------------------------------------------------------------------------

def _memory_fn(model: VideoCodec, y_prev, y_hp, y_tp):
    return lambda: model.entropy.build_memory(y_prev, y_hp, y_tp)


def _code_frame(model: VideoCodec, memory_fn, t_steps: int, alpha: float,
                plan, y_true=None, segments=None):
    """Walk the reveal schedule once.

    `memory_fn` rebuilds the fused temporal memory and is called every round
    (resample + fuse sit inside the decode loop). Encoder mode (y_true given):
    returns (y_hat, segments, order, ideal_bits). Decoder mode (segments
    given): returns (y_hat, None, order, None).
    """
    cfg = model.cfg
    n = cfg.latent_size
    c = cfg.latent_channels
    lo, hi = cfg.symbol_min, cfg.symbol_max
    sched = sinusoidal_schedule(n * n, t_steps)
    steps = [len(p) for p in plan] if plan is not None else list(sched.steps)

    symbols = torch.zeros(1, n, n, c)
    mask = torch.ones(1, n, n, dtype=torch.bool)
    order, out_segments, ideal_bits = [], [], []
    for step, k in enumerate(steps):
        memory = memory_fn()
        mean, scale, record = model.entropy.predict(symbols, mask, memory)
        if plan is None:
            imp = attention_importance(record, mask)
            cert = certainty_map(scale, mask)
            scores = dependency_scores(imp, cert, alpha)
            masked_idx = mask.reshape(-1).nonzero(as_tuple=True)[0]
            local = hard_topk(scores.reshape(-1)[masked_idx], min(k, masked_idx.numel()))
            picked = masked_idx.numpy()[local]
        else:
            picked = np.asarray(plan[step])
        order.append(picked)

        mu = mean.reshape(-1, c)[picked].double().cpu().numpy().reshape(-1)
        sg = scale.reshape(-1, c)[picked].double().cpu().numpy().reshape(-1)
        cdf = quantize_pmf(discretized_gaussian_pmf(mu, sg, lo, hi))
        if y_true is not None:
            values = y_true.reshape(-1, c)[picked].to(torch.int64).cpu().numpy().reshape(-1)
            enc = RangeEncoder()
            for v, row in zip(values, cdf):
                encode_value(enc, int(v), row, lo, hi)
            out_segments.append(enc.finish())
            ideal_bits.append(table_bits(cdf, values - lo + 1))
        else:
            dec = RangeDecoder(segments[step])
            values = np.fromiter((decode_value(dec, row, lo, hi) for row in cdf),
                                 dtype=np.int64, count=len(cdf))
        filled = torch.from_numpy(values.reshape(len(picked), c)).to(symbols.dtype)
        symbols.reshape(-1, c)[picked] = filled
        mask.reshape(-1)[picked] = False
    if bool(mask.any()):
        raise RuntimeError("selection loop left masked positions")
    y_hat = symbols.permute(0, 3, 1, 2).contiguous()
    if y_true is not None:
        return y_hat, out_segments, order, ideal_bits
    return y_hat, None, order, None


def _code_hyper(model: VideoCodec, z_int: torch.Tensor):
    cfg = model.cfg
    lo, hi = cfg.symbol_min, cfg.symbol_max
    tables = model.codec.factorized.cdf_tables(lo, hi)
    values = z_int.to(torch.int64).reshape(cfg.hyper_channels, -1).cpu().numpy()
    enc = RangeEncoder()
    bits = 0.0
    for ch in range(cfg.hyper_channels):
        row = tables[ch]
        for v in values[ch]:
            encode_value(enc, int(v), row, lo, hi)
        bits += table_bits(np.repeat(row[None, :], values.shape[1], axis=0),
                           values[ch] - lo + 1)
    return enc.finish(), bits


def _decode_hyper(model: VideoCodec, payload: bytes):
    cfg = model.cfg
    lo, hi = cfg.symbol_min, cfg.symbol_max
    tables = model.codec.factorized.cdf_tables(lo, hi)
    side = cfg.latent_size // 2
    dec = RangeDecoder(payload)
    out = np.empty((cfg.hyper_channels, side * side), dtype=np.int64)
    for ch in range(cfg.hyper_channels):
        row = tables[ch]
        out[ch] = [decode_value(dec, row, lo, hi) for _ in range(side * side)]
    return torch.from_numpy(out.reshape(1, cfg.hyper_channels, side, side)).float()


# ---------------------------------------------------------------------------
# video encode / decode
# ---------------------------------------------------------------------------

@dataclass
class EncodeResult:
    stream: bytes
    y_hats: list = field(default_factory=list)        # per-frame (1,C,h,w) ints
    recons: list = field(default_factory=list)        # per-frame (1,3,H,W) raw
    orders: list = field(default_factory=list)        # per-frame list of step index arrays
    ideal_bits: list = field(default_factory=list)    # per-frame [hyper, seg1..segT]


@dataclass
class DecodeResult:
    frames: torch.Tensor
    y_hats: list = field(default_factory=list)
    orders: list = field(default_factory=list)


def encode_video(model: VideoCodec, frames: torch.Tensor, lam: int, t_steps: int = 8,
                 alpha: float | None = None, ordering: str = "dependency",
                 order_seed: int = 0) -> EncodeResult:
    """frames: (N,3,H,W) float in [0,1] -> self-contained bitstream."""
    cfg = model.cfg
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise ValueError("frames must be (N, 3, H, W)")
    if frames.shape[-2] != cfg.frame_size or frames.shape[-1] != cfg.frame_size:
        raise ValueError(f"frames must be {cfg.frame_size}x{cfg.frame_size} for this checkpoint")
    if frames.shape[0] < 1:
        raise ValueError("need at least one frame")
    alpha = cfg.alpha if alpha is None else alpha
    model.eval()
    result = EncodeResult(stream=b"")
    chunks = []
    with torch.no_grad():
        y_prev = model.zero_latent()
        for t in range(frames.shape[0]):
            if t % cfg.gop == 0:
                y_prev = model.zero_latent()
            x = frames[t:t + 1]
            y_tp = model.codec.temporal_features(y_prev)
            y = model.codec.encode(x, y_tp)
            z = model.codec.hyper_encode(y)
            z_int = quantize_latents(z, cfg.symbol_min, cfg.symbol_max)
            hyper_payload, hyper_ideal = _code_hyper(model, z_int)
            y_hp = model.codec.hyper_decode(z_int)
            y_int = quantize_latents(y, cfg.symbol_min, cfg.symbol_max)
            memory_fn = _memory_fn(model, y_prev, y_hp, y_tp)
            plan = ordering_plan(ordering, cfg.latent_size, cfg.latent_size,
                                 t_steps, t, order_seed)
            y_hat, segments, order, seg_bits = _code_frame(
                model, memory_fn, t_steps, alpha, plan,
                y_true=y_int.permute(0, 2, 3, 1))
            if not torch.equal(y_hat, y_int):
                raise RuntimeError("encoder state diverged from quantized latents")
            x_hat = model.codec.decode(y_hat, y_tp)
            chunks.append(FrameChunk(hyper_payload, segments))
            result.y_hats.append(y_hat)
            result.recons.append(x_hat)
            result.orders.append(order)
            result.ideal_bits.append([hyper_ideal] + seg_bits)
            y_prev = y_hat
    header = StreamHeader(cfg.frame_size, cfg.frame_size, cfg.latent_size,
                          cfg.latent_size, cfg.latent_channels,
                          lambda_index(lam), t_steps, frames.shape[0])
    result.stream = write_stream(header, chunks)
    return result


def decode_video(model: VideoCodec, stream: bytes, lam: int | None = None,
                 ordering: str = "dependency", order_seed: int = 0) -> DecodeResult:
    cfg = model.cfg
    header, chunks = read_stream(stream)
    if (header.frame_h, header.frame_w) != (cfg.frame_size, cfg.frame_size):
        raise BitstreamError(f"frame dims {header.frame_h}x{header.frame_w} "
                             f"do not match checkpoint {cfg.frame_size}")
    if (header.latent_h, header.latent_w, header.latent_c) != \
            (cfg.latent_size, cfg.latent_size, cfg.latent_channels):
        raise BitstreamError("latent dims do not match checkpoint")
    if lam is not None and header.lambda_index != lambda_index(lam):
        raise BitstreamError(f"stream lambda index {header.lambda_index} does not "
                             f"match checkpoint lambda {lam}")
    model.eval()
    result = DecodeResult(frames=torch.empty(0))
    frames = []
    with torch.no_grad():
        y_prev = model.zero_latent()
        for t, chunk in enumerate(chunks):
            if t % cfg.gop == 0:
                y_prev = model.zero_latent()
            z_hat = _decode_hyper(model, chunk.hyper)
            y_hp = model.codec.hyper_decode(z_hat)
            y_tp = model.codec.temporal_features(y_prev)
            memory_fn = _memory_fn(model, y_prev, y_hp, y_tp)
            plan = ordering_plan(ordering, cfg.latent_size, cfg.latent_size,
                                 header.steps, t, order_seed)
            y_hat, _, order, _ = _code_frame(model, memory_fn, header.steps,
                                             cfg.alpha, plan, segments=chunk.segments)
            frames.append(model.codec.decode(y_hat, y_tp))
            result.y_hats.append(y_hat)
            result.orders.append(order)
            y_prev = y_hat
    result.frames = torch.cat(frames, dim=0)
    return result


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    """Per-frame averages; rates in bits, distortion is MSE on [0,1] pixels."""
    rate_y: float
    rate_z: float
    distortion: float
    total: float

    def as_dict(self):
        return asdict(self)


def _bits(likelihood: torch.Tensor) -> torch.Tensor:
    return -likelihood.log() * LOG2E


def compute_loss(model: VideoCodec, clips: torch.Tensor, cfg: TrainConfig,
                 rng: np.random.Generator):
    """RD loss over a batch of clips (B, F, 3, H, W); frames run sequentially.

    Stage 1 rates latents with the hyper-feature head; stages 2/3 run the
    masked teacher/student round: random mask, teacher maps, straight-through
    top-k reveal, student rates every originally-masked position.
    """
    b, f = clips.shape[:2]
    cfgm = model.cfg
    n = cfgm.latent_size
    sched = sinusoidal_schedule(n * n, cfg.T)
    device = clips.device
    y_prev = model.zero_latent(b, device)
    rate_y_sum = clips.new_zeros(())
    rate_z_sum = clips.new_zeros(())
    mse_sum = clips.new_zeros(())
    for t in range(f):
        x = clips[:, t]
        y_tp = model.codec.temporal_features(y_prev)
        y = model.codec.encode(x, y_tp)
        z = model.codec.hyper_encode(y)
        z_hat = model.codec.quantize(z)
        y_hp = model.codec.hyper_decode(z_hat)
        y_hat = model.codec.quantize(y)
        rate_z_sum = rate_z_sum + _bits(model.codec.factorized.likelihood(z_hat)).sum() / b

        if cfg.stage == 1:
            mean, scale = model.codec.stage1_params(y_hp)
            rate_y_sum = rate_y_sum + _bits(gaussian_likelihood(y_hat, mean, scale)).sum() / b
        else:
            memory = model.entropy.build_memory(y_prev, y_hp, y_tp)
            ratio = rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max)
            mask = torch.stack([random_mask(n, n, ratio, int(rng.integers(2 ** 62)))
                                for _ in range(b)]).to(device)
            symbols = y_hat.permute(0, 2, 3, 1)
            mean_t, scale_t, record = model.entropy.predict(symbols, mask, memory)
            imp = attention_importance(record, mask)
            cert = certainty_map(scale_t, mask)
            scores = dependency_scores(imp, cert, cfg.alpha)
            k = int(rng.choice(sched.steps))
            reveal = (~mask).to(symbols.dtype)
            new_mask = []
            for i in range(b):
                nm, _, rv = select_and_unmask(scores[i], mask[i], k,
                                              cfg.topk_temperature, mode="train")
                new_mask.append(nm)
                reveal[i] = reveal[i] + rv
            mean_s, scale_s, _ = model.entropy.predict(
                symbols, torch.stack(new_mask), memory, reveal=reveal)
            bits = _bits(gaussian_likelihood(symbols, mean_s, scale_s))
            rate_y_sum = rate_y_sum + (bits * mask.unsqueeze(-1)).sum() / b

        x_hat = model.codec.decode(y_hat, y_tp)
        mse_sum = mse_sum + torch.mean((x_hat - x) ** 2)
        y_prev = y_hat
    rate_y = rate_y_sum / f
    rate_z = rate_z_sum / f
    distortion = mse_sum / f
    total = rate_y + rate_z + cfg.lam * (255.0 ** 2) * distortion
    breakdown = LossBreakdown(rate_y.item(), rate_z.item(), distortion.item(), total.item())
    return total, breakdown


def train_step(model: VideoCodec, optimizer, clips, cfg: TrainConfig,
               rng: np.random.Generator) -> LossBreakdown:
    total, breakdown = compute_loss(model, clips, cfg, rng)
    for name, value in breakdown.as_dict().items():
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss term {name}={value}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return breakdown


def _trainable_parameters(model: VideoCodec, stage: int):
    if stage == 1:
        return list(model.codec.parameters())
    if stage == 2:
        return list(model.entropy.parameters())
    return list(model.parameters())


def train_stage(cfg: TrainConfig, out_path, init_from=None, resume_from=None,
                pool_size: int = 32, on_log=None) -> Path:
    """Run one training stage and write a checkpoint (plus a .log JSONL file).

    Stage 1 starts from scratch; stages 2 and 3 require the previous stage's
    checkpoint via `init_from`. Stage 2 freezes the frame codec. `resume_from`
    continues an interrupted run of the same config, bit-reproducibly.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    start_step = 0
    if resume_from is not None:
        model, payload = load_checkpoint(resume_from)
        stored = TrainConfig(**payload["train_config"])
        if stored != cfg:
            raise ValueError("resume config does not match checkpoint config")
        rng = np.random.default_rng()
        rng.bit_generator.state = payload["data_rng_state"]
        torch.set_rng_state(payload["torch_rng_state"])
        start_step = payload["step"]
    else:
        torch.manual_seed(cfg.seed)
        if cfg.stage == 1:
            model = VideoCodec(ModelConfig(alpha=cfg.alpha))
        else:
            if init_from is None:
                raise ValueError(f"stage {cfg.stage} requires the stage {cfg.stage - 1} checkpoint")
            model, payload = load_checkpoint(init_from)
            if payload["stage"] != cfg.stage - 1:
                raise ValueError(f"stage {cfg.stage} must start from stage {cfg.stage - 1}, "
                                 f"got stage {payload['stage']}")
        rng = np.random.default_rng(cfg.seed)

    model.train()
    for p in model.parameters():
        p.requires_grad_(True)
    if cfg.stage == 2:
        model.codec.requires_grad_(False)
    params = [p for p in _trainable_parameters(model, cfg.stage) if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    if resume_from is not None:
        optimizer.load_state_dict(payload["optimizer_state"])

    pool = torch.from_numpy(data_mod.clip_pool(cfg.seed, pool_size, cfg.clip_frames,
                                               model.cfg.frame_size))
    pool = pool.permute(0, 1, 4, 2, 3).contiguous()   # (P,F,3,H,W)
    log_path = out_path.with_suffix(out_path.suffix + ".log")
    mode = "a" if resume_from is not None else "w"
    with open(log_path, mode) as log_fh:
        for step in range(start_step + 1, cfg.steps + 1):
            idx = rng.integers(0, pool_size, cfg.batch_size)
            clips = pool[torch.from_numpy(idx)]
            breakdown = train_step(model, optimizer, clips, cfg, rng)
            if step % cfg.log_every == 0 or step in (1, cfg.steps):
                line = {"step": step, **breakdown.as_dict()}
                log_fh.write(json.dumps(line) + "\n")
                log_fh.flush()
                if on_log:
                    on_log(line)
    model.eval()
    save_checkpoint(out_path, model, cfg, stage=cfg.stage, extra={
        "optimizer_state": optimizer.state_dict(),
        "data_rng_state": rng.bit_generator.state,
        "torch_rng_state": torch.get_rng_state(),
        "step": cfg.steps,
        "lam": cfg.lam,
    })
    return out_path
