"""Assembled codec + conditional entropy model, and checkpoint I/O."""

from __future__ import annotations

from dataclasses import asdict

import torch
from torch import nn

from .codec import FrameCodec
from .config import ModelConfig, TrainConfig
from .dwsca import GaussianHead, SharedDecoder
from .tcr import ContextFusion, ContextResampler, FullAttentionContext, FusedMemory

CHECKPOINT_VERSION = 1


class EntropyModel(nn.Module):
    """PMF estimator for latent symbols given temporal and spatial context.

    Temporal side: three context grids are embedded, position-tagged, pushed
    through the context path (resampler or full-attention ablation) and fused
    into the key/value memory. Spatial side: revealed positions embed their
    quantized symbols, masked ones a learned mask token; the shared decoder
    plus Gaussian head turn that state into per-token (mean, scale).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        n = cfg.latent_size
        self.ctx_embed = nn.ModuleList([
            nn.Linear(cfg.latent_channels, d),   # previous quantized latent
            nn.Linear(cfg.ctx_channels, d),      # hyper features
            nn.Linear(cfg.ctx_channels, d),      # temporal prior features
        ])
        self.ctx_pos = nn.Parameter(torch.empty(1, n, n, d))
        self.symbol_embed = nn.Linear(cfg.latent_channels, d)
        self.mask_token = nn.Parameter(torch.empty(d))
        self.pos_embed = nn.Parameter(torch.empty(1, n, n, d))
        for p in (self.ctx_pos, self.pos_embed):
            nn.init.trunc_normal_(p, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

        wins_per_side = n // cfg.window
        if cfg.context_mode == "tcr":
            self.context_path = ContextResampler(
                d, cfg.heads, n_contexts=3, query_grid=cfg.query_grid,
                query_window=cfg.query_window, depth=cfg.resampler_blocks,
                mlp_ratio=cfg.mlp_ratio)
            self.memory_win = cfg.query_grid // wins_per_side
        else:
            self.context_path = FullAttentionContext(
                d, cfg.heads, window=cfg.window, depth=cfg.resampler_blocks,
                mlp_ratio=cfg.mlp_ratio)
            self.memory_win = cfg.window
        self.fusion = ContextFusion(d, cfg.heads, depth=cfg.fusion_blocks,
                                    mlp_ratio=cfg.mlp_ratio)
        self.decoder = SharedDecoder(d, cfg.heads, cfg.window,
                                     depth=cfg.decoder_blocks, mlp_ratio=cfg.mlp_ratio)
        self.head = GaussianHead(d, cfg.latent_channels, cfg.sigma_min)

    def embed_contexts(self, y_prev_hat, y_hp, y_tp) -> list[torch.Tensor]:
        grids = []
        for proj, feat in zip(self.ctx_embed, (y_prev_hat, y_hp, y_tp)):
            g = proj(feat.permute(0, 2, 3, 1))
            grids.append(g + self.ctx_pos)
        return grids

    def build_memory(self, y_prev_hat, y_hp, y_tp) -> FusedMemory:
        """Context grids (B,C,h,w) conv layout -> fused key/value memory."""
        grids = self.embed_contexts(y_prev_hat, y_hp, y_tp)
        grids, _ = self.context_path(grids)
        return self.fusion(grids, self.memory_win)

    def predict(self, symbols, mask, memory, reveal=None):
        """Gaussian parameters for every position of the current latent.

        symbols: (B,h,w,C) quantized values (content at masked positions is
        ignored); mask: (B,h,w) bool, True = still masked; reveal: optional
        (B,h,w) weights overriding the hard (1 - mask) visibility, used for
        straight-through training. Returns (mean, scale, final self record).
        """
        if reveal is None:
            reveal = (~mask).to(symbols.dtype)
        reveal = reveal.unsqueeze(-1)
        tokens = reveal * self.symbol_embed(symbols) + (1.0 - reveal) * self.mask_token
        tokens = tokens + self.pos_embed
        features, record = self.decoder(tokens, memory)
        mean, scale = self.head(features)
        return mean, scale, record


class VideoCodec(nn.Module):
    """Frame codec + entropy model under one parameter tree."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.codec = FrameCodec(cfg)
        self.entropy = EntropyModel(cfg)

    def zero_latent(self, batch=1, device=None):
        n = self.cfg.latent_size
        return torch.zeros(batch, self.cfg.latent_channels, n, n, device=device)


def save_checkpoint(path, model: VideoCodec, train_cfg: TrainConfig | None = None,
                    stage: int = 0, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "train_config": asdict(train_cfg) if train_cfg is not None else None,
        "stage": stage,
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path, context_mode: str | None = None):
    """Returns (model, payload). `context_mode` rebuilds the context path
    variant (used by the timing ablation); its weights then stay at init while
    everything outside the context path loads from the checkpoint."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    cfg_dict = dict(payload["model_config"])
    if context_mode is not None:
        cfg_dict["context_mode"] = context_mode
    cfg = ModelConfig(**cfg_dict)
    model = VideoCodec(cfg)
    state = payload["state_dict"]
    if context_mode is not None and context_mode != payload["model_config"]["context_mode"]:
        state = {k: v for k, v in state.items() if not k.startswith("entropy.context_path.")}
        missing, unexpected = model.load_state_dict(state, strict=False)
        bad = [k for k in missing if not k.startswith("entropy.context_path.")]
        if bad or unexpected:
            raise ValueError(f"checkpoint mismatch: missing {bad}, unexpected {unexpected}")
    else:
        model.load_state_dict(state)
    model.eval()
    return model, payload


def non_context_parameters(model: VideoCodec) -> dict[str, tuple]:
    """Name -> shape for every parameter outside the swappable context path."""
    return {name: tuple(p.shape) for name, p in model.named_parameters()
            if not name.startswith("entropy.context_path.")}
