"""Temporal context resampling and fusion.

Each temporal context grid (previous latent, hyper features, temporal prior)
is compressed to a fixed-length token grid by letting a small learned query
grid cross-attend to it window-by-window: the queries partition into exactly
as many windows as the context, so each query window summarizes one context
window regardless of context resolution. The three resampled grids are then
fused by windowed self-attention over per-window concatenations, which is the
key/value memory the shared decoder consumes.

`FullAttentionContext` is the ablation twin: a plain windowed self-attention
block over each context grid at full resolution, so downstream cost scales
with context size instead of the query count.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .swin import Mlp, SwinBlock, WindowAttention, window_merge, window_partition


@dataclass
class FusedMemory:
    """Key/value memory: one token grid per context type plus its window side.

    Window i offered to a query grid is the concatenation of window i from
    each context grid, so window counts always pair and spatial
    correspondence is preserved under shifting. Window views are cached per
    shift (the grids are frozen once fused).
    """

    grids: list[torch.Tensor]     # n_ctx tensors of (B, gh, gw, d)
    win: int

    def __post_init__(self):
        self._window_cache = {}

    def windows(self, query_win: int, query_shift: int = 0) -> torch.Tensor:
        shift = query_shift * self.win // query_win
        cached = self._window_cache.get(shift)
        if cached is None:
            cached = torch.cat([window_partition(g, self.win, shift) for g in self.grids],
                               dim=2)
            self._window_cache[shift] = cached
        return cached

    @property
    def tokens(self) -> torch.Tensor:
        return torch.cat([g.reshape(g.shape[0], -1, g.shape[-1]) for g in self.grids], dim=1)


class ContextResampler(nn.Module):
    """Learned window queries cross-attending to a context grid.

    One block stack is shared by all context types; each type keeps its own
    query grid. Output length is query_grid**2 tokens per context no matter
    the context resolution.
    """

    def __init__(self, dim, heads, n_contexts=3, query_grid=8, query_window=2,
                 depth=1, mlp_ratio=4):
        super().__init__()
        if query_grid % query_window:
            raise ValueError("query grid must tile into query windows")
        self.query_grid = query_grid
        self.query_window = query_window
        self.wins_per_side = query_grid // query_window
        self.queries = nn.Parameter(torch.empty(n_contexts, query_grid, query_grid, dim))
        nn.init.trunc_normal_(self.queries, std=0.02)
        self.blocks = nn.ModuleList(
            SwinBlock(dim, heads, query_window, shift=0, cross=True,
                      mlp_ratio=mlp_ratio, cross_residual=False, block_index=i)
            for i in range(depth))

    def resample(self, ctx: torch.Tensor, which: int):
        """ctx: (B,h,w,d) embedded context -> ((B,qg,qg,d) tokens, last cross record)."""
        out, recs = self._run([ctx], self.queries[which:which + 1])
        return out[0], recs[-1]

    def _run(self, ctx_grids: list[torch.Tensor], queries: torch.Tensor):
        """Stack same-size context grids along batch so one block call serves all."""
        b, h, w, _ = ctx_grids[0].shape
        # key window sized so the context splits into exactly as many windows
        # as the query grid; pad up to that exact tiling
        win = (-(-h // self.wins_per_side), -(-w // self.wins_per_side))
        ctx = torch.cat(ctx_grids, dim=0)
        ph = self.wins_per_side * win[0] - h
        pw = self.wins_per_side * win[1] - w
        pad = torch.zeros(ctx.shape[0], h + ph, w + pw, dtype=torch.bool, device=ctx.device)
        if ph or pw:
            ctx = F.pad(ctx, (0, 0, 0, pw, 0, ph))
            pad[:, h:, :] = True
            pad[:, :, w:] = True
        key_windows = window_partition(ctx, win)
        key_pad = window_partition(pad.unsqueeze(-1), win)[..., 0] if pad.any() else None
        x = queries.repeat_interleave(b, dim=0)
        record = None
        for blk in self.blocks:
            x, recs = blk(x, memory_windows=key_windows, memory_pad=key_pad)
            record = recs["cross"]
        return list(x.split(b, dim=0)), [record]

    def forward(self, ctx_grids: list[torch.Tensor]):
        sizes = {g.shape[1:3] for g in ctx_grids}
        if len(sizes) == 1 and len(ctx_grids) == self.queries.shape[0]:
            return self._run(ctx_grids, self.queries)
        outs, records = [], []
        for i, g in enumerate(ctx_grids):
            out, rec = self.resample(g, i)
            outs.append(out)
            records.append(rec)
        return outs, records


class FullAttentionContext(nn.Module):
    """Ablation context path: plain windowed self-attention at full resolution."""

    def __init__(self, dim, heads, window=4, depth=1, mlp_ratio=4):
        super().__init__()
        self.window = window
        self.blocks = nn.ModuleList(
            SwinBlock(dim, heads, window, shift=0, mlp_ratio=mlp_ratio, block_index=i)
            for i in range(depth))

    def forward(self, ctx_grids: list[torch.Tensor]):
        b = ctx_grids[0].shape[0]
        x = torch.cat(ctx_grids, dim=0)
        for blk in self.blocks:
            x, _ = blk(x)
        return list(x.split(b, dim=0)), []


class FusionBlock(nn.Module):
    """Self-attention within per-window concatenations of the context grids."""

    def __init__(self, dim, heads, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, grids: list[torch.Tensor], win: int, shift: int):
        n = len(grids)
        b, gh, gw, d = grids[0].shape
        x = torch.stack(grids).reshape(n * b, gh, gw, d)
        wins = window_partition(self.norm1(x), win, shift)
        nw, t = wins.shape[1], wins.shape[2]
        # window i = concatenation of window i from every grid
        wins = wins.view(n, b, nw, t, d).permute(1, 2, 0, 3, 4).reshape(b, nw, n * t, d)
        out, _ = self.attn(wins, wins)
        out = out.view(b, nw, n, t, d).permute(2, 0, 1, 3, 4).reshape(n * b, nw, t, d)
        x = x + window_merge(out, (gh, gw), win, shift)
        x = x + self.mlp(self.norm2(x))
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite activations in fusion block")
        return list(x.view(n, b, gh, gw, d).unbind(0))


class ContextFusion(nn.Module):
    """Fuse resampled context grids into the decoder's key/value memory."""

    def __init__(self, dim, heads, depth=2, mlp_ratio=4):
        super().__init__()
        self.blocks = nn.ModuleList(FusionBlock(dim, heads, mlp_ratio) for _ in range(depth))

    def forward(self, grids: list[torch.Tensor], win: int) -> FusedMemory:
        sides = {g.shape[1] for g in grids} | {g.shape[2] for g in grids}
        if len(sides) != 1:
            raise ValueError("context grids must share one square size")
        if sides.pop() % win:
            raise ValueError("fusion window must tile the context grids")
        for i, blk in enumerate(self.blocks):
            shift = 0 if i % 2 == 0 else win // 2
            grids = blk(grids, win, shift)
        return FusedMemory(grids, win)
