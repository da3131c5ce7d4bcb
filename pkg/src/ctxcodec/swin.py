"""Windowed-attention transformer building blocks.

Grids are (B, h, w, d) token tensors. Attention always runs inside paired
windows: window i of the queries sees only window i of the keys, so queries
and keys may come from grids of different resolutions as long as both
partition into the same number of windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn.functional as F
from torch import nn


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def pad_to_multiple(x: torch.Tensor, win) -> tuple[torch.Tensor, torch.Tensor]:
    """Right/bottom zero-pad a (B,h,w,d) grid to window multiples.

    Returns the padded grid and a (B,H,W) bool mask, True at padding tokens.
    """
    wh, ww = _pair(win)
    b, h, w, _ = x.shape
    ph = (-h) % wh
    pw = (-w) % ww
    pad = torch.zeros(b, h + ph, w + pw, dtype=torch.bool, device=x.device)
    if ph or pw:
        x = F.pad(x, (0, 0, 0, pw, 0, ph))
        pad[:, h:, :] = True
        pad[:, :, w:] = True
    return x, pad


def window_partition(x: torch.Tensor, win, shift=0) -> torch.Tensor:
    """Split a (B,H,W,d) grid into (B, nW, wh*ww, d) windows, row-major.

    A nonzero shift cyclically rolls the grid up/left before partitioning
    (the shifted-window scheme); `window_merge` inverts both steps exactly.
    """
    wh, ww = _pair(win)
    sh, sw = _pair(shift)
    b, h, w, d = x.shape
    if h % wh or w % ww:
        raise ValueError(f"grid {h}x{w} not divisible by window {wh}x{ww}; pad first")
    if not (0 <= sh < wh and 0 <= sw < ww):
        raise ValueError(f"shift {sh, sw} outside [0, window)")
    if sh or sw:
        x = torch.roll(x, shifts=(-sh, -sw), dims=(1, 2))
    x = x.view(b, h // wh, wh, w // ww, ww, d)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, (h // wh) * (w // ww), wh * ww, d)
    return x


def window_merge(windows: torch.Tensor, size, win, shift=0) -> torch.Tensor:
    """Inverse of `window_partition`."""
    wh, ww = _pair(win)
    sh, sw = _pair(shift)
    h, w = _pair(size)
    b = windows.shape[0]
    d = windows.shape[-1]
    x = windows.view(b, h // wh, w // ww, wh, ww, d)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, d)
    if sh or sw:
        x = torch.roll(x, shifts=(sh, sw), dims=(1, 2))
    return x


def window_index_grid(h: int, w: int, win, shift=0, device=None) -> torch.Tensor:
    """(nW, T) linear grid indices occupying each window slot.

    Follows the exact layout of `window_partition`, so record weights can be
    scattered back onto the grid. Cached; treat the result as read-only.
    """
    if device is None or str(device) == "cpu":
        return _window_index_grid_cached(h, w, _pair(win), _pair(shift))
    return _window_index_grid_cached(h, w, _pair(win), _pair(shift)).to(device)


@lru_cache(maxsize=256)
def _window_index_grid_cached(h, w, win, shift):
    idx = torch.arange(h * w).view(1, h, w, 1)
    return window_partition(idx, win, shift)[0, :, :, 0]


@dataclass
class AttentionRecord:
    """Post-softmax attention probabilities of one windowed attention call."""

    weights: torch.Tensor               # (B, nW, heads, Tq, Tk)
    query_index: torch.Tensor | None    # (nW, Tq) linear grid positions, if grid-backed
    key_index: torch.Tensor | None
    kind: str = "self"
    block_index: int = -1


class WindowAttention(nn.Module):
    """Multi-head attention within paired windows.

    `bias_window` enables a learned relative-position bias table; it only
    makes sense when queries and keys share one square window layout
    (self-attention), so cross-attention leaves it unset.
    """

    def __init__(self, dim, heads, bias_window: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.to_q = nn.Linear(dim, dim)
        self.to_kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.bias_window = bias_window
        if bias_window is not None:
            span = 2 * bias_window - 1
            self.rel_bias = nn.Parameter(torch.zeros(span * span, heads))
            nn.init.trunc_normal_(self.rel_bias, std=0.02)
            coords = torch.stack(torch.meshgrid(
                torch.arange(bias_window), torch.arange(bias_window),
                indexing="ij")).flatten(1)                      # (2, T)
            rel = coords[:, :, None] - coords[:, None, :]       # (2, T, T)
            rel = rel + bias_window - 1
            index = rel[0] * span + rel[1]
            self.register_buffer("rel_index", index, persistent=False)

    def forward(self, q, kv, key_pad=None):
        """q: (B,nW,Tq,d); kv: (B,nW,Tk,d); key_pad: (B,nW,Tk) bool, True = exclude.

        Returns (out, attn) with attn the (B,nW,heads,Tq,Tk) probabilities.
        """
        if q.shape[1] != kv.shape[1]:
            raise ValueError(f"window count mismatch: {q.shape[1]} queries vs {kv.shape[1]} keys")
        b, nw, tq, _ = q.shape
        tk = kv.shape[2]

        def heads_of(x):
            return x.view(b, nw, -1, self.heads, self.head_dim).permute(0, 1, 3, 2, 4)

        qh = heads_of(self.to_q(q)) * self.scale
        k, v = self.to_kv(kv).chunk(2, dim=-1)
        kh = heads_of(k)
        vh = heads_of(v)
        logits = qh @ kh.transpose(-2, -1)                      # (B,nW,H,Tq,Tk)
        if self.bias_window is not None:
            if tq != tk or tq != self.bias_window ** 2:
                raise ValueError("relative bias requires matching square windows")
            bias = self.rel_bias[self.rel_index.reshape(-1)]
            bias = bias.view(tq, tk, self.heads).permute(2, 0, 1)
            logits = logits + bias
        if key_pad is not None:
            logits = logits.masked_fill(key_pad[:, :, None, None, :], float("-inf"))
        attn = logits.softmax(dim=-1)
        if key_pad is not None:
            # windows whose keys are all padding contribute nothing
            attn = torch.nan_to_num(attn, nan=0.0)
        out = attn @ vh
        out = out.permute(0, 1, 3, 2, 4).reshape(b, nw, tq, self.dim)
        return self.proj(out), attn


class Mlp(nn.Module):
    def __init__(self, dim, ratio=4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class SwinBlock(nn.Module):
    """Pre-norm transformer block over a token grid.

    Layout per call: optional window cross-attention against caller-supplied
    key/value windows, then window self-attention, then the MLP, each with a
    residual connection. The shift is fixed per block so blocks in a stack
    alternate between plain and shifted partitions.
    """

    def __init__(self, dim, heads, win, shift=0, cross=False, mlp_ratio=4,
                 cross_residual=True, block_index=-1):
        super().__init__()
        self.win = _pair(win)
        self.shift = _pair(shift)
        self.block_index = block_index
        self.cross = cross
        # cross_residual=False turns the cross stage into a pure readout: the
        # query content steers attention but does not pass through (resampler
        # probes summarize their window, they are not features themselves)
        self.cross_residual = cross_residual
        if cross:
            self.norm_x = nn.LayerNorm(dim)
            self.cross_attn = WindowAttention(dim, heads, bias_window=None)
        bias_win = self.win[0] if self.win[0] == self.win[1] else None
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, bias_window=bias_win)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, memory_windows=None, memory_pad=None):
        """x: (B,h,w,d). memory_windows: (B,nW,Tk,d) paired with this block's partition.

        Returns (x, records) where records maps "cross"/"self" to AttentionRecords.
        """
        b, h, w, d = x.shape
        records = {}
        qidx = window_index_grid(h, w, self.win, self.shift, device=x.device)

        if self.cross:
            if memory_windows is None:
                raise ValueError("cross block needs memory windows")
            qw = window_partition(self.norm_x(x), self.win, self.shift)
            out, attn = self.cross_attn(qw, memory_windows, key_pad=memory_pad)
            out = window_merge(out, (h, w), self.win, self.shift)
            x = x + out if self.cross_residual else out
            records["cross"] = AttentionRecord(attn, qidx, None, "cross", self.block_index)

        qw = window_partition(self.norm1(x), self.win, self.shift)
        out, attn = self.attn(qw, qw)
        x = x + window_merge(out, (h, w), self.win, self.shift)
        records["self"] = AttentionRecord(attn, qidx, qidx, "self", self.block_index)

        x = x + self.mlp(self.norm2(x))
        if not torch.isfinite(x).all():
            raise FloatingPointError(f"non-finite activations in block {self.block_index}")
        return x, records
