"""Dependency-weighted spatial context assignment.

One shared-parameter windowed decoder plays both teacher and student roles.
From a partially revealed latent it produces features whose final
self-attention record yields an importance map (attention mass received by
each still-masked position) and whose predicted scales yield a certainty map;
their convex blend ranks which positions to reveal next. Soft top-k is an
entropically regularized two-bin transport relaxation used for training-time
gradients; hard top-k (with row-major tie-break) drives actual coding order.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .swin import AttentionRecord, SwinBlock

SOFT_TOPK_ITERS = 100


def random_mask(h: int, w: int, ratio: float, seed: int) -> torch.Tensor:
    """(h,w) bool mask with ceil(ratio*h*w) True entries, uniform given seed."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"mask ratio {ratio} outside (0, 1]")
    n = h * w
    m = int(np.ceil(ratio * n))
    order = np.random.default_rng(seed).permutation(n)[:m]
    mask = torch.zeros(n, dtype=torch.bool)
    mask[torch.from_numpy(order)] = True
    return mask.view(h, w)


class SharedDecoder(nn.Module):
    """Stack of cross+self windowed blocks; teacher and student are this one module."""

    def __init__(self, dim, heads, win, depth=4, mlp_ratio=4):
        super().__init__()
        self.win = win
        self.blocks = nn.ModuleList(
            SwinBlock(dim, heads, win, shift=0 if i % 2 == 0 else win // 2,
                      cross=True, mlp_ratio=mlp_ratio, block_index=i)
            for i in range(depth))

    def forward(self, x, memory):
        """x: (B,h,w,d) token grid; memory: FusedMemory. Returns (features, final self record)."""
        record = None
        for blk in self.blocks:
            mem_w = memory.windows(self.win, blk.shift[0])
            x, recs = blk(x, memory_windows=mem_w)
            record = recs["self"]
        return x, record


class GaussianHead(nn.Module):
    """Per-token linear projection to Gaussian (mean, scale), scale >= sigma_min."""

    def __init__(self, dim, channels, sigma_min=0.01):
        super().__init__()
        self.proj = nn.Linear(dim, 2 * channels)
        self.sigma_min = sigma_min

    def forward(self, features):
        mean, scale_raw = self.proj(features).chunk(2, dim=-1)
        return mean, self.sigma_min + F.softplus(scale_raw)


def _minmax_over_mask(values, mask):
    """Min-max normalize over masked positions; all-zeros when max == min."""
    neg, pos = float("-inf"), float("inf")
    lo = torch.where(mask, values, torch.full_like(values, pos)).amin(dim=(-2, -1), keepdim=True)
    hi = torch.where(mask, values, torch.full_like(values, neg)).amax(dim=(-2, -1), keepdim=True)
    span = hi - lo
    out = torch.where(span > 0, (values - lo) / torch.where(span > 0, span, torch.ones_like(span)),
                      torch.zeros_like(values))
    return torch.where(mask, out, torch.zeros_like(values))


def attention_importance(record: AttentionRecord, mask: torch.Tensor) -> torch.Tensor:
    """Importance map A on masked positions.

    Raw importance of position j = head-averaged attention mass j receives
    from the masked queries in its window, then min-max normalized over the
    masked set. A single masked position gets A = 1 by convention.
    """
    weights = record.weights.mean(dim=2)            # (B, nW, Tq, Tk)
    qidx = record.query_index                       # (nW, T)
    b = weights.shape[0]
    h, w = mask.shape[-2:]
    mask_flat = mask.reshape(b, -1).float()
    mask_slots = mask_flat[:, qidx]                 # (B, nW, T)
    received = (mask_slots.unsqueeze(-1) * weights).sum(dim=2)   # (B, nW, Tk)
    raw = torch.zeros(b, h * w, dtype=weights.dtype, device=weights.device)
    raw = raw.scatter(1, qidx.reshape(1, -1).expand(b, -1), received.reshape(b, -1))
    raw = raw.view(b, h, w)
    single = mask.reshape(b, -1).sum(-1).view(b, 1, 1) == 1
    return torch.where(single, mask.to(raw.dtype), _minmax_over_mask(raw, mask))


def certainty_map(scale: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Certainty map H on masked positions: 1 - minmax(sum_c log sigma), high = certain.

    Degenerate case (all entropies equal) maps to all-zeros, letting the
    dependency score fall back to the importance term.
    """
    entropy = scale.log().sum(dim=-1)               # (B, h, w), monotone entropy proxy
    normalized = _minmax_over_mask(entropy, mask)
    span_exists = normalized.amax(dim=(-2, -1), keepdim=True) > 0
    cert = torch.where(span_exists, 1.0 - normalized, torch.zeros_like(normalized))
    return torch.where(mask, cert, torch.zeros_like(cert))


def dependency_scores(importance, certainty, alpha: float) -> torch.Tensor:
    """Blend alpha * certainty + (1 - alpha) * importance on the masked set."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * certainty + (1.0 - alpha) * importance


def soft_topk(scores: torch.Tensor, k: int, temperature: float,
              iters: int = SOFT_TOPK_ITERS) -> torch.Tensor:
    """Differentiable top-k weights gamma in [0,1]^n with sum(gamma) = k.

    Entropic two-bin transport: tokens carry mass 1/n each and are shipped to
    a "selected" bin (capacity k/n, anchor at the top of the min-max
    normalized score range) or a "rejected" bin (anchor at the bottom). The
    dual of the two-bin problem is one scalar, found detached by bisection;
    the fixed budget of differentiable log-domain normalization sweeps then
    refines from that point, ending on the row update so gamma stays inside
    [0,1] while the column constraint (sum = k) holds to convergence.
    """
    if scores.dim() != 1:
        raise ValueError("scores must be a flat vector")
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if not torch.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if k == n:
        return torch.ones_like(scores) + (scores - scores.detach())

    s64 = scores.double()
    lo, hi = s64.min(), s64.max()
    span = hi - lo
    s = torch.where(span > 0, (s64 - lo) / torch.where(span > 0, span, torch.ones_like(span)),
                    torch.zeros_like(s64))
    cost = torch.stack([(s - 1.0) ** 2, s ** 2], dim=1)      # (n, 2): selected, rejected
    kernel = -cost / temperature

    with torch.no_grad():
        # gamma_i = sigmoid(delta_i + d) with delta = K_sel - K_rej; solve
        # sum(gamma) = k for the scalar dual d
        delta = kernel[:, 0] - kernel[:, 1]
        d_lo = (-delta.max() - 50.0).item()
        d_hi = (-delta.min() + 50.0).item()
        for _ in range(80):
            mid = 0.5 * (d_lo + d_hi)
            if torch.sigmoid(delta + mid).sum().item() < k:
                d_lo = mid
            else:
                d_hi = mid
        beta = torch.tensor([0.5 * (d_lo + d_hi), 0.0], dtype=torch.float64,
                            device=scores.device)

    log_mu = -torch.log(torch.tensor(float(n), dtype=torch.float64, device=scores.device))
    log_nu = torch.log(torch.tensor([k / n, (n - k) / n], dtype=torch.float64,
                                    device=scores.device))
    for _ in range(iters):
        alpha_pot = log_mu - torch.logsumexp(kernel + beta, dim=1)
        beta = log_nu - torch.logsumexp(kernel + alpha_pot.unsqueeze(1), dim=0)
    alpha_pot = log_mu - torch.logsumexp(kernel + beta, dim=1)
    log_gamma = alpha_pot + kernel[:, 0] + beta[0] + math.log(n)
    return log_gamma.exp().clamp(0.0, 1.0).to(scores.dtype)


def hard_topk(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken by smallest linear index.

    Returned in selection order (descending score); identical argsort on both
    the encode and decode side is what keeps the bitstream in sync.
    """
    if isinstance(scores, torch.Tensor):
        scores = scores.detach().cpu().numpy()
    scores = np.asarray(scores)
    if k > scores.shape[0]:
        raise ValueError(f"k={k} exceeds {scores.shape[0]} candidates")
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def select_and_unmask(scores: torch.Tensor, mask: torch.Tensor, k: int,
                      temperature: float = 0.5, mode: str = "infer"):
    """Pick the next k masked positions and clear their mask bits.

    scores: (h,w) dependency scores (defined on masked positions);
    mask: (h,w) bool, True = masked. Returns (new_mask, picked, reveal) where
    `picked` holds flat grid indices in selection order and `reveal` is an
    (h,w) weight map for the picked positions: exactly 1 in "infer" mode, and
    hard-forward / soft-backward (via the transport gamma) in "train" mode.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    h, w = mask.shape
    masked_idx = mask.reshape(-1).nonzero(as_tuple=True)[0]
    n_masked = int(masked_idx.numel())
    k = min(k, n_masked)
    masked_scores = scores.reshape(-1)[masked_idx]
    local = hard_topk(masked_scores, k)
    picked = masked_idx[torch.from_numpy(np.ascontiguousarray(local)).long()]

    reveal = torch.zeros(h * w, dtype=scores.dtype, device=scores.device)
    if mode == "train":
        gamma = soft_topk(masked_scores, k, temperature)
        hard = torch.zeros_like(gamma)
        hard[torch.from_numpy(np.ascontiguousarray(local)).long()] = 1.0
        st = hard + gamma - gamma.detach()
        reveal = reveal.scatter(0, masked_idx, st)
    else:
        reveal[picked] = 1.0
    new_mask = mask.reshape(-1).clone()
    new_mask[picked] = False
    return new_mask.view(h, w), picked, reveal.view(h, w)
