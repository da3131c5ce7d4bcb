"""Windowed-attention building blocks."""

import pytest
import torch

from ctxcodec.swin import (SwinBlock, WindowAttention, pad_to_multiple,
                           window_index_grid, window_merge, window_partition)

torch.manual_seed(0)


def fd_gradient(fn, x, step=1e-4):
    """Central finite differences of scalar fn at x (flattened)."""
    x = x.detach().clone()
    flat = x.reshape(-1)
    grad = torch.zeros_like(flat)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad.reshape(x.shape)


def rel_err(a, b):
    return (a - b).norm().item() / max(b.norm().item(), 1e-12)


class TestPartition:
    def test_8x8_win4_unshifted(self):
        x = torch.randn(1, 8, 8, 3)
        wins = window_partition(x, 4)
        assert wins.shape == (1, 4, 16, 3)
        assert torch.equal(window_merge(wins, (8, 8), 4), x)

    def test_4x4_win4_single_window(self):
        x = torch.randn(1, 4, 4, 2)
        wins = window_partition(x, 4)
        assert wins.shape == (1, 1, 16, 2)
        assert torch.equal(wins[0, 0], x.reshape(16, 2))

    def test_shifted_matches_index_oracle(self):
        h = w = 8
        win, shift = 4, 2
        x = torch.randn(1, h, w, 2)
        wins = window_partition(x, win, shift)
        idx = window_index_grid(h, w, win, shift)
        # direct index arithmetic: token (i,j) lands in a known window slot
        for i in range(h):
            for j in range(w):
                ii, jj = (i - shift) % h, (j - shift) % w
                wid = (ii // win) * (w // win) + (jj // win)
                slot = (ii % win) * win + (jj % win)
                assert idx[wid, slot].item() == i * w + j
                assert torch.equal(wins[0, wid, slot], x[0, i, j])

    def test_roundtrip_exhaustive_small_grids(self):
        for win in (1, 2, 3, 4, 5, 7, 8):
            for h in range(win, 33, win):
                for w in range(win, 33, win):
                    x = torch.arange(h * w, dtype=torch.float32).reshape(1, h, w, 1)
                    for shift in range(win):
                        back = window_merge(window_partition(x, win, shift), (h, w), win, shift)
                        assert torch.equal(back, x), (h, w, win, shift)

    def test_non_divisible_raises(self):
        with pytest.raises(ValueError, match="not divisible"):
            window_partition(torch.randn(1, 6, 8, 2), 4)

    def test_pad_to_multiple(self):
        x = torch.randn(2, 6, 9, 3)
        padded, pad = pad_to_multiple(x, 4)
        assert padded.shape == (2, 8, 12, 3)
        assert torch.equal(padded[:, :6, :9], x)
        assert pad[:, 6:, :].all() and pad[:, :, 9:].all()
        assert not pad[:, :6, :9].any()


class TestWindowAttention:
    def test_identical_keys_give_value_projection(self):
        attn = WindowAttention(8, 2)
        key = torch.randn(1, 1, 1, 8).repeat(1, 2, 6, 1)
        q = torch.randn(1, 2, 3, 8)
        out, p = attn(q, key)
        value = attn.to_kv(key[:, :, :1]).chunk(2, dim=-1)[1]
        expected = attn.proj(value)
        assert torch.allclose(out, expected.expand_as(out), atol=1e-5)

    def test_single_key_weight_one(self):
        attn = WindowAttention(8, 2)
        out, p = attn(torch.randn(1, 3, 4, 8), torch.randn(1, 3, 1, 8))
        assert torch.allclose(p, torch.ones_like(p))

    def test_matches_dense_softmax_oracle(self):
        torch.manual_seed(3)
        dim, heads = 8, 2
        attn = WindowAttention(dim, heads).double()
        q = torch.randn(1, 2, 4, dim, dtype=torch.float64)
        kv = torch.randn(1, 2, 4, dim, dtype=torch.float64)
        out, probs = attn(q, kv)
        # independent dense computation per window and head
        hd = dim // heads
        for wi in range(2):
            qh = (attn.to_q(q[0, wi]) * attn.scale).reshape(4, heads, hd)
            kraw, vraw = attn.to_kv(kv[0, wi]).chunk(2, dim=-1)
            kh = kraw.reshape(4, heads, hd)
            vh = vraw.reshape(4, heads, hd)
            got = torch.zeros(4, dim, dtype=torch.float64)
            for h in range(heads):
                logits = qh[:, h] @ kh[:, h].T
                p = torch.exp(logits) / torch.exp(logits).sum(-1, keepdim=True)
                assert torch.allclose(p, probs[0, wi, h], atol=1e-5)
                got[:, h * hd:(h + 1) * hd] = p @ vh[:, h]
            assert torch.allclose(out[0, wi], attn.proj(got), atol=1e-5)

    def test_rows_sum_to_one(self):
        attn = WindowAttention(16, 4, bias_window=2)
        _, p = attn(torch.randn(2, 4, 4, 16), torch.randn(2, 4, 4, 16))
        assert torch.allclose(p.sum(-1), torch.ones_like(p.sum(-1)), atol=1e-5)

    def test_window_count_mismatch_raises(self):
        attn = WindowAttention(8, 2)
        with pytest.raises(ValueError, match="window count"):
            attn(torch.randn(1, 2, 4, 8), torch.randn(1, 3, 4, 8))


class TestSwinBlock:
    def test_window_locality_unshifted(self):
        torch.manual_seed(1)
        blk = SwinBlock(8, 2, win=2, shift=0).eval()
        x = torch.randn(1, 4, 4, 8)
        base, _ = blk(x)
        poked = x.clone()
        poked[0, 3, 3] += 5.0          # bottom-right window
        out, _ = blk(poked)
        assert torch.equal(out[0, :2, :2], base[0, :2, :2])   # top-left window untouched
        assert not torch.equal(out[0, 2:, 2:], base[0, 2:, 2:])

    def test_zeroed_projections_leave_mlp_residual(self):
        blk = SwinBlock(8, 2, win=2).eval()
        with torch.no_grad():
            blk.attn.proj.weight.zero_()
            blk.attn.proj.bias.zero_()
        x = torch.randn(1, 4, 4, 8)
        out, _ = blk(x)
        expected = x + blk.mlp(blk.norm2(x))
        assert torch.allclose(out, expected, atol=1e-6)

    def test_deterministic(self):
        blk = SwinBlock(8, 2, win=2, shift=1).eval()
        x = torch.randn(1, 4, 4, 8)
        a, _ = blk(x)
        b, _ = blk(x)
        assert torch.equal(a, b)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        blk = SwinBlock(6, 2, win=2).double().eval()
        probe = torch.randn(1, 4, 4, 6, dtype=torch.float64)

        def head(inp):
            out, _ = blk(inp)
            return (out * probe).sum()

        x = torch.randn(1, 4, 4, 6, dtype=torch.float64, requires_grad=True)
        head(x).backward()
        fd = fd_gradient(lambda v: head(v).item(), x)
        assert rel_err(x.grad, fd) < 1e-3

    def test_outputs_finite_for_bounded_inputs(self):
        blk = SwinBlock(8, 2, win=4, shift=2).eval()
        for _ in range(5):
            x = (torch.rand(1, 8, 8, 8) - 0.5) * 20.0
            out, _ = blk(x)
            assert torch.isfinite(out).all()

    def test_nan_input_raises(self):
        blk = SwinBlock(8, 2, win=2).eval()
        x = torch.randn(1, 4, 4, 8)
        x[0, 0, 0, 0] = float("nan")
        with pytest.raises(FloatingPointError):
            blk(x)

    def test_cross_needs_memory(self):
        blk = SwinBlock(8, 2, win=2, cross=True)
        with pytest.raises(ValueError, match="memory"):
            blk(torch.randn(1, 4, 4, 8))

    def test_attention_record_rows_stochastic_all_blocks(self):
        blk = SwinBlock(8, 2, win=2, shift=1, cross=True).eval()
        x = torch.randn(2, 4, 4, 8)
        mem = torch.randn(2, 4, 6, 8)
        _, recs = blk(x, memory_windows=mem)
        for rec in recs.values():
            sums = rec.weights.sum(-1)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
