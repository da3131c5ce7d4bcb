"""Frame codec: shapes, STE quantization, hyperprior, temporal prior."""

import numpy as np
import pytest
import torch

from ctxcodec.codec import FrameCodec, gaussian_likelihood, quantize_latents, ste_round
from ctxcodec.coder import RangeDecoder, RangeEncoder, decode_value, encode_value
from ctxcodec.config import ModelConfig

from test_swin import fd_gradient, rel_err

torch.manual_seed(0)


@pytest.fixture(scope="module")
def codec():
    torch.manual_seed(42)
    return FrameCodec(ModelConfig()).eval()


class TestSte:
    def test_rounding_values(self):
        x = torch.tensor([0.4, -1.6, 0.5, 1.5, 2.5, -0.5])
        out = ste_round(x)
        assert torch.equal(out, torch.tensor([0.0, -2.0, 0.0, 2.0, 2.0, -0.0]))

    def test_gradient_is_identity(self):
        x = (torch.randn(50) * 3).requires_grad_()
        ste_round(x).sum().backward()
        assert torch.equal(x.grad, torch.ones_like(x))

    def test_clamped_quantize_keeps_identity_gradient(self):
        x = torch.tensor([100.0, -300.0, 0.2], requires_grad=True)
        out = quantize_latents(x, -64, 63)
        assert torch.equal(out.detach(), torch.tensor([63.0, -64.0, 0.0]))
        out.sum().backward()
        assert torch.equal(x.grad, torch.ones_like(x))


class TestShapes:
    def test_encode_shape_64_to_16(self, codec):
        x = torch.rand(2, 3, 64, 64)
        ctx = torch.zeros(2, 64, 16, 16)
        y = codec.encode(x, ctx)
        assert y.shape == (2, 32, 16, 16)

    def test_decode_inverts_downsampling(self, codec):
        y_hat = torch.randint(-5, 5, (1, 32, 16, 16)).float()
        ctx = torch.zeros(1, 64, 16, 16)
        assert codec.decode(y_hat, ctx).shape == (1, 3, 64, 64)

    def test_dim_mismatch_raises(self, codec):
        with pytest.raises(ValueError):
            codec.encode(torch.rand(1, 3, 64, 64), torch.zeros(1, 64, 8, 8))
        with pytest.raises(ValueError):
            codec.decode(torch.zeros(1, 32, 16, 16), torch.zeros(1, 64, 8, 8))

    def test_hyper_features_match_latent_dims(self, codec):
        y = torch.randn(1, 32, 16, 16)
        z = codec.hyper_encode(y)
        assert z.shape == (1, 32, 8, 8)
        assert codec.hyper_decode(torch.round(z)).shape == (1, 64, 16, 16)

    def test_deterministic(self, codec):
        x = torch.zeros(1, 3, 64, 64)
        ctx = torch.zeros(1, 64, 16, 16)
        a = codec.encode(x, ctx)
        b = codec.encode(x, ctx)
        assert torch.equal(a, b)
        assert torch.isfinite(a).all()


class TestReceptiveField:
    def test_single_pixel_perturbation_stays_local(self, codec):
        torch.manual_seed(1)
        x = torch.rand(1, 3, 64, 64)
        ctx = torch.zeros(1, 64, 16, 16)
        base = codec.encode(x, ctx)
        poked = x.clone()
        py, px = 33, 17
        poked[0, :, py, px] += 0.5
        diff = (codec.encode(poked, ctx) - base).abs().sum(dim=1)[0]
        changed = diff.nonzero()

        # index-arithmetic oracle: compose (kernel, stride, padding) chain to get
        # each latent position's input interval
        def input_interval(out_lo, out_hi, specs):
            for k, s, p in reversed(specs):
                out_lo = out_lo * s - p
                out_hi = out_hi * s - p + k - 1
            return out_lo, out_hi

        for pos in changed:
            ly, lx = int(pos[0]), int(pos[1])
            y_lo, y_hi = input_interval(ly, ly, codec.encoder.layer_specs)
            x_lo, x_hi = input_interval(lx, lx, codec.encoder.layer_specs)
            assert y_lo <= py <= y_hi and x_lo <= px <= x_hi, (ly, lx)


class TestTemporalPrior:
    def test_zero_input_constant_output(self, codec):
        out = codec.temporal_features(torch.zeros(1, 32, 16, 16))
        assert torch.allclose(out, out[:, :, :1, :1].expand_as(out), atol=1e-6)

    def test_output_dims(self, codec):
        out = codec.temporal_features(torch.randn(3, 32, 16, 16))
        assert out.shape == (3, 64, 16, 16)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(2)
        codec = FrameCodec(ModelConfig()).double().eval()
        probe = torch.randn(1, 64, 4, 4, dtype=torch.float64)
        x = torch.randn(1, 32, 4, 4, dtype=torch.float64, requires_grad=True)

        def head(inp):
            return (codec.temporal_prior(inp) * probe).sum()

        head(x).backward()
        fd = fd_gradient(lambda v: head(v).item(), x)
        assert rel_err(x.grad, fd) < 1e-3


class TestFactorizedPrior:
    def test_pmf_rows_sum_to_one(self, codec):
        cdfs = codec.factorized.cdf_tables(-64, 63)
        assert cdfs.shape[0] == 32
        assert (cdfs[:, -1] == 1 << 16).all()
        # real-pmf normalization per channel
        from ctxcodec.coder import discretized_gaussian_pmf
        mean = codec.factorized.mean.detach().numpy()
        scale = codec.factorized.scales().detach().numpy()
        pmf = discretized_gaussian_pmf(mean, scale)
        np.testing.assert_allclose(pmf.sum(axis=1), 1.0, atol=1e-6)

    def test_hyper_latent_roundtrips_range_coder(self, codec):
        torch.manual_seed(3)
        z = torch.round(torch.randn(1, 32, 8, 8) * 4)
        tables = codec.factorized.cdf_tables(-64, 63)
        enc = RangeEncoder()
        flat = z.reshape(32, -1).long()
        for ch in range(32):
            for v in flat[ch]:
                encode_value(enc, int(v), tables[ch])
        dec = RangeDecoder(enc.finish())
        out = torch.tensor([[decode_value(dec, tables[ch]) for _ in range(64)]
                            for ch in range(32)], dtype=torch.long)
        assert torch.equal(out, flat)

    def test_likelihood_positive_and_differentiable(self, codec):
        z = torch.randn(1, 32, 8, 8, requires_grad=True)
        lik = codec.factorized.likelihood(z)
        assert (lik > 0).all()
        lik.sum().backward()
        assert z.grad is not None


class TestGaussianLikelihood:
    def test_matches_erf_formula(self):
        from scipy.special import ndtr
        v = torch.tensor([0.0])
        lik = gaussian_likelihood(v, torch.tensor([0.0]), torch.tensor([1.0]))
        assert abs(lik.item() - (ndtr(0.5) - ndtr(-0.5))) < 1e-6

    def test_lower_bounded(self):
        lik = gaussian_likelihood(torch.tensor([60.0]), torch.tensor([0.0]),
                                  torch.tensor([0.01]))
        assert lik.item() >= 2 ** -30
