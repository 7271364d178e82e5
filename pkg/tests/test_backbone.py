import pytest
import torch

from tadkd.backbone import BackboneConfig, VideoEncoder

from gradcheck import assert_grads_match

TINY = BackboneConfig(in_channels=3, feat_dim=4, temporal_stride=2, depth=1, width=4)


class TestConfig:
    def test_bad_stride_rejected(self):
        with pytest.raises(ValueError):
            BackboneConfig(temporal_stride=0)

    def test_bad_channels_rejected(self):
        with pytest.raises(ValueError):
            BackboneConfig(in_channels=4)


class TestEncodeShapes:
    def test_downsampling_arithmetic(self):
        enc = VideoEncoder(BackboneConfig(feat_dim=6, temporal_stride=4))
        out = enc(torch.randn(32, 3, 16, 16))
        assert out.shape == (8, 6)

    def test_remainder_frames_dropped(self):
        enc = VideoEncoder(BackboneConfig(feat_dim=6, temporal_stride=4))
        out = enc(torch.randn(34, 3, 16, 16))
        assert out.shape == (8, 6)

    def test_doubling_t_doubles_output(self):
        enc = VideoEncoder(TINY)
        x = torch.randn(8, 3, 8, 8)
        doubled = x.repeat_interleave(2, dim=0)
        assert enc(doubled).shape[0] == 2 * enc(x).shape[0]

    def test_too_few_frames_rejected(self):
        enc = VideoEncoder(BackboneConfig(temporal_stride=8))
        with pytest.raises(ValueError, match="temporal_stride"):
            enc(torch.randn(4, 3, 16, 16))

    def test_channel_mismatch_rejected(self):
        enc = VideoEncoder(BackboneConfig(in_channels=2))
        with pytest.raises(ValueError, match="channels"):
            enc(torch.randn(8, 3, 16, 16))

    def test_flow_input_two_channels(self):
        enc = VideoEncoder(BackboneConfig(in_channels=2, feat_dim=4, temporal_stride=2))
        assert enc(torch.randn(8, 2, 16, 16)).shape == (4, 4)


class TestEncodeValues:
    def test_zero_input_bias_free_gives_zero_output(self):
        enc = VideoEncoder(TINY, bias=False)
        out = enc(torch.zeros(8, 3, 8, 8))
        assert torch.all(out == 0.0)

    def test_deterministic(self):
        torch.manual_seed(0)
        enc = VideoEncoder(TINY)
        x = torch.randn(8, 3, 8, 8)
        assert torch.equal(enc(x), enc(x))

    def test_no_cross_sample_leakage(self):
        # encoding videos independently is order-invariant
        torch.manual_seed(1)
        enc = VideoEncoder(TINY)
        videos = [torch.randn(8, 3, 8, 8) for _ in range(3)]
        first = [enc(v) for v in videos]
        second = [enc(v) for v in reversed(videos)]
        for a, b in zip(first, reversed(second)):
            assert torch.equal(a, b)


class TestEncodeGradients:
    def test_gradcheck_input_and_params(self):
        torch.manual_seed(2)
        cfg = BackboneConfig(in_channels=3, feat_dim=4, temporal_stride=2, depth=1, width=2)
        enc = VideoEncoder(cfg).double()
        x = torch.randn(8, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        probe = torch.randn(4, 4, dtype=torch.float64)
        leaves = [x] + [p for p in enc.parameters()]

        def f():
            return (enc(x) * probe).sum()

        assert_grads_match(f, leaves, rel_tol=1e-4)
