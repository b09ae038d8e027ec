import math

import pytest
import torch
from hypothesis import given, strategies as st

from ncadiff import CellRule, ConfigurationError, conditioning_features, sinusoidal_encode
from ncadiff.conditioning import CondBlock, EmbeddingMLP


class TestSinusoidalEncode:
    def test_zero_value(self):
        out = sinusoidal_encode(0.0, 4)
        assert torch.allclose(out, torch.tensor([0.0, 1.0, 0.0, 1.0]))

    def test_half_pi(self):
        out = sinusoidal_encode(math.pi / 2, 2)
        assert out[0].item() == pytest.approx(1.0, abs=1e-6)
        assert abs(out[1].item()) < 1e-6

    def test_frequency_ladder(self):
        # second pair uses omega = 10000^(-1/2) = 0.01
        out = sinusoidal_encode(1.0, 4)
        assert out[2].item() == pytest.approx(math.sin(0.01), abs=1e-7)
        assert out[3].item() == pytest.approx(math.cos(0.01), abs=1e-7)

    @given(st.floats(min_value=-100.0, max_value=100.0),
           st.sampled_from([2, 4, 8, 16]))
    def test_bounded(self, value, enc_dim):
        out = sinusoidal_encode(value, enc_dim)
        assert out.shape == (enc_dim,)
        assert (out.abs() <= 1.0 + 1e-6).all()

    @pytest.mark.parametrize("enc_dim", [1, 3, 5, 0, -2])
    def test_odd_enc_dim_rejected(self, enc_dim):
        with pytest.raises(ConfigurationError):
            sinusoidal_encode(1.0, enc_dim)


class TestConditioningFeatures:
    def test_shape(self):
        feats = conditioning_features(5, 7, 0.3, 0.5, 4, batch=2)
        assert feats.shape == (2, 16, 5, 7)

    def test_bounded(self):
        feats = conditioning_features(6, 6, 0.9, 1.0, 4, batch=1)
        assert (feats.abs() <= 1.0 + 1e-6).all()

    def test_cell_depends_only_on_own_coordinates(self):
        a = conditioning_features(8, 8, 0.25, 0.5, 4)
        b = conditioning_features(8, 8, 0.25, 0.5, 4)
        assert torch.equal(a, b)
        # same normalized coordinates on different canvases agree: corner cells
        big = conditioning_features(16, 16, 0.25, 0.5, 4)
        assert torch.allclose(a[0, :, 0, 0], big[0, :, 0, 0])
        assert torch.allclose(a[0, :, 7, 7], big[0, :, 15, 15])

    def test_disabled_positions_are_spatially_constant(self):
        feats = conditioning_features(5, 9, 0.7, 0.25, 4, position_mode="disabled")
        flat = feats.flatten(2)
        assert torch.equal(flat.min(dim=2).values, flat.max(dim=2).values)

    def test_per_element_timesteps(self):
        t = torch.tensor([0.1, 0.9])
        feats = conditioning_features(4, 4, t, 0.0, 4, batch=2)
        assert not torch.equal(feats[0], feats[1])
        solo = conditioning_features(4, 4, 0.9, 0.0, 4, batch=1)
        assert torch.allclose(feats[1], solo[0])

    def test_single_cell_axis(self):
        feats = conditioning_features(1, 1, 0.0, 0.0, 2)
        assert feats.shape == (1, 8, 1, 1)

    def test_bad_geometry(self):
        with pytest.raises(ConfigurationError):
            conditioning_features(0, 4, 0.0, 0.0, 4)

    def test_bad_position_mode(self):
        with pytest.raises(ConfigurationError):
            conditioning_features(4, 4, 0.0, 0.0, 4, position_mode="tiled")


class TestEmbedding:
    def test_zero_weights_give_constant_bias_map(self):
        mlp = EmbeddingMLP(16, 4, hidden=8)
        with torch.no_grad():
            for conv in (mlp.net[0], mlp.net[2]):
                conv.weight.zero_()
                conv.bias.zero_()
            mlp.net[2].bias.copy_(torch.tensor([1.0, -2.0, 0.5, 3.0]))
        feats = conditioning_features(5, 5, 0.3, 0.1, 4)
        e = mlp(feats)
        expected = torch.tensor([1.0, -2.0, 0.5, 3.0]).view(1, 4, 1, 1).expand(1, 4, 5, 5)
        assert torch.allclose(e, expected)

    def test_reference_widths(self):
        # full model: 4 scalars x enc 4 -> 16-wide input, 256 hidden, 4 out
        rule = CellRule(96, 512, e_dim=4, enc_dim=4)
        assert rule.embed.net[0].in_channels == 16
        assert rule.embed.net[0].out_channels == 256
        assert rule.embed.net[2].out_channels == 4

    def test_same_inputs_same_vectors(self, tiny_rule):
        e = tiny_rule.embedding_map(4, 4, 0.5, 0.25)
        e2 = tiny_rule.embedding_map(4, 4, 0.5, 0.25)
        assert torch.equal(e, e2)


class TestCondBlocks:
    def test_identity_multiplier(self):
        block = CondBlock(4, 10, hidden=8)
        with torch.no_grad():
            block.net[2].weight.zero_()
            block.net[2].bias.fill_(1.0)
        e = torch.randn(2, 4, 3, 3)
        assert torch.allclose(block(e), torch.ones(2, 10, 3, 3))

    def test_reference_widths(self):
        # frequency branch at published defaults: cond0 -> 388, cond1 -> 512
        rule = CellRule(192, 512, e_dim=4, enc_dim=4)
        assert rule.cond0.net[0].in_channels == 4
        assert rule.cond0.net[0].out_channels == 128
        assert rule.cond0.net[2].out_channels == 388
        assert rule.cond1.net[2].out_channels == 512
