import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cifsdip.errors import ConfigurationError, ParseError
from cifsdip.model import NetworkConfig, build_network, perturb_latent, sample_latent
from cifsdip.tensor import Tensor, mse_loss


class TestNetworkConfig:
    def test_defaults(self):
        cfg = NetworkConfig()
        assert cfg.depth == 3
        assert cfg.channels_down == [16, 32, 64]
        assert cfg.input_channels == 32

    def test_text_round_trip(self):
        cfg = NetworkConfig(channels_down=[8, 8], channels_up=[8, 16], channels_skip=[0, 4], need_1x1_up=False)
        assert NetworkConfig.from_text(cfg.to_text()) == cfg

    @pytest.mark.parametrize("text", ["depth", "bogus=1", "kernel_up=x", "need_1x1_up=maybe"])
    def test_from_text_errors(self, text):
        with pytest.raises(ParseError):
            NetworkConfig.from_text(text)

    @pytest.mark.parametrize("kwargs", [
        dict(channels_down=[], channels_up=[], channels_skip=[]),
        dict(channels_up=[16, 32]),
        dict(kernel_down=2),
        dict(output_channels=2),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            NetworkConfig(**kwargs)


class TestBuildNetwork:
    def test_depth_one_shape(self):
        cfg = NetworkConfig(channels_down=[8], channels_up=[8], channels_skip=[4])
        net = build_network(cfg, seed=0)
        z = sample_latent(32, 32, 32, seed=0)
        assert net(perturb_latent(z, np.random.default_rng(0))).shape == (1, 3, 32, 32)

    def test_same_seed_same_params(self):
        a = build_network(NetworkConfig(), seed=5).params.copy_data()
        b = build_network(NetworkConfig(), seed=5).params.copy_data()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_different_seed_differs(self):
        a = build_network(NetworkConfig(), seed=5).params.copy_data()
        b = build_network(NetworkConfig(), seed=6).params.copy_data()
        assert not np.array_equal(a["out.w"], b["out.w"])

    def test_indivisible_size_names_divisor(self):
        net = build_network(NetworkConfig(), seed=0)
        with pytest.raises(ConfigurationError, match="divisible by 2\\*\\*depth = 8"):
            net(Tensor(np.zeros((1, 32, 20, 24), np.float32)))

    def test_wrong_latent_depth(self, tiny_net):
        net = build_network(tiny_net)
        with pytest.raises(ConfigurationError):
            net(Tensor(np.zeros((1, 3, 8, 8), np.float32)))

    def test_gradients_reach_every_parameter(self, tiny_net):
        net = build_network(tiny_net, seed=1)
        z = sample_latent(32, 8, 8, seed=1)
        out = net(perturb_latent(z, np.random.default_rng(1)))
        leaves = mse_loss(out, np.full(out.shape, 0.5, np.float32)).backward()
        assert {t.name for t in leaves} == set(net.params)

    def test_parameter_count_positive(self):
        assert build_network(NetworkConfig()).params.num_parameters() > 10000

    @settings(max_examples=10, deadline=None)
    @given(depth=st.integers(1, 3), width=st.integers(1, 3), grey=st.booleans(), skip=st.integers(0, 3))
    def test_shape_preserved_and_output_in_unit_interval(self, depth, width, grey, skip):
        chans = [4 * width] * depth
        cfg = NetworkConfig(input_channels=4, output_channels=1 if grey else 3, channels_down=chans,
                            channels_up=chans, channels_skip=[skip] * depth)
        size = 2 ** depth * 2
        net = build_network(cfg, seed=depth)
        z = sample_latent(4, size, size + 2 ** depth, seed=0)
        out = net(perturb_latent(z, np.random.default_rng(0))).data
        assert out.shape == (1, cfg.output_channels, size, size + 2 ** depth)
        assert np.all((out > 0) & (out < 1))


class TestLatent:
    def test_shape(self):
        assert sample_latent(32, 64, 64, seed=0).shape == (32, 64, 64)

    def test_uniform_range(self):
        base = sample_latent(8, 16, 16, seed=0).base
        assert base.min() >= 0 and base.max() < 1

    def test_zero_perturbation_is_base(self):
        z = sample_latent(4, 8, 8, seed=0, sigma_p=0.0)
        np.testing.assert_array_equal(perturb_latent(z, np.random.default_rng(0)).data[0], z.base)

    def test_perturbation_magnitude(self):
        sigma_p = 1.0 / 30.0
        z = sample_latent(32, 64, 64, seed=0, sigma_p=sigma_p)
        dev = np.abs(perturb_latent(z, np.random.default_rng(3)).data[0].astype(np.float64) - z.base)
        expected = sigma_p * math.sqrt(2 / math.pi)
        assert abs(dev.mean() - expected) < 0.05 * expected

    def test_successive_calls_differ_base_fixed(self):
        z = sample_latent(4, 8, 8, seed=0)
        before = z.base.copy()
        r = np.random.default_rng(0)
        a, b = perturb_latent(z, r), perturb_latent(z, r)
        assert not np.array_equal(a.data, b.data)
        np.testing.assert_array_equal(z.base, before)

    def test_base_is_read_only(self):
        z = sample_latent(2, 4, 4)
        with pytest.raises(ValueError):
            z.base[0, 0, 0] = 1.0

    @pytest.mark.parametrize("args", [(0, 4, 4), (4, 0, 4)])
    def test_bad_dims(self, args):
        with pytest.raises(ConfigurationError):
            sample_latent(*args)
