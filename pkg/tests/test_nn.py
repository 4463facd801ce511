import numpy as np
import pytest

from multiplane.autodiff import Tape, Tensor, UnetSpec, build_unet, ops
from multiplane.autodiff.nn import Conv2d


def unet_param_count_oracle(spec):
    """Layer-by-layer sum straight from the architecture definition."""

    def conv_params(cin, cout, k):
        return cout * cin * k * k + cout

    k = spec.kernel_size
    total = conv_params(spec.in_channels, spec.base_channels, k)
    ch = spec.base_channels
    for _ in range(spec.levels):
        total += conv_params(ch, 2 * ch, k) + conv_params(2 * ch, 2 * ch, k)
        ch *= 2
    for _ in range(spec.levels):
        total += conv_params(ch, ch // 2, k) + conv_params(ch, ch // 2, k)
        ch //= 2
    total += conv_params(spec.base_channels, spec.out_channels, 1)
    return total


class TestUnet:
    def test_paper_scale_shape(self):
        net = build_unet(UnetSpec(3, 4, base_channels=64, levels=3), seed=0)
        out = net(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        assert out.shape == (1, 4, 64, 64)

    def test_small_shape(self):
        net = build_unet(UnetSpec(8, 8, base_channels=8, levels=1), seed=0)
        out = net(Tensor(np.zeros((2, 8, 8, 8), np.float32)))
        assert out.shape == (2, 8, 8, 8)

    def test_param_count_matches_oracle(self):
        spec = UnetSpec(3, 4, base_channels=8, levels=2)
        net = build_unet(spec, seed=1)
        assert net.param_count == unet_param_count_oracle(spec)

    @pytest.mark.parametrize("levels,base", [(1, 4), (2, 8), (3, 16)])
    def test_param_count_other_sizes(self, levels, base):
        spec = UnetSpec(5, 2, base_channels=base, levels=levels)
        assert build_unet(spec, seed=0).param_count == unet_param_count_oracle(spec)

    def test_non_divisible_input_pads_and_crops(self):
        net = build_unet(UnetSpec(2, 3, base_channels=4, levels=2), seed=0)
        out = net(Tensor(np.random.default_rng(0).random((1, 2, 11, 10)).astype(np.float32)))
        assert out.shape == (1, 3, 11, 10)

    def test_deterministic_init(self):
        a = build_unet(UnetSpec(3, 3, 8, 2), seed=7)
        b = build_unet(UnetSpec(3, 3, 8, 2), seed=7)
        for (_, ta), (_, tb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(ta.data, tb.data)
        c = build_unet(UnetSpec(3, 3, 8, 2), seed=8)
        assert not np.array_equal(a.parameters()[0][1].data, c.parameters()[0][1].data)

    def test_unique_parameter_names(self):
        net = build_unet(UnetSpec(3, 3, 8, 2), seed=0)
        names = [name for name, _ in net.parameters()]
        assert len(names) == len(set(names))

    def test_all_parameters_receive_gradients(self, rng):
        net = build_unet(UnetSpec(2, 2, base_channels=4, levels=1), seed=3)
        x = Tensor(rng.random((1, 2, 8, 8)).astype(np.float32))
        with Tape() as tape:
            loss = ops.mean(ops.abs_(net(x)))
        grads = tape.gradients(loss)
        for name, param in net.parameters():
            assert param in grads, f"{name} got no gradient"
            assert np.any(grads[param] != 0), f"{name} gradient is all zero"

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            UnetSpec(0, 3)
        with pytest.raises(ValueError):
            UnetSpec(3, 3, base_channels=0)
        with pytest.raises(ValueError):
            UnetSpec(3, 3, levels=0)
        with pytest.raises(ValueError):
            UnetSpec(3, 3, kernel_size=4)


class TestConvModule:
    def test_he_style_init_bounds(self):
        conv = Conv2d(4, 8, 3, rng=np.random.default_rng(0))
        bound = np.sqrt(6.0 / (4 * 9))
        assert conv.weight.data.min() >= -bound
        assert conv.weight.data.max() <= bound
        assert np.all(conv.bias.data == 0)

    def test_stride_halves_even_dims(self, rng):
        conv = Conv2d(2, 3, 3, stride=2, rng=rng)
        out = conv(Tensor(np.zeros((1, 2, 8, 10), np.float32)))
        assert out.shape == (1, 3, 4, 5)
