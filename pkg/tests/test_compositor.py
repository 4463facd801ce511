import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _utils import check_op_gradient
from multiplane.autodiff import Tape, Tensor, ops, set_debug_checks
from multiplane.compositor import overcomposite, overcomposite_recursive


def planes_tensor(colors, alphas):
    """Build (D, 4, H, W) from per-plane scalar colors/alphas."""
    d = len(colors)
    data = np.zeros((d, 4, 2, 2), dtype=np.float64)
    for i, (c, a) in enumerate(zip(colors, alphas)):
        data[i, :3] = c
        data[i, 3] = a
    return Tensor(data)


class TestClosedForm:
    def test_single_opaque_plane(self):
        out = overcomposite(planes_tensor([0.7], [1.0]))
        assert np.allclose(out.data, 0.7)

    def test_all_transparent(self):
        out = overcomposite(planes_tensor([0.3, 0.9], [0.0, 0.0]))
        assert np.allclose(out.data, 0.0)

    def test_two_plane_hand_value(self):
        # back plane (C=0, A=1), front plane (C=1, A=0.5): 0*1*(1-0.5) + 1*0.5
        out = overcomposite(planes_tensor([0.0, 1.0], [1.0, 0.5]))
        assert np.allclose(out.data, 0.5)

    def test_opaque_front_occludes(self, rng):
        base = rng.random((3, 4, 3, 3)).astype(np.float64)
        base[-1, 3] = 1.0  # nearest plane fully opaque
        out1 = overcomposite(Tensor(base))
        perturbed = base.copy()
        perturbed[:-1] = rng.random((2, 4, 3, 3))  # change all farther planes
        perturbed[-1] = base[-1]
        out2 = overcomposite(Tensor(perturbed))
        assert np.allclose(out1.data, out2.data, atol=1e-12)
        assert np.allclose(out1.data, base[-1, :3] * 1.0)

    def test_output_range(self, rng):
        data = rng.random((6, 4, 5, 5))
        out = overcomposite(Tensor(data)).data
        assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-12


class TestRecursiveOracleAgreement:
    def test_same_hand_cases(self):
        for colors, alphas in [([0.7], [1.0]), ([0.3, 0.9], [0.0, 0.0]), ([0.0, 1.0], [1.0, 0.5])]:
            a = overcomposite(planes_tensor(colors, alphas)).data
            b = overcomposite_recursive(planes_tensor(colors, alphas)).data
            assert np.allclose(a, b, atol=1e-12)

    def test_hundred_random_mpis(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100):
            d = int(rng.integers(1, 9))
            data = Tensor(rng.random((d, 4, 4, 4)).astype(np.float32))
            a = overcomposite(data).data
            b = overcomposite_recursive(data).data
            worst = max(worst, float(np.abs(a.astype(np.float64) - b).max()))
        assert worst < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(
        depth=st.integers(min_value=1, max_value=8),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_identity_property(self, depth, seed):
        data = Tensor(np.random.default_rng(seed).random((depth, 4, 3, 3)))
        a = overcomposite(data).data
        b = overcomposite_recursive(data).data
        assert np.abs(a - b).max() < 1e-12  # float64 inputs


class TestGradients:
    def test_gradients_match_finite_differences(self, rng):
        check_op_gradient(lambda p: ops.mean(overcomposite(p)), rng.random((3, 4, 3, 3)))

    def test_recursive_gradients(self, rng):
        check_op_gradient(lambda p: ops.mean(overcomposite_recursive(p)), rng.random((2, 4, 3, 3)))


class TestValidation:
    def test_alpha_out_of_range_rejected_in_debug(self, rng):
        data = rng.random((2, 4, 3, 3))
        data[0, 3] = 1.5
        set_debug_checks(True)
        try:
            with pytest.raises(ValueError, match="alpha"):
                overcomposite(Tensor(data))
        finally:
            set_debug_checks(False)

    def test_wrong_channel_count_rejected(self, rng):
        with pytest.raises(ValueError):
            overcomposite(Tensor(rng.random((2, 3, 3, 3))))

    def test_multi_view_input_rejected(self, rng):
        with pytest.raises(ValueError, match="one view"):
            overcomposite(Tensor(rng.random((2, 2, 4, 3, 3))))
