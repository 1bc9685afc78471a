import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from east.tensor import Shape, Tensor, flatten_channel_last, l2_norm


class TestShape:
    def test_valid_ranks(self):
        for dims in [(3,), (2, 5), (1, 2, 3), (4, 3, 3, 2)]:
            assert Shape(dims).dims == dims

    def test_element_count(self):
        assert Shape((4, 3, 3, 2)).element_count == 72
        assert Shape((7,)).element_count == 7

    def test_rank_bounds(self):
        with pytest.raises(ValueError):
            Shape(())
        with pytest.raises(ValueError):
            Shape((2, 2, 2, 2, 2))

    def test_dims_must_be_positive(self):
        with pytest.raises(ValueError):
            Shape((3, 0))
        with pytest.raises(ValueError):
            Shape((-1,))

    def test_dims_coerced_to_int(self):
        assert Shape((np.int64(3), np.int32(2))).dims == (3, 2)


class TestTensor:
    def test_from_array_round_trip(self, rng):
        arr = rng.normal(size=(2, 3, 3, 4)).astype(np.float32)
        t = Tensor.from_array(arr)
        assert t.shape.dims == (2, 3, 3, 4)
        np.testing.assert_array_equal(t.reshaped(), arr)

    def test_data_is_flat_c_order(self, rng):
        arr = rng.normal(size=(2, 2, 2, 3)).astype(np.float32)
        t = Tensor.from_array(arr)
        np.testing.assert_array_equal(t.data, arr.reshape(-1))

    def test_immutable_attributes(self, rng):
        t = Tensor.from_array(rng.normal(size=(3,)).astype(np.float32))
        with pytest.raises(AttributeError):
            t.data = np.zeros(3)

    def test_storage_read_only(self, rng):
        t = Tensor.from_array(rng.normal(size=(3,)).astype(np.float32))
        with pytest.raises(ValueError):
            t.data[0] = 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Tensor(Shape((4,)), np.zeros(3, dtype=np.float32))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Tensor(Shape((2,)), np.array([1.0, np.nan], dtype=np.float32))
        with pytest.raises(ValueError):
            Tensor(Shape((2,)), np.array([np.inf, 0.0], dtype=np.float32))

    def test_equality(self):
        a = Tensor.from_array(np.array([1.0, 2.0], dtype=np.float32))
        b = Tensor.from_array(np.array([1.0, 2.0], dtype=np.float32))
        c = Tensor.from_array(np.array([[1.0, 2.0]], dtype=np.float32))
        assert a == b
        assert a != c  # same values, different shape
        assert a != "not a tensor"


class TestFlatten:
    def test_identity_view(self, rng):
        t = Tensor.from_array(rng.normal(size=(2, 3, 3, 4)).astype(np.float32))
        assert flatten_channel_last(t) is t.data

    def test_in_channel_fastest(self, rng):
        # position formula: ((o*H + y)*W + x)*C + c
        arr = rng.normal(size=(2, 3, 2, 4)).astype(np.float32)
        flat = flatten_channel_last(Tensor.from_array(arr))
        o, h, w, c = 1, 2, 1, 3
        assert flat[((o * 3 + h) * 2 + w) * 4 + c] == arr[o, h, w, c]

    def test_adjacent_positions_differ_only_in_channel(self, rng):
        arr = rng.normal(size=(2, 2, 2, 3)).astype(np.float32)
        flat = flatten_channel_last(Tensor.from_array(arr))
        np.testing.assert_array_equal(flat[:3], arr[0, 0, 0, :])

    def test_reshape_reproduces_tensor(self, rng):
        arr = rng.normal(size=(3, 2, 2, 2)).astype(np.float32)
        t = Tensor.from_array(arr)
        np.testing.assert_array_equal(flatten_channel_last(t).reshape(arr.shape), arr)


class TestL2Norm:
    def test_matches_slow_oracle(self, rng):
        seg = rng.normal(size=37)
        expected = math.sqrt(sum(float(v) ** 2 for v in seg))
        assert l2_norm(seg) == pytest.approx(expected, rel=1e-12)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="empty group"):
            l2_norm(np.array([]))

    def test_accumulates_in_float64(self):
        # 1e6 tiny float32 values would lose mass if summed in float32
        seg = np.full(1_000_000, 1e-4, dtype=np.float32)
        assert l2_norm(seg) == pytest.approx(math.sqrt(1_000_000 * 1e-8), rel=1e-6)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
    def test_norm_property(self, values):
        seg = np.array(values, dtype=np.float64)
        assert l2_norm(seg) == pytest.approx(float(np.linalg.norm(seg)), abs=1e-9)
