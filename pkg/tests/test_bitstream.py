import numpy as np
import pytest

from components.bitstream import BitStack
from components.errors import LengthMismatch, Underflow
from components.numerics import SignVector


def test_single_symbol_round_trip():
    stack = BitStack()
    stack.push_symbol(0xBEEF, 16)
    assert stack.bit_length == 16
    assert stack.pop_symbol(16) == 0xBEEF
    assert len(stack) == 0


def test_least_significant_bit_goes_in_first():
    stack = BitStack()
    stack.push_symbol(0b0000000000000110, 16)
    bits = stack.bits()
    assert bits[:4].tolist() == [0, 1, 1, 0]
    assert stack.pop_bits(1).tolist() == [0]


def test_pop_order_is_top_first():
    stack = BitStack()
    stack.push_symbols([1, 2, 3], 16)
    assert stack.pop_symbols(3, 16).tolist() == [3, 2, 1]


def test_matches_a_list_stack():
    rng = np.random.default_rng(99)
    stack = BitStack(capacity=8)
    shadow: list[tuple[int, int]] = []
    for _ in range(2000):
        width = int(rng.choice([1, 16, 32]))
        if shadow and rng.random() < 0.45:
            top_width = shadow[-1][1]
            assert stack.pop_symbol(top_width) == shadow.pop()[0]
        else:
            pattern = int(rng.integers(0, 1 << width))
            stack.push_symbol(pattern, width)
            shadow.append((pattern, width))
        assert stack.bit_length == sum(w for _, w in shadow)


def test_mixed_widths_share_bits():
    stack = BitStack()
    stack.push_symbol(0xFFFF, 16)
    assert stack.pop_symbols(16, 1).tolist() == [1] * 16


def test_underflow():
    stack = BitStack()
    stack.push_symbol(1, 16)
    with pytest.raises(Underflow):
        stack.pop_symbol(32)
    assert stack.bit_length == 16


def test_rejects_bad_width_and_oversized_pattern():
    stack = BitStack()
    with pytest.raises(ValueError):
        stack.push_symbol(1, 8)
    with pytest.raises(ValueError):
        stack.push_symbol(1 << 16, 16)


def test_sign_bits():
    stack = BitStack()
    signs = SignVector([1, -1, -1, 1, 1])
    stack.push_sign_bits(signs)
    assert stack.bits().tolist() == [1, 0, 0, 1, 1]
    assert stack.pop_sign_bits(5) == signs


def test_serialize_layout():
    stack = BitStack()
    stack.push_bits(np.array([1, 0, 0, 0, 0, 0, 0, 0, 1, 1]))
    data = stack.serialize()
    assert data == bytes([0x01, 0x03])


@pytest.mark.parametrize("length", [0, 1, 7, 8, 9, 100])
def test_serialize_sizes(length):
    rng = np.random.default_rng(length)
    stack = BitStack()
    stack.push_bits(rng.integers(0, 2, size=length))
    data = stack.serialize()
    assert len(data) == (length + 7) // 8
    restored = BitStack.deserialize(data, length)
    assert np.array_equal(restored.bits(), stack.bits())


def test_serialize_ten_thousand_random_bits():
    rng = np.random.default_rng(10_000)
    bits = rng.integers(0, 2, size=10_000)
    stack = BitStack()
    stack.push_bits(bits)
    restored = BitStack.deserialize(stack.serialize(), bits.size)
    assert np.array_equal(restored.bits(), bits)


def test_serialize_random_lengths():
    rng = np.random.default_rng(99)
    for length in rng.integers(0, 100_001, size=20):
        bits = rng.integers(0, 2, size=int(length))
        stack = BitStack()
        stack.push_bits(bits)
        data = stack.serialize()
        assert len(data) == (int(length) + 7) // 8
        assert np.array_equal(BitStack.deserialize(data, int(length)).bits(), bits)


def test_deserialize_length_mismatch():
    with pytest.raises(LengthMismatch):
        BitStack.deserialize(b"\x00", 9)

