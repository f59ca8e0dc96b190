"""LIFO bit stack carrying the bits-back message.

Symbols are stored least-significant bit first, so a symbol's most-significant
bit is the last one pushed and sits on top of the stack. A pop reads the top
``width`` bits back as one contiguous run.
"""

import numpy as np

from components.errors import LengthMismatch, Underflow
from components.numerics import SignVector

SYMBOL_WIDTHS = (1, 16, 32)
INITIAL_CAPACITY = 1024


def _check_width(width: int):
    if width not in SYMBOL_WIDTHS:
        raise ValueError(f"symbol width must be one of {SYMBOL_WIDTHS}, got {width}")


class BitStack:
    """Growable stack of bits with fixed-width symbol push and pop.

    A stack is owned by one coding session at a time; it is not safe to share
    between threads while it is being mutated.
    """

    def __init__(self, capacity: int = INITIAL_CAPACITY):
        """Initializes an empty stack.

        Args:
            capacity: Bits to preallocate; the buffer doubles when full.
        """
        self._bits = np.zeros(max(capacity, 8), dtype=np.uint8)
        self._length = 0

    @property
    def bit_length(self) -> int:
        """Number of bits held."""
        return self._length

    def __len__(self) -> int:
        """Same as ``bit_length``."""
        return self._length

    def __repr__(self) -> str:
        """Debug form showing the length."""
        return f"BitStack(bit_length={self._length})"

    def _reserve(self, extra: int):
        needed = self._length + extra
        if needed <= self._bits.shape[0]:
            return
        capacity = self._bits.shape[0]
        while capacity < needed:
            capacity *= 2
        grown = np.zeros(capacity, dtype=np.uint8)
        grown[: self._length] = self._bits[: self._length]
        self._bits = grown

    def push_bits(self, bits: np.ndarray):
        """Push raw bits; the last element ends up on top."""
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        self._reserve(bits.shape[0])
        self._bits[self._length : self._length + bits.shape[0]] = bits & 1
        self._length += bits.shape[0]

    def pop_bits(self, count: int) -> np.ndarray:
        """Pop ``count`` raw bits, returned in push order (top last)."""
        if count > self._length:
            raise Underflow(f"pop of {count} bits from a stack holding {self._length}")
        start = self._length - count
        bits = self._bits[start : self._length].copy()
        self._length = start
        return bits

    def push_symbols(self, patterns, width: int):
        """Push each pattern in sequence; the last pattern ends up on top."""
        _check_width(width)
        patterns = np.asarray(patterns, dtype=np.uint64).reshape(-1)
        if patterns.size and int(patterns.max()) >> width:
            raise ValueError(f"pattern does not fit in {width} bits")
        shifts = np.arange(width, dtype=np.uint64)
        bits = ((patterns[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
        self.push_bits(bits.reshape(-1))

    def pop_symbols(self, count: int, width: int) -> np.ndarray:
        """Pop ``count`` patterns; element 0 is the pattern that was on top."""
        _check_width(width)
        bits = self.pop_bits(count * width).reshape(count, width).astype(np.uint64)
        weights = np.uint64(1) << np.arange(width, dtype=np.uint64)
        patterns = (bits * weights[None, :]).sum(axis=1, dtype=np.uint64)
        return patterns[::-1].astype(np.int64)

    def push_symbol(self, pattern: int, width: int):
        """Push one pattern."""
        self.push_symbols([pattern], width)

    def pop_symbol(self, width: int) -> int:
        """Pop one pattern."""
        return int(self.pop_symbols(1, width)[0])

    def push_sign_bits(self, signs: SignVector):
        """Push one bit per sign, +1 as 1 and -1 as 0."""
        self.push_bits((signs.signs > 0).astype(np.uint8))

    def pop_sign_bits(self, dim: int) -> SignVector:
        """Pop ``dim`` sign bits pushed by ``push_sign_bits``."""
        bits = self.pop_bits(dim)
        return SignVector(np.where(bits == 1, 1, -1))

    def bits(self) -> np.ndarray:
        """Copy of the stored bits, bottom first."""
        return self._bits[: self._length].copy()

    def serialize(self) -> bytes:
        """Pack bits eight to a byte, bit i at position i % 8 of byte i // 8."""
        return np.packbits(self._bits[: self._length], bitorder="little").tobytes()

    @classmethod
    def deserialize(cls, data: bytes, bit_length: int) -> "BitStack":
        """Rebuild a stack from ``serialize`` output.

        Raises:
            LengthMismatch: ``bit_length`` is negative or exceeds the data.
        """
        if bit_length < 0 or bit_length > 8 * len(data):
            raise LengthMismatch(f"bit length {bit_length} does not fit in {len(data)} bytes")
        raw = np.frombuffer(bytes(data), dtype=np.uint8)
        bits = np.unpackbits(raw, bitorder="little")[:bit_length]
        stack = cls(bit_length)
        stack.push_bits(bits)
        return stack
