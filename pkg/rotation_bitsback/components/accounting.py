"""Codelength accounting: closed-form predictions, the payload layout map and
measured reports of encoded containers.
"""

from dataclasses import asdict, dataclass
from math import prod

from components.codec import (
    PAYLOAD_WIDTH,
    CodecConfig,
    EncodedContainer,
    correction_record_bits,
    expected_payload_bits,
    sign_bit_count,
)
from components.container import fixed_overhead_bits
from components.model import ModelDims

__all__ = [
    "CodelengthReport",
    "PayloadSegment",
    "accounting",
    "container_report",
    "correction_record_bits",
    "headless_ratio",
    "payload_layout",
    "rotation_saving_bits",
]


@dataclass(frozen=True)
class CodelengthReport:
    """Bit counts of one model under one codec configuration.

    ``payload_bits`` excludes the sign bits even though they share the stack, so
    ``saved_bits = naive_bits - (payload_bits + sign_bits + correction_bits + overhead_bits)``.

    Attributes:
        naive_bits: 16 bits per parameter.
        payload_bits: Stack bits other than sign bits.
        sign_bits: D sign bits per rotation.
        lambda_overhead_bits: Extra eigenvalue bits over a 16-bit eigenvalue channel.
        correction_bits: Correction records at 16 + ceil(log2(region size)) bits each.
        overhead_bits: Container header, section headers and padding.
        saved_bits: Naive size minus everything stored.
        saved_ratio: ``saved_bits / naive_bits``.
        predicted_ratio_headless: Block-only ratio r(D-1) / (D(6+2r)), ignoring signs and
            with eigenvalues at payload precision.
        block_ratio: Rotation savings net of signs and eigenvalue overhead, relative to
            block parameters only (embedding and head excluded).
    """

    naive_bits: int
    payload_bits: int
    sign_bits: int
    lambda_overhead_bits: int
    correction_bits: int
    overhead_bits: int
    saved_bits: int
    saved_ratio: float
    predicted_ratio_headless: float
    block_ratio: float

    def to_lines(self) -> list[str]:
        """``key=value`` lines, one per field."""
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, float):
                lines.append(f"{key}={value:.6f}")
            else:
                lines.append(f"{key}={value}")
        return lines


@dataclass(frozen=True)
class PayloadSegment:
    """A contiguous run of the final payload stack, bottom-up.

    Attributes:
        kind: ``plain`` for stored tensor entries, ``rotated`` for a rotated output
            weight, ``eigenvalues`` or ``signs`` for rotation side information.
        name: Tensor name, or ``layer.site`` for side information.
        start_bit: Offset of the first bit from the stack bottom.
        count: Number of symbols.
        width: Bits per symbol.
    """

    kind: str
    name: str
    start_bit: int
    count: int
    width: int

    @property
    def bit_length(self) -> int:
        """Bits the segment occupies."""
        return self.count * self.width


def rotation_saving_bits(dim: int, delta: int = PAYLOAD_WIDTH, lambda_width: int = 32) -> int:
    """Net bits reclaimed by one D-dimensional rotation, sign bits included."""
    return dim * (dim + 1) // 2 * delta - dim * lambda_width - dim


def headless_ratio(remaining_rate: float, hidden: int) -> float:
    """Block-only codelength reduction r(D-1) / (D(6+2r)) at sliced width D."""
    r = remaining_rate
    return r * (hidden - 1) / (hidden * (6.0 + 2.0 * r))


def _block_parameters(dims: ModelDims) -> int:
    return sum(prod(shape) for name, shape in dims.tensor_layout() if name.startswith("blocks."))


def accounting(
    dims: ModelDims, cfg: CodecConfig | None = None, remaining_rate: float = 1.0
) -> CodelengthReport:
    """Closed-form bit counts, without corrections or container overhead."""
    cfg = cfg or CodecConfig()
    rotations = 2 * dims.layers
    naive = PAYLOAD_WIDTH * dims.parameter_count
    sign_bits = sign_bit_count(dims)
    payload = expected_payload_bits(dims, cfg) - sign_bits
    saved = naive - payload - sign_bits
    block_saving = rotations * rotation_saving_bits(dims.hidden, cfg.delta, cfg.lambda_width)
    return CodelengthReport(
        naive_bits=naive,
        payload_bits=payload,
        sign_bits=sign_bits,
        lambda_overhead_bits=rotations * dims.hidden * (cfg.lambda_width - cfg.delta),
        correction_bits=0,
        overhead_bits=0,
        saved_bits=saved,
        saved_ratio=saved / naive,
        predicted_ratio_headless=headless_ratio(remaining_rate, dims.hidden),
        block_ratio=block_saving / (PAYLOAD_WIDTH * _block_parameters(dims)),
    )


def container_report(container: EncodedContainer, remaining_rate: float = 1.0) -> CodelengthReport:
    """Measured bit counts of an encoded container."""
    dims, cfg = container.dims, container.config
    predicted = accounting(dims, cfg, remaining_rate)
    sign_bits = container.sign_bits
    payload = container.payload_bit_length - sign_bits
    correction = container.correction_bits
    overhead = fixed_overhead_bits(container)
    saved = predicted.naive_bits - (payload + sign_bits + correction + overhead)
    return CodelengthReport(
        naive_bits=predicted.naive_bits,
        payload_bits=payload,
        sign_bits=sign_bits,
        lambda_overhead_bits=predicted.lambda_overhead_bits,
        correction_bits=correction,
        overhead_bits=overhead,
        saved_bits=saved,
        saved_ratio=saved / predicted.naive_bits,
        predicted_ratio_headless=predicted.predicted_ratio_headless,
        block_ratio=predicted.block_ratio,
    )


class _LayoutBuilder:
    def __init__(self):
        self.segments: list[list] = []

    def push(self, kind: str, name: str, count: int, width: int):
        self.segments.append([kind, name, count, width])

    def pop(self, count: int, width: int, what: str):
        """Pop ``count`` symbols; only plain entries of the same width may be drawn."""
        while count:
            if not self.segments:
                raise ValueError(f"{what} would underflow the payload")
            top = self.segments[-1]
            if top[0] != "plain" or top[3] != width:
                raise ValueError(f"{what} would draw from {top[0]} segment {top[1]}")
            taken = min(count, top[2])
            top[2] -= taken
            count -= taken
            if top[2] == 0:
                self.segments.pop()

    def build(self) -> list[PayloadSegment]:
        result, offset = [], 0
        for kind, name, count, width in self.segments:
            result.append(PayloadSegment(kind, name, offset, count, width))
            offset += count * width
        return result


def payload_layout(dims: ModelDims, cfg: CodecConfig | None = None) -> list[PayloadSegment]:
    """Map of the final payload stack.

    Replays the push and pop sequence of the encoder on segment lengths only.
    Every rotation draw must be covered by plain 16-bit entries already on the
    stack; a ValueError is raised otherwise.
    """
    cfg = cfg or CodecConfig()
    rotation = cfg.rotation_config(dims.hidden)
    builder = _LayoutBuilder()
    shapes = dict(dims.tensor_layout())

    def plain(name: str):
        if name in shapes:
            builder.push("plain", name, prod(shapes[name]), PAYLOAD_WIDTH)

    def site(prefix: str, label: str, weight: str):
        builder.pop(rotation.symbol_count, PAYLOAD_WIDTH, f"draw at {label}")
        builder.push("eigenvalues", label, dims.hidden, cfg.lambda_width)
        builder.push("signs", label, dims.hidden, 1)
        builder.push("rotated", prefix + weight, prod(shapes[prefix + weight]), PAYLOAD_WIDTH)

    plain("w_emb")
    for index in range(dims.layers):
        prefix = f"blocks.{index}."
        for name in ("q_skip_att", "w_qkv", "b_qkv"):
            plain(prefix + name)
        site(prefix, f"{index + 1}.att_out", "w_o")
        for name in ("b_o", "q_skip_mlp", "w_1", "b_1"):
            plain(prefix + name)
        site(prefix, f"{index + 1}.mlp_out", "w_2")
        plain(prefix + "b_2")
    plain("w_head")
    plain("b_head")
    return builder.build()
