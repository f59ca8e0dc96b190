"""Bits-back encoding and decoding of a sliced transformer.

The encoder works on the canonical model rounded to binary16 (the reference).
Weights are pushed onto one bit stack in storage order. Before the output
weight of each symmetric interface (W_o, W_2) is pushed, a rotation is drawn
from the stack top and the weight is stored rotated; the drawn symbols are
buried weights of the same block. The decoder recovers each rotation from the
rotated weight, undoes it, and pushes the buried symbols back.

Rotation recovery from binary16 data is inexact, so the encoder replays the
decoder and emits correction records wherever a reconstructed value drifts:

* ``weight`` records restore canonical W_o / W_2 entries that end up more than
  ``tau_weights`` away from the reference.
* ``stream_x`` records restore buried symbols whose value moved by more than
  ``tau_stream`` in symbol space, or whose binary16 weight moved by more than
  ``tau_weights`` or became non-finite.
"""

from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from components.bitstream import BitStack
from components.canonical import canonicalize, recover_rotation, reference_signs
from components.errors import BadContainer, InvalidConfig
from components.model import ModelDims, SlicedTransformer, Site
from components.numerics import (
    OrthogonalMatrix,
    fx_decode,
    half_decode,
    half_encode,
    half_round,
)
from components.rotation_codec import (
    RotationCodecConfig,
    draw_rotation,
    encode_rotation,
    rotation_symbols,
)
from utils.logger import Logger, get_level_from_env

logger = Logger(__name__, level=get_level_from_env())

PAYLOAD_WIDTH = 16
OPT_TAU_WEIGHTS = 0.01
LLAMA_TAU_WEIGHTS = 0.005
DEFAULT_TAU_STREAM = 2.0**-13


class Region(StrEnum):
    """Reconstructed values a correction record addresses."""

    STREAM_X = "stream_x"
    WEIGHT = "weight"


@dataclass(frozen=True)
class CodecConfig:
    """Codec parameters, carried inside every container.

    Attributes:
        delta: Payload symbol width; weights are binary16 so this is always 16.
        lambda_width: Width of the eigenvalue symbols, 16 or 32.
        tau_weights: Largest tolerated absolute weight error before a correction.
        tau_stream: Largest tolerated buried-symbol deviation, in symbol value space.
    """

    delta: int = PAYLOAD_WIDTH
    lambda_width: int = 32
    tau_weights: float = OPT_TAU_WEIGHTS
    tau_stream: float = DEFAULT_TAU_STREAM

    def __post_init__(self):
        """Rejects widths and thresholds the codec cannot honour."""
        if self.delta != PAYLOAD_WIDTH:
            raise InvalidConfig(f"delta must be {PAYLOAD_WIDTH}, got {self.delta}")
        if self.lambda_width not in (16, 32):
            raise InvalidConfig(f"lambda_width must be 16 or 32, got {self.lambda_width}")
        for name in ("tau_weights", "tau_stream"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidConfig(f"{name} must be positive, got {value}")

    def rotation_config(self, dim: int) -> RotationCodecConfig:
        """Symbol layout of one rotation at width ``dim``."""
        return RotationCodecConfig.for_dim(dim, self.lambda_width)


@dataclass(frozen=True, order=True)
class CorrectionRecord:
    """One (position, true value) pair of the correction channel.

    Attributes:
        layer: 1-based block index.
        site: Interface whose rotation produced the deviation.
        region: Which reconstructed values ``index`` addresses.
        index: Flat position, row-major for weights, pop order for stream symbols.
        value: The reference binary16 / stream pattern.
    """

    layer: int
    site: Site
    region: Region
    index: int
    value: int


@dataclass(frozen=True, eq=False)
class EncodedContainer:
    """Payload bit stack plus correction records.

    Records are kept sorted by (layer, site, region, index).
    """

    dims: ModelDims
    config: CodecConfig
    payload: bytes
    payload_bit_length: int
    corrections: tuple[CorrectionRecord, ...] = ()

    def __post_init__(self):
        """Sorts the correction records."""
        object.__setattr__(self, "corrections", tuple(sorted(self.corrections)))

    def records(self, layer: int, site: Site, region: Region) -> list[CorrectionRecord]:
        """Records of one region at one interface, in index order."""
        return [
            r
            for r in self.corrections
            if r.layer == layer and r.site == site and r.region == region
        ]

    @property
    def sign_bits(self) -> int:
        """Sign bits on the payload stack."""
        return sign_bit_count(self.dims)

    @property
    def correction_bits(self) -> int:
        """Total cost of the correction records."""
        return sum(
            correction_record_bits(region_size(self.dims, r.site, r.region))
            for r in self.corrections
        )


@dataclass(frozen=True, eq=False)
class SiteTrace:
    """Values the decoder reconstructs at one interface, before corrections.

    Attributes:
        weight_patterns: Canonical weight patterns after undoing the rotation.
        x_symbols: Buried symbols recomputed from the recovered rotation, pop order.
    """

    weight_patterns: np.ndarray
    x_symbols: np.ndarray


def correction_record_bits(size: int) -> int:
    """Cost of one record: 16 value bits plus ceil(log2(size)) index bits."""
    return PAYLOAD_WIDTH + max(size - 1, 0).bit_length()


def region_size(dims: ModelDims, site: Site, region: Region) -> int:
    """Number of addressable values in one correction region."""
    if region is Region.STREAM_X:
        return dims.hidden * (dims.hidden + 1) // 2
    if site is Site.ATT_OUT:
        return dims.hidden * dims.hidden
    return dims.ffn * dims.hidden


def sign_bit_count(dims: ModelDims) -> int:
    """One sign bit per row of each of the 2L rotations."""
    return 2 * dims.layers * dims.hidden


def expected_payload_bits(dims: ModelDims, cfg: CodecConfig) -> int:
    """Stack length after encoding, sign bits included."""
    rotation = cfg.rotation_config(dims.hidden)
    per_rotation = rotation.drawn_bits - rotation.lambda_bits - dims.hidden
    return PAYLOAD_WIDTH * dims.parameter_count - 2 * dims.layers * per_rotation


def reference_model(model: SlicedTransformer) -> SlicedTransformer:
    """Canonical form of ``model`` rounded to binary16; the encoder's ground truth."""
    canonical, _ = canonicalize(model)
    return canonical.map_tensors(lambda _, value: half_round(value))


def _push_tensor(stack: BitStack, value: np.ndarray | None):
    if value is not None:
        stack.push_symbols(half_encode(np.ravel(value)), PAYLOAD_WIDTH)


def _pop_patterns(stack: BitStack, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    return np.ascontiguousarray(stack.pop_symbols(count, PAYLOAD_WIDTH)[::-1]).reshape(shape)


def _back_rotate(w_rot: np.ndarray, q: OrthogonalMatrix) -> np.ndarray:
    return np.ascontiguousarray(w_rot) @ np.ascontiguousarray(q.data.T)


def stream_deviations(
    simulated: np.ndarray, true: np.ndarray, cfg: CodecConfig, rotation: RotationCodecConfig
) -> np.ndarray:
    """Mask of buried symbols that need a stream correction."""
    drift = np.abs(
        np.asarray(fx_decode(simulated, rotation.x_codec))
        - np.asarray(fx_decode(true, rotation.x_codec))
    )
    simulated_weights = np.asarray(half_decode(simulated.astype(np.uint16)))
    true_weights = np.asarray(half_decode(true.astype(np.uint16)))
    with np.errstate(invalid="ignore"):
        weight_drift = np.abs(simulated_weights - true_weights)
    return (
        (drift > cfg.tau_stream)
        | ~np.isfinite(simulated_weights)
        | (weight_drift > cfg.tau_weights)
    ) & (simulated != true)


def weight_deviations(decoded: np.ndarray, reference: np.ndarray, tau: float) -> np.ndarray:
    """Mask of decoded weights that need a weight correction."""
    with np.errstate(invalid="ignore"):
        drift = np.abs(decoded - reference)
    return ~np.isfinite(decoded) | (drift > tau)


class BitsBackEncoder:
    """Encodes models into containers; keeps a trace of the simulated decoder."""

    def __init__(self, cfg: CodecConfig | None = None):
        """Initializes the encoder.

        Args:
            cfg: Codec parameters; defaults to ``CodecConfig()``.
        """
        self.cfg = cfg or CodecConfig()
        self.trace: dict[tuple[int, Site], SiteTrace] = {}

    def encode(self, model: SlicedTransformer) -> EncodedContainer:
        """Canonicalizes ``model``, rounds it to binary16 and encodes it."""
        return self.encode_reference(reference_model(model))

    def encode_reference(self, reference: SlicedTransformer) -> EncodedContainer:
        """Encode a model that is already canonical and on the binary16 grid."""
        dims = reference.dims
        rotation = self.cfg.rotation_config(dims.hidden)
        stack = BitStack(expected_payload_bits(dims, self.cfg) + 8)
        records: list[CorrectionRecord] = []
        self.trace = {}

        _push_tensor(stack, reference.w_emb)
        for layer, block in enumerate(reference.blocks, start=1):
            for value in (block.q_skip_att, block.w_qkv, block.b_qkv):
                _push_tensor(stack, value)
            records += self._encode_site(stack, rotation, layer, Site.ATT_OUT, block.w_o)
            for value in (block.b_o, block.q_skip_mlp, block.w_1, block.b_1):
                _push_tensor(stack, value)
            records += self._encode_site(stack, rotation, layer, Site.MLP_OUT, block.w_2)
            _push_tensor(stack, block.b_2)
            logger.debug(f"Encoded layer {layer}/{dims.layers}, stack at {stack.bit_length} bits")
        _push_tensor(stack, reference.w_head)
        _push_tensor(stack, reference.b_head)

        container = EncodedContainer(
            dims=dims,
            config=self.cfg,
            payload=stack.serialize(),
            payload_bit_length=stack.bit_length,
            corrections=tuple(records),
        )
        logger.info(
            f"Encoded {dims.parameter_count} parameters into {stack.bit_length} payload bits "
            f"with {len(records)} corrections ({container.correction_bits} bits)"
        )
        return container

    def _encode_site(
        self,
        stack: BitStack,
        rotation: RotationCodecConfig,
        layer: int,
        site: Site,
        w_ref: np.ndarray,
    ) -> list[CorrectionRecord]:
        draw = draw_rotation(stack, rotation)
        w_rot = half_round(np.ascontiguousarray(w_ref) @ draw.q.data)
        signs, recovered = reference_signs(w_rot, draw.q)
        stack.push_sign_bits(signs)
        _push_tensor(stack, w_rot)

        decoded = np.asarray(half_encode(_back_rotate(w_rot, recovered)), dtype=np.int64)
        simulated = rotation_symbols(recovered, draw.lambda_symbols, rotation)
        self.trace[(layer, site)] = SiteTrace(decoded.copy(), simulated.copy())

        weight_mask = weight_deviations(
            np.asarray(half_decode(decoded.astype(np.uint16))), w_ref, self.cfg.tau_weights
        )
        reference_patterns = np.asarray(half_encode(w_ref), dtype=np.int64).ravel()
        records = [
            CorrectionRecord(layer, site, Region.WEIGHT, int(i), int(reference_patterns[i]))
            for i in np.flatnonzero(weight_mask)
        ]
        stream_mask = stream_deviations(simulated, draw.x_symbols, self.cfg, rotation)
        records += [
            CorrectionRecord(layer, site, Region.STREAM_X, int(i), int(draw.x_symbols[i]))
            for i in np.flatnonzero(stream_mask)
        ]
        logger.debug(
            f"Layer {layer} {site.value}: {int(weight_mask.sum())} weight and "
            f"{int(stream_mask.sum())} stream corrections"
        )
        return records


class BitsBackDecoder:
    """Decodes containers; keeps a trace of reconstructed values before corrections."""

    def __init__(self):
        """Initializes the decoder with an empty trace."""
        self.trace: dict[tuple[int, Site], SiteTrace] = {}

    def decode(self, container: EncodedContainer) -> SlicedTransformer:
        """Pops every tensor off the payload, undoing rotations and applying corrections.

        Args:
            container: Encoded model.

        Returns:
            The canonical binary16 model.

        Raises:
            BadContainer: The payload length disagrees with the dims and config, or
                bits remain once every tensor is popped.
        """
        dims, cfg = container.dims, container.config
        expected = expected_payload_bits(dims, cfg)
        if container.payload_bit_length != expected:
            raise BadContainer(
                f"payload holds {container.payload_bit_length} bits, dims and config "
                f"require {expected}"
            )
        rotation = cfg.rotation_config(dims.hidden)
        stack = BitStack.deserialize(container.payload, container.payload_bit_length)
        self.trace = {}
        d, f, v = dims.hidden, dims.ffn, dims.vocab
        tensors: dict[str, np.ndarray] = {}

        def pop(name: str, shape: tuple[int, ...]):
            tensors[name] = half_decode(_pop_patterns(stack, shape).astype(np.uint16))

        if dims.has_biases:
            pop("b_head", (v,))
        pop("w_head", (d, v))
        for layer in range(dims.layers, 0, -1):
            prefix = f"blocks.{layer - 1}."
            if dims.has_biases:
                pop(prefix + "b_2", (d,))
            tensors[prefix + "w_2"] = self._decode_site(
                stack, rotation, container, layer, Site.MLP_OUT, (f, d)
            )
            if dims.has_biases:
                pop(prefix + "b_1", (f,))
            pop(prefix + "w_1", (d, f))
            pop(prefix + "q_skip_mlp", (d, d))
            if dims.has_biases:
                pop(prefix + "b_o", (d,))
            tensors[prefix + "w_o"] = self._decode_site(
                stack, rotation, container, layer, Site.ATT_OUT, (d, d)
            )
            if dims.has_biases:
                pop(prefix + "b_qkv", (3 * d,))
            pop(prefix + "w_qkv", (d, 3 * d))
            pop(prefix + "q_skip_att", (d, d))
            logger.debug(f"Decoded layer {layer}/{dims.layers}")
        pop("w_emb", (v, d))

        if stack.bit_length != 0:
            raise BadContainer(f"{stack.bit_length} bits left on the stack after decoding")
        logger.info(f"Decoded {dims.parameter_count} parameters")
        return SlicedTransformer.from_tensors(dims, tensors)

    def _decode_site(
        self,
        stack: BitStack,
        rotation: RotationCodecConfig,
        container: EncodedContainer,
        layer: int,
        site: Site,
        shape: tuple[int, int],
    ) -> np.ndarray:
        w_rot = half_decode(_pop_patterns(stack, shape).astype(np.uint16))
        finite = np.isfinite(w_rot)
        if not np.all(finite):
            logger.warning(
                f"Layer {layer} {site.value}: {int((~finite).sum())} non-finite rotated "
                "weights replaced by zero"
            )
            w_rot = np.where(finite, w_rot, 0.0)
        signs = stack.pop_sign_bits(rotation.dim)
        recovered = recover_rotation(w_rot, signs)

        decoded = np.asarray(half_encode(_back_rotate(w_rot, recovered)), dtype=np.int64)
        substitutions = {
            r.index: r.value for r in container.records(layer, site, Region.STREAM_X)
        }
        simulated = encode_rotation(stack, recovered, rotation, substitutions)
        self.trace[(layer, site)] = SiteTrace(decoded.copy(), simulated.copy())

        flat = decoded.reshape(-1)
        for record in container.records(layer, site, Region.WEIGHT):
            flat[record.index] = record.value
        return half_decode(flat.astype(np.uint16)).reshape(shape)


def encode_model(model: SlicedTransformer, cfg: CodecConfig | None = None) -> EncodedContainer:
    """Canonicalize, round to binary16 and bits-back encode ``model``."""
    return BitsBackEncoder(cfg).encode(model)


def decode_model(container: EncodedContainer) -> SlicedTransformer:
    """Decode a container back to the canonical binary16 model."""
    return BitsBackDecoder().decode(container)


@dataclass
class CodingSession:
    """Encoder and decoder run side by side on one model, for diagnostics."""

    model: SlicedTransformer
    cfg: CodecConfig = field(default_factory=CodecConfig)
    reference: SlicedTransformer | None = None
    container: EncodedContainer | None = None
    decoded: SlicedTransformer | None = None
    encoder: BitsBackEncoder | None = None
    decoder: BitsBackDecoder | None = None

    def run(self) -> "CodingSession":
        """Encodes the reference and decodes the result, keeping both traces."""
        self.reference = self.reference or reference_model(self.model)
        self.encoder = BitsBackEncoder(self.cfg)
        self.container = self.encoder.encode_reference(self.reference)
        self.decoder = BitsBackDecoder()
        self.decoded = self.decoder.decode(self.container)
        return self
