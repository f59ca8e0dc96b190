"""SBB1 container file.

Little-endian layout:

    magic "SBB1" | version u32
    layers, hidden, ffn, vocab, seq, flags  (u32 each, flags bit 0 = biases)
    delta u8 | lambda_width u8 | tau_weights f64 | tau_stream f64
    payload bit length u64 | payload bytes
    for each layer, site (att_out, mlp_out), region (stream_x, weight):
        region tag u8 | record count u32 | records, bit-packed, zero-padded to a byte

A record is its index in ceil(log2(region size)) bits followed by its 16-bit
value, both least-significant bit first.
"""

import struct
from pathlib import Path

import numpy as np

from components.codec import (
    PAYLOAD_WIDTH,
    CodecConfig,
    CorrectionRecord,
    EncodedContainer,
    Region,
    region_size,
)
from components.errors import BadContainer, BadMagic, FormatError, InvalidConfig, TruncatedFile
from components.model import FLAG_BIASES, ModelDims, Site

CONTAINER_MAGIC = b"SBB1"
CONTAINER_VERSION = 1
PREAMBLE = struct.Struct("<4sI")
DIMS_BLOCK = struct.Struct("<IIIIII")
CONFIG_BLOCK = struct.Struct("<BBdd")
LENGTH_FIELD = struct.Struct("<Q")
SECTION_HEADER = struct.Struct("<BI")
REGION_TAGS = {Region.STREAM_X: 0, Region.WEIGHT: 1}
SECTION_ORDER = tuple(
    (site, region) for site in (Site.ATT_OUT, Site.MLP_OUT) for region in REGION_TAGS
)


def _bits_lsb_first(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width, dtype=np.int64)
    return ((values[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def _pack_records(records: list[CorrectionRecord], size: int) -> bytes:
    if not records:
        return b""
    index_width = max(size - 1, 0).bit_length()
    indices = np.array([r.index for r in records], dtype=np.int64)
    values = np.array([r.value for r in records], dtype=np.int64)
    bits = np.concatenate(
        [_bits_lsb_first(indices, index_width), _bits_lsb_first(values, PAYLOAD_WIDTH)], axis=1
    )
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _unpack_records(data: bytes, count: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    index_width = max(size - 1, 0).bit_length()
    record_width = index_width + PAYLOAD_WIDTH
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[: count * record_width].reshape(count, record_width).astype(np.int64)
    weights = np.int64(1) << np.arange(record_width, dtype=np.int64)
    indices = (bits[:, :index_width] * weights[None, :index_width]).sum(axis=1)
    values = (bits[:, index_width:] * weights[None, :PAYLOAD_WIDTH]).sum(axis=1)
    return indices, values


def packed_record_bytes(count: int, size: int) -> int:
    """Byte length of ``count`` bit-packed records addressing a region of ``size`` values."""
    return (count * (max(size - 1, 0).bit_length() + PAYLOAD_WIDTH) + 7) // 8


def container_to_bytes(container: EncodedContainer) -> bytes:
    """Serializes ``container`` to the SBB1 layout."""
    dims, cfg = container.dims, container.config
    parts = [
        PREAMBLE.pack(CONTAINER_MAGIC, CONTAINER_VERSION),
        DIMS_BLOCK.pack(
            dims.layers,
            dims.hidden,
            dims.ffn,
            dims.vocab,
            dims.seq,
            FLAG_BIASES if dims.has_biases else 0,
        ),
        CONFIG_BLOCK.pack(cfg.delta, cfg.lambda_width, cfg.tau_weights, cfg.tau_stream),
        LENGTH_FIELD.pack(container.payload_bit_length),
        container.payload,
    ]
    for layer in range(1, dims.layers + 1):
        for site, region in SECTION_ORDER:
            records = container.records(layer, site, region)
            parts.append(SECTION_HEADER.pack(REGION_TAGS[region], len(records)))
            parts.append(_pack_records(records, region_size(dims, site, region)))
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise TruncatedFile(f"SBB1 container ends inside {what}")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, layout: struct.Struct, what: str) -> tuple:
        return layout.unpack(self.take(layout.size, what))


def container_from_bytes(data: bytes) -> EncodedContainer:
    """Parses an SBB1 file.

    Args:
        data: Whole file contents.

    Returns:
        The container the bytes describe.

    Raises:
        BadMagic: The file does not start with the SBB1 magic.
        TruncatedFile: The file ends inside a header, the payload or a record section.
        FormatError: Unknown version.
        BadContainer: Invalid header values, region tags, record indices or trailing bytes.
    """
    if len(data) < 4 or data[:4] != CONTAINER_MAGIC:
        raise BadMagic("not an SBB1 container")
    cursor = _Cursor(data)
    _, version = cursor.unpack(PREAMBLE, "preamble")
    if version != CONTAINER_VERSION:
        raise FormatError(f"unsupported SBB1 version {version}")
    layers, hidden, ffn, vocab, seq, flags = cursor.unpack(DIMS_BLOCK, "dims block")
    delta, lambda_width, tau_weights, tau_stream = cursor.unpack(CONFIG_BLOCK, "config block")
    try:
        dims = ModelDims(layers, hidden, ffn, vocab, bool(flags & FLAG_BIASES), seq)
        cfg = CodecConfig(delta, lambda_width, tau_weights, tau_stream)
    except InvalidConfig as e:
        raise BadContainer(f"invalid header: {e}") from e
    (bit_length,) = cursor.unpack(LENGTH_FIELD, "payload length")
    payload = cursor.take((bit_length + 7) // 8, "payload")

    records = []
    for layer in range(1, dims.layers + 1):
        for site, region in SECTION_ORDER:
            tag, count = cursor.unpack(SECTION_HEADER, "correction section header")
            if tag != REGION_TAGS[region]:
                raise BadContainer(
                    f"layer {layer} {site.value}: expected region tag {REGION_TAGS[region]}, "
                    f"found {tag}"
                )
            size = region_size(dims, site, region)
            if count > size:
                raise BadContainer(f"layer {layer} {site.value}: {count} records exceed {size}")
            packed = cursor.take(packed_record_bytes(count, size), "correction records")
            if count == 0:
                continue
            indices, values = _unpack_records(packed, count, size)
            if np.any(indices >= size) or np.any(np.diff(indices) <= 0):
                raise BadContainer(
                    f"layer {layer} {site.value} {region.value}: record indices must be "
                    f"strictly increasing and below {size}"
                )
            records += [
                CorrectionRecord(layer, site, region, int(i), int(v))
                for i, v in zip(indices, values, strict=True)
            ]
    if cursor.offset != len(data):
        raise BadContainer(f"{len(data) - cursor.offset} trailing bytes after the last section")
    return EncodedContainer(dims, cfg, payload, bit_length, tuple(records))


def fixed_overhead_bits(container: EncodedContainer) -> int:
    """File bits that are neither payload, sign nor correction record bits."""
    total = 8 * len(container_to_bytes(container))
    return total - container.payload_bit_length - container.correction_bits


def save_container(container: EncodedContainer, path: str | Path):
    """Writes ``container`` to ``path``."""
    Path(path).write_bytes(container_to_bytes(container))


def load_container(path: str | Path) -> EncodedContainer:
    """Reads an SBB1 container from ``path``."""
    return container_from_bytes(Path(path).read_bytes())
