"""Sliced transformer weights, a synthetic generator, a reference forward pass
and the SWC1 weight file.

Tensors are kept in 64-bit memory. Biases are row vectors and every rotation
acts on the right of the hidden dimension (x -> x @ Q).
"""

import struct
from dataclasses import dataclass, replace
from enum import StrEnum
from pathlib import Path

import numpy as np

from components.errors import (
    BadMagic,
    DimensionMismatch,
    FormatError,
    InvalidConfig,
    LayerOutOfRange,
    ShapeMismatch,
    TokenOutOfRange,
    TruncatedFile,
)
from components.numerics import OrthogonalMatrix, half_decode, half_encode, rmsnorm

WEIGHTS_MAGIC = b"SWC1"
WEIGHTS_VERSION = 1
WEIGHTS_HEADER = struct.Struct("<4sIIIIIII")
FLAG_BIASES = 0x1

BLOCK_FIELDS = (
    "q_skip_att",
    "w_qkv",
    "b_qkv",
    "w_o",
    "b_o",
    "q_skip_mlp",
    "w_1",
    "b_1",
    "w_2",
    "b_2",
)
BIAS_FIELDS = frozenset({"b_qkv", "b_o", "b_1", "b_2"})


class Site(StrEnum):
    """Rotation interfaces inside a block."""

    ATT_OUT = "att_out"
    MLP_OUT = "mlp_out"


@dataclass(frozen=True)
class ModelDims:
    """Model dimensions.

    Attributes:
        layers: Block count L.
        hidden: Hidden width D, the width left after slicing.
        ffn: MLP inner width F.
        vocab: Vocabulary size V.
        has_biases: Whether the linear layers carry biases.
        seq: Maximum token count accepted by ``forward``.
    """

    layers: int = 4
    hidden: int = 32
    ffn: int = 64
    vocab: int = 256
    has_biases: bool = True
    seq: int = 16

    def __post_init__(self):
        """Rejects empty dimensions and a hidden width below 2."""
        for name in ("layers", "hidden", "ffn", "vocab", "seq"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.hidden < 2:
            raise InvalidConfig(f"hidden must be at least 2, got {self.hidden}")

    def block_shapes(self) -> dict[str, tuple[int, ...]]:
        """Shapes of one block's tensors, without biases when the model has none."""
        d, f = self.hidden, self.ffn
        shapes = {
            "q_skip_att": (d, d),
            "w_qkv": (d, 3 * d),
            "b_qkv": (3 * d,),
            "w_o": (d, d),
            "b_o": (d,),
            "q_skip_mlp": (d, d),
            "w_1": (d, f),
            "b_1": (f,),
            "w_2": (f, d),
            "b_2": (d,),
        }
        if not self.has_biases:
            shapes = {k: v for k, v in shapes.items() if k not in BIAS_FIELDS}
        return shapes

    def tensor_layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of every tensor in storage and coding order."""
        layout = [("w_emb", (self.vocab, self.hidden))]
        for index in range(self.layers):
            layout += [(f"blocks.{index}.{k}", s) for k, s in self.block_shapes().items()]
        layout.append(("w_head", (self.hidden, self.vocab)))
        if self.has_biases:
            layout.append(("b_head", (self.vocab,)))
        return layout

    @property
    def parameter_count(self) -> int:
        """Total number of stored weights P."""
        return sum(int(np.prod(shape)) for _, shape in self.tensor_layout())


@dataclass(frozen=True, eq=False)
class BlockWeights:
    """One transformer block. Bias fields are None for bias-free models."""

    q_skip_att: np.ndarray
    w_qkv: np.ndarray
    b_qkv: np.ndarray | None
    w_o: np.ndarray
    b_o: np.ndarray | None
    q_skip_mlp: np.ndarray
    w_1: np.ndarray
    b_1: np.ndarray | None
    w_2: np.ndarray
    b_2: np.ndarray | None


@dataclass(frozen=True, eq=False)
class SlicedTransformer:
    """Complete weight set of a sliced transformer."""

    dims: ModelDims
    w_emb: np.ndarray
    blocks: tuple[BlockWeights, ...]
    w_head: np.ndarray
    b_head: np.ndarray | None

    def __post_init__(self):
        """Checks every tensor against the shapes ``dims`` declares."""
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.blocks) != self.dims.layers:
            raise DimensionMismatch(
                f"model has {len(self.blocks)} blocks but dims declare {self.dims.layers}"
            )
        tensors = dict(self.tensors())
        for name, shape in self.dims.tensor_layout():
            if name not in tensors:
                raise DimensionMismatch(f"tensor {name} is missing")
            if tensors[name].shape != shape:
                raise DimensionMismatch(
                    f"tensor {name} has shape {tensors[name].shape}, expected {shape}"
                )

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """All present tensors, in storage and coding order."""
        items = [("w_emb", self.w_emb)]
        for index, block in enumerate(self.blocks):
            for name in BLOCK_FIELDS:
                value = getattr(block, name)
                if value is not None:
                    items.append((f"blocks.{index}.{name}", value))
        items.append(("w_head", self.w_head))
        if self.b_head is not None:
            items.append(("b_head", self.b_head))
        return items

    def tensor(self, name: str) -> np.ndarray:
        """Tensor by its layout name, e.g. ``blocks.0.w_o``."""
        if name.startswith("blocks."):
            _, index, field_name = name.split(".")
            return getattr(self.blocks[int(index)], field_name)
        return getattr(self, name)

    @classmethod
    def from_tensors(cls, dims: ModelDims, tensors: dict[str, np.ndarray]) -> "SlicedTransformer":
        """Builds a model from a name to array mapping keyed like ``tensor_layout``."""
        blocks = []
        for index in range(dims.layers):
            fields = {
                name: tensors.get(f"blocks.{index}.{name}") if dims.has_biases else None
                for name in BIAS_FIELDS
            }
            for name in BLOCK_FIELDS:
                if name not in BIAS_FIELDS:
                    fields[name] = tensors[f"blocks.{index}.{name}"]
            blocks.append(BlockWeights(**fields))
        return cls(
            dims=dims,
            w_emb=tensors["w_emb"],
            blocks=tuple(blocks),
            w_head=tensors["w_head"],
            b_head=tensors.get("b_head") if dims.has_biases else None,
        )

    def map_tensors(self, fn) -> "SlicedTransformer":
        """New model with ``fn(name, array)`` applied to every tensor."""
        return SlicedTransformer.from_tensors(
            self.dims, {name: fn(name, value) for name, value in self.tensors()}
        )

    def replace_block(self, index: int, **changes) -> "SlicedTransformer":
        """New model with fields of block ``index`` replaced."""
        blocks = list(self.blocks)
        blocks[index] = replace(blocks[index], **changes)
        return replace(self, blocks=tuple(blocks))


def generate(dims: ModelDims, seed: int) -> SlicedTransformer:
    """Seeded Gaussian weights.

    Matrices are N(0, 1/fan_in) with fan_in the row count; the embedding is a
    lookup table and is drawn N(0, 1). Skip matrices are dense, not orthogonal.
    Biases are N(0, 0.01).
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in dims.tensor_layout():
        if name == "w_emb":
            tensors[name] = rng.standard_normal(shape)
        elif len(shape) == 1:
            tensors[name] = 0.1 * rng.standard_normal(shape)
        else:
            tensors[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return SlicedTransformer.from_tensors(dims, tensors)


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh approximation of GELU."""
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _causal_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    scores = (q @ k.T) / np.sqrt(q.shape[1])
    mask = np.triu(np.ones(scores.shape, dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ v


def _bias(value: np.ndarray | None) -> np.ndarray | float:
    return 0.0 if value is None else value


def forward(model: SlicedTransformer, tokens) -> np.ndarray:
    """Logits (tokens x V) of a single-head causal transformer in 64-bit arithmetic."""
    dims = model.dims
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size < 1 or tokens.size > dims.seq:
        raise TokenOutOfRange(f"sequence length {tokens.size} outside 1..{dims.seq}")
    if np.any(tokens < 0) or np.any(tokens >= dims.vocab):
        raise TokenOutOfRange(f"token index outside 0..{dims.vocab - 1}")

    d = dims.hidden
    h = model.w_emb[tokens]
    for block in model.blocks:
        qkv = rmsnorm(h) @ block.w_qkv + _bias(block.b_qkv)
        attention = _causal_attention(qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :])
        h = h @ block.q_skip_att + attention @ block.w_o + _bias(block.b_o)
        g = gelu(rmsnorm(h) @ block.w_1 + _bias(block.b_1))
        h = h @ block.q_skip_mlp + g @ block.w_2 + _bias(block.b_2)
    return rmsnorm(h) @ model.w_head + _bias(model.b_head)


def _rotate_right(value: np.ndarray | None, q: np.ndarray) -> np.ndarray | None:
    return None if value is None else value @ q


def apply_symmetry_rotation(
    model: SlicedTransformer, layer: int, site: Site, q: OrthogonalMatrix
) -> SlicedTransformer:
    """Rotate the hidden state at one interface without changing the model's function.

    ``att_out`` at layer l (1..L) rotates the attention output of block l and feeds
    the inverse into the MLP half of the same block. ``mlp_out`` at layer l (0..L)
    rotates the output of block l and feeds the inverse into block l+1; layer 0
    is the embedding output and layer L feeds the head.
    """
    dims = model.dims
    if q.dim != dims.hidden:
        raise DimensionMismatch(f"rotation of dim {q.dim} does not match hidden {dims.hidden}")
    site = Site(site)
    low = 1 if site is Site.ATT_OUT else 0
    if not low <= layer <= dims.layers:
        raise LayerOutOfRange(f"layer {layer} outside {low}..{dims.layers} for {site.value}")

    r = q.data
    if site is Site.ATT_OUT:
        block = model.blocks[layer - 1]
        return model.replace_block(
            layer - 1,
            w_o=block.w_o @ r,
            b_o=_rotate_right(block.b_o, r),
            q_skip_att=block.q_skip_att @ r,
            q_skip_mlp=r.T @ block.q_skip_mlp,
            w_1=r.T @ block.w_1,
        )

    if layer == 0:
        model = replace(model, w_emb=model.w_emb @ r)
    else:
        block = model.blocks[layer - 1]
        model = model.replace_block(
            layer - 1,
            w_2=block.w_2 @ r,
            b_2=_rotate_right(block.b_2, r),
            q_skip_mlp=block.q_skip_mlp @ r,
        )
    if layer == dims.layers:
        return replace(model, w_head=r.T @ model.w_head)
    following = model.blocks[layer]
    return model.replace_block(
        layer, q_skip_att=r.T @ following.q_skip_att, w_qkv=r.T @ following.w_qkv
    )


def weights_to_bytes(model: SlicedTransformer) -> bytes:
    """Serializes ``model`` to the SWC1 layout."""
    dims = model.dims
    header = WEIGHTS_HEADER.pack(
        WEIGHTS_MAGIC,
        WEIGHTS_VERSION,
        dims.layers,
        dims.hidden,
        dims.ffn,
        dims.vocab,
        dims.seq,
        FLAG_BIASES if dims.has_biases else 0,
    )
    body = b"".join(
        np.asarray(half_encode(value), dtype="<u2").tobytes() for _, value in model.tensors()
    )
    return header + body


def weights_from_bytes(data: bytes) -> SlicedTransformer:
    """Parses an SWC1 file.

    Raises:
        BadMagic: The data does not start with the SWC1 magic.
        TruncatedFile: The data ends inside the header or a tensor.
        FormatError: Unsupported version.
        ShapeMismatch: Invalid dims in the header, or trailing bytes.
    """
    if len(data) < 4 or data[:4] != WEIGHTS_MAGIC:
        raise BadMagic("not an SWC1 weight file")
    if len(data) < WEIGHTS_HEADER.size:
        raise TruncatedFile("SWC1 header is incomplete")
    _, version, layers, hidden, ffn, vocab, seq, flags = WEIGHTS_HEADER.unpack_from(data)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported SWC1 version {version}")
    try:
        dims = ModelDims(layers, hidden, ffn, vocab, bool(flags & FLAG_BIASES), seq)
    except InvalidConfig as e:
        raise ShapeMismatch(f"SWC1 header declares invalid dims: {e}") from e

    offset = WEIGHTS_HEADER.size
    tensors = {}
    for name, shape in dims.tensor_layout():
        count = int(np.prod(shape))
        end = offset + 2 * count
        if end > len(data):
            raise TruncatedFile(f"SWC1 file ends inside tensor {name}")
        patterns = np.frombuffer(data, dtype="<u2", count=count, offset=offset)
        tensors[name] = half_decode(patterns.astype(np.uint16)).reshape(shape)
        offset = end
    if offset != len(data):
        raise ShapeMismatch(f"SWC1 file has {len(data) - offset} trailing bytes")
    return SlicedTransformer.from_tensors(dims, tensors)


def save_weights(model: SlicedTransformer, path: str | Path):
    """Write the model as binary16 patterns in the SWC1 layout."""
    Path(path).write_bytes(weights_to_bytes(model))


def load_weights(path: str | Path) -> SlicedTransformer:
    """Reads an SWC1 file from ``path``."""
    return weights_from_bytes(Path(path).read_bytes())
