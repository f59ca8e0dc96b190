"""Drawing a rotation from the bit stack and giving the bits back.

A draw pops D(D+1)/2 symbols, reads them as a symmetric matrix X, and takes the
eigenvectors of X as the rotation. The eigenvalues are pushed back so that the
inverse step can rebuild X from the rotation alone and push the same symbols.

Symbol order, counted in pop order: the strict upper triangle of X in row-major
order starting at (0, 1), then the diagonal starting at (0, 0). Encoding pushes
the reverse of that sequence. Eigenvalues are pushed in index order 0..D-1.
"""

from dataclasses import dataclass, field

import numpy as np

from components.bitstream import BitStack
from components.errors import DimensionMismatch
from components.numerics import OrthogonalMatrix, SymbolCodec, fx_decode, fx_encode, sym_eig

X_SYMBOL_WIDTH = 16


@dataclass(frozen=True)
class RotationCodecConfig:
    """Symbol formats for one D-dimensional rotation.

    Attributes:
        dim: Rotation dimension D.
        x_codec: Interpretation of the X symbols, values in [-1, 1).
        lambda_codec: Interpretation of the eigenvalue symbols. Its scale is D, which
            bounds |λ| for any X with entries in [-1, 1).
    """

    dim: int
    x_codec: SymbolCodec = field(default_factory=lambda: SymbolCodec(X_SYMBOL_WIDTH, 1.0))
    lambda_codec: SymbolCodec | None = None

    def __post_init__(self):
        """Fills in the default eigenvalue codec and checks both widths."""
        if self.dim < 1:
            raise ValueError(f"rotation dimension must be at least 1, got {self.dim}")
        if self.lambda_codec is None:
            object.__setattr__(self, "lambda_codec", SymbolCodec(32, float(self.dim)))
        if self.x_codec.width != X_SYMBOL_WIDTH:
            raise ValueError("X symbols are 16 bits wide")
        if self.lambda_codec.scale != float(self.dim):
            raise ValueError("eigenvalue codec scale must equal the rotation dimension")

    @classmethod
    def for_dim(cls, dim: int, lambda_width: int = 32) -> "RotationCodecConfig":
        """Configuration for a D-dimensional rotation with the given eigenvalue width."""
        return cls(dim=dim, lambda_codec=SymbolCodec(lambda_width, float(dim)))

    @property
    def symbol_count(self) -> int:
        """Number of X symbols per draw, D(D+1)/2."""
        return self.dim * (self.dim + 1) // 2

    @property
    def drawn_bits(self) -> int:
        """Bits popped by one draw."""
        return self.symbol_count * X_SYMBOL_WIDTH

    @property
    def lambda_bits(self) -> int:
        """Bits of eigenvalue side information pushed by one draw."""
        return self.dim * self.lambda_codec.width


@dataclass(frozen=True, eq=False)
class RotationDraw:
    """Outcome of one draw.

    Attributes:
        q: Eigenvectors of X as columns, ordered by descending eigenvalue.
        x_symbols: The popped X symbols, in pop order.
        lambda_symbols: The pushed eigenvalue symbols, in index order.
    """

    q: OrthogonalMatrix
    x_symbols: np.ndarray
    lambda_symbols: np.ndarray


def _upper(dim: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(dim, k=1)


def symbols_to_matrix(symbols: np.ndarray, cfg: RotationCodecConfig) -> np.ndarray:
    """Build the symmetric X from symbols given in pop order."""
    dim = cfg.dim
    split = dim * (dim - 1) // 2
    values = np.asarray(fx_decode(np.asarray(symbols, dtype=np.int64), cfg.x_codec))
    x = np.zeros((dim, dim))
    x[_upper(dim)] = values[:split]
    x = x + x.T
    x[np.diag_indices(dim)] = values[split:]
    return x


def matrix_to_symbols(x: np.ndarray, cfg: RotationCodecConfig) -> np.ndarray:
    """Quantize a symmetric X back to symbols in pop order."""
    values = np.concatenate([x[_upper(cfg.dim)], np.diag(x)])
    return np.asarray(fx_encode(values, cfg.x_codec), dtype=np.int64)


def rotation_symbols(
    q: OrthogonalMatrix, lambda_symbols: np.ndarray, cfg: RotationCodecConfig
) -> np.ndarray:
    """Symbols that encode_rotation would push for ``q``, in pop order."""
    eigenvalues = np.asarray(fx_decode(np.asarray(lambda_symbols), cfg.lambda_codec))
    x = (q.data * eigenvalues[None, :]) @ q.data.T
    return matrix_to_symbols(x, cfg)


def draw_rotation(stack: BitStack, cfg: RotationCodecConfig) -> RotationDraw:
    """Pop X, eigendecompose it and push the eigenvalues.

    Net stack change is ``-drawn_bits + lambda_bits``.
    """
    x_symbols = stack.pop_symbols(cfg.symbol_count, X_SYMBOL_WIDTH)
    eigenvalues, q = sym_eig(symbols_to_matrix(x_symbols, cfg))
    lambda_symbols = np.asarray(fx_encode(eigenvalues, cfg.lambda_codec), dtype=np.int64)
    stack.push_symbols(lambda_symbols, cfg.lambda_codec.width)
    return RotationDraw(q=q, x_symbols=x_symbols, lambda_symbols=lambda_symbols)


def decode_rotation(stack: BitStack, cfg: RotationCodecConfig) -> OrthogonalMatrix:
    """Decode a rotation matrix from the current stack."""
    return draw_rotation(stack, cfg).q


def encode_rotation(
    stack: BitStack,
    q: OrthogonalMatrix,
    cfg: RotationCodecConfig,
    substitutions: dict[int, int] | None = None,
) -> np.ndarray:
    """Give back the bits spent by a draw of ``q``.

    Pops the D eigenvalues, rebuilds X = Q diag(λ) Qᵀ and pushes its symbols.

    Args:
        stack: Stack with the eigenvalues of the matching draw on top.
        q: The rotation, eigenvectors as columns.
        cfg: Symbol formats.
        substitutions: Optional pop-order index to pattern overrides, applied before
            pushing. Used to splice in stream corrections.

    Returns:
        The symbols computed from ``q`` before substitutions, in pop order.
    """
    if q.dim != cfg.dim:
        raise DimensionMismatch(f"rotation of dim {q.dim} does not match codec dim {cfg.dim}")
    lambda_symbols = stack.pop_symbols(cfg.dim, cfg.lambda_codec.width)[::-1]
    symbols = rotation_symbols(q, lambda_symbols, cfg)
    pushed = symbols.copy()
    for index, pattern in (substitutions or {}).items():
        pushed[index] = pattern
    stack.push_symbols(pushed[::-1], X_SYMBOL_WIDTH)
    return symbols
