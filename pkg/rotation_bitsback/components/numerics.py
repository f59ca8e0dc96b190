"""Deterministic dense linear algebra and the symbol quantization maps.

Everything here is a pure function of its inputs. The encoder replays the
decoder's arithmetic exactly, so the eigensolver is a fixed-order cyclic Jacobi
iteration rather than a LAPACK call whose operation order may vary.
"""

from dataclasses import dataclass

import numpy as np

from components.errors import InvalidConfig, NoConvergence, NonFinite, NonSymmetric, ZeroRow

SYMMETRY_TOLERANCE = 1e-12
JACOBI_TOLERANCE = 1e-13
JACOBI_MAX_SWEEPS = 100
ORTHOGONALITY_TOLERANCE = 1e-8
ZERO_SUM_THRESHOLD = 1e-9
ZERO_NORM_THRESHOLD = 1e-300


def orthogonality_error(q: np.ndarray) -> float:
    """max |QᵀQ - I|."""
    q = np.asarray(q, dtype=np.float64)
    return float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))


@dataclass(frozen=True, eq=False)
class OrthogonalMatrix:
    """A D x D matrix with max |QᵀQ - I| below ORTHOGONALITY_TOLERANCE.

    The wrapped array is read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        """Copies the array, checks it and makes it read-only."""
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] != data.shape[1] or data.shape[0] < 1:
            raise ValueError(f"orthogonal matrix must be square, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFinite("orthogonal matrix has non-finite entries")
        deviation = orthogonality_error(data)
        if deviation > ORTHOGONALITY_TOLERANCE:
            raise ValueError(f"matrix is not orthogonal (max |QᵀQ - I| = {deviation:.3e})")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def dim(self) -> int:
        """Matrix size D."""
        return self.data.shape[0]

    def transpose(self) -> "OrthogonalMatrix":
        """The inverse rotation."""
        return OrthogonalMatrix(self.data.T)


@dataclass(frozen=True, eq=False)
class SignVector:
    """Per-row ±1 flags attached to a rotation."""

    signs: np.ndarray

    def __post_init__(self):
        """Copies the flags and checks each is +1 or -1."""
        signs = np.array(self.signs, dtype=np.int8, copy=True).reshape(-1)
        if not np.all((signs == 1) | (signs == -1)):
            raise ValueError("sign vector entries must be +1 or -1")
        signs.flags.writeable = False
        object.__setattr__(self, "signs", signs)

    @property
    def dim(self) -> int:
        """Number of flags."""
        return self.signs.shape[0]

    def __eq__(self, other):
        """Equal when the flags match entrywise."""
        return isinstance(other, SignVector) and np.array_equal(self.signs, other.signs)

    def __hash__(self):
        """Hash of the flag bytes."""
        return hash(self.signs.tobytes())


@dataclass(frozen=True)
class SymbolCodec:
    """Two's-complement fixed-point interpretation of raw stream symbols.

    Attributes:
        width: Bits per symbol, 16 or 32.
        scale: Half-range of the representable values; patterns map into [-scale, scale).
    """

    width: int = 16
    scale: float = 1.0

    def __post_init__(self):
        """Rejects unsupported widths and non-positive scales."""
        if self.width not in (16, 32):
            raise InvalidConfig(f"symbol width must be 16 or 32, got {self.width}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidConfig(f"symbol scale must be positive, got {self.scale}")

    @property
    def step(self) -> float:
        """Grid spacing in value space."""
        return self.scale / 2.0 ** (self.width - 1)


def _as_scalar_or_array(result: np.ndarray, like):
    if np.ndim(like) == 0:
        return result.item()
    return result


def check_symmetric(s: np.ndarray, tol: float = SYMMETRY_TOLERANCE) -> np.ndarray:
    """Validate a symmetric input and return it as a float64 array."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
        raise NonSymmetric(f"expected a non-empty square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NonFinite("symmetric eigensolver input has non-finite entries")
    magnitude = np.max(np.abs(s))
    asymmetry = np.max(np.abs(s - s.T))
    if asymmetry > tol * magnitude:
        raise NonSymmetric(f"asymmetry {asymmetry:.3e} exceeds {tol:.0e} * max|S|")
    return s


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def _jacobi_rotate(a: np.ndarray, v: np.ndarray, p: int, q: int):
    apq = a[p, q]
    app = a[p, p]
    aqq = a[q, q]
    theta = (aqq - app) / (2.0 * apq)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    else:
        sign = 1.0 if theta >= 0.0 else -1.0
        t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, p] = app - t * apq
    a[q, q] = aqq + t * apq
    a[p, q] = 0.0
    a[q, p] = 0.0

    vec_p = v[:, p].copy()
    vec_q = v[:, q].copy()
    v[:, p] = c * vec_p - s * vec_q
    v[:, q] = s * vec_p + c * vec_q


def sym_eig(
    s: np.ndarray, tol: float = JACOBI_TOLERANCE, max_sweeps: int = JACOBI_MAX_SWEEPS
) -> tuple[np.ndarray, OrthogonalMatrix]:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Pairs (p, q) are visited in row-major order over the strict upper triangle.
    Iteration stops once the off-diagonal Frobenius norm is at most
    ``tol * ||S||_F``. Eigenvalues are then sorted descending with a stable sort.

    Args:
        s: Symmetric matrix, symmetric to within 1e-12 * max|S|.
        tol: Relative off-diagonal tolerance.
        max_sweeps: Sweep budget.

    Returns:
        (eigenvalues, Q) with ``S = Q.data @ diag(eigenvalues) @ Q.data.T``; the
        eigenvectors are the columns of Q.

    Raises:
        NonSymmetric: Input is not square or not symmetric.
        NonFinite: Input contains NaN or infinity.
        NoConvergence: Tolerance not met within ``max_sweeps`` sweeps.
    """
    s = check_symmetric(s)
    a = np.array((s + s.T) * 0.5, dtype=np.float64, order="C")
    n = a.shape[0]
    v = np.eye(n)
    frobenius = float(np.sqrt(np.sum(a * a)))
    target = tol * frobenius

    converged = False
    for _ in range(max_sweeps):
        if _off_norm(a) <= target:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] != 0.0:
                    _jacobi_rotate(a, v, p, q)
    if not converged and _off_norm(a) > target:
        raise NoConvergence(f"Jacobi iteration did not converge in {max_sweeps} sweeps (n={n})")

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], OrthogonalMatrix(v[:, order])


def row_signs(m: np.ndarray) -> np.ndarray:
    """Sign of each row's sum, +1 at zero, falling back to the largest-magnitude entry.

    The fallback applies when |row sum| < ZERO_SUM_THRESHOLD.
    """
    m = np.asarray(m, dtype=np.float64)
    sums = m.sum(axis=1)
    signs = np.where(sums >= 0.0, 1, -1).astype(np.int8)
    ambiguous = np.abs(sums) < ZERO_SUM_THRESHOLD
    if np.any(ambiguous):
        rows = np.nonzero(ambiguous)[0]
        peaks = m[rows, np.argmax(np.abs(m[rows]), axis=1)]
        signs[rows] = np.where(peaks >= 0.0, 1, -1)
    return signs


def apply_sign_convention(q: OrthogonalMatrix) -> tuple[OrthogonalMatrix, SignVector]:
    """Flip rows of Q so that every row satisfies the row-sign rule.

    Returns:
        (Q', s) where ``Q'[r] = s[r] * Q[r]``.
    """
    signs = row_signs(q.data)
    return OrthogonalMatrix(q.data * signs[:, None]), SignVector(signs)


def rmsnorm(x: np.ndarray) -> np.ndarray:
    """Row normalization x / ||x||."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    if np.any(norms < ZERO_NORM_THRESHOLD):
        raise ZeroRow("rmsnorm input has a row with zero norm")
    return x / norms


def fx_decode(pattern, codec: SymbolCodec):
    """Map raw symbol patterns to fixed-point values in [-scale, scale)."""
    p = np.asarray(pattern, dtype=np.int64)
    half = np.int64(1) << (codec.width - 1)
    signed = np.where(p >= half, p - (half << 1), p)
    values = codec.scale * (signed / float(half))
    return _as_scalar_or_array(values, pattern)


def fx_encode(value, codec: SymbolCodec):
    """Inverse of fx_decode: round half to even, saturate, re-encode as unsigned pattern."""
    v = np.asarray(value, dtype=np.float64)
    half = float(2 ** (codec.width - 1))
    signed = np.clip(np.rint(v * half / codec.scale), -half, half - 1.0).astype(np.int64)
    patterns = np.mod(signed, np.int64(1) << codec.width)
    return _as_scalar_or_array(patterns, value)


def half_encode(value):
    """IEEE 754 binary16 bit pattern of ``value`` (round to nearest even)."""
    v = np.asarray(value, dtype=np.float64)
    with np.errstate(over="ignore"):
        patterns = v.astype(np.float16).view(np.uint16)
    return _as_scalar_or_array(patterns, value)


def half_decode(pattern):
    """Value of a binary16 bit pattern as a 64-bit float."""
    p = np.asarray(pattern, dtype=np.uint16)
    values = p.view(np.float16).astype(np.float64)
    return _as_scalar_or_array(values, pattern)


def half_round(value) -> np.ndarray:
    """Round values to the binary16 grid, keeping 64-bit storage."""
    return half_decode(half_encode(np.asarray(value, dtype=np.float64)))
