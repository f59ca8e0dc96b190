"""Canonical direction of a sliced transformer and recovery of applied rotations.

A weight W whose output is followed by a rotation-symmetric interface is put in
canonical direction by rotating it with the eigenvectors of WᵀW, so its gram
matrix becomes diagonal with descending entries. A rotated canonical weight
W Q gives back Q, up to one sign per row, from the eigenvectors of (WQ)ᵀ(WQ).
"""

from dataclasses import dataclass, field

import numpy as np

from components.errors import DimensionMismatch, RankDeficient
from components.model import SlicedTransformer, Site, apply_symmetry_rotation
from components.numerics import (
    OrthogonalMatrix,
    SignVector,
    apply_sign_convention,
    row_signs,
    sym_eig,
)
from utils.logger import Logger, get_level_from_env

logger = Logger(__name__, level=get_level_from_env())

RANK_TOLERANCE = 1e-10
DEGENERATE_GAP = 1e-6


@dataclass(frozen=True)
class SiteSpectrum:
    """Spectrum diagnostics of one canonicalized interface.

    Attributes:
        layer: 0 for the embedding output, otherwise the 1-based block index.
        site: Interface inside the block.
        min_gap: Smallest gap between consecutive eigenvalues of WᵀW over max |λ|.
        rank_margin: λ_min / λ_max of WᵀW.
        degenerate: True when ``min_gap`` is below DEGENERATE_GAP.
    """

    layer: int
    site: Site
    min_gap: float
    rank_margin: float
    degenerate: bool


@dataclass
class CanonReport:
    """Spectral summary of every interface a canonicalization touched."""

    sites: list[SiteSpectrum] = field(default_factory=list)

    @property
    def degenerate_sites(self) -> list[SiteSpectrum]:
        """Sites whose eigenvalue gap is below DEGENERATE_GAP."""
        return [entry for entry in self.sites if entry.degenerate]

    @property
    def min_gap(self) -> float:
        """Smallest relative eigengap over all sites."""
        return min((entry.min_gap for entry in self.sites), default=float("inf"))

    @property
    def min_rank_margin(self) -> float:
        """Smallest rank margin over all sites."""
        return min((entry.rank_margin for entry in self.sites), default=1.0)

    def to_lines(self) -> list[str]:
        """Key-value text, one line per site plus a summary."""
        lines = [
            f"layer={entry.layer} site={entry.site.value} min_gap={entry.min_gap:.6e} "
            f"rank_margin={entry.rank_margin:.6e} degenerate={str(entry.degenerate).lower()}"
            for entry in self.sites
        ]
        lines.append(f"min_gap={self.min_gap:.6e}")
        lines.append(f"min_rank_margin={self.min_rank_margin:.6e}")
        lines.append(f"degenerate_sites={len(self.degenerate_sites)}")
        return lines


def _relative_min_gap(eigenvalues: np.ndarray) -> float:
    if eigenvalues.shape[0] < 2:
        return float("inf")
    scale = np.max(np.abs(eigenvalues))
    if scale == 0.0:
        return 0.0
    return float(np.min(eigenvalues[:-1] - eigenvalues[1:]) / scale)


def _rank_margin(eigenvalues: np.ndarray) -> float:
    top = eigenvalues[0]
    if top <= 0.0:
        return 0.0
    return float(max(eigenvalues[-1], 0.0) / top)


def check_full_rank(w: np.ndarray, tol: float = RANK_TOLERANCE) -> float:
    """Rank margin λ_min(WᵀW) / λ_max(WᵀW); below ``tol`` counts as rank-deficient."""
    w = np.asarray(w, dtype=np.float64)
    eigenvalues, _ = sym_eig(w.T @ w)
    margin = _rank_margin(eigenvalues)
    if margin < tol:
        logger.debug(f"Rank margin {margin:.3e} is below {tol:.0e}")
    return margin


def canonical_rotation(w: np.ndarray) -> tuple[OrthogonalMatrix, np.ndarray]:
    """Rotation taking ``w`` to canonical direction, and the eigenvalues of WᵀW.

    The returned matrix has the eigenvectors as columns, each signed by the
    row-sign rule, so ``w @ q`` has a descending diagonal gram matrix.
    """
    w = np.asarray(w, dtype=np.float64)
    eigenvalues, v = sym_eig(w.T @ w)
    rows, _ = apply_sign_convention(v.transpose())
    return rows.transpose(), eigenvalues


def _canonicalize_site(
    model: SlicedTransformer,
    layer: int,
    site: Site,
    w: np.ndarray,
    report: CanonReport,
    rank_tol: float,
) -> SlicedTransformer:
    q, eigenvalues = canonical_rotation(w)
    margin = _rank_margin(eigenvalues)
    gap = _relative_min_gap(eigenvalues)
    entry = SiteSpectrum(layer, site, gap, margin, gap < DEGENERATE_GAP)
    report.sites.append(entry)
    if layer > 0 and margin < rank_tol:
        raise RankDeficient(
            f"layer {layer} {site.value}: rank margin {margin:.3e} is below {rank_tol:.0e}"
        )
    if entry.degenerate:
        logger.warning(
            f"Near-degenerate spectrum at layer {layer} {site.value} (relative gap {gap:.3e})"
        )
    return apply_symmetry_rotation(model, layer, site, q)


def canonicalize(
    model: SlicedTransformer, rank_tol: float = RANK_TOLERANCE
) -> tuple[SlicedTransformer, CanonReport]:
    """Rotate every symmetric interface of ``model`` to its canonical direction.

    The embedding output is handled first, then for each block the attention
    output (from W_o) and the MLP output (from W_2). Each rotation is fed
    into the next consumer, so the function of the model is unchanged.

    Raises:
        RankDeficient: W_o or W_2 of some block has a rank margin below ``rank_tol``.
        NoConvergence: Propagated from the eigensolver.
    """
    report = CanonReport()
    model = _canonicalize_site(model, 0, Site.MLP_OUT, model.w_emb, report, rank_tol)
    for layer in range(1, model.dims.layers + 1):
        block = model.blocks[layer - 1]
        model = _canonicalize_site(model, layer, Site.ATT_OUT, block.w_o, report, rank_tol)
        block = model.blocks[layer - 1]
        model = _canonicalize_site(model, layer, Site.MLP_OUT, block.w_2, report, rank_tol)
    logger.debug(
        f"Canonicalized {model.dims.layers} layers, min gap {report.min_gap:.3e}, "
        f"min rank margin {report.min_rank_margin:.3e}"
    )
    return model, report


def _eigen_rows(w_rot: np.ndarray) -> np.ndarray:
    w_rot = np.ascontiguousarray(w_rot, dtype=np.float64)
    _, v = sym_eig(w_rot.T @ w_rot)
    return np.ascontiguousarray(v.data.T)


def _signed_rows(rows: np.ndarray, s: SignVector) -> OrthogonalMatrix:
    flips = row_signs(rows) * s.signs
    return OrthogonalMatrix(rows * flips[:, None])


def recover_rotation(w_rot: np.ndarray, s: SignVector) -> OrthogonalMatrix:
    """Recover Q from W_rot = W_canon Q using the reference row signs ``s``.

    Eigenvector rows of W_rotᵀW_rot are flipped wherever their row sign
    disagrees with ``s``.
    """
    w_rot = np.asarray(w_rot, dtype=np.float64)
    if w_rot.ndim != 2 or s.dim != w_rot.shape[1]:
        raise DimensionMismatch(
            f"sign vector of length {s.dim} does not match weight shape {w_rot.shape}"
        )
    return _signed_rows(_eigen_rows(w_rot), s)


def reference_signs(w_rot: np.ndarray, q: OrthogonalMatrix) -> tuple[SignVector, OrthogonalMatrix]:
    """Sign bits for ``w_rot`` and the rotation the decoder will recover with them.

    The signs make every recovered row point along the matching row of ``q``.
    ``w_rot`` must be exactly what the decoder will see. Where no row sum is
    ambiguous the signs equal the row signs of ``q``.
    """
    rows = _eigen_rows(w_rot)
    if rows.shape != q.data.shape:
        raise DimensionMismatch(f"rotation of dim {q.dim} does not match weight {w_rot.shape}")
    alignment = np.einsum("ij,ij->i", rows, q.data)
    signs = SignVector(row_signs(rows) * np.where(alignment >= 0.0, 1, -1))
    return signs, _signed_rows(rows, signs)
