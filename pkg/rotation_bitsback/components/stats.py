"""Error statistics, threshold sweeps and model comparison."""

from dataclasses import dataclass, replace

import numpy as np

from components.accounting import container_report
from components.codec import CodecConfig, CodingSession, reference_model
from components.errors import DimensionMismatch
from components.model import SlicedTransformer, forward
from utils.logger import Logger, get_level_from_env

logger = Logger(__name__, level=get_level_from_env())

LOGIT_TOLERANCE = 1e-2
SWEEP_THRESHOLDS = (0.002, 0.005, 0.01, 0.02)
STREAM_SWEEP_THRESHOLDS = (2.0**-13, 2.0**-11, 2.0**-9, 2.0**-7)
SWEEP_PARAMETERS = ("tau_weights", "tau_stream")


def _check_same_dims(a: SlicedTransformer, b: SlicedTransformer):
    if a.dims != b.dims:
        raise DimensionMismatch(f"models have different dims: {a.dims} vs {b.dims}")


def _abs_errors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        errors = np.abs(np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64))
    return np.where(np.isfinite(errors), errors, np.inf).ravel()


@dataclass(frozen=True)
class TensorErrors:
    """Error summary of one tensor."""

    name: str
    count: int
    max_error: float
    mean_error: float
    nonfinite: int


@dataclass(frozen=True, eq=False)
class ErrorStats:
    """Absolute-error histogram and empirical CDF over every weight entry.

    Attributes:
        edges: Bin edges, ``bins + 1`` values starting at 0.
        counts: Entries per bin; the last bin includes its upper edge.
        cdf: Fraction of all entries with error at most each upper edge.
        tensors: Per-tensor summaries in storage order.
        sorted_errors: Every error, ascending; non-finite deviations count as infinity.
    """

    edges: np.ndarray
    counts: np.ndarray
    cdf: np.ndarray
    tensors: tuple[TensorErrors, ...]
    sorted_errors: np.ndarray

    @property
    def max_error(self) -> float:
        """Largest error, infinite if any entry is non-finite."""
        return float(self.sorted_errors[-1]) if self.sorted_errors.size else 0.0

    def cdf_at(self, threshold: float) -> float:
        """Fraction of entries whose error is at most ``threshold``."""
        if not self.sorted_errors.size:
            return 1.0
        hits = np.searchsorted(self.sorted_errors, threshold, side="right")
        return float(hits / self.sorted_errors.size)

    def to_lines(self) -> list[str]:
        """Columnar text: one row per bin, then one row per tensor."""
        lines = ["bin_low bin_high count cdf"]
        for low, high, count, cdf in zip(
            self.edges[:-1], self.edges[1:], self.counts, self.cdf, strict=True
        ):
            lines.append(f"{low:.6e} {high:.6e} {int(count)} {cdf:.6f}")
        lines.append("tensor count max_error mean_error nonfinite")
        for entry in self.tensors:
            lines.append(
                f"{entry.name} {entry.count} {entry.max_error:.6e} "
                f"{entry.mean_error:.6e} {entry.nonfinite}"
            )
        return lines


def error_stats(
    reference: SlicedTransformer, decoded: SlicedTransformer, bins: int = 20
) -> ErrorStats:
    """Histogram and CDF of |decoded - reference| per tensor and in aggregate."""
    _check_same_dims(reference, decoded)
    if bins < 1:
        raise ValueError(f"bins must be at least 1, got {bins}")

    per_tensor, chunks = [], []
    for (name, ref), (_, dec) in zip(reference.tensors(), decoded.tensors(), strict=True):
        errors = _abs_errors(ref, dec)
        finite = errors[np.isfinite(errors)]
        per_tensor.append(
            TensorErrors(
                name=name,
                count=errors.size,
                max_error=float(errors.max()),
                mean_error=float(finite.mean()) if finite.size else float("inf"),
                nonfinite=int(errors.size - finite.size),
            )
        )
        chunks.append(errors)

    errors = np.sort(np.concatenate(chunks))
    finite = errors[np.isfinite(errors)]
    top = float(finite.max()) if finite.size else 0.0
    edges = np.linspace(0.0, top if top > 0.0 else 1.0, bins + 1)
    counts, _ = np.histogram(finite, bins=edges)
    cdf = np.cumsum(counts) / errors.size
    return ErrorStats(edges, counts, cdf, tuple(per_tensor), errors)


def max_residual_error(reference: SlicedTransformer, decoded: SlicedTransformer) -> float:
    """Largest entrywise |decoded - reference| over every tensor."""
    _check_same_dims(reference, decoded)
    return max(
        float(_abs_errors(ref, dec).max())
        for (_, ref), (_, dec) in zip(reference.tensors(), decoded.tensors(), strict=True)
    )


@dataclass(frozen=True)
class SweepPoint:
    """Outcome of one encode and decode run of a threshold sweep."""

    threshold: float
    correction_count: int
    correction_bits: int
    max_residual_error: float
    saved_bits: int
    saved_ratio: float


def threshold_sweep(
    model: SlicedTransformer,
    cfg: CodecConfig | None = None,
    thresholds=SWEEP_THRESHOLDS,
    reference: SlicedTransformer | None = None,
    parameter: str = "tau_weights",
) -> list[SweepPoint]:
    """Encode and decode once per threshold and report the tradeoff.

    The canonical reference is computed once and shared by every run.

    Args:
        model: Model to encode.
        cfg: Codec parameters the swept one is substituted into.
        thresholds: Values of the swept parameter.
        reference: Precomputed reference of ``model``.
        parameter: ``tau_weights`` or ``tau_stream``.

    Returns:
        One point per threshold, in the given order.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"cannot sweep {parameter!r}, choose from {', '.join(SWEEP_PARAMETERS)}")
    cfg = cfg or CodecConfig()
    reference = reference or reference_model(model)
    points = []
    for threshold in thresholds:
        session = CodingSession(model, replace(cfg, **{parameter: threshold}), reference).run()
        report = container_report(session.container)
        point = SweepPoint(
            threshold=threshold,
            correction_count=len(session.container.corrections),
            correction_bits=report.correction_bits,
            max_residual_error=max_residual_error(reference, session.decoded),
            saved_bits=report.saved_bits,
            saved_ratio=report.saved_ratio,
        )
        logger.info(
            f"{parameter} {threshold:g}: {point.correction_bits} correction bits, "
            f"max residual {point.max_residual_error:.3e}"
        )
        points.append(point)
    return points


def sweep_lines(points: list[SweepPoint]) -> list[str]:
    """Columnar text, one row per sweep point."""
    lines = [
        "threshold correction_count correction_bits max_residual_error saved_bits saved_ratio"
    ]
    for p in points:
        lines.append(
            f"{p.threshold:g} {p.correction_count} {p.correction_bits} "
            f"{p.max_residual_error:.6e} {p.saved_bits} {p.saved_ratio:.6f}"
        )
    return lines


@dataclass(frozen=True)
class VerifyReport:
    """Weight and logit deltas between two models of the same dims.

    Attributes:
        max_abs_weight: Largest entrywise |a - b|.
        max_rel_weight: Largest per-tensor max|a - b| / max|a|.
        max_abs_logit: Largest |logits_a - logits_b| over all batches.
        max_rel_logit: Largest per-batch max|Δlogits| / max|logits_a|.
        tau: Weight tolerance the verdict was taken with.
    """

    max_abs_weight: float
    max_rel_weight: float
    max_abs_logit: float
    max_rel_logit: float
    tau: float

    @property
    def weights_ok(self) -> bool:
        """Every weight within ``tau``."""
        return self.max_abs_weight <= self.tau

    @property
    def logits_ok(self) -> bool:
        """Relative logit deviation within the logit tolerance."""
        return self.max_rel_logit <= LOGIT_TOLERANCE

    @property
    def passed(self) -> bool:
        """Both checks hold."""
        return self.weights_ok and self.logits_ok

    def to_lines(self) -> list[str]:
        """``key=value`` lines ending with the overall verdict."""
        return [
            f"max_abs_weight={self.max_abs_weight:.6e}",
            f"max_rel_weight={self.max_rel_weight:.6e}",
            f"max_abs_logit={self.max_abs_logit:.6e}",
            f"max_rel_logit={self.max_rel_logit:.6e}",
            f"weights={'PASS' if self.weights_ok else 'FAIL'}",
            f"logits={'PASS' if self.logits_ok else 'FAIL'}",
            f"result={'PASS' if self.passed else 'FAIL'}",
        ]


def token_batches(vocab: int, seq: int, seed: int, batches: int) -> list[np.ndarray]:
    """Seeded uniform token sequences of length ``seq``."""
    rng = np.random.default_rng(seed)
    return [rng.integers(0, vocab, size=seq) for _ in range(batches)]


def compare_models(
    a: SlicedTransformer,
    b: SlicedTransformer,
    tokens_seed: int = 0,
    batches: int = 16,
    tau: float = 0.01,
) -> VerifyReport:
    """Compare weights entrywise and logits on seeded random token batches."""
    _check_same_dims(a, b)
    max_abs_weight, max_rel_weight = 0.0, 0.0
    for (_, wa), (_, wb) in zip(a.tensors(), b.tensors(), strict=True):
        delta = float(_abs_errors(wa, wb).max())
        scale = float(np.max(np.abs(wa)))
        max_abs_weight = max(max_abs_weight, delta)
        max_rel_weight = max(max_rel_weight, delta / scale if scale > 0.0 else delta)

    max_abs_logit, max_rel_logit = 0.0, 0.0
    with np.errstate(all="ignore"):
        for tokens in token_batches(a.dims.vocab, a.dims.seq, tokens_seed, batches):
            logits_a = forward(a, tokens)
            delta = float(_abs_errors(logits_a, forward(b, tokens)).max())
            scale = float(np.max(np.abs(logits_a)))
            max_abs_logit = max(max_abs_logit, delta)
            max_rel_logit = max(max_rel_logit, delta / scale if scale > 0.0 else delta)
    return VerifyReport(max_abs_weight, max_rel_weight, max_abs_logit, max_rel_logit, tau)
