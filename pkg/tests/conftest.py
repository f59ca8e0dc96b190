import numpy as np
import pytest

from components.codec import CodecConfig, CodingSession
from components.model import ModelDims, generate
from components.numerics import OrthogonalMatrix

REFERENCE_DIMS = ModelDims(layers=4, hidden=32, ffn=64, vocab=256, has_biases=True, seq=16)
SMALL_DIMS = ModelDims(layers=2, hidden=8, ffn=16, vocab=32, has_biases=True, seq=8)
REFERENCE_SEED = 3


def random_orthogonal(rng: np.random.Generator, dim: int) -> OrthogonalMatrix:
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return OrthogonalMatrix(q * np.sign(np.diag(r))[None, :])


def random_symmetric(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return (a + a.T) / 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_model():
    return generate(SMALL_DIMS, seed=7)


@pytest.fixture(scope="session")
def reference_model_raw():
    return generate(REFERENCE_DIMS, seed=REFERENCE_SEED)


@pytest.fixture(scope="session")
def small_session(small_model):
    return CodingSession(small_model, CodecConfig()).run()


@pytest.fixture(scope="session")
def reference_session(reference_model_raw):
    return CodingSession(reference_model_raw, CodecConfig()).run()
