import numpy as np
import pytest

from fockstab.fock import DensityMatrix


def random_density(rng: np.random.Generator, dim: int, complex_entries: bool = False) -> DensityMatrix:
    """Random full-rank density matrix (Wishart construction)."""
    g = rng.standard_normal((dim, dim))
    if complex_entries:
        g = g + 1j * rng.standard_normal((dim, dim))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m))


def random_diagonal(rng: np.random.Generator, dim: int) -> DensityMatrix:
    p = rng.random(dim)
    return DensityMatrix(np.diag(p / p.sum()))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
