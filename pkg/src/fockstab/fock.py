"""Linear algebra of a truncated Fock space.

The cavity field lives in the span of the photon-number states
|0>, ..., |dim-1>.  This module provides the field-state container
(:class:`DensityMatrix`), the ladder operators, coherent-state
construction, and the phase-space displacement operator both exactly
(matrix exponential on the truncated space) and through its
second-order expansion used by the feedback controller.

All operators are plain ``numpy`` arrays.  With real displacement
amplitudes and the real measurement/relaxation maps used elsewhere in
this package, every reachable state is a real symmetric matrix, so
states are kept in float64 whenever possible; all operations also
accept complex Hermitian input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Operators on the truncated space are bare dim x dim arrays.
FockOperator = np.ndarray

HERMITICITY_ATOL = 1e-10
TRACE_ATOL = 1e-10
POPULATION_FLOOR = -1e-12


class InvalidDimensionError(ValueError):
    """Raised when a Fock-space truncation dimension is unusable."""


class TruncationRiskError(ValueError):
    """Raised when a requested state would spill past the truncation."""


@dataclass(frozen=True)
class DensityMatrix:
    """Unit-trace Hermitian matrix in the truncated Fock basis.

    Used both for the simulated "truth" field and for the controller's
    estimate.  Instances are treated as immutable values; operations
    return new instances.
    """

    mat: np.ndarray

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def populations(self) -> np.ndarray:
        """Photon-number probabilities P(n) (the real diagonal)."""
        return np.real(np.diag(self.mat)).copy()

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.mat)))

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))

    def expectation(self, op: FockOperator) -> float:
        """Real expectation value Tr(op rho) for a Hermitian operator."""
        return float(np.real(np.trace(op @ self.mat)))

    def mean_photon_number(self) -> float:
        return float(np.arange(self.dim) @ self.populations)

    def normalized(self) -> "DensityMatrix":
        return DensityMatrix(self.mat / np.trace(self.mat))

    def validate(
        self,
        herm_atol: float = HERMITICITY_ATOL,
        trace_atol: float = TRACE_ATOL,
        population_floor: float = POPULATION_FLOOR,
    ) -> None:
        """Check the density-matrix invariants, raising on violation."""
        m = self.mat
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        herm_err = np.max(np.abs(m - m.conj().T))
        if herm_err > herm_atol:
            raise ValueError(f"not Hermitian: max |rho - rho^dag| = {herm_err:.3e}")
        tr_err = abs(np.trace(m) - 1.0)
        if tr_err > trace_atol:
            raise ValueError(f"trace deviates from 1 by {tr_err:.3e}")
        pmin = np.min(np.real(np.diag(m)))
        if pmin < population_floor:
            raise ValueError(f"negative population {pmin:.3e}")


def fock_state(n: int, dim: int) -> DensityMatrix:
    """Pure photon-number state |n><n|."""
    if dim < 2:
        raise InvalidDimensionError(f"dim must be >= 2, got {dim}")
    if not 0 <= n < dim:
        raise ValueError(f"Fock index {n} outside 0..{dim - 1}")
    m = np.zeros((dim, dim))
    m[n, n] = 1.0
    return DensityMatrix(m)


def diagonal_state(populations: np.ndarray) -> DensityMatrix:
    """Diagonal mixture with the given photon-number distribution."""
    p = np.asarray(populations, dtype=float)
    if np.any(p < POPULATION_FLOOR):
        raise ValueError("populations must be nonnegative")
    s = p.sum()
    if s <= 0:
        raise ValueError("populations must have positive total mass")
    return DensityMatrix(np.diag(p / s))


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(np.eye(dim) / dim)


@lru_cache(maxsize=None)
def ladder_operators(dim: int) -> tuple[FockOperator, FockOperator, FockOperator]:
    """Annihilation a, creation a^dag and number operator N on dim levels.

    <n-1|a|n> = sqrt(n); N = a^dag a is diagonal with entries 0..dim-1.
    """
    if dim < 2:
        raise InvalidDimensionError(f"dim must be >= 2, got {dim}")
    a = np.zeros((dim, dim))
    ns = np.arange(1, dim)
    a[ns - 1, ns] = np.sqrt(ns)
    a_dag = a.T.copy()
    n_op = np.diag(np.arange(dim, dtype=float))
    for m in (a, a_dag, n_op):
        m.setflags(write=False)
    return a, a_dag, n_op


def coherent_state(amplitude: float, dim: int) -> DensityMatrix:
    """Pure coherent state |alpha><alpha| with real amplitude, truncated.

    The number-state amplitudes exp(-a^2/2) a^n / sqrt(n!) are cut at
    dim-1 and renormalized, so the diagonal is the Poisson law
    restricted to 0..dim-1.  The mean photon number amplitude^2 must
    leave headroom below the truncation (amplitude^2 <= dim/3).
    """
    if dim < 2:
        raise InvalidDimensionError(f"dim must be >= 2, got {dim}")
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    if amplitude ** 2 > dim / 3:
        raise TruncationRiskError(
            f"mean photon number {amplitude ** 2:.3f} too close to truncation "
            f"{dim} (need amplitude^2 <= dim/3)"
        )
    if amplitude == 0:
        psi = np.zeros(dim)
        psi[0] = 1.0
    else:
        n = np.arange(dim)
        log_factorial = np.cumsum(np.log(np.maximum(n, 1)))
        psi = np.exp(n * math.log(amplitude) - 0.5 * amplitude ** 2
                     - 0.5 * log_factorial)
    psi /= np.linalg.norm(psi)
    return DensityMatrix(np.outer(psi, psi))


def poisson_populations(nbar: float, dim: int) -> np.ndarray:
    """Poisson law exp(-nbar) nbar^n / n! restricted to 0..dim-1, renormalized.

    Independent reference for the coherent-state diagonal.
    """
    p = np.array([math.exp(-nbar) * nbar ** n / math.factorial(n) for n in range(dim)])
    return p / p.sum()


@lru_cache(maxsize=None)
def _displacement_eigensystem(dim: int) -> tuple[np.ndarray, np.ndarray]:
    # G = a^dag - a is real antisymmetric, so iG is Hermitian: diagonalize
    # once per dimension and exponentiate eigenvalues per amplitude.
    a, a_dag, _ = ladder_operators(dim)
    g = a_dag - a
    theta, v = np.linalg.eigh(1j * g)  # g = v diag(-i theta) v^dag
    return theta, v


@lru_cache(maxsize=4096)
def displacement_exact(alpha: float, dim: int) -> FockOperator:
    """Displacement operator exp(alpha (a^dag - a)) on the truncated space.

    Computed by exponentiating the truncated generator, which keeps the
    operator exactly orthogonal (hence trace preserving) on the
    truncated space.  The amplitude is limited to the actuator range.
    """
    if dim < 2:
        raise InvalidDimensionError(f"dim must be >= 2, got {dim}")
    if abs(alpha) > 0.2:
        raise ValueError(f"|alpha| = {abs(alpha):.3f} outside actuator range 0.2")
    if alpha == 0.0:
        u = np.eye(dim)
        u.setflags(write=False)
        return u
    theta, v = _displacement_eigensystem(dim)
    u = np.real((v * np.exp(-1j * alpha * theta)) @ v.conj().T)
    u.setflags(write=False)
    return u


def displacement_quadratic_terms(dim: int) -> tuple[FockOperator, FockOperator]:
    """Generators A = a^dag - a and A2 = A^2 of the second-order model
    D(alpha) ~ I + alpha A + (alpha^2/2) A2 used by the controller."""
    a, a_dag, _ = ladder_operators(dim)
    gen = a_dag - a
    return gen, gen @ gen


def displace(rho: DensityMatrix, alpha: float) -> DensityMatrix:
    """Apply the exact displacement U rho U^dag."""
    if alpha == 0.0:
        return rho
    u = displacement_exact(alpha, rho.dim)
    return DensityMatrix(u @ rho.mat @ u.T)


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """Entropy -Tr(rho ln rho) in nats (eigenvalues clipped at 0)."""
    evals = np.linalg.eigvalsh(rho.mat)
    evals = np.clip(np.real(evals), 0.0, 1.0)
    nz = evals[evals > 1e-300]
    return float(-np.sum(nz * np.log(nz)))
