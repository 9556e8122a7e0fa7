"""Finite-temperature cavity relaxation over one loop iteration.

The field damps towards the blackbody equilibrium through the Lindblad
generator

    L(rho) = kappa (1 + n_th) (a rho a^dag - {a^dag a, rho}/2)
           + kappa n_th     (a^dag rho a - {a a^dag, rho}/2)

with kappa = 1/T_c.  The generator is built once on the truncated
operators and exponentiated exactly into a dim^2 x dim^2 superoperator,
which is then a single matrix-vector product per iteration.  Because
the truncated generator keeps the Lindblad form, it is completely
positive and trace preserving on the truncated space; the only
truncation effect is that thermal flow upward out of the top level is
dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .fock import DensityMatrix, ladder_operators


class InvalidParameterError(ValueError):
    """Raised for non-physical relaxation parameters."""


@dataclass(frozen=True)
class RelaxationModel:
    """Precomputed relaxation propagator for one time step.

    ``propagator`` acts on row-major vectorized density matrices:
    vec(rho') = propagator @ vec(rho).
    """

    T_c: float
    n_th: float
    dt: float
    dim: int
    propagator: np.ndarray

    def apply(self, mat: np.ndarray) -> np.ndarray:
        """Raw propagation of a dim x dim matrix (fast path)."""
        out = (self.propagator @ mat.reshape(-1)).reshape(self.dim, self.dim)
        # pin float drift: re-symmetrize and renormalize the trace
        out = 0.5 * (out + out.conj().T)
        return out / np.real(np.trace(out))


def _superop_left_right(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # row-major vec: vec(A rho B) = kron(A, B^T) vec(rho)
    return np.kron(a, b.T)


def lindblad_generator(T_c: float, n_th: float, dim: int) -> np.ndarray:
    """dim^2 x dim^2 matrix of the finite-temperature damping generator."""
    a, a_dag, n_op = ladder_operators(dim)
    kappa = 1.0 / T_c
    eye = np.eye(dim)
    down = a_dag @ a          # a^dag a
    up = a @ a_dag            # a a^dag (truncated)
    gen = kappa * (1.0 + n_th) * (
        _superop_left_right(a, a_dag)
        - 0.5 * (_superop_left_right(down, eye) + _superop_left_right(eye, down))
    )
    if n_th > 0:
        gen += kappa * n_th * (
            _superop_left_right(a_dag, a)
            - 0.5 * (_superop_left_right(up, eye) + _superop_left_right(eye, up))
        )
    return gen


@lru_cache(maxsize=None)
def build_propagator(T_c: float, n_th: float, dt: float, dim: int) -> RelaxationModel:
    """Exact exponential of the damping generator over duration dt.

    Parameters
    ----------
    T_c : float
        Cavity damping time in seconds (may be ``inf`` for a lossless run).
    n_th : float
        Mean thermal photon number of the environment.
    dt : float
        Step duration in seconds, normally one loop iteration.
    dim : int
        Fock truncation.
    """
    if not (T_c > 0) or not (dt > 0) or n_th < 0:
        raise InvalidParameterError(
            f"need T_c > 0, dt > 0, n_th >= 0; got T_c={T_c}, dt={dt}, n_th={n_th}"
        )
    if dim < 2:
        raise InvalidParameterError(f"dim must be >= 2, got {dim}")
    if math.isinf(T_c):
        prop = np.eye(dim * dim)
    else:
        prop = expm(lindblad_generator(T_c, n_th, dim) * dt)
    prop.setflags(write=False)
    return RelaxationModel(T_c=T_c, n_th=n_th, dt=dt, dim=dim, propagator=prop)


def relax(model: RelaxationModel, rho: DensityMatrix) -> DensityMatrix:
    """Propagate a state through one relaxation step."""
    if rho.dim != model.dim:
        raise ValueError(f"dimension mismatch: state {rho.dim}, model {model.dim}")
    return DensityMatrix(model.apply(rho.mat))


def thermal_populations(n_th: float, dim: int) -> np.ndarray:
    """Stationary photon-number distribution of the damping generator."""
    if n_th == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    r = n_th / (1.0 + n_th)
    p = r ** np.arange(dim)
    return p / p.sum()
