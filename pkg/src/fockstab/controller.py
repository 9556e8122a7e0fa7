"""Lyapunov control law for the coherent injection.

The distance to the target Fock state |n_t> is d = 1 - Tr(W rho) with W
a diagonal weight matrix: 1 at n_t, falling off monotonically with
|n - n_t|.  Unlike the bare projector distance 1 - <n_t|rho|n_t>, the
graded weights pull states whose population sits near (but not at) the
target, which is what makes the gradient useful far from convergence.

Each iteration the controller picks the injection amplitude minimizing
the modeled distance of the displaced state.  To keep the per-iteration
cost low the displacement is expanded to second order,

    f(alpha) = Tr(W D(alpha) rho D(-alpha))
             ~ f(0) + alpha c1 + (alpha^2 / 2) c2,
    c1 = Tr(W [A, rho]),   c2 = Tr(W [A, [A, rho]]),   A = a^dag - a,

and the quadratic model is maximized over the bounded actuator range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import DensityMatrix, FockOperator

ALPHA_MAX_DEFAULT = 0.1
DEADBAND_DEFAULT = 1e-6


@dataclass(frozen=True)
class LyapunovWeights:
    """Diagonal control weights for a target photon number."""

    n_t: int
    lambda_diag: np.ndarray

    def __post_init__(self) -> None:
        lam = np.asarray(self.lambda_diag, dtype=float)
        if not 0 <= self.n_t < len(lam):
            raise ValueError(f"target {self.n_t} outside 0..{len(lam) - 1}")
        if abs(lam[self.n_t] - 1.0) > 1e-12:
            raise ValueError("weight at the target must be 1")
        if np.any(lam < 0) or np.any(lam > 1):
            raise ValueError("weights must lie in [0, 1]")
        below = lam[: self.n_t + 1]
        above = lam[self.n_t:]
        if np.any(np.diff(below) < 0) or np.any(np.diff(above) > 0):
            raise ValueError("weights must not increase away from the target")
        lam.setflags(write=False)
        object.__setattr__(self, "lambda_diag", lam)

    @property
    def dim(self) -> int:
        return len(self.lambda_diag)


def build_lambda(n_t: int, shape_param: float, dim: int) -> LyapunovWeights:
    """Gaussian weight family exp(-(n - n_t)^2 / (2 shape_param^2))."""
    if not 0 <= n_t < dim:
        raise ValueError(f"target {n_t} outside 0..{dim - 1}")
    if shape_param <= 0:
        raise ValueError("shape_param must be positive")
    n = np.arange(dim)
    lam = np.exp(-((n - n_t) ** 2) / (2.0 * shape_param ** 2))
    return LyapunovWeights(n_t=n_t, lambda_diag=lam)


def projector_weights(n_t: int, dim: int) -> LyapunovWeights:
    """Bare-projector distance weights (comparison law: d = 1 - P(n_t))."""
    if not 0 <= n_t < dim:
        raise ValueError(f"target {n_t} outside 0..{dim - 1}")
    lam = np.zeros(dim)
    lam[n_t] = 1.0
    return LyapunovWeights(n_t=n_t, lambda_diag=lam)


def distance(rho: DensityMatrix, weights: LyapunovWeights) -> float:
    """Control distance d = 1 - sum_n lambda_n rho_nn, in [0, 1]."""
    if rho.dim != weights.dim:
        raise ValueError(f"dimension mismatch: state {rho.dim}, weights {weights.dim}")
    return float(1.0 - weights.lambda_diag @ rho.populations)


@dataclass(frozen=True)
class ControlDecision:
    """Chosen injection amplitude and the quadratic-model bookkeeping."""

    alpha: float
    predicted_distance_drop: float
    c1: float
    c2: float


def optimal_alpha(
    rho_ctrl: DensityMatrix,
    weights: LyapunovWeights,
    A: FockOperator,
    A2: FockOperator,
    alpha_max: float = ALPHA_MAX_DEFAULT,
    deadband: float = DEADBAND_DEFAULT,
) -> ControlDecision:
    """Pick the displacement maximizing the second-order model of
    Tr(W D(alpha) rho D(-alpha)) over [-alpha_max, alpha_max].

    The interior stationary point -c1/c2 is used only where the model is
    concave; otherwise only the endpoints compete.  A modeled gain below
    ``deadband`` returns alpha = 0 so the actuator stays quiet at the
    target.  Ties between endpoints break towards +alpha_max to keep
    runs deterministic.
    """
    if alpha_max <= 0:
        raise ValueError("alpha_max must be positive")
    lam = weights.lambda_diag
    mat = rho_ctrl.mat
    # For anti-Hermitian A and Hermitian H: [A, H] = A H + (A H)^dag.
    a_rho = A @ mat
    comm1 = a_rho + a_rho.conj().T          # [A, rho]
    c1 = float(np.real(np.sum(lam * np.diag(comm1))))
    a_comm1 = A @ comm1
    comm2 = a_comm1 + a_comm1.conj().T      # [A, [A, rho]]
    c2 = float(np.real(np.sum(lam * np.diag(comm2))))

    def gain(alpha: float) -> float:
        return alpha * c1 + 0.5 * alpha * alpha * c2

    candidates = [alpha_max, -alpha_max]
    if c2 < 0:
        interior = -c1 / c2
        if -alpha_max < interior < alpha_max:
            candidates.append(interior)
    best_alpha, best_gain = 0.0, 0.0
    for alpha in candidates:
        g = gain(alpha)
        if g > best_gain:
            best_alpha, best_gain = alpha, g
    if best_gain < deadband:
        return ControlDecision(0.0, 0.0, c1, c2)
    return ControlDecision(best_alpha, best_gain, c1, c2)
