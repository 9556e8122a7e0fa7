"""The sensor: dispersive qubit probes of the photon number.

Each atomic sample crossing the cavity carries a Poisson-distributed
number of qubits (truncated at two).  A qubit picks up a phase shift
linear in the photon number and is read out through a Ramsey
interferometer, realizing the weak measurement operators

    M_e = cos[(phi_r + phi_0 (N + 1/2)) / 2]
    M_g = sin[(phi_r + phi_0 (N + 1/2)) / 2]

which are diagonal in the Fock basis, so number states are left
untouched (the non-demolition property).  Detection is imperfect: each
atom is seen only with probability ``detect_efficiency`` and a detected
atom can be assigned to the wrong state.  The truth-side state always
collapses under the *true* outcomes; imperfections only corrupt the
report handed to the controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .fock import DensityMatrix, FockOperator


@dataclass(frozen=True)
class RamseySetting:
    """One interferometer configuration: Ramsey phase and per-photon shift."""

    phi_r: float
    phi_0: float

    def half_angles(self, dim: int) -> np.ndarray:
        n = np.arange(dim)
        return 0.5 * (self.phi_r + self.phi_0 * (n + 0.5))


@dataclass(frozen=True)
class ImperfectionModel:
    """Detector and source imperfections of the atomic probe chain.

    ``occupancy`` overrides the Poisson sample-occupancy law (used for
    ideal-limit studies, e.g. exactly one atom per sample); when None it
    is derived from ``mean_atoms`` with the k >= max_atoms tail folded
    into k = max_atoms.
    """

    mean_atoms: float = 0.6
    max_atoms: int = 2
    detect_efficiency: float = 0.35
    err_e: float = 0.03
    err_g: float = 0.03
    occupancy: tuple[float, ...] | None = None
    _occ: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mean_atoms < 0 or self.max_atoms < 0:
            raise ValueError("mean_atoms and max_atoms must be nonnegative")
        for name in ("detect_efficiency", "err_e", "err_g"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.occupancy is None:
            occ = np.array(
                [math.exp(-self.mean_atoms) * self.mean_atoms ** k / math.factorial(k)
                 for k in range(self.max_atoms)]
            )
            occ = np.append(occ, 1.0 - occ.sum())
        else:
            occ = np.asarray(self.occupancy, dtype=float)
            if len(occ) != self.max_atoms + 1:
                raise ValueError("occupancy must have max_atoms + 1 entries")
            if np.any(occ < 0) or abs(occ.sum() - 1.0) > 1e-12:
                raise ValueError("occupancy must be a probability distribution")
        occ.setflags(write=False)
        object.__setattr__(self, "_occ", occ)

    @classmethod
    def ideal(cls) -> "ImperfectionModel":
        """Exactly one perfectly detected, never misassigned atom per sample."""
        return cls(mean_atoms=1.0, detect_efficiency=1.0, err_e=0.0, err_g=0.0,
                   occupancy=(0.0, 1.0, 0.0))

    def occupancy_probabilities(self) -> np.ndarray:
        """P(k atoms in a sample) for k = 0..max_atoms."""
        return self._occ

    def report_probabilities(self, true_outcome: str) -> tuple[float, float, float]:
        """(P(missed), P(reported e), P(reported g)) given the true state."""
        eps = self.detect_efficiency
        if true_outcome == "e":
            return 1.0 - eps, eps * (1.0 - self.err_e), eps * self.err_e
        return 1.0 - eps, eps * self.err_g, eps * (1.0 - self.err_g)


@dataclass(frozen=True)
class DetectionEvent:
    """Counts of atoms the detector reported in e and in g for one sample."""

    iteration_index: int
    reported_e: int
    reported_g: int

    @property
    def detected(self) -> int:
        return self.reported_e + self.reported_g


@lru_cache(maxsize=None)
def povm_diagonals(setting: RamseySetting, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of (M_e, M_g); m_e^2 + m_g^2 = 1 entrywise."""
    x = setting.half_angles(dim)
    m_e = np.cos(x)
    m_g = np.sin(x)
    m_e.setflags(write=False)
    m_g.setflags(write=False)
    return m_e, m_g


def povm_operators(setting: RamseySetting, dim: int) -> tuple[FockOperator, FockOperator]:
    """Measurement operators M_e and M_g as diagonal matrices."""
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    m_e, m_g = povm_diagonals(setting, dim)
    return np.diag(m_e), np.diag(m_g)


def outcome_probability(rho: DensityMatrix, setting: RamseySetting, outcome: str) -> float:
    """P(outcome | rho) = Tr(M_j rho M_j^dag) for a single qubit."""
    m_e, m_g = povm_diagonals(setting, rho.dim)
    m = m_e if outcome == "e" else m_g
    return float(np.real(m ** 2 @ np.diag(rho.mat)))


def report_pattern_probability(
    outcomes: tuple[str, ...], event: DetectionEvent, model: ImperfectionModel
) -> float:
    """P(reported counts | true outcomes): sum over which atoms were
    detected and how each detected atom was labeled."""
    total = 0.0
    per_atom = [model.report_probabilities(j) for j in outcomes]
    for cats in product(range(3), repeat=len(outcomes)):  # 0 miss, 1 rep-e, 2 rep-g
        if cats.count(1) != event.reported_e or cats.count(2) != event.reported_g:
            continue
        p = 1.0
        for probs, c in zip(per_atom, cats):
            p *= probs[c]
        total += p
    return total


def sample_occupancy(model: ImperfectionModel, rng: np.random.Generator) -> int:
    """Draw the number of atoms in one sample (folded Poisson)."""
    occ = model.occupancy_probabilities()
    u = rng.random()
    acc = 0.0
    for k in range(len(occ) - 1):
        acc += occ[k]
        if u < acc:
            return k
    return len(occ) - 1


def _collapse(mat: np.ndarray, m_diag: np.ndarray) -> np.ndarray:
    out = mat * np.outer(m_diag, m_diag)
    return out / np.real(np.trace(out))


def interact_and_report(
    rho_true: DensityMatrix,
    setting: RamseySetting,
    model: ImperfectionModel,
    rng: np.random.Generator,
    iteration_index: int = 0,
) -> tuple[DensityMatrix, DetectionEvent]:
    """Pass one atomic sample through the field and report detections.

    Draws the sample occupancy, collapses the field sequentially under
    each atom's true outcome, and then pushes every atom through the
    lossy, error-prone detector.  Returns the collapsed state and the
    counts actually reported.
    """
    m_e, m_g = povm_diagonals(setting, rho_true.dim)
    k = sample_occupancy(model, rng)
    mat = rho_true.mat
    reported_e = 0
    reported_g = 0
    for _ in range(k):
        p_e = float(np.real(m_e ** 2 @ np.diag(mat)))
        true_e = rng.random() < p_e
        mat = _collapse(mat, m_e if true_e else m_g)
        p_miss, p_rep_e, _ = model.report_probabilities("e" if true_e else "g")
        u = rng.random()
        if u < p_miss:
            continue
        if u < p_miss + p_rep_e:
            reported_e += 1
        else:
            reported_g += 1
    rho_after = DensityMatrix(mat) if k > 0 else rho_true
    return rho_after, DetectionEvent(iteration_index, reported_e, reported_g)
