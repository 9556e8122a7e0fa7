"""The controller's state filter.

The controller never sees the field directly: it sees detector reports
that may miss atoms, misassign their state, or refer to a sample that
crossed the cavity several iterations ago (atoms take a finite flight
time from cavity to detector).  This module maintains the filtered
field estimate under those conditions.

Core update: given a report (counts of atoms seen in e and in g), every
hypothesis about what physically happened is enumerated -- how many
atoms the sample really contained, their true outcomes, and which of
them the detector caught and how it labeled them.  Bayes' rule weights
each hypothesis by occupancy prior x detection/misassignment
likelihood x quantum outcome probability, and the new estimate is the
corresponding mixture of collapsed states.

Delay handling: the estimate ``rho`` is kept synchronized with the
report stream (it lags the truth by the transport delay).  A FIFO of
in-flight slots records, for every sample not yet reported, the Ramsey
setting it experienced and the displacement applied during its
iteration.  For control decisions the estimate is pushed forward
through those slots with the outcome-averaged measurement map, since
their outcomes are still unknown.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import product

import numpy as np

from .dissipation import RelaxationModel
from .fock import DensityMatrix, displace
from .measurement import (
    DetectionEvent,
    ImperfectionModel,
    RamseySetting,
    povm_diagonals,
    report_pattern_probability,
)


class InvalidEventError(ValueError):
    """Raised when a detection event is impossible under the model."""


@dataclass(frozen=True)
class InflightSlot:
    """Setting seen by one not-yet-reported sample and the displacement
    applied in its iteration (None until that iteration's injection)."""

    setting: RamseySetting
    alpha: float | None


@dataclass(frozen=True)
class EstimatorState:
    rho: DensityMatrix
    inflight: tuple[InflightSlot, ...]
    delay_samples: int


@dataclass(frozen=True)
class Hypothesis:
    """One physical explanation of a detection event."""

    n_atoms: int
    outcomes: tuple[str, ...]
    weight: float


def initial_state(rho0: DensityMatrix, delay_samples: int) -> EstimatorState:
    if delay_samples < 0:
        raise ValueError("delay_samples must be >= 0")
    return EstimatorState(rho=rho0, inflight=(), delay_samples=delay_samples)


@lru_cache(maxsize=None)
def _outcome_kernels(setting: RamseySetting, dim: int) -> dict[tuple[str, ...], np.ndarray]:
    """outer(m_s, m_s) for every outcome sequence s of length <= 2, where
    m_s is the entrywise product of the POVM diagonals along s.

    With diagonal measurement operators, M_s rho M_s^dag is the
    elementwise product kernel * rho.
    """
    m = dict(zip("eg", povm_diagonals(setting, dim)))
    kernels: dict[tuple[str, ...], np.ndarray] = {(): np.ones((dim, dim))}
    for k in (1, 2):
        for seq in product("eg", repeat=k):
            diag = m[seq[0]].copy()
            for j in seq[1:]:
                diag = diag * m[j]
            kernels[seq] = np.outer(diag, diag)
    for v in kernels.values():
        v.setflags(write=False)
    return kernels


def _enumerate_weights(
    rho: DensityMatrix,
    event: DetectionEvent,
    setting: RamseySetting,
    model: ImperfectionModel,
) -> list[tuple[tuple[str, ...], float]]:
    """Unnormalized hypothesis weights occ(k) * P(event|outcomes) *
    P(outcomes|rho) for every true outcome sequence."""
    if event.reported_e < 0 or event.reported_g < 0:
        raise InvalidEventError("negative report counts")
    if event.detected > model.max_atoms:
        raise InvalidEventError(
            f"{event.detected} reports exceed max_atoms = {model.max_atoms}"
        )
    occ = model.occupancy_probabilities()
    kernels = _outcome_kernels(setting, rho.dim)
    pops = rho.populations
    weights = []
    for k in range(len(occ)):
        if event.detected > k:
            continue
        for seq in product("eg", repeat=k):
            r = report_pattern_probability(seq, event, model)
            if r == 0.0 and occ[k] == 0.0:
                continue
            # P(seq | rho): diagonal kernel contracted with populations
            p_seq = float(np.diag(kernels[seq]) @ pops)
            weights.append((seq, occ[k] * r * p_seq))
    return weights


def hypothesis_posterior(
    rho: DensityMatrix,
    event: DetectionEvent,
    setting: RamseySetting,
    model: ImperfectionModel,
) -> list[Hypothesis]:
    """Normalized posterior over what happened, given one event."""
    weights = _enumerate_weights(rho, event, setting, model)
    total = sum(w for _, w in weights)
    if total <= 0:
        raise InvalidEventError("event has zero likelihood under the model")
    return [Hypothesis(len(seq), seq, w / total) for seq, w in weights]


@lru_cache(maxsize=None)
def _event_kernel(
    setting: RamseySetting,
    model: ImperfectionModel,
    dim: int,
    reported_e: int,
    reported_g: int,
) -> np.ndarray:
    """Elementwise update kernel sum_h occ(k) P(event|outcomes) outer(m_s, m_s).

    State independent, so the Bayes update reduces to one elementwise
    product followed by trace normalization.
    """
    event = DetectionEvent(0, reported_e, reported_g)
    kernels = _outcome_kernels(setting, dim)
    occ = model.occupancy_probabilities()
    combined = np.zeros((dim, dim))
    total_weight = 0.0
    for k in range(len(occ)):
        if event.detected > k:
            continue
        for seq in product("eg", repeat=k):
            w = occ[k] * report_pattern_probability(seq, event, model)
            if w == 0.0:
                continue
            combined += w * kernels[seq]
            total_weight += w
    if total_weight <= 0:
        raise InvalidEventError("event has zero likelihood under the model")
    combined.setflags(write=False)
    return combined


def update_on_event(
    rho: DensityMatrix,
    event: DetectionEvent,
    setting: RamseySetting,
    model: ImperfectionModel,
) -> DensityMatrix:
    """Bayesian measurement update of the estimate from one report.

    Returns the posterior mixture over hypotheses of the collapsed
    states; the result has unit trace by construction.
    """
    if event.reported_e < 0 or event.reported_g < 0:
        raise InvalidEventError("negative report counts")
    if event.detected > model.max_atoms:
        raise InvalidEventError(
            f"{event.detected} reports exceed max_atoms = {model.max_atoms}"
        )
    kernel = _event_kernel(setting, model, rho.dim, event.reported_e, event.reported_g)
    out = kernel * rho.mat
    tr = np.real(np.trace(out))
    if tr <= 0:
        raise InvalidEventError("event has zero likelihood for this state")
    return DensityMatrix(out / tr)


@lru_cache(maxsize=None)
def _unconditional_kernel(
    setting: RamseySetting, model: ImperfectionModel, dim: int
) -> np.ndarray:
    kernels = _outcome_kernels(setting, dim)
    occ = model.occupancy_probabilities()
    kernel = np.zeros((dim, dim))
    for k in range(len(occ)):
        for seq in product("eg", repeat=k):
            kernel += occ[k] * kernels[seq]
    kernel.setflags(write=False)
    return kernel


def unconditional_update(
    rho: DensityMatrix, setting: RamseySetting, model: ImperfectionModel
) -> DensityMatrix:
    """Outcome-averaged back-action of one sample whose report is unknown:
    rho -> p0 rho + p1 sum_j M_j rho M_j + p2 sum_jj' M_j M_j' rho M_j' M_j."""
    return DensityMatrix(_unconditional_kernel(setting, model, rho.dim) * rho.mat)


def begin_iteration(
    state: EstimatorState,
    event: DetectionEvent | None,
    setting_now: RamseySetting,
    relaxation: RelaxationModel,
    model: ImperfectionModel,
) -> EstimatorState:
    """Open the iteration: register the sample crossing the cavity now
    and, if a report arrived, fold in the oldest in-flight sample.

    The displacement applied this iteration is not decided yet; it is
    attached to the new slot by :func:`record_alpha` once the controller
    has chosen it.
    """
    if event is None and len(state.inflight) >= state.delay_samples:
        raise ValueError("missing event: in-flight buffer is already full")
    inflight = state.inflight + (InflightSlot(setting_now, None),)
    if event is None:
        return replace(state, inflight=inflight)
    oldest, inflight = inflight[0], inflight[1:]
    rho = update_on_event(state.rho, event, oldest.setting, model)
    rho = DensityMatrix(relaxation.apply(rho.mat))
    if oldest.alpha is not None:
        rho = displace(rho, oldest.alpha)
    elif state.delay_samples > 0:
        raise ValueError("oldest in-flight slot has no recorded alpha")
    # with zero delay the popped slot is this iteration's own sample and
    # its displacement is applied by record_alpha
    return EstimatorState(rho, inflight, state.delay_samples)


def record_alpha(state: EstimatorState, alpha: float) -> EstimatorState:
    """Attach the displacement the actuator applied this iteration."""
    if state.delay_samples == 0:
        return replace(state, rho=displace(state.rho, alpha))
    if not state.inflight or state.inflight[-1].alpha is not None:
        raise ValueError("no pending in-flight slot to record alpha on")
    newest = replace(state.inflight[-1], alpha=alpha)
    return replace(state, inflight=state.inflight[:-1] + (newest,))


def advance_iteration(
    state: EstimatorState,
    event: DetectionEvent | None,
    setting_now: RamseySetting,
    alpha_applied: float,
    relaxation: RelaxationModel,
    model: ImperfectionModel,
) -> EstimatorState:
    """Full per-iteration filter transition.

    Equivalent to :func:`begin_iteration` followed by
    :func:`record_alpha`; provided for callers that already know the
    applied displacement.  With delay 0 this is exactly: measurement
    update, relaxation, displacement.
    """
    return record_alpha(
        begin_iteration(state, event, setting_now, relaxation, model), alpha_applied
    )


def control_state(state: EstimatorState, relaxation: RelaxationModel,
                  model: ImperfectionModel) -> DensityMatrix:
    """Best present-time estimate for the controller.

    Pushes the synchronized estimate through every in-flight sample's
    outcome-averaged back-action, the per-iteration relaxation, and the
    recorded displacement of that iteration (skipped for the slot whose
    injection has not happened yet).
    """
    rho = state.rho
    for slot in state.inflight:
        rho = unconditional_update(rho, slot.setting, model)
        rho = DensityMatrix(relaxation.apply(rho.mat))
        if slot.alpha is not None:
            rho = displace(rho, slot.alpha)
    return rho
