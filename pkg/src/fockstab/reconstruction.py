"""Independent photon-number reconstruction from post-run probe samples.

After a trajectory stops, a short burst of additional probe samples is
recorded with the Ramsey phase cycling through four values.  Pooling
those records over an ensemble, the photon-number distribution the
trajectories ended in is recovered by maximum likelihood, completely
independently of the feedback filter.

For a field pinned at Fock level n the probe outcomes are i.i.d., so
the likelihood of a record given n is a product of closed-form
single-sample event probabilities (occupancy, detection efficiency and
misassignment folded in).  A diagonal mixture makes the pooled records
a finite mixture over n, solved by expectation-maximization, which
keeps the iterate on the probability simplex and increases the
likelihood monotonically.  Relaxation during the short probe window is
simulated but deliberately ignored in the likelihood model; the
resulting bias is of order (probe window)/T_c, about a percent.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .dissipation import RelaxationModel
from .fock import DensityMatrix
from .measurement import (
    DetectionEvent,
    ImperfectionModel,
    RamseySetting,
    interact_and_report,
    povm_diagonals,
    report_pattern_probability,
)

EM_TOL = 1e-8
EM_MAX_ITER = 10_000


@dataclass(frozen=True)
class ProbeRecord:
    """Probe samples of one trajectory: (setting, event) pairs in order."""

    samples: tuple[tuple[RamseySetting, DetectionEvent], ...]

    @property
    def detected_atoms(self) -> int:
        return sum(ev.detected for _, ev in self.samples)


@dataclass(frozen=True)
class ReconstructionResult:
    probabilities: np.ndarray
    iterations: int
    converged: bool
    log_likelihood: float
    degenerate: bool = False


def collect_probes(
    truth: DensityMatrix,
    phases: tuple[float, ...],
    phi_0: float,
    model: ImperfectionModel,
    n_samples: int,
    rng: np.random.Generator,
    relaxation: RelaxationModel,
) -> ProbeRecord:
    """Record probe samples from a (relaxing) field state.

    Phases cycle per sample; the field relaxes for one iteration period
    before each probe, mirroring the running loop's timing.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = []
    state = truth
    for i in range(n_samples):
        setting = RamseySetting(phases[i % len(phases)], phi_0)
        state = DensityMatrix(relaxation.apply(state.mat))
        state, event = interact_and_report(state, setting, model, rng, iteration_index=i)
        samples.append((setting, event))
    return ProbeRecord(samples=tuple(samples))


def _event_types(max_atoms: int) -> list[tuple[int, int]]:
    return [(re, rg)
            for total in range(max_atoms + 1)
            for re in range(total + 1)
            for rg in [total - re]]


def single_sample_likelihoods(
    phases: tuple[float, ...],
    phi_0: float,
    model: ImperfectionModel,
    dim: int,
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """P(event | field in |n>) for every phase and event type.

    Returns an array of shape (n_phases, n_events, dim) and the event
    type list indexing its middle axis.
    """
    events = _event_types(model.max_atoms)
    occ = model.occupancy_probabilities()
    table = np.zeros((len(phases), len(events), dim))
    for ip, phi_r in enumerate(phases):
        m_e, _ = povm_diagonals(RamseySetting(phi_r, phi_0), dim)
        p_e = m_e ** 2
        for ie, (re, rg) in enumerate(events):
            event = DetectionEvent(0, re, rg)
            for k in range(len(occ)):
                if re + rg > k:
                    continue
                for seq in product("eg", repeat=k):
                    r = report_pattern_probability(seq, event, model)
                    if r == 0.0:
                        continue
                    pn = np.ones(dim)
                    for j in seq:
                        pn = pn * (p_e if j == "e" else 1.0 - p_e)
                    table[ip, ie] += occ[k] * r * pn
    return table, events


def record_gram_matrix(
    phases: tuple[float, ...],
    phi_0: float,
    model: ImperfectionModel,
    dim: int,
    n_samples: int,
) -> np.ndarray:
    """Gram matrix of the record-level likelihood functions.

    G[n, n'] = sum over all possible records of L(record|n) L(record|n')
    factorizes over samples into an elementwise product of per-phase
    single-sample Grams, so it is exact and cheap.  Full rank of G over
    a set of levels is equivalent to linear independence of their
    record likelihoods, i.e. to mixture identifiability.
    """
    table, _ = single_sample_likelihoods(phases, phi_0, model, dim)
    gram = np.ones((dim, dim))
    for i in range(n_samples):
        per_phase = table[i % len(phases)]        # (events, dim)
        gram = gram * (per_phase.T @ per_phase)
    return gram


def check_identifiability(
    phases: tuple[float, ...],
    phi_0: float,
    model: ImperfectionModel,
    dim: int,
    n_samples: int = 10,
    n_levels: int = 8,
) -> None:
    """Verify the probe schedule can tell the low Fock levels apart.

    A single sample carries too little information to separate many
    levels (its event probabilities span only a few trigonometric
    modes), but a full record of ``n_samples`` correlated probes does.
    The check requires distinct per-sample probability vectors and a
    full-rank record-level Gram matrix over levels
    0..min(n_levels, dim)-1; otherwise EM output would be arbitrary
    along the null directions.
    """
    cols = min(n_levels, dim)
    table, _ = single_sample_likelihoods(phases, phi_0, model, dim)
    flat = table.reshape(-1, dim)
    for n in range(cols):
        for m in range(n + 1, cols):
            if np.max(np.abs(flat[:, n] - flat[:, m])) < 0.01:
                raise ValueError(
                    f"probe schedule gives near-identical sample statistics "
                    f"for levels {n} and {m}"
                )
    gram = record_gram_matrix(phases, phi_0, model, dim, n_samples)[:cols, :cols]
    svals = np.linalg.svd(gram, compute_uv=False)
    rank = int(np.sum(svals > 1e-8 * svals[0]))
    if rank < cols:
        raise ValueError(
            f"probe records cannot distinguish levels 0..{cols - 1}: "
            f"record Gram rank {rank} < {cols}"
        )


def ml_reconstruct(
    records: list[ProbeRecord],
    phases: tuple[float, ...],
    phi_0: float,
    model: ImperfectionModel,
    dim: int,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> ReconstructionResult:
    """Maximum-likelihood photon-number distribution from pooled records.

    Starts EM from the uniform distribution and stops when the
    max-norm change falls below ``tol``.  With no detected atom in any
    record the data carry no photon-number information at all; the
    uniform prior is returned with the ``degenerate`` flag set.
    """
    if not records:
        raise ValueError("need at least one probe record")
    if all(record.detected_atoms == 0 for record in records):
        uniform = np.full(dim, 1.0 / dim)
        return ReconstructionResult(
            probabilities=uniform, iterations=0, converged=True,
            log_likelihood=float("nan"), degenerate=True,
        )
    check_identifiability(phases, phi_0, model, dim,
                          n_samples=len(records[0].samples))
    table, events = single_sample_likelihoods(phases, phi_0, model, dim)
    event_index = {ev: i for i, ev in enumerate(events)}
    phase_index = {phi: i for i, phi in enumerate(phases)}
    n_feat = len(phases) * len(events)
    counts = np.zeros((len(records), n_feat))
    for ir, record in enumerate(records):
        for setting, event in record.samples:
            ip = phase_index[setting.phi_r]
            ie = event_index[(event.reported_e, event.reported_g)]
            counts[ir, ip * len(events) + ie] += 1.0
    log_table = np.log(np.maximum(table.reshape(n_feat, dim), 1e-300))
    loglik = counts @ log_table                   # (records, dim)
    shift = loglik.max(axis=1, keepdims=True)
    lik = np.exp(loglik - shift)                  # scaled record likelihoods
    p = np.full(dim, 1.0 / dim)
    ll_prev = -np.inf
    for it in range(1, max_iter + 1):
        mix = lik @ p                             # (records,)
        ll = float(np.sum(np.log(mix) + shift[:, 0]))
        w = (lik * p) / mix[:, None]
        p_new = w.mean(axis=0)
        p_new /= p_new.sum()
        if np.max(np.abs(p_new - p)) < tol:
            return ReconstructionResult(p_new, it, True, ll)
        if ll < ll_prev - 1e-9:
            raise RuntimeError("EM likelihood decreased; numerical failure")
        p, ll_prev = p_new, ll
    return ReconstructionResult(p, max_iter, False, ll_prev)
