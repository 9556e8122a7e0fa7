"""Closed-loop trajectory engine and Monte Carlo ensembles.

One loop iteration, in order: the field relaxes for one period, an
atomic sample crosses the cavity (truth-side collapse plus a possibly
corrupted, delayed report), the filter folds in the report that arrived
this iteration, the controller evaluates its present-time estimate and
picks a bounded injection amplitude, and the actuator displaces the
field.  The truth field evolves under the deterministic relaxation map
by default, so trajectory-level quantum jumps emerge purely from the
measurement back-action, as they do from the real detector record; a
stochastic jump unraveling of the damping is available as an option.

Ensembles derive one child seed per trajectory from a master seed, so
results are reproducible bit for bit regardless of how the work is
scheduled.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .config import ConfigError, LoopConfig, STOP_FIXED_FIDELITY, STOP_FIXED_TIME
from .controller import build_lambda, distance, optimal_alpha, projector_weights
from .dissipation import build_propagator
from .estimator import (
    begin_iteration,
    control_state,
    initial_state,
    record_alpha,
)
from .fock import (
    DensityMatrix,
    coherent_state,
    diagonal_state,
    displacement_exact,
    displacement_quadratic_terms,
    fock_state,
    ladder_operators,
)
from .measurement import DetectionEvent, interact_and_report

EDGE_POPULATION_FLAG = 1e-4

STOP_REASON_TIME = "fixed_time"
STOP_REASON_FIDELITY = "fidelity_reached"
STOP_REASON_CAP = "iteration_cap"


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-iteration log of one closed-loop run."""

    seed: int
    time_s: np.ndarray          # (T,)
    reported_e: np.ndarray      # (T,) int
    reported_g: np.ndarray      # (T,) int
    alpha: np.ndarray           # (T,)
    distance: np.ndarray        # (T,)
    p_est: np.ndarray           # (T, dim) controller's present-time estimate
    p_true: np.ndarray          # (T, dim) truth populations at iteration end
    stop_reason: str
    stop_time_s: float
    first_convergence_iteration: int
    rho_est_final: DensityMatrix
    rho_true_final: DensityMatrix
    max_edge_population: float
    max_step_leak: float
    snapshots: dict[int, np.ndarray]

    @property
    def iterations(self) -> int:
        return len(self.time_s)

    @property
    def truncation_flag(self) -> bool:
        """True if the probability current dropped at the truncation edge
        ever exceeded the per-iteration budget."""
        return self.max_step_leak > EDGE_POPULATION_FLAG

    @property
    def converged(self) -> bool:
        return self.first_convergence_iteration >= 0


@dataclass(frozen=True)
class EnsembleStats:
    """Order-independent aggregates over a set of trajectories."""

    mode: str                   # feedback | trial | recovery
    n_traj: int
    dim: int
    n_t: int
    times: np.ndarray           # (T,)
    alive: np.ndarray           # (T,) trajectories still running at each step
    p_est_mean: np.ndarray      # (T, dim) over alive trajectories
    p_true_mean: np.ndarray     # (T, dim)
    alpha_abs_mean: np.ndarray  # (T,)
    c_fr: np.ndarray            # (T,) fraction converged by each time
    first_convergence_iteration: np.ndarray  # (n_traj,) -1 if never
    stop_iteration: np.ndarray  # (n_traj,)
    terminal_truth_hist: np.ndarray  # (dim,) mean truth populations at stop
    terminal_est_hist: np.ndarray    # (dim,)
    attempts: np.ndarray | None = None   # trial mode: attempts per trajectory
    tau_s: float | None = None           # trial mode: probe window length


class _Machinery:
    """Per-config precomputation shared by all trajectories of a run."""

    def __init__(self, config: LoopConfig):
        self.config = config
        self.relaxation = build_propagator(config.T_c, config.n_th, config.T_a, config.dim)
        self.model = config.imperfection_model()
        if config.lambda_family == "projector":
            self.weights = projector_weights(config.n_t, config.dim)
        else:
            self.weights = build_lambda(config.n_t, config.lambda_shape, config.dim)
        self.A, self.A2 = displacement_quadratic_terms(config.dim)
        phases = config.phases()
        self.settings = [config.setting(i) for i in range(len(phases))]
        if config.truth_unraveling == "jumps":
            self.jump = _jump_tables(config.T_c, config.n_th, config.T_a, config.dim)
        else:
            self.jump = None
        # probability current out of the top level that truncation drops:
        # kappa * n_th * dim * P(dim-1) per unit time
        kappa = 0.0 if math.isinf(config.T_c) else 1.0 / config.T_c
        self.leak_coeff = kappa * config.n_th * config.dim * config.T_a

    def setting(self, iteration: int):
        return self.settings[iteration % len(self.settings)]


@lru_cache(maxsize=None)
def _jump_tables(T_c: float, n_th: float, dt: float, dim: int):
    """Rate diagonals and no-jump decay for the stochastic damping mode."""
    a, a_dag, n_op = ladder_operators(dim)
    kappa = 0.0 if math.isinf(T_c) else 1.0 / T_c
    down_diag = np.diag(n_op).copy()
    up_diag = np.diag(a @ a_dag).copy()
    no_jump = np.exp(-0.5 * dt * kappa * ((1.0 + n_th) * down_diag + n_th * up_diag))
    return kappa, down_diag, up_diag, no_jump, a, a_dag


def _truth_relax_step(mat: np.ndarray, mach: _Machinery,
                      rng: np.random.Generator) -> np.ndarray:
    if mach.jump is None:
        return mach.relaxation.apply(mat)
    kappa, down_diag, up_diag, no_jump, a, a_dag = mach.jump
    if kappa == 0.0:
        return mat
    pops = np.real(np.diag(mat))
    dt = mach.config.T_a
    p_down = kappa * (1.0 + mach.config.n_th) * float(down_diag @ pops) * dt
    p_up = kappa * mach.config.n_th * float(up_diag @ pops) * dt
    u = rng.random()
    if u < p_down:
        out = a @ mat @ a_dag
    elif u < p_down + p_up:
        out = a_dag @ mat @ a
    else:
        out = mat * np.outer(no_jump, no_jump)
    return out / np.real(np.trace(out))


def run_feedback_trajectory(
    config: LoopConfig,
    seed: int,
    snapshot_iterations: tuple[int, ...] | None = None,
) -> TrajectoryRecord:
    """Simulate one closed feedback loop from the coherent preparation.

    Truth and estimator both start in the coherent state of amplitude
    sqrt(n_t); the run terminates according to the configured stop rule.
    The random stream is derived exactly as for the first member of an
    ensemble with this master seed, so a one-trajectory ensemble and a
    single run coincide.
    """
    rng = np.random.default_rng(trajectory_seeds(seed, 1)[0])
    mach = _Machinery(config)
    snaps = config.snapshot_iterations if snapshot_iterations is None else snapshot_iterations
    return _run_loop(mach, rng, seed=seed, snapshot_iterations=tuple(snaps))


def _run_loop(
    mach: _Machinery,
    rng: np.random.Generator,
    seed: int = -1,
    truth_init: DensityMatrix | None = None,
    estimator_init: DensityMatrix | None = None,
    snapshot_iterations: tuple[int, ...] = (),
) -> TrajectoryRecord:
    config = mach.config
    dim = config.dim
    prepared = coherent_state(math.sqrt(config.n_t), dim)
    truth = truth_init if truth_init is not None else prepared
    est_rho = estimator_init if estimator_init is not None else prepared
    est = initial_state(est_rho, config.delay_samples)

    cap = config.iterations
    time_s = np.empty(cap)
    reported_e = np.empty(cap, dtype=np.int64)
    reported_g = np.empty(cap, dtype=np.int64)
    alphas = np.empty(cap)
    distances = np.empty(cap)
    p_est = np.empty((cap, dim))
    p_true = np.empty((cap, dim))
    snapshots: dict[int, np.ndarray] = {}
    snapshot_set = set(snapshot_iterations)

    queue: deque[DetectionEvent] = deque()
    truth_mat = truth.mat
    fid_run = 0
    first_conv = -1
    max_edge = 0.0
    max_leak = 0.0
    stop_reason = STOP_REASON_TIME
    t = 0
    while True:
        setting = mach.setting(t)
        truth_mat = _truth_relax_step(truth_mat, mach, rng)
        truth_state, event = interact_and_report(
            DensityMatrix(truth_mat), setting, mach.model, rng, iteration_index=t
        )
        truth_mat = truth_state.mat
        queue.append(event)
        arrived = queue.popleft() if len(queue) > config.delay_samples else None

        est = begin_iteration(est, arrived, setting, mach.relaxation, mach.model)
        rho_ctrl = control_state(est, mach.relaxation, mach.model)
        if config.control_enabled:
            decision = optimal_alpha(
                rho_ctrl, mach.weights, mach.A, mach.A2,
                alpha_max=config.alpha_max, deadband=config.control_deadband,
            )
            alpha = decision.alpha
        else:
            alpha = 0.0
        if alpha != 0.0:
            u = displacement_exact(alpha, dim)
            truth_mat = u @ truth_mat @ u.T
            rho_published = DensityMatrix(u @ rho_ctrl.mat @ u.T)
        else:
            rho_published = rho_ctrl
        est = record_alpha(est, alpha)

        # the controller's end-of-iteration product: its present-time
        # estimate including the injection it just applied
        pops_ctrl = rho_published.populations
        pops_true = np.real(np.diag(truth_mat))
        time_s[t] = (t + 1) * config.T_a
        reported_e[t] = event.reported_e
        reported_g[t] = event.reported_g
        alphas[t] = alpha
        distances[t] = distance(rho_published, mach.weights)
        p_est[t] = pops_ctrl
        p_true[t] = pops_true
        max_edge = max(max_edge, pops_true[dim - 1])
        max_leak = max(max_leak, mach.leak_coeff * pops_true[dim - 1])
        if t in snapshot_set:
            snapshots[t] = rho_published.mat.copy()

        if pops_ctrl[config.n_t] > config.fidelity_threshold:
            fid_run += 1
            if fid_run >= config.fidelity_consecutive and first_conv < 0:
                first_conv = t
        else:
            fid_run = 0

        t += 1
        if (config.stop_rule == STOP_FIXED_FIDELITY and first_conv >= 0):
            stop_reason = STOP_REASON_FIDELITY
            break
        if t >= cap:
            stop_reason = (STOP_REASON_TIME if config.stop_rule == STOP_FIXED_TIME
                           else STOP_REASON_CAP)
            break

    n = t
    return TrajectoryRecord(
        seed=seed,
        time_s=time_s[:n].copy(),
        reported_e=reported_e[:n].copy(),
        reported_g=reported_g[:n].copy(),
        alpha=alphas[:n].copy(),
        distance=distances[:n].copy(),
        p_est=p_est[:n].copy(),
        p_true=p_true[:n].copy(),
        stop_reason=stop_reason,
        stop_time_s=float(n * config.T_a),
        first_convergence_iteration=first_conv,
        rho_est_final=rho_published,
        rho_true_final=DensityMatrix(truth_mat),
        max_edge_population=float(max_edge),
        max_step_leak=float(max_leak),
        snapshots=snapshots,
    )


def first_jump_iteration(record: TrajectoryRecord, n_from: int) -> int:
    """First iteration where truth P(n_from - 1) exceeds P(n_from); -1 if never."""
    below = record.p_true[:, n_from - 1] > record.p_true[:, n_from]
    idx = np.flatnonzero(below)
    return int(idx[0]) if idx.size else -1


class _Accumulator:
    """Streaming, order-independent ensemble aggregation."""

    def __init__(self, mode: str, config: LoopConfig):
        self.mode = mode
        self.config = config
        cap = config.iterations
        dim = config.dim
        self.alive = np.zeros(cap, dtype=np.int64)
        self.sum_p_est = np.zeros((cap, dim))
        self.sum_p_true = np.zeros((cap, dim))
        self.sum_abs_alpha = np.zeros(cap)
        self.first_conv: list[int] = []
        self.stop_iter: list[int] = []
        self.sum_term_true = np.zeros(dim)
        self.sum_term_est = np.zeros(dim)
        self.max_len = 0

    def add(self, record: TrajectoryRecord) -> None:
        n = record.iterations
        self.alive[:n] += 1
        self.sum_p_est[:n] += record.p_est
        self.sum_p_true[:n] += record.p_true
        self.sum_abs_alpha[:n] += np.abs(record.alpha)
        self.first_conv.append(record.first_convergence_iteration)
        self.stop_iter.append(n)
        self.sum_term_true += record.p_true[-1]
        self.sum_term_est += record.p_est[-1]
        self.max_len = max(self.max_len, n)

    def finalize(self) -> EnsembleStats:
        n = self.max_len
        alive = self.alive[:n]
        safe = np.maximum(alive, 1)[:, None]
        first_conv = np.array(self.first_conv, dtype=np.int64)
        n_traj = len(first_conv)
        conv_sorted = np.sort(first_conv[first_conv >= 0])
        c_fr = np.searchsorted(conv_sorted, np.arange(n), side="right") / n_traj
        return EnsembleStats(
            mode=self.mode,
            n_traj=n_traj,
            dim=self.config.dim,
            n_t=self.config.n_t,
            times=(np.arange(n) + 1) * self.config.T_a,
            alive=alive.copy(),
            p_est_mean=self.sum_p_est[:n] / safe,
            p_true_mean=self.sum_p_true[:n] / safe,
            alpha_abs_mean=self.sum_abs_alpha[:n] / np.maximum(alive, 1),
            c_fr=c_fr,
            first_convergence_iteration=first_conv,
            stop_iteration=np.array(self.stop_iter, dtype=np.int64),
            terminal_truth_hist=self.sum_term_true / n_traj,
            terminal_est_hist=self.sum_term_est / n_traj,
        )


def trajectory_seeds(master_seed: int, n_traj: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(n_traj)


def run_ensemble(config: LoopConfig, n_traj: int, master_seed: int) -> EnsembleStats:
    """Run n_traj independent feedback trajectories and aggregate them."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    mach = _Machinery(config)
    acc = _Accumulator("feedback", config)
    for child in trajectory_seeds(master_seed, n_traj):
        rng = np.random.default_rng(child)
        acc.add(_run_loop(mach, rng))
    return acc.finalize()


def run_ensemble_with_probes(
    config: LoopConfig, n_traj: int, master_seed: int
) -> tuple[EnsembleStats, list]:
    """Feedback ensemble plus post-stop probe records per trajectory.

    The probe draws consume each trajectory's random stream only after
    its loop finished, so the ensemble statistics are identical to
    :func:`run_ensemble` at the same master seed.
    """
    from .config import PROBE_PHASES
    from .reconstruction import collect_probes

    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    mach = _Machinery(config)
    acc = _Accumulator("feedback", config)
    records = []
    for child in trajectory_seeds(master_seed, n_traj):
        rng = np.random.default_rng(child)
        record = _run_loop(mach, rng)
        acc.add(record)
        records.append(collect_probes(
            record.rho_true_final, PROBE_PHASES, config.phi_0, mach.model,
            config.probe_samples, rng, mach.relaxation,
        ))
    return acc.finalize(), records


def run_trial_and_error(
    config: LoopConfig,
    tau: float,
    n_traj: int,
    master_seed: int,
    max_attempts: int = 200,
) -> EnsembleStats:
    """Passive preparation baseline: measure an injected coherent state
    for a fixed window tau and keep it only if the inferred target
    population clears the fidelity threshold, else reset and retry.

    Convergence time for a trajectory is (number of attempts) * tau.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    window = max(1, round(tau / config.T_a))
    attempt_config = replace(
        config, control_enabled=False, stop_rule=STOP_FIXED_TIME, iterations=window
    )
    mach = _Machinery(attempt_config)
    attempts = np.zeros(n_traj, dtype=np.int64)
    first_conv = np.full(n_traj, -1, dtype=np.int64)
    for i, child in enumerate(trajectory_seeds(master_seed, n_traj)):
        rng = np.random.default_rng(child)
        for attempt in range(1, max_attempts + 1):
            record = _run_loop(mach, rng)
            if record.p_est[-1, config.n_t] > config.fidelity_threshold:
                attempts[i] = attempt
                first_conv[i] = attempt * window - 1
                break
        else:
            attempts[i] = max_attempts
    n = int(attempts.max()) * window
    conv_sorted = np.sort(first_conv[first_conv >= 0])
    c_fr = np.searchsorted(conv_sorted, np.arange(n), side="right") / n_traj
    dim = config.dim
    empty = np.zeros((n, dim))
    return EnsembleStats(
        mode="trial",
        n_traj=n_traj,
        dim=dim,
        n_t=config.n_t,
        times=(np.arange(n) + 1) * config.T_a,
        alive=np.full(n, n_traj, dtype=np.int64),
        p_est_mean=empty,
        p_true_mean=empty.copy(),
        alpha_abs_mean=np.zeros(n),
        c_fr=c_fr,
        first_convergence_iteration=first_conv,
        stop_iteration=attempts * window,
        terminal_truth_hist=np.zeros(dim),
        terminal_est_hist=np.zeros(dim),
        attempts=attempts,
        tau_s=tau,
    )


def run_jump_recovery(
    config: LoopConfig,
    n_traj: int,
    master_seed: int,
    estimator_populations: np.ndarray | None = None,
) -> EnsembleStats:
    """Reaction of the running loop to a downward quantum jump.

    The field is prepared in |n_t - 1> while the filter starts from the
    diagonal steady-state belief (normally the terminal truth histogram
    of a prior fixed-time ensemble), emulating a jump the controller has
    not noticed yet.
    """
    if config.n_t < 1:
        raise ValueError("jump recovery needs n_t >= 1")
    if estimator_populations is None:
        raise ConfigError(
            "jump recovery needs the steady-state populations for the initial "
            "filter belief: run a fixed-time ensemble first and pass its "
            "terminal truth histogram"
        )
    belief = diagonal_state(np.asarray(estimator_populations, dtype=float))
    if belief.dim != config.dim:
        raise ConfigError(
            f"steady-state histogram has {belief.dim} bins, config.dim is {config.dim}"
        )
    truth0 = fock_state(config.n_t - 1, config.dim)
    mach = _Machinery(config)
    acc = _Accumulator("recovery", config)
    for child in trajectory_seeds(master_seed, n_traj):
        rng = np.random.default_rng(child)
        acc.add(_run_loop(mach, rng, truth_init=truth0, estimator_init=belief))
    return acc.finalize()


def convergence_time(stats: EnsembleStats, fraction: float = 0.63) -> float:
    """First time at which the converged fraction reaches ``fraction``."""
    idx = np.flatnonzero(stats.c_fr >= fraction)
    return float(stats.times[idx[0]]) if idx.size else math.inf


def tune_lambda(
    config: LoopConfig,
    shape_grid: list[float],
    n_traj_per_point: int,
    master_seed: int = 0,
) -> tuple[float, list[tuple[float, float]]]:
    """Grid-search the weight-profile width for fastest convergence.

    Each grid point runs an independent ensemble; the score is the
    63%-convergence time.  Returns the best width and the full table.
    """
    if not shape_grid:
        raise ValueError("shape_grid must not be empty")
    point_seeds = np.random.SeedSequence(master_seed).generate_state(
        len(shape_grid), np.uint64
    )
    table: list[tuple[float, float]] = []
    for shape, point_seed in zip(shape_grid, point_seeds):
        cfg = replace(config, lambda_shape=shape, lambda_family="gaussian")
        stats = run_ensemble(cfg, n_traj_per_point, int(point_seed))
        table.append((shape, convergence_time(stats)))
    best = min(table, key=lambda row: (row[1], row[0]))
    return best[0], table
