"""Run configuration: defaults, validation, and the flat config-file parser.

Defaults reproduce the reference cavity experiment: 82 us loop period,
65 ms damping time, 0.05 thermal photons, per-photon phase 0.256 pi,
0.6 atoms per sample with 35% detection efficiency and 3% state
misassignment, injection amplitudes bounded by 0.1, and a four-sample
transport delay between the cavity and the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .measurement import ImperfectionModel, RamseySetting

# Ramsey phases cycled for post-run probe samples (also used for any
# measurement-only photon-number estimation).
PROBE_PHASES: tuple[float, ...] = (1.17, 0.36, -0.44, -1.24)

STOP_FIXED_TIME = "fixed_time"
STOP_FIXED_FIDELITY = "fixed_fidelity"


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration input."""


def balanced_phase(n_t: int, phi_0: float) -> float:
    """Ramsey phase giving P(e) = P(g) = 1/2 on exactly n_t photons."""
    return math.pi / 2.0 - phi_0 * (n_t + 0.5)


def default_phase_schedule(n_t: int, phi_0: float) -> tuple[float, ...]:
    """Measurement phase cycle for a target photon number.

    Targets 2 and 3 use the experimentally tuned values (constant
    -0.44 rad, alternating -0.44/-1.24 rad); other targets fall back to
    the single phase balancing e/g at n_t.
    """
    if n_t == 2:
        return (-0.44,)
    if n_t == 3:
        return (-0.44, -1.24)
    return (balanced_phase(n_t, phi_0),)


@dataclass(frozen=True)
class LoopConfig:
    """Complete description of one feedback-loop simulation."""

    dim: int = 10
    n_t: int = 3
    T_a: float = 82e-6
    T_c: float = 65e-3
    n_th: float = 0.05
    phi_0: float = 0.256 * math.pi
    phase_schedule: tuple[float, ...] | None = None
    alpha_max: float = 0.1
    delay_samples: int = 4
    mean_atoms: float = 0.6
    max_atoms: int = 2
    detect_efficiency: float = 0.35
    err_e: float = 0.03
    err_g: float = 0.03
    occupancy: tuple[float, ...] | None = None
    lambda_family: str = "gaussian"
    lambda_shape: float = 2.0
    control_deadband: float = 1e-6
    control_enabled: bool = True
    truth_unraveling: str = "lindblad"
    stop_rule: str = STOP_FIXED_TIME
    iterations: int = 2000
    fidelity_threshold: float = 0.8
    fidelity_consecutive: int = 3
    probe_samples: int = 10
    snapshot_iterations: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if not 0 <= self.n_t < self.dim:
            raise ConfigError(f"n_t must lie in 0..{self.dim - 1}, got {self.n_t}")
        for name in ("T_a", "T_c", "phi_0", "alpha_max", "lambda_shape"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_th < 0 or self.mean_atoms < 0:
            raise ConfigError("n_th and mean_atoms must be nonnegative")
        for name in ("detect_efficiency", "err_e", "err_g", "fidelity_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0 <= self.delay_samples <= 6:
            raise ConfigError(f"delay_samples must lie in 0..6, got {self.delay_samples}")
        if self.stop_rule not in (STOP_FIXED_TIME, STOP_FIXED_FIDELITY):
            raise ConfigError(f"unknown stop_rule {self.stop_rule!r}")
        if self.lambda_family not in ("gaussian", "projector"):
            raise ConfigError(f"unknown lambda_family {self.lambda_family!r}")
        if self.truth_unraveling not in ("lindblad", "jumps"):
            raise ConfigError(f"unknown truth_unraveling {self.truth_unraveling!r}")
        if self.iterations < 1 or self.fidelity_consecutive < 1:
            raise ConfigError("iterations and fidelity_consecutive must be >= 1")
        if self.probe_samples < 1:
            raise ConfigError("probe_samples must be >= 1")
        if self.phase_schedule is not None and len(self.phase_schedule) == 0:
            raise ConfigError("phase_schedule must not be empty")

    def phases(self) -> tuple[float, ...]:
        if self.phase_schedule is not None:
            return tuple(self.phase_schedule)
        return default_phase_schedule(self.n_t, self.phi_0)

    def setting(self, iteration: int) -> RamseySetting:
        phases = self.phases()
        return RamseySetting(phases[iteration % len(phases)], self.phi_0)

    def imperfection_model(self) -> ImperfectionModel:
        return ImperfectionModel(
            mean_atoms=self.mean_atoms,
            max_atoms=self.max_atoms,
            detect_efficiency=self.detect_efficiency,
            err_e=self.err_e,
            err_g=self.err_g,
            occupancy=self.occupancy,
        )


def ideal_overrides() -> dict:
    """Config fields for the noiseless limit: one perfectly detected atom
    per sample, no delay, no damping."""
    return dict(
        occupancy=(0.0, 1.0, 0.0),
        mean_atoms=1.0,
        detect_efficiency=1.0,
        err_e=0.0,
        err_g=0.0,
        delay_samples=0,
        n_th=0.0,
        T_c=math.inf,
    )


_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False,
                 "yes": True, "no": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_STRINGS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}")


def _parse_float_tuple(text: str) -> tuple[float, ...]:
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    return tuple(float(t) for t in items)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    return tuple(int(t) for t in items)


_PARSERS = {
    "dim": int,
    "n_t": int,
    "T_a": float,
    "T_c": float,
    "n_th": float,
    "phi_0": float,
    "phase_schedule": _parse_float_tuple,
    "alpha_max": float,
    "delay_samples": int,
    "mean_atoms": float,
    "max_atoms": int,
    "detect_efficiency": float,
    "err_e": float,
    "err_g": float,
    "occupancy": _parse_float_tuple,
    "lambda_family": str,
    "lambda_shape": float,
    "control_deadband": float,
    "control_enabled": _parse_bool,
    "truth_unraveling": str,
    "stop_rule": str,
    "iterations": int,
    "fidelity_threshold": float,
    "fidelity_consecutive": int,
    "probe_samples": int,
    "snapshot_iterations": _parse_int_tuple,
    "seed": int,
}


def parse_config(path: str) -> LoopConfig:
    """Read a flat ``key = value`` file (UTF-8, ``#`` comments).

    Unknown keys and out-of-range values are rejected with the
    offending line number.  An empty file yields the full defaults.
    """
    values: dict = {}
    key_lines: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in _PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = _PARSERS[key](text.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
            key_lines[key] = lineno
    try:
        return LoopConfig(**values)
    except (ConfigError, ValueError) as exc:
        # attribute range errors back to the line that set the field
        lineno = next((key_lines[k] for k in key_lines if k in str(exc)), None)
        where = f"{path}:{lineno}" if lineno is not None else path
        raise ConfigError(f"{where}: {exc}") from exc


def config_to_dict(config: LoopConfig) -> dict:
    """Flat dict echo of the fully resolved configuration."""
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    out["phase_schedule"] = list(config.phases())
    return out


def with_overrides(config: LoopConfig, **overrides) -> LoopConfig:
    return replace(config, **overrides)
