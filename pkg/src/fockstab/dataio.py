"""File formats: trajectory logs, ensemble time series, probe records,
histograms, density-matrix snapshots, and the run manifest.

Everything is plain CSV with a header row, numbers written with
``repr`` so a round-trip through text is exact (shortest decimal that
recovers the double).  Each run writes one manifest (JSON) echoing the
fully resolved configuration, the master seed, and every output file it
produced; rerunning with the same configuration and seed reproduces the
data files byte for byte.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import LoopConfig, config_to_dict
from .experiment import EnsembleStats, TrajectoryRecord
from .measurement import DetectionEvent, RamseySetting
from .reconstruction import ProbeRecord


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: str, header: list[str], rows) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def trajectory_header(dim: int) -> list[str]:
    return (["index", "time_s", "reported_e", "reported_g", "alpha", "distance"]
            + [f"P_est_{n}" for n in range(dim)]
            + [f"P_true_{n}" for n in range(dim)])


def write_trajectory(record: TrajectoryRecord, path: str) -> None:
    """One row per iteration; columns fixed as index, time, reports,
    alpha, distance, then estimated and true photon distributions."""
    dim = record.p_est.shape[1]

    def rows():
        for t in range(record.iterations):
            yield ([str(t), _fmt(record.time_s[t]),
                    str(int(record.reported_e[t])), str(int(record.reported_g[t])),
                    _fmt(record.alpha[t]), _fmt(record.distance[t])]
                   + [_fmt(v) for v in record.p_est[t]]
                   + [_fmt(v) for v in record.p_true[t]])

    _write_csv(path, trajectory_header(dim), rows())


@dataclass(frozen=True)
class TrajectoryData:
    """Arrays read back from a trajectory file."""

    time_s: np.ndarray
    reported_e: np.ndarray
    reported_g: np.ndarray
    alpha: np.ndarray
    distance: np.ndarray
    p_est: np.ndarray
    p_true: np.ndarray


def read_trajectory(path: str) -> TrajectoryData:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        dim = sum(1 for h in header if h.startswith("P_est_"))
        raw = [line.strip().split(",") for line in fh if line.strip()]
    return TrajectoryData(
        time_s=np.array([float(r[1]) for r in raw]),
        reported_e=np.array([int(r[2]) for r in raw]),
        reported_g=np.array([int(r[3]) for r in raw]),
        alpha=np.array([float(r[4]) for r in raw]),
        distance=np.array([float(r[5]) for r in raw]),
        p_est=np.array([[float(v) for v in r[6:6 + dim]] for r in raw]),
        p_true=np.array([[float(v) for v in r[6 + dim:6 + 2 * dim]] for r in raw]),
    )


def write_ensemble(stats: EnsembleStats, path: str) -> None:
    """Ensemble time series: means over alive trajectories per iteration."""
    dim = stats.dim
    header = (["time_s", "alive", "c_fr", "alpha_abs_mean"]
              + [f"P_est_mean_{n}" for n in range(dim)]
              + [f"P_true_mean_{n}" for n in range(dim)])

    def rows():
        for t in range(len(stats.times)):
            yield ([_fmt(stats.times[t]), str(int(stats.alive[t])),
                    _fmt(stats.c_fr[t]), _fmt(stats.alpha_abs_mean[t])]
                   + [_fmt(v) for v in stats.p_est_mean[t]]
                   + [_fmt(v) for v in stats.p_true_mean[t]])

    _write_csv(path, header, rows())


def write_histogram(populations: np.ndarray, path: str, label: str = "P") -> None:
    _write_csv(path, ["n", label],
               ([str(n), _fmt(p)] for n, p in enumerate(populations)))


def read_histogram(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        return np.array([float(line.strip().split(",")[1]) for line in fh if line.strip()])


def write_matrix(mat: np.ndarray, path: str) -> None:
    """Square real matrix dump (density-matrix snapshots)."""
    _write_csv(path, [f"col_{j}" for j in range(mat.shape[1])],
               ([
                   _fmt(v) for v in row
               ] for row in np.real(mat)))


def write_probes(records: list[ProbeRecord], path: str) -> None:
    """Probe samples, one row per sample: trajectory, sample index,
    Ramsey phase, reported counts."""
    def rows():
        for ir, record in enumerate(records):
            for i, (setting, event) in enumerate(record.samples):
                yield [str(ir), str(i), _fmt(setting.phi_r),
                       str(event.reported_e), str(event.reported_g)]

    _write_csv(path, ["trajectory", "sample", "phi_r", "reported_e", "reported_g"], rows())


def read_probes(path: str, phi_0: float) -> list[ProbeRecord]:
    by_traj: dict[int, list] = {}
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            if not line.strip():
                continue
            traj, sample, phi_r, re_, rg = line.strip().split(",")
            by_traj.setdefault(int(traj), []).append(
                (int(sample),
                 RamseySetting(float(phi_r), phi_0),
                 DetectionEvent(int(sample), int(re_), int(rg)))
            )
    records = []
    for traj in sorted(by_traj):
        samples = sorted(by_traj[traj])
        records.append(ProbeRecord(tuple((s, e) for _, s, e in samples)))
    return records


@dataclass
class RunManifest:
    """Provenance of one CLI run: configuration echo, seed, version,
    timestamps, and the data files the run produced."""

    command: str
    config: dict
    master_seed: int
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    started_at: str = ""
    finished_at: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def new_manifest(command: str, config: LoopConfig, master_seed: int) -> RunManifest:
    return RunManifest(
        command=command,
        config=config_to_dict(config),
        master_seed=master_seed,
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    )


def write_manifest(manifest: RunManifest, path: str) -> None:
    manifest.finished_at = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json() + "\n")
