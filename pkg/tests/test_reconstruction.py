import math

import numpy as np
import pytest

from fockstab.config import PROBE_PHASES
from fockstab.dissipation import build_propagator
from fockstab.fock import diagonal_state, fock_state
from fockstab.measurement import DetectionEvent, ImperfectionModel, RamseySetting
from fockstab.reconstruction import (
    ProbeRecord,
    check_identifiability,
    collect_probes,
    ml_reconstruct,
    record_gram_matrix,
    single_sample_likelihoods,
)

PHI_0 = 0.256 * math.pi
DIM = 10
MODEL = ImperfectionModel()
RELAX = build_propagator(65e-3, 0.05, 82e-6, DIM)


def synth_records(truth, n_records, master_seed, model=MODEL, n_samples=10):
    records = []
    for child in np.random.SeedSequence(master_seed).spawn(n_records):
        rng = np.random.default_rng(child)
        records.append(collect_probes(truth, PROBE_PHASES, PHI_0, model,
                                       n_samples, rng, RELAX))
    return records


class TestCollectProbes:
    def test_detected_atoms_per_record(self):
        # 10 samples x 0.6 atoms x 35% efficiency ~ 2.1 detected
        records = synth_records(diagonal_state(np.ones(DIM)), 800, 1)
        mean = np.mean([r.detected_atoms for r in records])
        assert mean == pytest.approx(2.1, abs=0.15)

    def test_vacuum_outcomes_nearly_all_e(self):
        # P(e|0) at phi_r = -0.44 is 0.9996
        model = ImperfectionModel.ideal()
        rng = np.random.default_rng(3)
        e = g = 0
        for _ in range(300):
            rec = collect_probes(fock_state(0, DIM), (-0.44,), PHI_0, model,
                                 10, rng, RELAX)
            e += sum(ev.reported_e for _, ev in rec.samples)
            g += sum(ev.reported_g for _, ev in rec.samples)
        assert e / (e + g) > 0.995

    def test_zero_efficiency_gives_empty_events(self):
        model = ImperfectionModel(detect_efficiency=0.0)
        rng = np.random.default_rng(4)
        rec = collect_probes(fock_state(2, DIM), PROBE_PHASES, PHI_0, model,
                             10, rng, RELAX)
        assert rec.detected_atoms == 0

    def test_phase_cycling(self):
        rng = np.random.default_rng(5)
        rec = collect_probes(fock_state(1, DIM), PROBE_PHASES, PHI_0, MODEL,
                             10, rng, RELAX)
        phases = [s.phi_r for s, _ in rec.samples]
        assert phases == [PROBE_PHASES[i % 4] for i in range(10)]

    def test_sample_count_validation(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            collect_probes(fock_state(1, DIM), PROBE_PHASES, PHI_0, MODEL,
                           0, rng, RELAX)


class TestIdentifiability:
    def test_four_phase_schedule_passes(self):
        check_identifiability(PROBE_PHASES, PHI_0, MODEL, DIM)

    def test_single_phase_fails(self):
        with pytest.raises(ValueError):
            check_identifiability((-0.44,), PHI_0, MODEL, DIM)

    def test_record_gram_full_rank_on_window(self):
        g = record_gram_matrix(PROBE_PHASES, PHI_0, MODEL, DIM, 10)
        assert np.linalg.matrix_rank(g[:8, :8]) == 8

    def test_single_sample_table_is_normalized(self):
        table, _ = single_sample_likelihoods(PROBE_PHASES, PHI_0, MODEL, DIM)
        np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-12)


class TestMlReconstruct:
    def test_fock_state_self_consistency(self):
        records = synth_records(fock_state(3, DIM), 800, 10)
        result = ml_reconstruct(records, PROBE_PHASES, PHI_0, MODEL, 8)
        assert int(np.argmax(result.probabilities)) == 3
        assert result.probabilities[3] > 0.9

    def test_output_is_distribution(self):
        records = synth_records(fock_state(2, DIM), 200, 11)
        result = ml_reconstruct(records, PROBE_PHASES, PHI_0, MODEL, 8)
        assert result.probabilities.sum() == pytest.approx(1.0, abs=1e-10)
        assert result.probabilities.min() >= 0

    def test_likelihood_improves_over_initializer(self):
        records = synth_records(fock_state(3, DIM), 300, 12)
        result = ml_reconstruct(records, PROBE_PHASES, PHI_0, MODEL, 8)
        short = ml_reconstruct(records, PROBE_PHASES, PHI_0, MODEL, 8, max_iter=1)
        assert result.log_likelihood >= short.log_likelihood

    def test_mixed_state_recovery(self):
        truth = np.zeros(DIM)
        truth[2], truth[3], truth[4] = 0.1, 0.8, 0.1
        records = synth_records(diagonal_state(truth), 1500, 13)
        result = ml_reconstruct(records, PROBE_PHASES, PHI_0, MODEL, 8)
        tv = 0.5 * np.abs(result.probabilities - truth[:8]).sum()
        assert tv < 0.12
        assert int(np.argmax(result.probabilities)) == 3

    def test_degenerate_all_empty(self):
        model = ImperfectionModel(detect_efficiency=0.0)
        records = synth_records(fock_state(3, DIM), 50, 14, model=model)
        result = ml_reconstruct(records, PROBE_PHASES, PHI_0, model, 8)
        assert result.degenerate
        np.testing.assert_allclose(result.probabilities, np.full(8, 1 / 8))

    def test_requires_records(self):
        with pytest.raises(ValueError):
            ml_reconstruct([], PROBE_PHASES, PHI_0, MODEL, 8)

    def test_handmade_record_likelihood(self):
        # two-level cross-check of the posterior direction: a long run of
        # pure-e reports at phi_r = -0.44 must favor n = 2 over n = 3
        setting = RamseySetting(-0.44, PHI_0)
        samples = tuple((setting, DetectionEvent(i, 1, 0)) for i in range(10))
        result = ml_reconstruct([ProbeRecord(samples)], (-0.44, *PROBE_PHASES[:3]),
                                PHI_0, MODEL, 8)
        assert result.probabilities[2] > result.probabilities[3]
