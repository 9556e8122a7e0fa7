import math

import pytest

from fockstab.config import (
    ConfigError,
    LoopConfig,
    balanced_phase,
    config_to_dict,
    default_phase_schedule,
    ideal_overrides,
    parse_config,
)


class TestDefaults:
    def test_physical_defaults(self):
        cfg = LoopConfig()
        assert cfg.T_c == 65e-3
        assert cfg.T_a == 82e-6
        assert cfg.phi_0 == pytest.approx(0.256 * math.pi)
        assert cfg.n_th == 0.05
        assert cfg.mean_atoms == 0.6
        assert cfg.detect_efficiency == 0.35
        assert cfg.err_e == cfg.err_g == 0.03
        assert cfg.alpha_max == 0.1
        assert cfg.delay_samples == 4
        assert cfg.dim == 10
        assert cfg.iterations == 2000
        assert cfg.fidelity_threshold == 0.8
        assert cfg.fidelity_consecutive == 3

    def test_phase_schedules(self):
        assert LoopConfig(n_t=2).phases() == (-0.44,)
        assert LoopConfig(n_t=3).phases() == (-0.44, -1.24)
        # other targets balance e/g on the target level
        phi = LoopConfig(n_t=1).phases()
        assert len(phi) == 1
        assert phi[0] == pytest.approx(balanced_phase(1, 0.256 * math.pi))

    def test_balanced_phase_matches_tuned_values(self):
        # the tuned -0.44 and -1.24 rad are the balanced phases for
        # n = 2 and n = 3, rounded to 2 decimals
        phi0 = 0.256 * math.pi
        assert balanced_phase(2, phi0) == pytest.approx(-0.44, abs=5e-3)
        assert balanced_phase(3, phi0) == pytest.approx(-1.24, abs=5e-3)

    def test_setting_cycles(self):
        cfg = LoopConfig(n_t=3)
        assert cfg.setting(0).phi_r == -0.44
        assert cfg.setting(1).phi_r == -1.24
        assert cfg.setting(2).phi_r == -0.44

    def test_ideal_overrides(self):
        cfg = LoopConfig(**ideal_overrides())
        assert cfg.detect_efficiency == 1.0
        assert cfg.occupancy == (0.0, 1.0, 0.0)
        assert math.isinf(cfg.T_c)


class TestValidation:
    @pytest.mark.parametrize("bad", [
        dict(dim=1),
        dict(n_t=10),
        dict(T_a=0.0),
        dict(detect_efficiency=1.7),
        dict(delay_samples=7),
        dict(stop_rule="sometimes"),
        dict(lambda_family="triangle"),
        dict(iterations=0),
        dict(phase_schedule=()),
        dict(n_th=-0.1),
    ])
    def test_rejected(self, bad):
        with pytest.raises(ConfigError):
            LoopConfig(**bad)


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("")
        assert parse_config(str(path)) == LoopConfig()

    def test_comments_and_values(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# target\n"
            "n_t = 3\n"
            "iterations = 500   # short run\n"
            "phase_schedule = -0.44, -1.24\n"
            "control_enabled = true\n"
        )
        cfg = parse_config(str(path))
        assert cfg.n_t == 3
        assert cfg.iterations == 500
        assert cfg.phases() == (-0.44, -1.24)

    def test_unknown_key_names_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("n_t = 3\nwibble = 1\n")
        with pytest.raises(ConfigError, match=r"bad\.cfg:2.*wibble"):
            parse_config(str(path))

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("just words\n")
        with pytest.raises(ConfigError, match=r"bad\.cfg:1"):
            parse_config(str(path))

    def test_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("n_t = 3\ndetect_efficiency = 1.7\n")
        with pytest.raises(ConfigError, match=r"bad\.cfg:2.*detect_efficiency"):
            parse_config(str(path))

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("n_t = 2\nn_t = 3\n")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(str(path))

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("iterations = soon\n")
        with pytest.raises(ConfigError, match=r"bad\.cfg:1"):
            parse_config(str(path))

    def test_config_echo_resolves_schedule(self):
        echo = config_to_dict(LoopConfig(n_t=2))
        assert echo["phase_schedule"] == [-0.44]
        assert echo["T_c"] == 65e-3


class TestDefaultPhaseSchedule:
    def test_known_targets(self):
        phi0 = 0.256 * math.pi
        assert default_phase_schedule(2, phi0) == (-0.44,)
        assert default_phase_schedule(3, phi0) == (-0.44, -1.24)
        (phi,) = default_phase_schedule(4, phi0)
        # balanced: P(e|4) = 1/2 exactly
        assert math.cos((phi + phi0 * 4.5) / 2) ** 2 == pytest.approx(0.5, abs=1e-12)
