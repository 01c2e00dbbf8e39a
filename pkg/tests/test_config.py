"""Config schema: defaults, validation, YAML round-trip."""

import pytest

from relaysim.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    emit_config,
    load_config,
)


class TestValidation:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_bad_dims_rejected(self):
        cfg = ExperimentConfig()
        cfg.system.n_q = 0
        with pytest.raises(ConfigError, match="dims"):
            cfg.validate()

    def test_learned_needs_two_relays(self):
        cfg = ExperimentConfig()
        cfg.system.n_relays = 1
        with pytest.raises(ConfigError, match="relays"):
            cfg.validate()

    def test_unknown_policy_kind(self):
        cfg = ExperimentConfig()
        cfg.policy.kind = "mystery"
        with pytest.raises(ConfigError, match="policy.kind"):
            cfg.validate()

    def test_unknown_section_and_key(self):
        with pytest.raises(ConfigError, match="unknown section"):
            config_from_dict({"wat": {}})
        with pytest.raises(ConfigError, match="unknown key system.foo"):
            config_from_dict({"system": {"foo": 1}})

    def test_paper_scale_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.system.n_t == 2 and cfg.system.n_r == 4 and cfg.system.n_q == 10
        assert cfg.phy.frame_symbols == pytest.approx(5000.0)
        assert cfg.arrival_model().mean_per_frame == pytest.approx(1.0)
        assert cfg.constraints.drop_target == pytest.approx(0.002)


class TestRoundTrip:
    def test_dict_round_trip(self):
        cfg = ExperimentConfig()
        cfg.run.seed = 99
        cfg.learning.exponents = (0.55, 0.7, 0.95)
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_yaml_round_trip(self, tmp_path):
        cfg = ExperimentConfig()
        cfg.constraints.snr_db = 7.5
        cfg.policy.kind = "baseline3"
        path = tmp_path / "cfg.yaml"
        emit_config(cfg, path)
        assert load_config(path) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_schema_version_stamped(self):
        assert config_to_dict(ExperimentConfig())["schema_version"] == 1
