"""Tests for configuration parsing and echo."""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from src.config import PipelineConfig, config_echo, config_from_echo, echo_lines, parse_config
from src.errors import ConfigError


class TestParseConfig:

    def test_defaults(self):
        config = parse_config()
        assert config.hidden == 200 and config.latent == 200 and config.embed == 150
        assert config.lr == 0.001 and config.epochs == 10 and config.batch_size == 16
        assert config.k == 100 and config.b == 25 and config.target == 0.55
        assert config.max_steps == 500
        assert config.dtype == np.float64

    def test_precedence(self, tmp_path):
        path = tmp_path / 'run.cfg'
        path.write_text("# comment\nepochs=3\nseed=1\nhidden = 8\n", encoding='utf-8')
        config = parse_config(str(path), ['epochs=4', 'seed=2'], seed=5)
        assert config.epochs == 4
        assert config.hidden == 8
        assert config.seed == 5

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="'depth'"):
            parse_config(overrides=['depth=3'])

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="'lr'"):
            parse_config(overrides=['lr=fast'])

    def test_constraint_violation(self):
        with pytest.raises(ConfigError, match="'n_filters'"):
            parse_config(overrides=['n_filters=0'])
        with pytest.raises(ConfigError, match="'action_high'"):
            parse_config(overrides=['action_low=1.2', 'action_high=1.0'])

    def test_only_bidirectional(self):
        with pytest.raises(ConfigError, match="'bidirectional'"):
            parse_config(overrides=['bidirectional=false'])

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            parse_config(overrides=['epochs'])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(str(tmp_path / 'absent.cfg'))

    def test_single_precision(self):
        assert parse_config(overrides=['precision=32']).dtype == np.float32

    def test_source_bias(self):
        assert PipelineConfig().bias == 0.85
        assert parse_config(overrides=['bias=0']).bias == 0.0
        with pytest.raises(ConfigError):
            parse_config(overrides=['bias=1.5'])

    def test_budgets(self):
        assert parse_config(overrides=['budgets=10,20']).budget_list == [10, 20]
        with pytest.raises(ConfigError):
            parse_config(overrides=['budgets=ten'])


class TestEcho:

    def test_every_key_once(self):
        lines = echo_lines(PipelineConfig())
        keys = [line.split('=', 1)[0] for line in lines]
        assert len(keys) == len(set(keys))
        assert 'seed' in keys and 'target' in keys

    def test_round_trip(self):
        config = parse_config(overrides=['hidden=12', 'mix=0.25', 'out_dir=elsewhere'])
        echo = config_echo(config)
        echo['phase'] = '2'
        assert config_from_echo(echo) == config

    def test_data_path_default(self):
        assert str(PipelineConfig(out_dir='run').data_path) == str(Path('run') / 'data')


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
