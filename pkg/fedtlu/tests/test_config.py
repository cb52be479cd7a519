"""Unit tests for configuration loading and shared utilities."""

import json

from pathlib import Path

import pytest

from pydantic import ValidationError

from fedtlu.common.config import SimConfig, load_config
from fedtlu.common.errors import ConfigError
from fedtlu.common.utils import OUTPUT_DIR_ENV, derive_seed, make_rng, resolve_output_dir


def write_config(path, **values):
    path.write_text(json.dumps(values), encoding='utf-8')
    return path


@pytest.mark.unit
class TestLoadConfig:
    """Test load_config."""

    def test_defaults_and_relative_paths(self, tmp_path):
        """Test defaults and corpus paths resolved against the config file."""
        (tmp_path / 'configs').mkdir()
        path = write_config(tmp_path / 'configs' / 'c.json', corpus_path='../data/corpus.txt')

        config = load_config(path)

        assert config.corpus_path == tmp_path / 'configs' / '../data/corpus.txt'
        assert (config.num_clients, config.participation_rate, config.portion) == (20, 0.10, 0.50)
        assert config.strategy.value == 'fedtlu'
        assert config.mu_effective == 0.0

    def test_absolute_path_kept(self, tmp_path):
        """Test that absolute paths are left alone."""
        corpus = tmp_path / 'corpus.txt'
        config = load_config(write_config(tmp_path / 'c.json', corpus_path=str(corpus)))

        assert config.corpus_path == corpus

    def test_missing_file(self, tmp_path):
        """Test that a missing config raises ConfigError."""
        with pytest.raises(ConfigError, match='not found'):
            load_config(tmp_path / 'absent.json')

    def test_invalid_json(self, tmp_path):
        """Test that malformed JSON raises ConfigError."""
        path = tmp_path / 'bad.json'
        path.write_text('{"corpus_path": ', encoding='utf-8')

        with pytest.raises(ConfigError, match='invalid JSON'):
            load_config(path)

    @pytest.mark.parametrize(
        'values',
        [
            {'portion': 0.3},
            {'scenario': 'attack'},
            {'noisy_fraction': 0.1},
            {'pretrain_rounds': 5},
            {'seq_len': 4, 'context_len': 8},
            {'strategy': 'greedy'},
            {'unknown_key': 1},
        ],
    )
    def test_invalid_values(self, tmp_path, values):
        """Test that invalid combinations raise ConfigError."""
        path = write_config(tmp_path / 'c.json', corpus_path='x.txt', **values)

        with pytest.raises(ConfigError):
            load_config(path)

    def test_shipped_configs_load(self):
        """Test that the shipped experiment configs validate."""
        configs = sorted((Path(__file__).parent.parent / 'configs').glob('*.json'))

        assert configs
        for path in configs:
            config = load_config(path)
            assert config.corpus_path.name == 'desk_corpus.txt'
            assert config.corpus_path.is_file()


@pytest.mark.unit
class TestSimConfig:
    """Test SimConfig helpers."""

    def test_num_participants(self, tmp_path):
        """Test ceil(rate * K) clamped to [1, K]."""
        config = SimConfig(corpus_path=tmp_path, num_clients=20)

        assert config.num_participants(0.10) == 2
        assert config.num_participants(0.05) == 1
        assert config.num_participants(0.01) == 1
        assert config.num_participants(1.0) == 20

    def test_fedprox_mu(self, tmp_path):
        """Test that mu applies only to FedProx."""
        assert SimConfig(corpus_path=tmp_path, aggregation='fedprox', mu=0.1).mu_effective == 0.1

    def test_attack_valid(self, tmp_path):
        """Test a valid attack configuration."""
        config = SimConfig(corpus_path=tmp_path, scenario='attack', noisy_fraction=0.1, pretrain_rounds=3)

        assert config.noisy_fraction == 0.1

    def test_direct_validation(self, tmp_path):
        """Test that direct construction raises pydantic errors."""
        with pytest.raises(ValidationError):
            SimConfig(corpus_path=tmp_path, num_clients=0)


@pytest.mark.unit
class TestUtils:
    """Test seed derivation and output directory resolution."""

    def test_derive_seed_stable(self):
        """Test that equal tags give equal seeds and different tags differ."""
        assert derive_seed(0, 'sample', 3) == derive_seed(0, 'sample', 3)
        assert derive_seed(0, 'sample', 3) != derive_seed(0, 'sample', 4)
        assert derive_seed(0, 'sample', 3) != derive_seed(0, 'local', 3)
        assert 0 <= derive_seed('x') < 2**63

    def test_make_rng(self):
        """Test that derived generators reproduce their streams."""
        assert make_rng(1, 'a').integers(0, 1000, 5).tolist() == make_rng(1, 'a').integers(0, 1000, 5).tolist()

    def test_output_dir_precedence(self, tmp_path, monkeypatch):
        """Test --out over the environment over the config value."""
        monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
        assert resolve_output_dir(None, 'cfg') == Path('cfg')

        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / 'env'))
        assert resolve_output_dir(None, 'cfg') == tmp_path / 'env'
        assert resolve_output_dir(tmp_path / 'cli', 'cfg') == tmp_path / 'cli'
