"""Shared fixtures: tiny architectures, a synthetic corpus and configs."""

import numpy as np
import pytest

from fedtlu.common.config import SimConfig
from fedtlu.common.types import ArchConfig, ModelState
from fedtlu.model.kernel import init_model


SENTENCES = [
    'the quick brown fox jumps over the lazy dog. ',
    'a slow river bends around the old stone mill. ',
    'every morning the baker opens the shop at six. ',
    'clouds gather over the hills before the rain. ',
]


def synthetic_text(repeats: int = 18) -> str:
    """Deterministic text with topic drift along the stream."""
    return ''.join(sentence * repeats for sentence in SENTENCES)


def random_arrays(model: ModelState, seed: int, scale: float = 0.2) -> ModelState:
    """Same structure, every entry (biases included) uniform in [-scale, scale]."""
    rng = np.random.default_rng(seed)
    return model.with_arrays(
        {p.name: rng.uniform(-scale, scale, size=p.shape) for p in model.params}
    )


@pytest.fixture
def tiny_arch():
    """Small model: V=11, d=4, C=3, h=8, R=2."""
    return ArchConfig(vocab_size=11, embed_dim=4, context_len=3, hidden_dim=8, num_blocks=2)


@pytest.fixture
def tiny_model(tiny_arch):
    return init_model(tiny_arch, seed=7)


@pytest.fixture
def four_block_arch():
    return ArchConfig(vocab_size=9, embed_dim=3, context_len=2, hidden_dim=5, num_blocks=4)


@pytest.fixture
def four_block_model(four_block_arch):
    return init_model(four_block_arch, seed=3)


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / 'corpus.txt'
    path.write_text(synthetic_text(), encoding='utf-8')
    return path


@pytest.fixture
def make_config(corpus_file, tmp_path):
    """Factory for small, fast SimConfigs over the synthetic corpus."""

    def _make(**overrides) -> SimConfig:
        values = {
            'corpus_path': corpus_file,
            'embed_dim': 4,
            'context_len': 3,
            'hidden_dim': 8,
            'num_blocks': 4,
            'num_clients': 6,
            'participation_rate': 0.5,
            'finetune_participation_rate': 0.34,
            'eta': 0.1,
            'local_epochs': 1,
            'batch_size': 8,
            'seq_len': 16,
            'rounds': 3,
            'output_dir': tmp_path / 'outputs',
        }
        values.update(overrides)
        return SimConfig(**values)

    return _make
