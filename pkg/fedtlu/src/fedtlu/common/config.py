import json
import logging
import math

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from fedtlu.common.errors import ConfigError
from fedtlu.common.types import PORTION_LEVELS, ArchConfig, Strategy


logger = logging.getLogger(__name__)


class SeedConfig(BaseModel):
    """Root seeds; every other random stream is derived from these."""

    model_config = ConfigDict(extra='forbid')

    experiment: int = Field(default=0, description='Model init, sampling, batching.')
    data: int = Field(default=0, description='Client partitioning.')
    corruption: int = Field(default=0, description='Noisy-client choice and labels.')


class SimConfig(BaseModel):
    """Experiment configuration, loaded from JSON."""

    model_config = ConfigDict(extra='forbid')

    corpus_path: Path
    test_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)

    embed_dim: int = Field(default=32, ge=1)
    context_len: int = Field(default=8, ge=1)
    hidden_dim: int = Field(default=64, ge=1)
    num_blocks: int = Field(default=4, ge=1)

    num_clients: int = Field(default=20, ge=1)
    participation_rate: float = Field(default=0.10, gt=0.0, le=1.0)
    finetune_participation_rate: float = Field(default=0.05, gt=0.0, le=1.0)
    strategy: Strategy = Strategy.FEDTLU
    aggregation: Literal['fedavg', 'fedprox'] = 'fedavg'
    mu: float = Field(default=0.1, ge=0.0)
    eta: float = Field(default=0.1, ge=0.0)
    local_epochs: int = Field(default=1, ge=0)
    batch_size: int = Field(default=16, ge=1)
    seq_len: int = Field(default=32, ge=1)
    rounds: int = Field(default=60, ge=1)
    pretrain_rounds: int = Field(default=0, ge=0)
    portion: float = 0.50
    scenario: Literal['from_scratch', 'finetune', 'attack'] = 'from_scratch'
    noisy_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    plateau_metric: Literal['eval_nll', 'local_nll'] = 'eval_nll'
    seeds: SeedConfig = Field(default_factory=SeedConfig)

    output_dir: Path = Path('outputs')
    score_dump: bool = False
    initial_checkpoint: Path | None = None
    save_checkpoint: bool = False
    max_workers: int = Field(default=1, ge=1)

    @model_validator(mode='after')
    def check_combination(self) -> 'SimConfig':
        if self.portion not in PORTION_LEVELS:
            raise ValueError(
                f'portion must be one of {PORTION_LEVELS}, got {self.portion}'
            )
        if self.seq_len < self.context_len:
            raise ValueError(
                f'seq_len ({self.seq_len}) must be >= context_len ({self.context_len})'
            )
        if self.scenario == 'attack' and self.noisy_fraction <= 0.0:
            raise ValueError('attack scenario needs noisy_fraction > 0')
        if self.scenario != 'attack' and self.noisy_fraction > 0.0:
            raise ValueError('noisy_fraction is only valid with the attack scenario')
        if self.scenario == 'from_scratch' and self.pretrain_rounds:
            raise ValueError('pretrain_rounds is only valid for finetune/attack')
        return self

    @property
    def mu_effective(self) -> float:
        return self.mu if self.aggregation == 'fedprox' else 0.0

    def num_participants(self, rate: float) -> int:
        return min(self.num_clients, max(1, math.ceil(rate * self.num_clients)))

    def arch_config(self, vocab_size: int) -> ArchConfig:
        return ArchConfig(
            vocab_size=vocab_size,
            embed_dim=self.embed_dim,
            context_len=self.context_len,
            hidden_dim=self.hidden_dim,
            num_blocks=self.num_blocks,
        )


def load_config(path: str | Path) -> SimConfig:
    """Load a SimConfig from JSON; relative paths resolve against the file."""
    path = Path(path)
    try:
        with path.open('r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file '{path}' not found.") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file '{path}' contains invalid JSON: {e}") from e
    except OSError as e:
        raise ConfigError(f"Config file '{path}' could not be read: {e}") from e

    try:
        config = SimConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config '{path}': {e}") from e

    base = path.parent
    updates = {}
    if not config.corpus_path.is_absolute():
        updates['corpus_path'] = base / config.corpus_path
    if config.initial_checkpoint and not config.initial_checkpoint.is_absolute():
        updates['initial_checkpoint'] = base / config.initial_checkpoint
    if updates:
        config = config.model_copy(update=updates)
    logger.info(f'Loaded config {path} (scenario={config.scenario})')
    return config
