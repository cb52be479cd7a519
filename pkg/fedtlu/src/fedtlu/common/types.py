import math

from enum import Enum
from typing import Any, NamedTuple

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


PORTION_LEVELS = (0.75, 0.50, 0.25)
# Names of the non-repeated tensors, in model order.
EMBED_WEIGHT = 'embed.weight'
INPUT_WEIGHT = 'input.weight'
INPUT_BIAS = 'input.bias'
OUTPUT_WEIGHT = 'output.weight'
OUTPUT_BIAS = 'output.bias'
BLOCK_TENSORS = ('fc1.weight', 'fc1.bias', 'fc2.weight', 'fc2.bias')


class Strategy(str, Enum):
    """Server-side update strategies."""

    FULL = 'full'
    FEDTLU = 'fedtlu'
    RANDOM = 'random'
    LAST = 'last'


def block_tensor_name(block_id: int, suffix: str) -> str:
    return f'blocks.{block_id}.{suffix}'


# Keyed like ModelState.params; values are d(mean NLL)/d(param).
Gradients = dict[str, np.ndarray]


class Batch(NamedTuple):
    """Training examples: contexts (B, C) and next-token targets (B,)."""

    contexts: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_pairs(cls, pairs) -> 'Batch':
        """Build from (context window, target token) pairs."""
        pairs = list(pairs)
        contexts = np.array([list(ctx) for ctx, _ in pairs], dtype=np.int64)
        targets = np.array([t for _, t in pairs], dtype=np.int64)
        return cls(contexts=contexts, targets=targets)

    @property
    def size(self) -> int:
        return int(self.targets.shape[0])

    def pairs(self) -> list[tuple[tuple[int, ...], int]]:
        return [
            (tuple(int(t) for t in ctx), int(tgt))
            for ctx, tgt in zip(self.contexts, self.targets)
        ]


class ArchConfig(BaseModel):
    """Architecture of the windowed next-token model."""

    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(description='Vocabulary size V.')
    embed_dim: int = Field(default=32, description='Embedding width d.')
    context_len: int = Field(default=8, description='Context window C.')
    hidden_dim: int = Field(default=64, description='Hidden width h.')
    num_blocks: int = Field(default=4, description='Repeated blocks R.')

    @field_validator(
        'vocab_size', 'embed_dim', 'context_len', 'hidden_dim', 'num_blocks'
    )
    @classmethod
    def positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f'architecture dimensions must be >= 1, got {value}')
        return value

    def is_valid(self) -> bool:
        return all(
            isinstance(v, int) and v >= 1
            for v in (
                self.vocab_size,
                self.embed_dim,
                self.context_len,
                self.hidden_dim,
                self.num_blocks,
            )
        )

    def layout(self) -> list[tuple[str, tuple[int, ...], int | None]]:
        """Ordered (name, shape, block_id) triples of every parameter tensor."""
        v, d, c, h = (
            self.vocab_size,
            self.embed_dim,
            self.context_len,
            self.hidden_dim,
        )
        entries: list[tuple[str, tuple[int, ...], int | None]] = [
            (EMBED_WEIGHT, (v, d), None),
            (INPUT_WEIGHT, (c * d, h), None),
            (INPUT_BIAS, (h,), None),
        ]
        block_shapes = ((h, h), (h,), (h, h), (h,))
        for block_id in range(self.num_blocks):
            for suffix, shape in zip(BLOCK_TENSORS, block_shapes):
                entries.append(
                    (block_tensor_name(block_id, suffix), shape, block_id)
                )
        entries.append((OUTPUT_WEIGHT, (h, v), None))
        entries.append((OUTPUT_BIAS, (v,), None))
        return entries


class ParamTensor(BaseModel):
    """One named parameter array, the unit of layer scoring."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    shape: tuple[int, ...]
    values: np.ndarray = Field(description='float64 array, row-major.')
    block_id: int | None = Field(
        default=None, description='Repeated block index, None if non-repeated.'
    )

    @model_validator(mode='before')
    @classmethod
    def coerce_values(cls, data: Any) -> Any:
        if isinstance(data, dict) and 'values' in data and 'shape' in data:
            shape = tuple(int(s) for s in data['shape'])
            values = np.asarray(data['values'], dtype=np.float64)
            if values.size != math.prod(shape):
                raise ValueError(
                    f"tensor {data.get('name')!r}: {values.size} values for shape {shape}"
                )
            data = {**data, 'shape': shape, 'values': values.reshape(shape)}
        return data

    @field_validator('shape')
    @classmethod
    def positive_shape(cls, shape: tuple[int, ...]) -> tuple[int, ...]:
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f'shape must be non-empty and positive, got {shape}')
        return shape

    @property
    def param_count(self) -> int:
        return math.prod(self.shape)

    def with_values(self, values: np.ndarray) -> 'ParamTensor':
        return ParamTensor(
            name=self.name,
            shape=self.shape,
            values=values,
            block_id=self.block_id,
        )


class ModelState(BaseModel):
    """Ordered parameter tensors plus the architecture they realize."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    arch: ArchConfig
    params: list[ParamTensor]

    @model_validator(mode='after')
    def matches_layout(self) -> 'ModelState':
        expected = self.arch.layout()
        if len(expected) != len(self.params):
            raise ValueError(
                f'expected {len(expected)} tensors, got {len(self.params)}'
            )
        for (name, shape, block_id), tensor in zip(expected, self.params):
            if (tensor.name, tensor.shape, tensor.block_id) != (
                name,
                shape,
                block_id,
            ):
                raise ValueError(
                    f'tensor {tensor.name!r} {tensor.shape} does not match '
                    f'layout entry {name!r} {shape}'
                )
        return self

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def block_ids(self) -> list[int]:
        return sorted({p.block_id for p in self.params if p.block_id is not None})

    @property
    def num_params(self) -> int:
        return sum(p.param_count for p in self.params)

    def tensor(self, name: str) -> ParamTensor:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.values for p in self.params}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> 'ModelState':
        """New state with the same structure and the given values."""
        return ModelState(
            arch=self.arch,
            params=[p.with_values(arrays[p.name]) for p in self.params],
        )

    def copy(self) -> 'ModelState':
        return self.with_arrays({k: v.copy() for k, v in self.arrays().items()})

    def is_congruent(self, other: 'ModelState') -> bool:
        return len(self.params) == len(other.params) and all(
            a.name == b.name and a.shape == b.shape
            for a, b in zip(self.params, other.params)
        )


class Vocab(BaseModel):
    """Character-level vocabulary."""

    symbols: tuple[str, ...]

    @field_validator('symbols')
    @classmethod
    def distinct(cls, symbols: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(symbols)) != len(symbols):
            raise ValueError('vocabulary symbols must be distinct')
        return symbols

    @property
    def size(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> np.ndarray:
        lookup = {s: i for i, s in enumerate(self.symbols)}
        return np.fromiter((lookup[ch] for ch in text), dtype=np.int64, count=len(text))

    def decode(self, ids) -> str:
        return ''.join(self.symbols[int(i)] for i in ids)


class CorpusSplit(BaseModel):
    """Train / held-out test token streams."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    train_tokens: np.ndarray
    test_tokens: np.ndarray


class TokenShard(BaseModel):
    """One client's contiguous slice of the training stream."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    client_id: int
    start: int = Field(default=0, description='Offset in the training stream.')
    tokens: np.ndarray
    corrupted: bool = False
    targets: np.ndarray | None = Field(
        default=None,
        description='Target override for positions C..n-1 (shuffled labels).',
    )

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])

    def example_targets(self, context_len: int) -> np.ndarray:
        if self.targets is not None:
            return self.targets
        return self.tokens[context_len:]


class LayerScore(BaseModel):
    """Score(W_i) of one named tensor."""

    tensor_name: str
    score: float = Field(ge=0.0)
    block_id: int | None = None


class BlockScore(BaseModel):
    """Score(B_i): sum of member layer scores."""

    block_id: int
    group_id: int
    score: float = Field(ge=0.0)


class BlockGroup(BaseModel):
    """Blocks sharing one ordered parameter-count signature."""

    group_id: int
    signature: tuple[int, ...]
    block_ids: list[int]


class UpdatePlan(BaseModel):
    """Which tensors the global model takes from the aggregate this round."""

    strategy: Strategy
    selected_tensor_names: frozenset[str]
    portion: float
    selected_block_ids: list[int] = Field(default_factory=list)
    layer_scores: list[LayerScore] = Field(default_factory=list)
    block_scores: list[BlockScore] = Field(default_factory=list)


class PortionScheduleState(BaseModel):
    """Plateau-driven portion decay state."""

    model_config = ConfigDict(frozen=True)

    current_portion: float = PORTION_LEVELS[0]
    recent_metrics: tuple[float, ...] = ()
    rounds_since_improvement: int = 0
    best_metric: float = math.inf

    @field_validator('current_portion')
    @classmethod
    def known_level(cls, value: float) -> float:
        if value not in PORTION_LEVELS:
            raise ValueError(f'portion must be one of {PORTION_LEVELS}, got {value}')
        return value

    @classmethod
    def initial(cls) -> 'PortionScheduleState':
        return cls()
