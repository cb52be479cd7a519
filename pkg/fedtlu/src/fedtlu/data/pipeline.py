"""Corpus ingestion, client partitioning, shard transforms and batching.

Tokens are characters; ids index the sorted set of distinct characters in
the corpus. Every shard is a contiguous, non-overlapping slice of the
training stream, so contiguous assignment alone gives clients different
content (the non-IID drift of a long text).

A training example at shard position ``j`` (``C <= j < n``) pairs the
context ``tokens[j-C:j]`` with the target ``tokens[j]``. A shuffled-label
shard keeps its contexts and replaces the targets with a permutation of
them.
"""

import json
import logging
import math

from pathlib import Path

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view
from numpy.random import default_rng

from fedtlu.common.errors import DataError
from fedtlu.common.types import Batch, CorpusSplit, TokenShard, Vocab


logger = logging.getLogger(__name__)

DEFAULT_CONTEXT_LEN = 8


def load_corpus(path: str | Path, test_fraction: float) -> tuple[Vocab, CorpusSplit]:
    """Read a UTF-8 text file and split it into train and test streams.

    Args:
        path: Plain UTF-8 text file.
        test_fraction: Fraction in (0, 1); the last ceil(test_fraction * N)
            tokens form the test split.

    Returns:
        The sorted character vocabulary and the train/test split.

    Raises:
        DataError: If the file is unreadable or empty, or the split would
            leave no training tokens.
    """
    path = Path(path)
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f'test_fraction must be in (0, 1), got {test_fraction}')
    try:
        text = path.read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"Corpus '{path}' could not be read: {e}") from e
    if not text:
        raise DataError(f"Corpus '{path}' is empty.")

    vocab = Vocab(symbols=tuple(sorted(set(text))))
    tokens = vocab.encode(text)
    n = len(tokens)
    # round() strips float noise such as 0.1 * 30 = 3.0000000000000004
    n_test = math.ceil(round(test_fraction * n, 9))
    if n_test >= n:
        raise DataError(
            f'Corpus of {n} tokens is too small for test_fraction={test_fraction}'
        )
    split = CorpusSplit(train_tokens=tokens[: n - n_test], test_tokens=tokens[n - n_test :])
    logger.info(
        f'Loaded corpus {path}: {n} tokens, vocab {vocab.size}, '
        f'train {n - n_test}, test {n_test}'
    )
    return vocab, split


def shard_bounds(num_tokens: int, num_clients: int, context_len: int) -> tuple[int, int]:
    """(min, max) shard length: max = floor(N / K), min = max(floor(max / 2), C + 1)."""
    max_tokens = num_tokens // num_clients
    return max(max_tokens // 2, context_len + 1), max_tokens


def partition(
    train_tokens: np.ndarray,
    num_clients: int,
    seed: int,
    context_len: int = DEFAULT_CONTEXT_LEN,
) -> list[TokenShard]:
    """Split the training stream into non-overlapping client shards.

    Each client gets between min and max tokens, max = floor(N / K) and
    min = max(floor(max / 2), C + 1), drawn uniformly from the seeded PRNG.
    Segments are assigned contiguously from offset 0 in client order.
    """
    n = len(train_tokens)
    if num_clients < 1:
        raise DataError(f'num_clients must be >= 1, got {num_clients}')
    if n < num_clients * (context_len + 1):
        raise DataError(
            f'{n} training tokens cannot give {num_clients} clients '
            f'{context_len + 1} tokens each'
        )
    min_tokens, max_tokens = shard_bounds(n, num_clients, context_len)

    rng = default_rng(seed)
    counts = rng.integers(min_tokens, max_tokens, size=num_clients, endpoint=True)

    shards = []
    offset = 0
    for client_id, count in enumerate(counts):
        count = int(count)
        shards.append(
            TokenShard(
                client_id=client_id,
                start=offset,
                tokens=np.array(train_tokens[offset : offset + count], dtype=np.int64),
            )
        )
        offset += count
    logger.info(
        f'Partitioned {n} tokens over {num_clients} clients '
        f'(min {min_tokens}, max {max_tokens}, used {offset})'
    )
    return shards


def halve_shard(shard: TokenShard, context_len: int = DEFAULT_CONTEXT_LEN) -> TokenShard:
    """Keep the first floor(n / 2) tokens of a shard."""
    if shard.length < 2 * (context_len + 1):
        raise DataError(
            f'Shard {shard.client_id} of {shard.length} tokens is too short to halve'
        )
    new_len = shard.length // 2
    targets = None
    if shard.targets is not None:
        targets = shard.targets[: new_len - context_len].copy()
    return TokenShard(
        client_id=shard.client_id,
        start=shard.start,
        tokens=shard.tokens[:new_len].copy(),
        corrupted=shard.corrupted,
        targets=targets,
    )


def shuffle_labels(
    shard: TokenShard, seed: int, context_len: int = DEFAULT_CONTEXT_LEN
) -> TokenShard:
    """Pair every context with a target drawn from a seeded permutation.

    The multiset of targets and the shard length are unchanged.
    """
    if shard.length < context_len + 2:
        raise DataError(
            f'Shard {shard.client_id} of {shard.length} tokens is too short '
            'to shuffle labels'
        )
    rng = default_rng(seed)
    clean = shard.example_targets(context_len)
    perm = rng.permutation(len(clean))
    return TokenShard(
        client_id=shard.client_id,
        start=shard.start,
        tokens=shard.tokens.copy(),
        corrupted=True,
        targets=clean[perm],
    )


def examples(shard: TokenShard, context_len: int = DEFAULT_CONTEXT_LEN) -> Batch:
    """All (context, target) pairs of a shard in stream order."""
    if shard.length < context_len + 1:
        raise DataError(
            f'Shard {shard.client_id} of {shard.length} tokens is shorter than '
            f'one example (C={context_len})'
        )
    contexts = sliding_window_view(shard.tokens, context_len)[: shard.length - context_len]
    return Batch(contexts=contexts, targets=shard.example_targets(context_len))


def batches(
    shard: TokenShard,
    seq_len: int,
    batch_size: int,
    seed: int,
    context_len: int = DEFAULT_CONTEXT_LEN,
) -> list[Batch]:
    """Shuffled mini-batches over every example of a shard.

    Contexts reach back across seq_len window boundaries, so the examples
    are all shard_length - C pairs of the shard and seq_len does not change
    them; it is validated here and sets the evaluation chunking. The seeded
    PRNG permutes the examples, which are then grouped into batches of
    batch_size. The last batch may be smaller.
    """
    if seq_len < 1 or batch_size < 1:
        raise DataError(
            f'seq_len and batch_size must be >= 1, got {seq_len}, {batch_size}'
        )
    full = examples(shard, context_len)
    order = default_rng(seed).permutation(full.size)
    return [
        Batch(contexts=full.contexts[idx], targets=full.targets[idx])
        for idx in (
            order[start : start + batch_size]
            for start in range(0, full.size, batch_size)
        )
    ]


def export_shard_manifest(shards: list[TokenShard], path: str | Path) -> Path:
    """Write the audit manifest (client_id, start, length, corrupted)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = [
        {
            'client_id': s.client_id,
            'start': s.start,
            'length': s.length,
            'corrupted': s.corrupted,
        }
        for s in shards
    ]
    with path.open('w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    logger.debug(f'Wrote shard manifest {path}')
    return path
