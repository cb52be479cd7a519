import logging

import numpy as np

from fedtlu.common.errors import AggregationError, ShapeMismatchError
from fedtlu.common.types import ModelState, TokenShard


logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12


def client_weights(shards: list[TokenShard]) -> list[float]:
    """p_k = shard token count / total participant token count."""
    if not shards:
        raise AggregationError('At least one participant is required.')
    counts = [s.length for s in shards]
    total = sum(counts)
    return [c / total for c in counts]


def aggregate(models: list[ModelState], weights: list[float]) -> ModelState:
    """Weighted average of client models (FedAvg), W_aggre^(t+1).

    Contributions are summed in the given order, which callers keep as
    ascending client index so results are bit-reproducible.
    """
    if not models:
        raise AggregationError('Nothing to aggregate.')
    if len(models) != len(weights):
        raise AggregationError(
            f'{len(models)} models but {len(weights)} weights'
        )
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise AggregationError(f'Weights sum to {sum(weights)!r}, expected 1.')
    first = models[0]
    for other in models[1:]:
        if not first.is_congruent(other):
            raise ShapeMismatchError('Client models are not shape-congruent.')

    client_arrays = [m.arrays() for m in models]
    out: dict[str, np.ndarray] = {}
    for name in first.names:
        acc = weights[0] * client_arrays[0][name]
        for arrays, w in zip(client_arrays[1:], weights[1:]):
            acc = acc + w * arrays[name]
        out[name] = acc
    logger.debug(f'Aggregated {len(models)} client models')
    return first.with_arrays(out)
