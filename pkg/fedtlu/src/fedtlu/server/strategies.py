import logging
import math

import numpy as np

from fedtlu.common.errors import SelectionError, ShapeMismatchError
from fedtlu.common.types import (
    OUTPUT_BIAS,
    OUTPUT_WEIGHT,
    ModelState,
    Strategy,
    UpdatePlan,
)
from fedtlu.server.scoring import (
    block_scores,
    compute_layer_scores,
    group_blocks,
    select_blocks,
)


logger = logging.getLogger(__name__)

FULL_PORTION = 1.0


def blocks_per_group(portion: float, group_size: int) -> int:
    """S = max(1, round(portion * group size)), rounding half up."""
    return min(group_size, max(1, math.floor(portion * group_size + 0.5)))


def plan_update(
    strategy: Strategy | str,
    before: ModelState,
    aggre: ModelState,
    portion: float,
    round_seed: int,
) -> UpdatePlan:
    """Decide which tensors the global model takes from the aggregate.

    Full takes everything and Last only the output projection. FedTLU and
    Random always take the non-repeated part and, per group of equal-signature
    blocks, S blocks: the top-S by block score for FedTLU, a uniform draw
    without replacement from ``round_seed`` for Random.
    """
    try:
        strategy = Strategy(strategy)
    except ValueError as e:
        raise SelectionError(f'Unknown strategy: {strategy!r}') from e
    if not before.is_congruent(aggre):
        raise ShapeMismatchError('Model states are not shape-congruent.')

    layer = compute_layer_scores(before, aggre)
    blocks = block_scores(layer, before)
    groups = group_blocks(before)

    if strategy is Strategy.FULL:
        return UpdatePlan(
            strategy=strategy,
            selected_tensor_names=frozenset(before.names),
            portion=FULL_PORTION,
            selected_block_ids=before.block_ids,
            layer_scores=layer,
            block_scores=blocks,
        )
    if strategy is Strategy.LAST:
        return UpdatePlan(
            strategy=strategy,
            selected_tensor_names=frozenset({OUTPUT_WEIGHT, OUTPUT_BIAS}),
            portion=portion,
            layer_scores=layer,
            block_scores=blocks,
        )

    rng = np.random.default_rng(round_seed)
    chosen: list[int] = []
    for group in groups:
        s = blocks_per_group(portion, len(group.block_ids))
        if strategy is Strategy.FEDTLU:
            in_group = [b for b in blocks if b.group_id == group.group_id]
            chosen.extend(select_blocks(in_group, s))
        else:
            drawn = rng.choice(len(group.block_ids), size=s, replace=False)
            chosen.extend(sorted(group.block_ids[i] for i in drawn))
    chosen_set = set(chosen)
    names = [
        p.name
        for p in before.params
        if p.block_id is None or p.block_id in chosen_set
    ]
    logger.debug(f'{strategy.value} selected blocks {sorted(chosen_set)}')
    return UpdatePlan(
        strategy=strategy,
        selected_tensor_names=frozenset(names),
        portion=portion,
        selected_block_ids=sorted(chosen_set),
        layer_scores=layer,
        block_scores=blocks,
    )


def apply_update(before: ModelState, aggre: ModelState, plan: UpdatePlan) -> ModelState:
    """Selected tensors from the aggregate, every other tensor frozen."""
    if not before.is_congruent(aggre):
        raise ShapeMismatchError('Model states are not shape-congruent.')
    unknown = plan.selected_tensor_names - set(before.names)
    if unknown:
        raise SelectionError(f'Plan names unknown tensors: {sorted(unknown)}')
    before_arrays = before.arrays()
    aggre_arrays = aggre.arrays()
    return before.with_arrays(
        {
            name: (
                aggre_arrays[name] if name in plan.selected_tensor_names else before_arrays[name]
            ).copy()
            for name in before.names
        }
    )
