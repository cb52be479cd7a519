"""Per-tensor change scores, block scores and block grouping.

Score(W_i) = ||dW_i|| / (sqrt(n_i) * std(dW_i)), with dW_i the change from
the pre-round global tensor to the aggregated tensor and std the population
standard deviation. The score is large when the change is both big and
consistent across the tensor's entries.
"""

import logging
import math

from collections.abc import Iterable

import numpy as np

from fedtlu.common.errors import SelectionError, ShapeMismatchError
from fedtlu.common.types import (
    BlockGroup,
    BlockScore,
    LayerScore,
    ModelState,
    ParamTensor,
)


logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12

ModelStructure = ModelState | Iterable[ParamTensor]


def _tensors(structure: ModelStructure) -> list[ParamTensor]:
    if isinstance(structure, ModelState):
        return structure.params
    return list(structure)


def layer_score(before: ParamTensor, after: ParamTensor) -> LayerScore:
    """Score one tensor's aggregated change."""
    if before.name != after.name or before.shape != after.shape:
        raise ShapeMismatchError(
            f'Cannot score {before.name!r}{before.shape} against '
            f'{after.name!r}{after.shape}'
        )
    delta = after.values - before.values
    norm = float(np.linalg.norm(delta))
    std = float(delta.std())
    score = norm / (math.sqrt(before.param_count) * max(std, STD_FLOOR))
    return LayerScore(tensor_name=before.name, score=score, block_id=before.block_id)


def compute_layer_scores(before: ModelState, aggre: ModelState) -> list[LayerScore]:
    """Layer scores for every tensor, in model order."""
    if not before.is_congruent(aggre):
        raise ShapeMismatchError('Model states are not shape-congruent.')
    return [layer_score(b, a) for b, a in zip(before.params, aggre.params)]


def block_signatures(structure: ModelStructure) -> dict[int, tuple[int, ...]]:
    """Ordered parameter-count sequence of every repeated block."""
    signatures: dict[int, list[int]] = {}
    for p in _tensors(structure):
        if p.block_id is not None:
            signatures.setdefault(p.block_id, []).append(p.param_count)
    return {block_id: tuple(sig) for block_id, sig in signatures.items()}


def group_blocks(structure: ModelStructure) -> list[BlockGroup]:
    """Partition blocks by exact equality of their signatures.

    Group ids follow the first occurrence of each signature in block order.
    """
    groups: dict[tuple[int, ...], BlockGroup] = {}
    for block_id, signature in sorted(block_signatures(structure).items()):
        if signature not in groups:
            groups[signature] = BlockGroup(
                group_id=len(groups), signature=signature, block_ids=[]
            )
        groups[signature].block_ids.append(block_id)
    return list(groups.values())


def block_scores(
    layer_scores: list[LayerScore], structure: ModelStructure
) -> list[BlockScore]:
    """Score(B_i) = sum of member layer scores; non-repeated tensors are skipped."""
    by_name = {s.tensor_name: s.score for s in layer_scores}
    group_of = {
        block_id: group.group_id
        for group in group_blocks(structure)
        for block_id in group.block_ids
    }
    totals: dict[int, float] = {}
    for p in _tensors(structure):
        if p.block_id is None:
            continue
        if p.name not in by_name:
            raise SelectionError(f'Missing layer score for {p.name!r}')
        totals[p.block_id] = totals.get(p.block_id, 0.0) + by_name[p.name]
    return [
        BlockScore(block_id=block_id, group_id=group_of[block_id], score=total)
        for block_id, total in sorted(totals.items())
    ]


def select_blocks(scores: list[BlockScore], s: int) -> list[int]:
    """Ids of the S highest-scoring blocks of one group, sorted by id.

    Ties go to the lower block id.
    """
    if not 1 <= s <= len(scores):
        raise SelectionError(f'S must be in [1, {len(scores)}], got {s}')
    ranked = sorted(scores, key=lambda b: (-b.score, b.block_id))
    return sorted(b.block_id for b in ranked[:s])
