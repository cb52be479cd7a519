"""Unit tests for layer scores, block scores, grouping and selection."""

import itertools
import math
import random

import numpy as np
import pytest

from fedtlu.common.errors import SelectionError, ShapeMismatchError
from fedtlu.common.types import ArchConfig, BlockScore, LayerScore, ParamTensor
from fedtlu.model.kernel import init_model
from fedtlu.server.scoring import (
    block_scores,
    compute_layer_scores,
    group_blocks,
    layer_score,
    select_blocks,
)
from tests.conftest import random_arrays


def tensor(values, name='w', block_id=None) -> ParamTensor:
    values = np.asarray(values, dtype=np.float64)
    return ParamTensor(name=name, shape=values.shape, values=values, block_id=block_id)


def structure(signatures):
    """ParamTensors for blocks with the given param-count sequences."""
    params = [tensor(np.zeros(3), name='embed.weight')]
    for block_id, signature in enumerate(signatures):
        for j, count in enumerate(signature):
            params.append(tensor(np.zeros(count), name=f'blocks.{block_id}.t{j}', block_id=block_id))
    return params


def block(block_id: int, score: float, group_id: int = 0) -> BlockScore:
    return BlockScore(block_id=block_id, group_id=group_id, score=score)


@pytest.mark.unit
class TestLayerScore:
    """Test layer_score."""

    def test_no_change(self):
        """Test that a zero delta scores 0."""
        assert layer_score(tensor([1.0, 2.0]), tensor([1.0, 2.0])).score == 0.0

    def test_three_four(self):
        """Test delta [3, 4]: 5 / (sqrt(2) * 0.5)."""
        score = layer_score(tensor([0.0, 0.0]), tensor([3.0, 4.0])).score

        assert score == pytest.approx(7.071068, abs=1e-6)

    def test_plus_minus_one(self):
        """Test delta [1, -1] scores 1."""
        score = layer_score(tensor([0.0, 0.0]), tensor([1.0, -1.0])).score

        assert score == pytest.approx(1.0, abs=1e-12)

    def test_constant_delta_is_finite(self):
        """Test that a constant non-zero delta gives a large finite score."""
        score = layer_score(tensor(np.zeros(4)), tensor(np.full(4, 0.5))).score

        assert math.isfinite(score)
        assert score > 1e9

    def test_shape_mismatch(self):
        """Test that differently shaped tensors raise ShapeMismatchError."""
        with pytest.raises(ShapeMismatchError):
            layer_score(tensor([0.0, 0.0]), tensor([0.0, 0.0, 0.0]))

    def test_scale_invariance(self, tiny_model):
        """Test that scaling every delta by c > 0 keeps scores and selection."""
        before = random_arrays(tiny_model, seed=1)
        after = random_arrays(tiny_model, seed=2)
        delta = {n: after.tensor(n).values - before.tensor(n).values for n in before.names}
        scaled = before.with_arrays({n: before.tensor(n).values + 3.7 * delta[n] for n in before.names})

        base = compute_layer_scores(before, after)
        other = compute_layer_scores(before, scaled)

        for a, b in zip(base, other):
            assert b.score == pytest.approx(a.score, rel=1e-9)
        s = 1
        pick = select_blocks(block_scores(base, before), s)
        assert select_blocks(block_scores(other, before), s) == pick


@pytest.mark.unit
class TestBlockScores:
    """Test block_scores."""

    def test_single_tensor_block(self):
        """Test that a one-tensor block scores its tensor's score."""
        params = structure([(2,)])
        scores = [LayerScore(tensor_name=p.name, score=1.5, block_id=p.block_id) for p in params]

        assert block_scores(scores, params) == [block(0, 1.5)]

    def test_sum(self):
        """Test layer scores (1.0, 2.5, 0.5, 0.0) sum to 4.0."""
        params = structure([(4, 2, 4, 2)])
        values = {'blocks.0.t0': 1.0, 'blocks.0.t1': 2.5, 'blocks.0.t2': 0.5, 'blocks.0.t3': 0.0}
        scores = [LayerScore(tensor_name='embed.weight', score=9.0)] + [
            LayerScore(tensor_name=n, score=v, block_id=0) for n, v in values.items()
        ]

        assert block_scores(scores, params)[0].score == 4.0

    def test_order_independent(self, tiny_model):
        """Test that permuting the layer-score list keeps block scores."""
        scores = compute_layer_scores(tiny_model, random_arrays(tiny_model, seed=3))
        shuffled = list(reversed(scores))

        assert block_scores(shuffled, tiny_model) == block_scores(scores, tiny_model)

    def test_missing_score(self, tiny_model):
        """Test that a block tensor without a score raises SelectionError."""
        scores = compute_layer_scores(tiny_model, random_arrays(tiny_model, seed=3))
        scores = [s for s in scores if s.tensor_name != 'blocks.1.fc2.bias']

        with pytest.raises(SelectionError):
            block_scores(scores, tiny_model)


@pytest.mark.unit
class TestGroupBlocks:
    """Test group_blocks."""

    def test_default_arch(self):
        """Test that four identical blocks form one group."""
        groups = group_blocks(init_model(ArchConfig(vocab_size=5), seed=0))

        assert len(groups) == 1
        assert groups[0].block_ids == [0, 1, 2, 3]
        assert groups[0].signature == (4096, 64, 4096, 64)

    def test_partition_by_signature(self):
        """Test signatures (A, A, B, A, B) give groups {0, 1, 3} and {2, 4}."""
        a, b = (4, 2), (2, 4)

        groups = group_blocks(structure([a, a, b, a, b]))

        assert [(g.group_id, g.block_ids) for g in groups] == [(0, [0, 1, 3]), (1, [2, 4])]

    def test_order_sensitive(self):
        """Test that (4096, 64) and (64, 4096) are different signatures."""
        groups = group_blocks(structure([(4096, 64), (64, 4096)]))

        assert len(groups) == 2


@pytest.mark.unit
class TestSelectBlocks:
    """Test select_blocks."""

    def test_top_two(self):
        """Test scores {1: 1.0, 2: 3.0, 3: 2.0} with S=2 pick {2, 3}."""
        assert select_blocks([block(1, 1.0), block(2, 3.0), block(3, 2.0)], 2) == [2, 3]

    def test_tie_break(self):
        """Test that equal scores go to the lower block id."""
        assert select_blocks([block(2, 2.0), block(1, 2.0)], 1) == [1]

    def test_all(self):
        """Test that S = group size selects every block."""
        assert select_blocks([block(4, 0.1), block(0, 0.3), block(2, 0.2)], 3) == [0, 2, 4]

    @pytest.mark.parametrize('s', [0, 4])
    def test_out_of_range(self, s):
        """Test that S outside [1, group size] raises SelectionError."""
        with pytest.raises(SelectionError):
            select_blocks([block(0, 1.0), block(1, 1.0), block(2, 1.0)], s)

    def test_matches_brute_force(self):
        """Test selection against enumeration of every size-S subset."""
        rng = random.Random(1234)
        for _ in range(200):
            size = rng.randint(1, 6)
            ids = rng.sample(range(20), size)
            # integer scores make ties frequent and sums exact
            scores = [block(i, float(rng.randint(0, 4))) for i in ids]
            s = rng.randint(1, size)
            by_id = {b.block_id: b.score for b in scores}

            subsets = [tuple(sorted(c)) for c in itertools.combinations(ids, s)]
            best = max(sum(by_id[i] for i in c) for c in subsets)
            expected = min(c for c in subsets if sum(by_id[i] for i in c) == best)

            assert select_blocks(scores, s) == list(expected)
