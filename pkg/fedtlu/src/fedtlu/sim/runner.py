"""Round loop, scenario presets and strategy comparison."""

import logging
import math

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal

import numpy as np

from pydantic import BaseModel, ConfigDict, Field

from fedtlu.common.config import SimConfig
from fedtlu.common.errors import ConfigError
from fedtlu.common.types import (
    ModelState,
    PortionScheduleState,
    Strategy,
    TokenShard,
)
from fedtlu.common.utils import derive_seed, make_rng
from fedtlu.data.pipeline import (
    halve_shard,
    load_corpus,
    partition,
    shard_bounds,
    shuffle_labels,
)
from fedtlu.model.checkpoint import load_checkpoint
from fedtlu.model.kernel import evaluate_nll, init_model, local_update
from fedtlu.server.aggregation import aggregate, client_weights
from fedtlu.server.schedule import advance_portion
from fedtlu.server.strategies import apply_update, plan_update
from fedtlu.sim.report import average_minima, summarize, write_json, write_report


logger = logging.getLogger(__name__)

Phase = Literal['pretrain', 'train', 'finetune']


class ScoreRow(BaseModel):
    """One line of the per-round score dump."""

    round: int
    tensor_name: str
    score: float
    block_id: int | None
    group_id: int | None
    selected: bool


class RoundRecord(BaseModel):
    """Metrics of one global round."""

    round: int
    strategy: Strategy
    portion: float
    global_ppl: float = Field(ge=1.0)
    local_ppl: float = Field(ge=1.0)
    selected_block_ids: list[int]
    num_selected_tensors: int
    participants: list[int]
    phase: Phase = 'train'
    global_nll: float = 0.0
    local_nll: float = 0.0
    score_rows: list[ScoreRow] = Field(default_factory=list, exclude=True)


class ExperimentResult(BaseModel):
    """Records plus the artifacts a run leaves behind."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    records: list[RoundRecord]
    shards: list[TokenShard]
    final_model: ModelState


def sample_participants(config: SimConfig, rate: float, round_index: int) -> list[int]:
    """ceil(rate * K) distinct clients, uniformly, from the round's stream."""
    count = config.num_participants(rate)
    rng = make_rng(config.seeds.experiment, 'sample', round_index)
    return sorted(int(c) for c in rng.choice(config.num_clients, size=count, replace=False))


def _score_rows(round_index: int, plan) -> list[ScoreRow]:
    group_of = {b.block_id: b.group_id for b in plan.block_scores}
    return [
        ScoreRow(
            round=round_index,
            tensor_name=s.tensor_name,
            score=s.score,
            block_id=s.block_id,
            group_id=group_of.get(s.block_id) if s.block_id is not None else None,
            selected=s.tensor_name in plan.selected_tensor_names,
        )
        for s in plan.layer_scores
    ]


def run_round(
    global_model: ModelState,
    shards: list[TokenShard],
    config: SimConfig,
    round_index: int,
    *,
    test_tokens: np.ndarray,
    strategy: Strategy | str | None = None,
    portion: float | None = None,
    participation_rate: float | None = None,
    phase: Phase = 'train',
) -> tuple[ModelState, RoundRecord]:
    """One global round: sample, train locally, aggregate, select, apply, evaluate."""
    strategy = Strategy(strategy or config.strategy)
    portion = config.portion if portion is None else portion
    rate = participation_rate or config.participation_rate
    participants = sample_participants(config, rate, round_index)

    def train(client_id: int) -> ModelState:
        return local_update(
            global_model,
            shards[client_id],
            epochs=config.local_epochs,
            eta=config.eta,
            batch_size=config.batch_size,
            seq_len=config.seq_len,
            mu=config.mu_effective,
            seed=derive_seed(config.seeds.experiment, 'local', round_index, client_id),
        )

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            local_models = list(pool.map(train, participants))
    else:
        local_models = [train(c) for c in participants]

    weights = client_weights([shards[c] for c in participants])
    aggre = aggregate(local_models, weights)
    plan = plan_update(
        strategy,
        global_model,
        aggre,
        portion,
        round_seed=derive_seed(config.seeds.experiment, 'random-blocks', round_index),
    )
    new_global = apply_update(global_model, aggre, plan)

    global_nll = evaluate_nll(new_global, test_tokens, config.seq_len)
    local_nlls = [evaluate_nll(m, test_tokens, config.seq_len) for m in local_models]
    record = RoundRecord(
        round=round_index,
        strategy=strategy,
        portion=plan.portion,
        global_ppl=math.exp(global_nll),
        local_ppl=float(np.mean([math.exp(v) for v in local_nlls])),
        selected_block_ids=plan.selected_block_ids,
        num_selected_tensors=len(plan.selected_tensor_names),
        participants=participants,
        phase=phase,
        global_nll=global_nll,
        local_nll=float(np.mean(local_nlls)),
        score_rows=_score_rows(round_index, plan) if config.score_dump else [],
    )
    logger.info(
        f'[{phase}] round {round_index} {strategy.value} portion={plan.portion:.2f} '
        f'global_ppl={record.global_ppl:.4f} local_ppl={record.local_ppl:.4f} '
        f'blocks={plan.selected_block_ids}'
    )
    return new_global, record


def noisy_clients(config: SimConfig) -> list[int]:
    """floor(noisy_fraction * K) client ids drawn by the corruption seed."""
    count = math.floor(round(config.noisy_fraction * config.num_clients, 9))
    if count == 0:
        logger.warning(
            f'noisy_fraction={config.noisy_fraction} with K={config.num_clients} '
            'corrupts no client'
        )
        return []
    rng = make_rng(config.seeds.corruption, 'noisy-clients')
    return sorted(int(c) for c in rng.choice(config.num_clients, size=count, replace=False))


def _initial_model(config: SimConfig, vocab_size: int) -> ModelState:
    arch = config.arch_config(vocab_size)
    if config.initial_checkpoint is None:
        return init_model(arch, seed=derive_seed(config.seeds.experiment, 'init'))
    model = load_checkpoint(config.initial_checkpoint)
    if model.arch != arch:
        raise ConfigError(
            f'Checkpoint architecture {model.arch} does not match config {arch}'
        )
    return model


def check_halving(config: SimConfig, num_train_tokens: int) -> None:
    """Reject finetune/attack setups whose shortest shard cannot be halved.

    Halving needs 2(C+1) tokens; label shuffling after it needs 2(C+2).
    """
    if config.scenario == 'from_scratch':
        return
    c = config.context_len
    needed = 2 * (c + 2) if config.scenario == 'attack' else 2 * (c + 1)
    min_tokens, _ = shard_bounds(num_train_tokens, config.num_clients, c)
    if min_tokens < needed:
        raise ConfigError(
            f'{config.scenario} with K={config.num_clients} and C={c} allows shards '
            f'of {min_tokens} tokens over {num_train_tokens} training tokens; '
            f'halving needs at least {needed}'
        )


def execute_experiment(config: SimConfig) -> ExperimentResult:
    """Run a full scenario and keep the shards and final model."""
    vocab, split = load_corpus(config.corpus_path, config.test_fraction)
    c = config.context_len
    check_halving(config, len(split.train_tokens))
    shards = partition(split.train_tokens, config.num_clients, config.seeds.data, c)
    model = _initial_model(config, vocab.size)
    logger.info(
        f'Starting {config.scenario} run: strategy={config.strategy.value} '
        f'K={config.num_clients} rounds={config.rounds} '
        f'params={model.num_params}'
    )

    records: list[RoundRecord] = []
    round_index = 0

    def step(**kwargs) -> RoundRecord:
        nonlocal model, round_index
        model, record = run_round(
            model, shards, config, round_index, test_tokens=split.test_tokens, **kwargs
        )
        records.append(record)
        round_index += 1
        return record

    if config.scenario == 'from_scratch':
        for _ in range(config.rounds):
            step(portion=config.portion, participation_rate=config.participation_rate)
        return ExperimentResult(records=records, shards=shards, final_model=model)

    for _ in range(config.pretrain_rounds):
        step(
            strategy=Strategy.FULL,
            participation_rate=config.participation_rate,
            phase='pretrain',
        )
    shards = [halve_shard(s, c) for s in shards]
    if config.scenario == 'attack':
        noisy = set(noisy_clients(config))
        shards = [
            shuffle_labels(s, derive_seed(config.seeds.corruption, 'labels', s.client_id), c)
            if s.client_id in noisy
            else s
            for s in shards
        ]
        logger.info(f'Shuffled labels of clients {sorted(noisy)}')

    schedule = PortionScheduleState.initial()
    for _ in range(config.rounds):
        record = step(
            portion=schedule.current_portion,
            participation_rate=config.finetune_participation_rate,
            phase='finetune',
        )
        metric = record.global_nll if config.plateau_metric == 'eval_nll' else record.local_nll
        schedule = advance_portion(schedule, metric)
    return ExperimentResult(records=records, shards=shards, final_model=model)


def run_experiment(config: SimConfig) -> list[RoundRecord]:
    """Round records of a full scenario run."""
    return execute_experiment(config).records


def seed_config(config: SimConfig, run: int, vary_data_seed: bool = False) -> SimConfig:
    """Config of the ``run``-th repetition: a new experiment seed, same data."""
    seeds = config.seeds.model_copy(
        update={
            'experiment': config.seeds.experiment + run,
            'data': config.seeds.data + run if vary_data_seed else config.seeds.data,
        }
    )
    return config.model_copy(update={'seeds': seeds})


def compare(
    config: SimConfig,
    strategies: list[Strategy],
    num_seeds: int,
    out_dir: Path,
    vary_data_seed: bool = False,
) -> dict:
    """Every strategy under every seed; one CSV per run plus summary.json."""
    out_dir = Path(out_dir)
    summary: dict[str, dict] = {}
    for strategy in strategies:
        runs = []
        for run in range(num_seeds):
            run_config = seed_config(config, run, vary_data_seed).model_copy(
                update={'strategy': strategy}
            )
            records = run_experiment(run_config)
            seed = run_config.seeds.experiment
            write_report(records, out_dir / f'{strategy.value}_seed{seed}.csv')
            runs.append(summarize(records, seed=seed))
        summary[strategy.value] = average_minima(runs).model_dump()
    write_json(summary, out_dir / 'summary.json')
    return summary
