import json
import logging

from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from pydantic import BaseModel

from fedtlu.common.errors import ReportError


if TYPE_CHECKING:
    from fedtlu.sim.runner import RoundRecord


logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    'round',
    'strategy',
    'portion',
    'global_ppl',
    'local_ppl',
    'num_selected_tensors',
    'selected_block_ids',
    'participants',
]


class RunSummary(BaseModel):
    """Minimum perplexities of one run, pretraining excluded."""

    strategy: str
    seed: int | None = None
    rounds: int
    min_global_ppl: float
    min_local_ppl: float


def _join(ids: list[int]) -> str:
    return ';'.join(str(i) for i in ids)


def records_frame(records: list['RoundRecord']) -> pd.DataFrame:
    """One row per round in CSV column order; id lists are ';'-joined."""
    rows = [
        {
            'round': r.round,
            'strategy': r.strategy.value,
            'portion': r.portion,
            'global_ppl': r.global_ppl,
            'local_ppl': r.local_ppl,
            'num_selected_tensors': r.num_selected_tensors,
            'selected_block_ids': _join(r.selected_block_ids),
            'participants': _join(r.participants),
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"Cannot create directory '{path.parent}': {e}") from e


def write_report(records: list['RoundRecord'], path: str | Path) -> Path:
    """Write the per-round CSV."""
    path = Path(path)
    _ensure_parent(path)
    try:
        records_frame(records).to_csv(path, index=False, lineterminator='\n')
    except OSError as e:
        raise ReportError(f"Cannot write report '{path}': {e}") from e
    logger.info(f'Wrote {len(records)} rounds to {path}')
    return path


def summarize(records: list['RoundRecord'], seed: int | None = None) -> RunSummary:
    if not records:
        raise ReportError('No rounds to summarize')
    rounds = [r for r in records if r.phase != 'pretrain'] or records
    return RunSummary(
        strategy=rounds[0].strategy.value,
        seed=seed,
        rounds=len(rounds),
        min_global_ppl=min(r.global_ppl for r in rounds),
        min_local_ppl=min(r.local_ppl for r in rounds),
    )


def average_minima(runs: list[RunSummary]) -> RunSummary:
    """Seed-averaged minima of one strategy."""
    if not runs:
        raise ReportError('No runs to average')
    return RunSummary(
        strategy=runs[0].strategy,
        rounds=runs[0].rounds,
        min_global_ppl=float(np.mean([r.min_global_ppl for r in runs])),
        min_local_ppl=float(np.mean([r.min_local_ppl for r in runs])),
    )


def write_score_dump(records: list['RoundRecord'], path: str | Path) -> Path:
    """Per-round tensor scores as JSON lines."""
    path = Path(path)
    _ensure_parent(path)
    try:
        with path.open('w', encoding='utf-8') as f:
            for record in records:
                for row in record.score_rows:
                    f.write(row.model_dump_json() + '\n')
    except OSError as e:
        raise ReportError(f"Cannot write score dump '{path}': {e}") from e
    return path


def write_json(payload: Any, path: str | Path) -> Path:
    path = Path(path)
    _ensure_parent(path)
    try:
        with path.open('w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2)
            f.write('\n')
    except OSError as e:
        raise ReportError(f"Cannot write '{path}': {e}") from e
    return path
