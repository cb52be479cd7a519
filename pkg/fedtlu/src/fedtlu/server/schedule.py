import logging
import math

from fedtlu.common.errors import ScheduleError
from fedtlu.common.types import PORTION_LEVELS, PortionScheduleState


logger = logging.getLogger(__name__)

MIN_IMPROVEMENT = 0.01
PATIENCE = 10


def advance_portion(
    state: PortionScheduleState, new_global_nll: float
) -> PortionScheduleState:
    """Step the portion down after PATIENCE rounds without a 1% improvement.

    Levels go 0.75 -> 0.50 -> 0.25 and stay at 0.25.
    """
    if not math.isfinite(new_global_nll):
        raise ScheduleError(f'Plateau metric must be finite, got {new_global_nll}')

    recent = (state.recent_metrics + (new_global_nll,))[-PATIENCE:]
    best = state.best_metric
    stale = state.rounds_since_improvement
    if new_global_nll < (1.0 - MIN_IMPROVEMENT) * best:
        best = new_global_nll
        stale = 0
    else:
        stale += 1

    portion = state.current_portion
    if stale >= PATIENCE:
        level = PORTION_LEVELS.index(portion)
        if level + 1 < len(PORTION_LEVELS):
            portion = PORTION_LEVELS[level + 1]
            logger.info(
                f'No 1% improvement for {PATIENCE} rounds, portion '
                f'{state.current_portion:.2f} -> {portion:.2f}'
            )
        else:
            logger.debug(f'Portion already at floor {portion:.2f}')
        stale = 0

    return PortionScheduleState(
        current_portion=portion,
        recent_metrics=recent,
        rounds_since_improvement=stale,
        best_metric=best,
    )
