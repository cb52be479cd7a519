"""Command-line entry points: run, compare and theory-check."""

import logging
import sys

from pathlib import Path

import click

from fedtlu.common.config import load_config
from fedtlu.common.errors import ConfigError
from fedtlu.common.types import Strategy
from fedtlu.common.utils import config_logging, load_env, resolve_output_dir
from fedtlu.data.pipeline import export_shard_manifest
from fedtlu.model.checkpoint import save_checkpoint
from fedtlu.sim.report import summarize, write_json, write_report, write_score_dump
from fedtlu.sim.runner import compare as compare_strategies
from fedtlu.sim.runner import execute_experiment
from fedtlu.theory.quadratic import scan_problems


logger = logging.getLogger(__name__)

DEFAULT_ETA_GRID = '0.1,0.5,1.0,1.9,2.0,4.0'


def _float_list(ctx, param, value: str) -> list[float]:
    try:
        values = [float(v) for v in value.split(',') if v.strip()]
    except ValueError as e:
        raise click.BadParameter(f'expected comma-separated numbers: {value}') from e
    if not values or any(v <= 0 for v in values):
        raise click.BadParameter('values must be positive')
    return values


def _strategy_list(ctx, param, value: str) -> list[Strategy]:
    try:
        return [Strategy(v.strip()) for v in value.split(',') if v.strip()]
    except ValueError as e:
        raise click.BadParameter(str(e)) from e


@click.group()
def cli() -> None:
    """Federated simulation with targeted layer updates."""


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(path_type=Path))
@click.option(
    '--strategy',
    type=click.Choice([s.value for s in Strategy]),
    default=None,
    help='Override the configured strategy',
)
@click.option('--seed', type=int, default=None, help='Override the experiment seed')
@click.option('--out', 'out_dir', type=click.Path(path_type=Path), default=None)
def run(config_path, strategy, seed, out_dir) -> int:
    """Run one experiment and write its round report."""
    config = load_config(config_path)
    if strategy:
        config = config.model_copy(update={'strategy': Strategy(strategy)})
    if seed is not None:
        config = config.model_copy(
            update={'seeds': config.seeds.model_copy(update={'experiment': seed})}
        )
    out = resolve_output_dir(out_dir, config.output_dir)

    result = execute_experiment(config)
    write_report(result.records, out / 'rounds.csv')
    export_shard_manifest(result.shards, out / 'shards.json')
    if config.score_dump:
        write_score_dump(result.records, out / 'scores.jsonl')
    if config.save_checkpoint:
        save_checkpoint(result.final_model, out / 'final_model.ckpt')
    click.echo(summarize(result.records, seed=config.seeds.experiment).model_dump_json())
    return 0


@cli.command('theory-check')
@click.option('--problems', type=click.IntRange(min=1), default=50)
@click.option('--eta-grid', 'eta_grid', default=DEFAULT_ETA_GRID, callback=_float_list,
              help='eta*L values, comma-separated')
@click.option('--seed', type=int, default=0)
@click.option('--dim', type=click.IntRange(min=2), default=6)
@click.option('--layers', type=click.IntRange(min=2), default=3)
@click.option('--out', 'out_file', required=True, type=click.Path(path_type=Path))
def theory_check(problems, eta_grid, seed, dim, layers, out_file) -> int:
    """Check the loss-reduction bounds on random quadratics."""
    if layers > dim:
        raise click.BadParameter(f'--layers ({layers}) must not exceed --dim ({dim})')
    report = scan_problems(problems, eta_grid, seed=seed, dim=dim, num_layers=layers)
    write_json([r.model_dump() for r in report.reports], out_file)
    click.echo(report.summary_line())
    return 0 if report.passed else 2


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(path_type=Path))
@click.option('--strategies', default='full,fedtlu,random,last', callback=_strategy_list)
@click.option('--seeds', 'num_seeds', type=click.IntRange(min=1), default=3)
@click.option('--out', 'out_dir', type=click.Path(path_type=Path), default=None)
@click.option('--vary-data-seed', is_flag=True, default=False,
              help='Re-partition clients for every seed')
def compare(config_path, strategies, num_seeds, out_dir, vary_data_seed) -> int:
    """Run every strategy under every seed and summarize minimum perplexities."""
    config = load_config(config_path)
    out = resolve_output_dir(out_dir, config.output_dir)
    summary = compare_strategies(config, strategies, num_seeds, out, vary_data_seed)
    for name, row in summary.items():
        click.echo(
            f"{name:<8} min_global_ppl={row['min_global_ppl']:.4f} "
            f"min_local_ppl={row['min_local_ppl']:.4f}"
        )
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    """Dispatch ``argv`` and map the outcome to an exit code."""
    load_env()
    config_logging()
    try:
        result = cli.main(args=argv, prog_name='fedtlu', standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ConfigError as e:
        logger.error(f'Configuration error: {e}')
        click.echo(f'Error: {e}', err=True)
        return 1
    except Exception as e:
        logger.error(f'Run failed: {e}')
        click.echo(f'Error: {e}', err=True)
        return 2
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(cli_main())
