"""
Командный интерфейс:

    manage.py run --config configs/cora_linear_ae.env [--jobs N] [--format table] [--out FILE] [-v] [--key value ...]
    manage.py check --report a.json --report b.json --reference references/cora_featureless.yaml

Коды выхода: 0 - успех, 1 - проверка не пройдена, 2 - ошибка.
"""
import logging
from pathlib import Path
from typing import Dict, List

import click
from pydantic import ValidationError

from gae_bench.settings import configure_logging

from . import __version__
from .exceptions import GraphAEError
from .runner import compare_against_reference, run_experiment
from .serializers import REPORT_FORMATS, ExperimentConfig, load_flat_config, load_report, normalize_key, render_report

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def parse_overrides(args: List[str]) -> Dict[str, str]:
    """`--key value`, `--key=value` или флаг `--key` (= true)."""
    overrides: Dict[str, str] = {}
    position = 0
    while position < len(args):
        token = args[position]
        if not token.startswith('--'):
            raise click.UsageError(f"Неожиданный аргумент '{token}'")
        if '=' in token:
            key, value = token.split('=', 1)
            position += 1
        elif position + 1 < len(args) and not args[position + 1].startswith('--'):
            key, value = token, args[position + 1]
            position += 2
        else:
            key, value = token, 'true'
            position += 1
        overrides[normalize_key(key)] = value
    return overrides


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Подробный (DEBUG) вывод в консоль.')
@click.version_option(version=__version__, prog_name='gae_bench')
def cli(verbose):
    """Бенчмарк линейных и GCN графовых автоэнкодеров."""
    configure_logging(verbose)


@cli.command(context_settings={'ignore_unknown_options': True, 'allow_extra_args': True})
@click.option('--config', 'config_path', required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path), help='Файл key=value с конфигурацией.')
@click.option('--jobs', default=1, show_default=True, type=click.IntRange(min=1), help='Число процессов.')
@click.option('--format', 'fmt', default='table', show_default=True, type=click.Choice(REPORT_FORMATS))
@click.option('--out', type=click.Path(dir_okay=False, path_type=Path), help='Куда записать отчёт (иначе stdout).')
@click.option('--verbose', '-v', is_flag=True, help='Подробный (DEBUG) вывод, как у группы.')
@click.pass_context
def run(ctx, config_path, jobs, fmt, out, verbose):
    """Запускает эксперимент и печатает или сохраняет отчёт."""
    if verbose:
        configure_logging(verbose=True)
    try:
        values = {**load_flat_config(config_path), **parse_overrides(ctx.args)}
        cfg = ExperimentConfig.from_flat(values)
        report = run_experiment(cfg, jobs=jobs)
        payload = render_report(report, fmt)
    except (GraphAEError, ValidationError, ValueError, OSError) as e:
        logger.error(f"Эксперимент не выполнен: {e}", exc_info=True)
        click.echo(f"Ошибка: {e}", err=True)
        ctx.exit(EXIT_ERROR)

    if out is not None:
        out.write_bytes(payload)
        logger.info(f"Отчёт ({fmt}) записан в {out}")
    else:
        click.echo(payload.decode('utf-8'), nl=False)
    ctx.exit(EXIT_OK)


@cli.command()
@click.option('--report', 'report_paths', required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path), help='JSON-отчёт (можно несколько).')
@click.option('--reference', 'reference_path', required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path), help='YAML с эталонными значениями.')
@click.pass_context
def check(ctx, report_paths, reference_path):
    """Сверяет отчёты с эталонными значениями."""
    try:
        reports = [load_report(path) for path in report_paths]
        verdicts = compare_against_reference(reports, reference_path)
    except (GraphAEError, ValidationError, ValueError, OSError) as e:
        logger.error(f"Сверка не выполнена: {e}", exc_info=True)
        click.echo(f"Ошибка: {e}", err=True)
        ctx.exit(EXIT_ERROR)

    for verdict in verdicts:
        click.echo(verdict.describe())
    ctx.exit(EXIT_OK if all(verdict.passed for verdict in verdicts) else EXIT_FAILED)


if __name__ == '__main__':
    cli(prog_name='graph_ae')
