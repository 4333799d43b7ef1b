"""
Прогон экспериментов: R независимых повторов с детерминированными сидами,
сводки по метрикам и сверка отчётов с опубликованными значениями.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .data import load_graph
from .evaluation import MetricSummary, evaluate_clustering, evaluate_link_prediction, make_link_split
from .exceptions import ReferenceMismatchError, RepetitionError
from .linalg import Graph
from .serializers import ExperimentConfig, RepetitionResult, RunReport, render_report
from .training import train

# Настройка логгера
logger = logging.getLogger(__name__)


# ===========================================
# Сиды
# ===========================================

def repetition_seed_sequence(master_seed: int, repetition: int) -> np.random.SeedSequence:
    """Поток случайности повтора r зависит только от (master_seed, r)."""
    return np.random.SeedSequence(master_seed, spawn_key=(repetition,))


def repetition_seed(master_seed: int, repetition: int) -> int:
    return int(repetition_seed_sequence(master_seed, repetition).generate_state(1, dtype=np.uint32)[0])


def repetition_rngs(master_seed: int, repetition: int) -> Tuple[np.random.Generator, ...]:
    """Отдельные генераторы для разбиения, обучения и k-means."""
    children = repetition_seed_sequence(master_seed, repetition).spawn(3)
    return tuple(np.random.default_rng(child) for child in children)


# ===========================================
# Один повтор
# ===========================================

def run_repetition(cfg: ExperimentConfig, graph: Graph, repetition: int) -> RepetitionResult:
    split_rng, train_rng, cluster_rng = repetition_rngs(cfg.master_seed, repetition)
    features = graph.features if cfg.model.use_features else None
    hp = cfg.training_config()
    started = time.perf_counter()

    if cfg.task == 'link-prediction':
        split = make_link_split(graph, cfg.val_frac, cfg.test_frac, split_rng, train_frac=cfg.train_frac)
        result = train(split.train_adjacency, features, cfg.model, hp, train_rng,
                       validation=(split.val_pos, split.val_neg))
        auc, ap = evaluate_link_prediction(result.params, cfg.model, split, features)
        metrics = {'auc': 100.0 * auc, 'ap': 100.0 * ap}
        if result.val_auc_trace:
            logger.debug(f"Повтор {repetition}: val AUC={100 * result.val_auc_trace[-1]:.2f}, "
                         f"val AP={100 * result.val_ap_trace[-1]:.2f}")
    else:
        result = train(graph.adjacency, features, cfg.model, hp, train_rng)
        metrics = {'ami': 100.0 * evaluate_clustering(
            result.params, cfg.model, graph, features, cluster_rng, n_clusters=cfg.n_clusters)}

    elapsed = time.perf_counter() - started
    logger.info(f"Повтор {repetition} ({cfg.model.label}, {graph.name}): "
                + ', '.join(f"{name}={value:.2f}" for name, value in metrics.items())
                + f" за {elapsed:.1f} с")
    return RepetitionResult(repetition=repetition, seed=repetition_seed(cfg.master_seed, repetition),
                            metrics=metrics, wall_clock_seconds=elapsed)


# ===========================================
# Эксперимент целиком
# ===========================================

def build_report(cfg: ExperimentConfig, results: Sequence[RepetitionResult]) -> RunReport:
    results = sorted(results, key=lambda result: result.repetition)
    names = sorted({name for result in results for name in result.metrics})
    summaries = {name: MetricSummary.from_values(name, [result.metrics[name] for result in results])
                 for name in names}
    return RunReport(
        config=cfg,
        model_label=cfg.model.label,
        model_name=cfg.model.display_name,
        dataset_name=cfg.dataset_name,
        learning_rate=cfg.effective_learning_rate,
        repetitions=list(results),
        summaries=summaries,
        software_version=__version__,
        timestamp=datetime.now(timezone.utc),
    )


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, graph: Optional[Graph] = None) -> RunReport:
    """
    Загружает граф один раз и выполняет cfg.repetitions повторов.
    При jobs > 1 повторы идут в пуле процессов; результат от этого не зависит.
    Первая ошибка повтора прерывает прогон с RepetitionError.
    """
    if graph is None:
        graph = load_graph(cfg.dataset)
    logger.info(f"Эксперимент: {cfg.model.display_name} на '{graph.name}' ({cfg.task}), "
                f"повторов={cfg.repetitions}, lr={cfg.effective_learning_rate}, jobs={jobs}")

    results: List[RepetitionResult] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(run_repetition, cfg, graph, r): r for r in range(cfg.repetitions)}
            for future in as_completed(futures):
                repetition = futures[future]
                try:
                    results.append(future.result())
                except Exception as e:
                    for pending in futures:
                        pending.cancel()
                    seed = repetition_seed(cfg.master_seed, repetition)
                    logger.error(f"Повтор {repetition} (сид {seed}) завершился ошибкой: {e}", exc_info=True)
                    raise RepetitionError(repetition, seed, e) from e
    else:
        for repetition in range(cfg.repetitions):
            try:
                results.append(run_repetition(cfg, graph, repetition))
            except Exception as e:
                seed = repetition_seed(cfg.master_seed, repetition)
                logger.error(f"Повтор {repetition} (сид {seed}) завершился ошибкой: {e}", exc_info=True)
                raise RepetitionError(repetition, seed, e) from e

    report = build_report(cfg, results)
    for name, summary in report.summaries.items():
        logger.info(f"{name}: {summary.mean:.2f} ± {summary.std:.2f}")
    if cfg.output_path is not None:
        Path(cfg.output_path).write_bytes(render_report(report, 'json'))
        logger.info(f"Отчёт записан в {cfg.output_path}")
    return report


# ===========================================
# Сверка с опубликованными значениями
# ===========================================

class ReferenceEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    metric: str
    mean: float
    tolerance: float = Field(default=2.0, ge=0)


class ReferenceGap(BaseModel):
    """Утверждение вида |metric(a) - metric(b)| <= max_gap."""
    model_config = ConfigDict(frozen=True)

    models: Tuple[str, str]
    metric: str
    max_gap: float = Field(ge=0)


class ReferenceFile(BaseModel):
    dataset: Optional[str] = None
    task: Optional[str] = None
    use_features: Optional[bool] = None
    entries: List[ReferenceEntry] = Field(default_factory=list)
    gaps: List[ReferenceGap] = Field(default_factory=list)


class MetricVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    metric: str
    observed: float
    expected: float
    tolerance: float
    passed: bool

    def describe(self) -> str:
        status = 'OK  ' if self.passed else 'FAIL'
        return (f"{status} {self.model} {self.metric}: {self.observed:.2f} "
                f"(ожидается {self.expected:.2f} ± {self.tolerance:.2f})")


def load_reference(path) -> ReferenceFile:
    with open(path, encoding='utf-8') as handle:
        return ReferenceFile.model_validate(yaml.safe_load(handle) or {})


def _find_summary(reports: Sequence[RunReport], reference: ReferenceFile, model: str,
                  metric: str) -> MetricSummary:
    for report in reports:
        if report.model_label != model:
            continue
        if reference.dataset is not None and report.dataset_name != reference.dataset:
            continue
        if reference.task is not None and report.config.task != reference.task:
            continue
        if reference.use_features is not None and report.config.model.use_features != reference.use_features:
            continue
        if metric in report.summaries:
            return report.summaries[metric]
    raise ReferenceMismatchError(f"Нет отчёта с метрикой '{metric}' для модели '{model}'")


def compare_against_reference(reports: Union[RunReport, Sequence[RunReport]], reference) -> List[MetricVerdict]:
    """
    Вердикт по каждой записи эталона: |mean - эталон| <= tolerance.
    Отсутствующая в отчётах модель или метрика - ReferenceMismatchError.
    """
    if isinstance(reports, RunReport):
        reports = [reports]
    if not isinstance(reference, ReferenceFile):
        reference = load_reference(reference)

    verdicts: List[MetricVerdict] = []
    for entry in reference.entries:
        observed = _find_summary(reports, reference, entry.model, entry.metric).mean
        passed = abs(observed - entry.mean) <= entry.tolerance + 1e-9
        verdicts.append(MetricVerdict(model=entry.model, metric=entry.metric, observed=observed,
                                      expected=entry.mean, tolerance=entry.tolerance, passed=passed))
    for gap in reference.gaps:
        first, second = (_find_summary(reports, reference, model, gap.metric).mean for model in gap.models)
        observed = abs(first - second)
        verdicts.append(MetricVerdict(model=' vs '.join(gap.models), metric=f"{gap.metric} gap",
                                      observed=observed, expected=0.0, tolerance=gap.max_gap,
                                      passed=observed <= gap.max_gap + 1e-9))

    failed = sum(not verdict.passed for verdict in verdicts)
    if failed:
        logger.warning(f"Сверка с эталоном: {failed} из {len(verdicts)} проверок не пройдены")
    else:
        logger.info(f"Сверка с эталоном: все {len(verdicts)} проверок пройдены")
    return verdicts
