import csv
import io
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gae_bench import settings

from .data import DatasetDescriptor, SbmConfig
from .evaluation import MetricSummary
from .exceptions import ReportFormatError
from .models import ModelSpec
from .training import TrainingConfig

# Настройка логгера
logger = logging.getLogger(__name__)

REPORT_FORMATS = ('json', 'csv', 'table')

# Порядок и подписи метрик в отчётах (значения в процентах)
METRIC_TITLES = {
    'auc': 'AUC (in %)',
    'ap': 'AP (in %)',
    'ami': 'AMI (in %)',
}

_MODEL_KEYS = ('encoder', 'depth', 'variational', 'embedding_dim', 'hidden_dims', 'use_features', 'shared_trunk')
_FILE_KEYS = ('edge_path', 'feature_path', 'label_path', 'binarize', 'directed_input', 'row_normalize')
_SBM_KEYS = ('sbm_block_sizes', 'sbm_p_in', 'sbm_p_out', 'sbm_seed')
_EXPERIMENT_KEYS = ('task', 'epochs', 'learning_rate', 'repetitions', 'master_seed',
                    'val_frac', 'test_frac', 'train_frac', 'n_clusters', 'output_path')


def default_learning_rate(dataset_name: str, model: ModelSpec) -> float:
    """Learning rate по датасету с исключениями для отдельных моделей."""
    exception = settings.LEARNING_RATE_EXCEPTIONS.get((dataset_name, model.encoder, model.variational))
    if exception is not None:
        return exception
    return settings.LEARNING_RATES.get(dataset_name, settings.DEFAULT_LEARNING_RATE)


def normalize_key(key: str) -> str:
    return key.strip().lstrip('-').replace('-', '_').lower()


def load_flat_config(path) -> Dict[str, str]:
    """Плоский файл `key=value` (синтаксис .env); комментарии '#' допускаются."""
    values = dotenv_values(path)
    return {normalize_key(key): value for key, value in values.items() if value is not None}


# --- Конфигурация эксперимента ---

class ExperimentConfig(BaseModel):
    """
    Конфигурация эксперимента: датасет, задача, модель и протокол.
    learning_rate = None означает значение по умолчанию для датасета.
    """
    model_config = ConfigDict(frozen=True)

    dataset: Annotated[Union[DatasetDescriptor, SbmConfig], Field(discriminator='kind')]
    task: Literal['link-prediction', 'clustering'] = 'link-prediction'
    model: ModelSpec
    epochs: int = Field(default=settings.DEFAULT_EPOCHS, ge=0)
    learning_rate: Optional[float] = Field(default=None, gt=0)
    repetitions: int = Field(default=settings.DEFAULT_REPETITIONS, ge=1)
    master_seed: int = Field(default=0, ge=0)
    val_frac: float = settings.DEFAULT_VAL_FRAC
    test_frac: float = settings.DEFAULT_TEST_FRAC
    train_frac: Optional[float] = None
    n_clusters: Optional[int] = Field(default=None, ge=1)
    output_path: Optional[Path] = None

    @model_validator(mode='after')
    def check_fractions(self):
        fractions = {'val_frac': self.val_frac, 'test_frac': self.test_frac}
        if self.train_frac is not None:
            fractions['train_frac'] = self.train_frac
        for name, value in fractions.items():
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} должно быть в (0, 1), получено {value}")
        if self.train_frac is not None:
            if self.train_frac + self.test_frac >= 1.0:
                raise ValueError("train_frac + test_frac должно быть < 1")
        elif self.val_frac + self.test_frac >= 1.0:
            raise ValueError("val_frac + test_frac должно быть < 1")
        return self

    @property
    def dataset_name(self) -> str:
        return self.dataset.name

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return default_learning_rate(self.dataset_name, self.model)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(epochs=self.epochs, learning_rate=self.effective_learning_rate)

    @classmethod
    def from_flat(cls, values: Mapping[str, str], fixture_dir: Optional[Path] = None) -> 'ExperimentConfig':
        """Собирает конфигурацию из плоских пар ключ-значение (файл + переопределения CLI)."""
        values = {normalize_key(key): value for key, value in values.items()}
        known = set(_MODEL_KEYS) | set(_FILE_KEYS) | set(_SBM_KEYS) | set(_EXPERIMENT_KEYS) | {'dataset', 'dataset_format'}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"Неизвестные ключи конфигурации: {', '.join(unknown)}")

        base = Path(fixture_dir or settings.FIXTURE_DIR)
        name = values.get('dataset')
        if not name:
            raise ValueError("Не указан ключ 'dataset'")

        if name == 'sbm':
            dataset = SbmConfig(block_sizes=values.get('sbm_block_sizes'), p_in=values.get('sbm_p_in'),
                                p_out=values.get('sbm_p_out'), seed=values.get('sbm_seed', 0))
        else:
            file_values = {key: values[key] for key in _FILE_KEYS if key in values}
            for key in ('edge_path', 'feature_path', 'label_path'):
                if key in file_values:
                    file_values[key] = base / file_values[key]
            if 'dataset_format' in values:
                file_values['format'] = values['dataset_format']
            if name in settings.DATASETS:
                dataset = DatasetDescriptor.preset(name, base, **file_values)
            else:
                dataset = DatasetDescriptor(name=name, **file_values)

        model = ModelSpec(**{key: values[key] for key in _MODEL_KEYS if key in values})
        experiment = {key: values[key] for key in _EXPERIMENT_KEYS if key in values}
        hard_split = settings.HARD_SPLITS.get(name)
        if hard_split and 'train_frac' not in experiment:
            experiment.update({key: str(value) for key, value in hard_split.items()})
        return cls(dataset=dataset, model=model, **experiment)


# --- Отчёт о прогоне ---

class RepetitionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    repetition: int
    seed: int
    metrics: Dict[str, float]
    wall_clock_seconds: float


class RunReport(BaseModel):
    """Результаты всех повторов, сводки по метрикам и происхождение прогона."""
    model_config = ConfigDict(protected_namespaces=())

    config: ExperimentConfig
    model_label: str
    model_name: str
    dataset_name: str
    learning_rate: float
    repetitions: List[RepetitionResult]
    summaries: Dict[str, MetricSummary]
    software_version: str
    timestamp: datetime

    @model_validator(mode='after')
    def check_consistency(self):
        if len(self.repetitions) != self.config.repetitions:
            raise ValueError(
                f"В отчёте {len(self.repetitions)} повторов, в конфигурации {self.config.repetitions}")
        for name, summary in self.summaries.items():
            values = [result.metrics.get(name) for result in self.repetitions]
            if values != summary.per_run:
                raise ValueError(f"Сводка '{name}' не соответствует значениям повторов")
        return self

    @property
    def metric_names(self) -> List[str]:
        ordered = [name for name in METRIC_TITLES if name in self.summaries]
        return ordered + sorted(set(self.summaries) - set(ordered))


def load_report(path) -> RunReport:
    return RunReport.model_validate_json(Path(path).read_text(encoding='utf-8'))


# --- Рендеринг ---

def _render_json(report: RunReport) -> str:
    return json.dumps(report.model_dump(mode='json'), sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def _render_csv(report: RunReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    metrics = report.metric_names
    writer.writerow(['repetition', 'seed', *metrics, 'wall_clock_seconds'])
    for result in report.repetitions:
        writer.writerow([result.repetition, result.seed, *[repr(result.metrics[m]) for m in metrics],
                         repr(result.wall_clock_seconds)])
    writer.writerow(['mean', '', *[repr(report.summaries[m].mean) for m in metrics], ''])
    writer.writerow(['std', '', *[repr(report.summaries[m].std) for m in metrics], ''])
    return buffer.getvalue()


def _render_table(report: RunReport) -> str:
    metrics = report.metric_names
    headers = ['Model', *[METRIC_TITLES.get(m, m) for m in metrics]]
    row = [report.model_name,
           *[f"{report.summaries[m].mean:.2f} ± {report.summaries[m].std:.2f}" for m in metrics]]
    widths = [max(len(h), len(c)) for h, c in zip(headers, row)]
    features = 'with features' if report.config.model.use_features else 'featureless'
    lines = [
        f"{report.dataset_name}, {features} ({report.config.task}, {len(report.repetitions)} runs)",
        ' | '.join(h.ljust(w) for h, w in zip(headers, widths)),
        '-+-'.join('-' * w for w in widths),
        ' | '.join(c.ljust(w) for c, w in zip(row, widths)),
    ]
    return '\n'.join(lines) + '\n'


def render_report(report: RunReport, fmt: str) -> bytes:
    """json (канонический, ключи отсортированы), csv или текстовая таблица."""
    renderers = {'json': _render_json, 'csv': _render_csv, 'table': _render_table}
    if fmt not in renderers:
        raise ReportFormatError(f"Неизвестный формат отчёта '{fmt}'. Доступны: {', '.join(REPORT_FORMATS)}")
    return renderers[fmt](report).encode('utf-8')
