"""
Настройки проекта gae_bench.

Здесь собраны пути, загрузка переменных окружения из .env, конфигурация
логирования и числовые константы, общие для всех модулей graph_ae.
"""
import os
from dotenv import load_dotenv
from pathlib import Path
from logging.config import dictConfig

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env file
load_dotenv(BASE_DIR / '.env')

# Каталог с датасетами (единственная переменная окружения проекта)
FIXTURE_DIR = Path(os.getenv('GAE_FIXTURE_DIR', BASE_DIR / 'graph_ae' / 'fixtures'))


# --------- числовые константы ---------

# Декодер σ(ZZ^T) квадратичен по n, поэтому ограничиваем размер графа
DECODER_MAX_NODES = 32_768
# Сколько элементов n×n матрицы держим в памяти за один блок строк
DECODER_BLOCK_ENTRIES = 4_194_304

# Границы log σ перед экспонентой (reparameterize и KL)
LOG_SIGMA_MIN = -30.0
LOG_SIGMA_MAX = 10.0

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Протокол экспериментов
DEFAULT_EPOCHS = 200
DEFAULT_EMBEDDING_DIM = 16
DEFAULT_HIDDEN_DIM = 32
DEFAULT_REPETITIONS = 100
DEFAULT_VAL_FRAC = 0.05
DEFAULT_TEST_FRAC = 0.10
DEFAULT_LEARNING_RATE = 0.01

# k-means
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-4


# --------- датасеты ---------

# Пресеты: имя -> формат и файлы относительно FIXTURE_DIR
DATASETS = {
    'cora': {
        'format': 'citation-content',
        'edge_path': 'cora/cora.cites',
        'feature_path': 'cora/cora.content',
        'label_path': 'cora/cora.content',
    },
    'citeseer': {
        'format': 'citation-content',
        'edge_path': 'citeseer/citeseer.cites',
        'feature_path': 'citeseer/citeseer.content',
        'label_path': 'citeseer/citeseer.content',
    },
    'pubmed': {
        'format': 'citation-content',
        'edge_path': 'pubmed/pubmed.cites',
        'feature_path': 'pubmed/pubmed.content',
        'label_path': 'pubmed/pubmed.content',
    },
    'webkd': {
        'format': 'citation-content',
        'edge_path': 'webkd/webkd.cites',
        'feature_path': 'webkd/webkd.content',
        'label_path': 'webkd/webkd.content',
    },
    'arxiv-hepth': {'format': 'edge-list-tsv', 'edge_path': 'arxiv-hepth/out.ca-HepTh', 'directed_input': True},
    'blogs': {'format': 'edge-list-tsv', 'edge_path': 'blogs/out.moreno_blogs_blogs', 'label_path': 'blogs/labels.tsv', 'directed_input': True},
    'cora-larger': {'format': 'edge-list-tsv', 'edge_path': 'cora-larger/out.subelj_cora_cora', 'label_path': 'cora-larger/labels.tsv', 'directed_input': True},
    'dblp': {'format': 'edge-list-tsv', 'edge_path': 'dblp/out.dblp-cite', 'directed_input': True},
    'google': {'format': 'edge-list-tsv', 'edge_path': 'google/out.cfinder-google', 'directed_input': True},
    'hamsterster': {'format': 'edge-list-tsv', 'edge_path': 'hamsterster/out.petster-friendships-hamster'},
    'proteins': {'format': 'edge-list-tsv', 'edge_path': 'proteins/out.maayan-vidal'},
}

# Proteins: в обучение попадает только 10% рёбер, в тест 25%
HARD_SPLITS = {
    'proteins': {'train_frac': 0.10, 'test_frac': 0.25},
}

# Learning rate по датасетам; ключ (encoder, variational) уточняет исключения
LEARNING_RATES = {
    'cora': 0.01,
    'citeseer': 0.01,
    'pubmed': 0.01,
    'blogs': 0.01,
    'cora-larger': 0.01,
    'dblp': 0.01,
    'google': 0.01,
    'hamsterster': 0.01,
    'arxiv-hepth': 0.1,
    'webkd': 0.005,
    'proteins': 0.01,
}
LEARNING_RATE_EXCEPTIONS = {
    ('webkd', 'linear', False): 0.001,
    ('webkd', 'linear', True): 0.01,
    ('proteins', 'linear', True): 0.005,
    ('proteins', 'gcn', True): 0.005,
}


# --------- логирование ---------
# Папка для логов
LOG_DIR = BASE_DIR / 'logs'


def build_logging_config(verbose=False):
    """Конфигурация логирования в формате dictConfig."""
    return {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'simple': {
                'format': '[{levelname}] {message}',
                'style': '{',
            },
            'verbose': {
                'format': '{asctime} [{levelname}] {name}:{lineno} {message}',
                'style': '{',
                'datefmt': '%Y-%m-%d %H:%M:%S%z',
            },
            'json': {
                '()': 'pythonjsonlogger.json.JsonFormatter',
                'fmt': '%(asctime)s %(levelname)s %(name)s %(lineno)d %(message)s',
                'rename_fields': {'asctime': 'timestamp', 'levelname': 'level', 'name': 'logger'},
            },
        },
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
                'formatter': 'simple',
                'level': 'DEBUG' if verbose else 'INFO',
            },
            'file': {
                'class': 'logging.handlers.RotatingFileHandler',
                'formatter': 'verbose',
                'filename': LOG_DIR / 'gae_bench.log',
                'maxBytes': 10 * 1024 * 1024,  # 10 MB
                'backupCount': 5,
                'level': 'INFO',
            },
            'file_json': {
                'class': 'logging.handlers.RotatingFileHandler',
                'formatter': 'json',
                'filename': LOG_DIR / 'gae_bench_json.log',
                'maxBytes': 10 * 1024 * 1024,
                'backupCount': 5,
                'level': 'INFO',
            },
        },
        'loggers': {
            # корневой логгер
            '': {
                'handlers': ['console', 'file'],
                'level': 'INFO',
            },
            # собственные модули
            'graph_ae': {
                'handlers': ['console', 'file', 'file_json'],
                'level': 'DEBUG' if verbose else 'INFO',
                'propagate': False,
            },
        }
    }


def configure_logging(verbose=False):
    """Применяет конфигурацию логирования; вызывается только из CLI."""
    LOG_DIR.mkdir(exist_ok=True)
    dictConfig(build_logging_config(verbose))
