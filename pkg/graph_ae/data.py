"""
Загрузка датасетов (citation-content, edge-list-tsv) и синтетические графы SBM.

Идентификаторы узлов сжимаются в 0..n-1 по отсортированным исходным id
(числовая сортировка, если все id числа, иначе лексикографическая), поэтому
результат не зависит от порядка строк в файлах.
"""
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from gae_bench import settings

from .exceptions import DatasetFormatError, InvalidGraphError
from .linalg import Graph, make_sparse

logger = logging.getLogger(__name__)


# --- Описания датасетов ---

class DatasetDescriptor(BaseModel):
    """Датасет на диске: формат и пути к файлам рёбер, признаков и меток."""
    model_config = ConfigDict(frozen=True)

    kind: Literal['file'] = 'file'
    name: str
    format: Literal['citation-content', 'edge-list-tsv']
    edge_path: Path
    feature_path: Optional[Path] = None
    label_path: Optional[Path] = None
    binarize: bool = True
    directed_input: bool = False
    row_normalize: bool = False

    @classmethod
    def preset(cls, name: str, fixture_dir: Optional[Path] = None, **overrides) -> 'DatasetDescriptor':
        """Описание известного датасета с путями относительно каталога фикстур."""
        if name not in settings.DATASETS:
            raise ValueError(f"Неизвестный датасет '{name}'. Доступны: {', '.join(sorted(settings.DATASETS))}")
        base = Path(fixture_dir or settings.FIXTURE_DIR)
        preset = dict(settings.DATASETS[name])
        for key in ('edge_path', 'feature_path', 'label_path'):
            if key in preset:
                preset[key] = base / preset[key]
        preset.update({key: value for key, value in overrides.items() if value is not None})
        return cls(name=name, **preset)


class SbmConfig(BaseModel):
    """Стохастическая блочная модель: p_in внутри блоков, p_out между ними."""
    model_config = ConfigDict(frozen=True)

    kind: Literal['sbm'] = 'sbm'
    block_sizes: Tuple[int, ...]
    p_in: float
    p_out: float
    seed: int = 0

    @field_validator('block_sizes', mode='before')
    @classmethod
    def parse_block_sizes(cls, value):
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(',') if part.strip())
        return value

    @model_validator(mode='after')
    def check_probabilities(self):
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise ValueError(f"Требуется 0 <= p_out <= p_in <= 1, получено p_in={self.p_in}, p_out={self.p_out}")
        if not self.block_sizes or any(size < 1 for size in self.block_sizes):
            raise ValueError("Размеры блоков должны быть положительными")
        return self

    @property
    def name(self) -> str:
        return f"sbm-{'x'.join(map(str, self.block_sizes))}"


DatasetConfig = Union[DatasetDescriptor, SbmConfig]


# --- Вспомогательные функции разбора ---

def _iter_lines(path: Path, comment_prefixes=('#', '%')) -> Iterator[Tuple[int, List[str]]]:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(path, 0, "файл не найден")
    with open(path, encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(comment_prefixes):
                continue
            yield line_number, stripped.split()


def _parse_float(token: str, path, line_number) -> float:
    try:
        return float(token)
    except ValueError:
        raise DatasetFormatError(path, line_number, f"не число: '{token}'") from None


def sorted_node_ids(ids) -> List[str]:
    """Числовая сортировка, если все id - целые числа, иначе лексикографическая."""
    ids = list(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def _labels_to_ids(raw_labels: List[str]) -> np.ndarray:
    classes = sorted_node_ids(set(raw_labels))
    index = {name: i for i, name in enumerate(classes)}
    return np.array([index[label] for label in raw_labels], dtype=np.int64)


def _row_normalize(features):
    sums = np.asarray(abs(features).sum(axis=1), dtype=np.float64).ravel()
    sums[sums == 0] = 1.0
    if sp.issparse(features):
        return sp.csr_matrix(sp.diags(1.0 / sums) @ features)
    return features / sums[:, None]


def _undirected_adjacency(n, sources, targets, weights, binarize) -> sp.csr_matrix:
    sources = np.asarray(sources, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    lo, hi = np.minimum(sources, targets), np.maximum(sources, targets)
    # Направление игнорируется: (u, v) и (v, u) - одно и то же ребро
    upper = make_sparse(n, n, lo, hi, weights)
    adjacency = (upper + upper.T).tocsr()
    adjacency.eliminate_zeros()
    if binarize:
        adjacency.data[:] = 1.0
    adjacency.sort_indices()
    return adjacency


# --- Загрузчики ---

def load_citation_dataset(desc: DatasetDescriptor) -> Graph:
    """
    Формат citation-content: файл content со строками
    `node_id <tab> f признаков <tab> метка` и файл cites со строками
    `cited_id <tab> citing_id`. Направление цитирования отбрасывается.
    """
    if desc.format != 'citation-content':
        raise ValueError(f"load_citation_dataset: формат '{desc.format}' не поддерживается")
    content_path = desc.feature_path or desc.label_path
    if content_path is None:
        raise ValueError(f"Датасет '{desc.name}': не указан content-файл")

    node_ids: List[str] = []
    raw_labels: List[str] = []
    feature_rows: List[np.ndarray] = []
    n_features = None
    for line_number, tokens in _iter_lines(content_path, comment_prefixes=()):
        if len(tokens) < 2:
            raise DatasetFormatError(content_path, line_number, "ожидается 'id признаки... метка'")
        values = np.array([_parse_float(t, content_path, line_number) for t in tokens[1:-1]])
        if n_features is None:
            n_features = len(values)
        elif len(values) != n_features:
            raise DatasetFormatError(content_path, line_number,
                                     f"{len(values)} признаков вместо {n_features}")
        node_ids.append(tokens[0])
        raw_labels.append(tokens[-1])
        feature_rows.append(values)

    if not node_ids:
        raise InvalidGraphError(f"Датасет '{desc.name}': пустой content-файл")
    if len(set(node_ids)) != len(node_ids):
        raise InvalidGraphError(f"Датасет '{desc.name}': повторяющиеся id узлов")

    ordered = sorted_node_ids(node_ids)
    index: Dict[str, int] = {node: i for i, node in enumerate(ordered)}
    position = np.array([index[node] for node in node_ids])
    n = len(ordered)

    dense = np.zeros((n, n_features))
    if n_features:
        dense[position] = np.vstack(feature_rows)
    features = sp.csr_matrix(dense)
    labels = np.empty(n, dtype=np.int64)
    labels[position] = _labels_to_ids(raw_labels)

    sources, targets = [], []
    unknown = self_loops = lines = 0
    for line_number, tokens in _iter_lines(desc.edge_path, comment_prefixes=()):
        if len(tokens) != 2:
            raise DatasetFormatError(desc.edge_path, line_number, "ожидается 'cited_id citing_id'")
        lines += 1
        cited, citing = tokens
        if cited not in index or citing not in index:
            unknown += 1
            continue
        if cited == citing:
            self_loops += 1
            continue
        sources.append(index[citing])
        targets.append(index[cited])

    if unknown:
        logger.warning(f"Датасет '{desc.name}': пропущено {unknown} цитирований с неизвестными id")
    if self_loops:
        logger.warning(f"Датасет '{desc.name}': отброшено {self_loops} петель")
    if not sources:
        raise InvalidGraphError(f"Датасет '{desc.name}': нет рёбер")

    adjacency = _undirected_adjacency(n, sources, targets, np.ones(len(sources)), binarize=True)
    if desc.row_normalize:
        features = _row_normalize(features)
    graph = Graph(adjacency=adjacency, features=features, labels=labels, is_weighted=False, name=desc.name)
    logger.info(f"Загружен '{desc.name}': n={graph.n_nodes}, строк цитирований={lines}, "
                f"рёбер={graph.n_edges}, f={graph.n_features}, классов={graph.n_classes}")
    return graph


def _read_node_table(path: Path) -> Dict[str, List[str]]:
    table: Dict[str, List[str]] = {}
    for line_number, tokens in _iter_lines(path):
        if len(tokens) < 2:
            raise DatasetFormatError(path, line_number, "ожидается 'node_id значения...'")
        if tokens[0] in table:
            raise DatasetFormatError(path, line_number, f"повтор узла '{tokens[0]}'")
        table[tokens[0]] = tokens[1:]
    return table


def load_edge_list(desc: DatasetDescriptor) -> Graph:
    """
    Формат edge-list-tsv: строки `src dst [weight]`, комментарии '#' и '%'.
    Петли отбрасываются, кратные рёбра суммируются (и бинаризуются при binarize).
    """
    if desc.format != 'edge-list-tsv':
        raise ValueError(f"load_edge_list: формат '{desc.format}' не поддерживается")

    raw_sources, raw_targets, weights = [], [], []
    node_set = set()
    self_loops = 0
    for line_number, tokens in _iter_lines(desc.edge_path):
        if len(tokens) not in (2, 3):
            raise DatasetFormatError(desc.edge_path, line_number, "ожидается 'src dst [weight]'")
        weight = _parse_float(tokens[2], desc.edge_path, line_number) if len(tokens) == 3 else 1.0
        if weight < 0:
            raise DatasetFormatError(desc.edge_path, line_number, f"отрицательный вес {weight}")
        src, dst = tokens[0], tokens[1]
        node_set.update((src, dst))
        if src == dst:
            self_loops += 1
            continue
        raw_sources.append(src)
        raw_targets.append(dst)
        weights.append(weight)

    label_table = _read_node_table(desc.label_path) if desc.label_path else None
    feature_table = _read_node_table(desc.feature_path) if desc.feature_path else None
    for table in (label_table, feature_table):
        if table:
            node_set.update(table)

    if self_loops:
        logger.warning(f"Датасет '{desc.name}': отброшено {self_loops} петель")
    if desc.directed_input:
        logger.info(f"Датасет '{desc.name}': направления рёбер игнорируются")
    if not node_set:
        raise InvalidGraphError(f"Датасет '{desc.name}': пустой граф")

    ordered = sorted_node_ids(node_set)
    index = {node: i for i, node in enumerate(ordered)}
    n = len(ordered)
    sources = [index[node] for node in raw_sources]
    targets = [index[node] for node in raw_targets]
    adjacency = _undirected_adjacency(n, sources, targets, weights, binarize=desc.binarize)
    is_weighted = not desc.binarize and bool(len(adjacency.data)) and not np.all(adjacency.data == 1.0)

    labels = None
    if label_table is not None:
        missing = [node for node in ordered if node not in label_table]
        if missing:
            raise InvalidGraphError(f"Датасет '{desc.name}': нет меток для {len(missing)} узлов")
        labels = _labels_to_ids([label_table[node][0] for node in ordered])

    features = None
    if feature_table is not None:
        missing = [node for node in ordered if node not in feature_table]
        if missing:
            raise InvalidGraphError(f"Датасет '{desc.name}': нет признаков для {len(missing)} узлов")
        rows = [[_parse_float(t, desc.feature_path, 0) for t in feature_table[node]] for node in ordered]
        if len({len(row) for row in rows}) != 1:
            raise InvalidGraphError(f"Датасет '{desc.name}': разное число признаков у узлов")
        features = np.asarray(rows, dtype=np.float64)
        if desc.row_normalize:
            features = _row_normalize(features)

    graph = Graph(adjacency=adjacency, features=features, labels=labels, is_weighted=is_weighted, name=desc.name)
    logger.info(f"Загружен '{desc.name}': n={graph.n_nodes}, рёбер={graph.n_edges}")
    return graph


def export_edge_list(graph: Graph, path) -> Path:
    """
    Записывает рёбра i < j как `i\\tj[\\tw]` с окончаниями строк '\\n'.
    Изолированный узел i пишется петлёй `i\\ti`: загрузчик петлю отбросит,
    но узел сохранит, так что n и нумерация при повторной загрузке совпадают.
    """
    path = Path(path)
    pairs = graph.edge_pairs()
    isolated = np.flatnonzero(np.diff(graph.adjacency.indptr) == 0)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for i, j in pairs.tolist():
            if graph.is_weighted:
                handle.write(f"{i}\t{j}\t{graph.adjacency[i, j]!r}\n")
            else:
                handle.write(f"{i}\t{j}\n")
        for i in isolated.tolist():
            handle.write(f"{i}\t{i}\n")
    logger.info(f"Граф '{graph.name}' выгружен в {path}: {len(pairs)} рёбер, {len(isolated)} изолированных узлов")
    return path


# --- Синтетические графы ---

def generate_sbm(cfg: SbmConfig) -> Graph:
    """Рёбра независимы: p_in внутри блока, p_out между блоками; метки - номера блоков."""
    rng = np.random.default_rng(cfg.seed)
    labels = np.repeat(np.arange(len(cfg.block_sizes)), cfg.block_sizes)
    n = len(labels)
    rows, cols = np.triu_indices(n, k=1)
    probabilities = np.where(labels[rows] == labels[cols], cfg.p_in, cfg.p_out)
    keep = rng.random(len(rows)) < probabilities
    rows, cols = rows[keep], cols[keep]
    adjacency = make_sparse(n, n, np.r_[rows, cols], np.r_[cols, rows])
    return Graph(adjacency=adjacency, labels=labels, name=cfg.name)


def load_graph(dataset: DatasetConfig) -> Graph:
    if isinstance(dataset, SbmConfig):
        return generate_sbm(dataset)
    if dataset.format == 'citation-content':
        return load_citation_dataset(dataset)
    return load_edge_list(dataset)
