"""
Оценка моделей: разбиение рёбер для link prediction, ROC-AUC и AP,
k-means (k-means++) и скорректированная взаимная информация (AMI).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import gammaln
from scipy.stats import rankdata

from gae_bench import settings

from .exceptions import InvalidGraphError, SplitError
from .linalg import DenseMatrix, FeatureMatrix, Graph, SparseMatrix, make_sparse, normalize_adjacency
from .models import ModelSpec, Parameters, embed, score_edges

logger = logging.getLogger(__name__)


# ===========================================
# Разбиение рёбер
# ===========================================

@dataclass(frozen=True)
class EdgeSplit:
    """Обучающая смежность и пары (i < j) для валидации и теста."""
    train_adjacency: SparseMatrix
    val_pos: np.ndarray
    val_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray


def _pair_keys(pairs: np.ndarray, n: int) -> np.ndarray:
    return pairs[:, 0].astype(np.int64) * n + pairs[:, 1].astype(np.int64)


def _sample_non_edges(graph: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    """Пары несмежных узлов исходного графа (i < j), без повторов и петель."""
    n = graph.n_nodes
    available = n * (n - 1) // 2 - graph.n_edges
    if count > available:
        raise SplitError(f"Нужно {count} отрицательных пар, а в графе всего {available} несмежных пар")
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)

    edge_keys = set(_pair_keys(graph.edge_pairs(), n).tolist())
    if available <= 4 * count:
        # Плотный граф: перечисляем все несмежные пары и выбираем без возвращения
        rows, cols = np.triu_indices(n, k=1)
        candidates = np.column_stack([rows, cols]).astype(np.int64)
        mask = ~np.isin(_pair_keys(candidates, n), np.fromiter(edge_keys, dtype=np.int64, count=len(edge_keys)))
        candidates = candidates[mask]
        return candidates[rng.choice(len(candidates), size=count, replace=False)]

    chosen: List[Tuple[int, int]] = []
    seen = set()
    while len(chosen) < count:
        batch = rng.integers(0, n, size=(2 * (count - len(chosen)) + 8, 2))
        for i, j in batch.tolist():
            if i == j:
                continue
            i, j = min(i, j), max(i, j)
            key = i * n + j
            if key in edge_keys or key in seen:
                continue
            seen.add(key)
            chosen.append((i, j))
            if len(chosen) == count:
                break
    return np.asarray(chosen, dtype=np.int64)


def make_link_split(graph: Graph, val_frac: float = settings.DEFAULT_VAL_FRAC,
                    test_frac: float = settings.DEFAULT_TEST_FRAC, rng: Optional[np.random.Generator] = None,
                    train_frac: Optional[float] = None) -> EdgeSplit:
    """
    Удаляет floor(test_frac·m) рёбер в тест и floor(val_frac·m) в валидацию,
    добавляя столько же случайных несмежных пар. Связность не гарантируется.

    train_frac задаёт "жёсткое" разбиение: валидация = 1 - train_frac - test_frac.
    """
    if rng is None:
        rng = np.random.default_rng()
    if train_frac is not None:
        val_frac = 1.0 - train_frac - test_frac
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise SplitError(f"Некорректные доли разбиения: val={val_frac}, test={test_frac}")

    edges = graph.edge_pairs()
    m = len(edges)
    n_test = int(math.floor(test_frac * m + 1e-9))
    n_val = int(math.floor(val_frac * m + 1e-9))
    if m - n_test - n_val < 1:
        raise SplitError(f"Граф с {m} рёбрами слишком мал для разбиения val={n_val}, test={n_test}")

    negatives = _sample_non_edges(graph, n_test + n_val, rng)
    order = rng.permutation(m)
    test_pos = edges[order[:n_test]]
    val_pos = edges[order[n_test:n_test + n_val]]
    train = edges[order[n_test + n_val:]]

    n = graph.n_nodes
    weights = np.asarray(graph.adjacency[train[:, 0], train[:, 1]], dtype=np.float64).ravel()
    train_adjacency = make_sparse(n, n, np.r_[train[:, 0], train[:, 1]], np.r_[train[:, 1], train[:, 0]],
                                  np.r_[weights, weights])
    logger.debug(f"Разбиение '{graph.name}': train={len(train)}, val={n_val}, test={n_test}")
    return EdgeSplit(train_adjacency=train_adjacency, val_pos=val_pos, val_neg=negatives[n_test:],
                     test_pos=test_pos, test_neg=negatives[:n_test])


# ===========================================
# Метрики ранжирования
# ===========================================

def roc_auc(pos_scores, neg_scores) -> float:
    """Форма Манна-Уитни: доля пар (pos, neg) с pos > neg, ничьи дают 1/2."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if not len(pos) or not len(neg):
        raise ValueError("roc_auc: пустой набор положительных или отрицательных оценок")
    ranks = rankdata(np.concatenate([pos, neg]))
    n_pos = len(pos)
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * len(neg)))


def average_precision(pos_scores, neg_scores) -> float:
    """AP = Σ (R_k - R_{k-1}) P_k по убывающим порогам; равные оценки - один порог."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if not len(pos):
        raise ValueError("average_precision: нет положительных оценок")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(-scores, kind='mergesort')
    scores, labels = scores[order], labels[order]
    thresholds = np.r_[np.flatnonzero(np.diff(scores)), len(scores) - 1]
    true_pos = np.cumsum(labels)[thresholds]
    precision = true_pos / (thresholds + 1)
    recall = true_pos / len(pos)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


# ===========================================
# k-means
# ===========================================

@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centroids: DenseMatrix
    inertia: float
    n_iter: int = 0
    inertia_trace: List[float] = field(default_factory=list)


def _squared_distances(points: DenseMatrix, centroids: DenseMatrix) -> DenseMatrix:
    chunk = max(1, 4_194_304 // max(1, centroids.size))
    out = np.empty((len(points), len(centroids)))
    for start in range(0, len(points), chunk):
        diff = points[start:start + chunk, None, :] - centroids[None, :, :]
        out[start:start + chunk] = np.einsum('ijk,ijk->ij', diff, diff)
    return out


def _kmeans_plus_plus(points: DenseMatrix, k: int, rng: np.random.Generator) -> DenseMatrix:
    """Затравка k-means++: следующий центр с вероятностью ∝ D(x)^2."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = _squared_distances(points, points[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(n, p=closest / total))
        else:
            # Все точки совпадают с центрами: берём любую ещё не выбранную
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        closest = np.minimum(closest, _squared_distances(points, points[[index]]).ravel())
    return points[chosen].copy()


def kmeans(z: DenseMatrix, k: int, rng: np.random.Generator, max_iter: int = settings.KMEANS_MAX_ITER,
           tol: float = settings.KMEANS_TOL) -> ClusteringResult:
    """
    Итерации Ллойда от затравки k-means++ до сдвига центров < tol или max_iter.
    Пустой кластер получает самую удалённую от своего центра точку.
    """
    points = np.asarray(z, dtype=np.float64)
    n = len(points)
    if k < 1 or k > n:
        raise ValueError(f"kmeans: k={k} при n={n}")

    centroids = _kmeans_plus_plus(points, k, rng)
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        distances = _squared_distances(points, centroids)
        labels = distances.argmin(axis=1)
        own = distances[np.arange(n), labels]
        trace.append(float(own.sum()))

        counts = np.bincount(labels, minlength=k)
        updated = np.zeros_like(centroids)
        np.add.at(updated, labels, points)
        nonempty = counts > 0
        updated[nonempty] /= counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            farthest = np.argsort(-own, kind='mergesort')[:len(empty)]
            updated[empty] = points[farthest]
            logger.debug(f"k-means: {len(empty)} пустых кластеров пересеяны")

        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < tol:
            break

    distances = _squared_distances(points, centroids)
    labels = distances.argmin(axis=1)
    inertia = float(distances[np.arange(n), labels].sum())
    return ClusteringResult(assignments=labels, centroids=centroids, inertia=inertia,
                            n_iter=n_iter, inertia_trace=trace + [inertia])


# ===========================================
# AMI
# ===========================================

def _contingency(truth: np.ndarray, pred: np.ndarray) -> np.ndarray:
    _, truth_idx = np.unique(truth, return_inverse=True)
    _, pred_idx = np.unique(pred, return_inverse=True)
    table = sp.coo_matrix((np.ones(len(truth), dtype=np.int64), (truth_idx.ravel(), pred_idx.ravel())))
    return table.toarray()


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    total = counts.sum()
    return float(-np.sum((counts / total) * (np.log(counts) - np.log(total))))


def _mutual_information(table: np.ndarray) -> float:
    total = float(table.sum())
    rows, cols = np.nonzero(table)
    nij = table[rows, cols].astype(np.float64)
    a = table.sum(axis=1)[rows].astype(np.float64)
    b = table.sum(axis=0)[cols].astype(np.float64)
    return float(np.sum(nij / total * (np.log(total * nij) - np.log(a * b))))


def expected_mutual_information(row_totals, col_totals) -> float:
    """Точное E[MI] по гипергеометрическому распределению при фиксированных маргиналах."""
    a = np.asarray(row_totals, dtype=np.int64)
    b = np.asarray(col_totals, dtype=np.int64)
    n = int(a.sum())
    gln_a, gln_b = gammaln(a + 1), gammaln(b + 1)
    gln_na, gln_nb = gammaln(n - a + 1), gammaln(n - b + 1)
    gln_n = gammaln(n + 1)
    emi = 0.0
    for i, ai in enumerate(a.tolist()):
        for j, bj in enumerate(b.tolist()):
            start, end = max(1, ai + bj - n), min(ai, bj)
            if start > end:
                continue
            nij = np.arange(start, end + 1, dtype=np.float64)
            log_ratio = np.log(n * nij) - math.log(ai * bj)
            log_prob = (gln_a[i] + gln_b[j] + gln_na[i] + gln_nb[j] - gln_n - gammaln(nij + 1)
                        - gammaln(ai - nij + 1) - gammaln(bj - nij + 1) - gammaln(n - ai - bj + nij + 1))
            emi += float(np.sum(nij / n * log_ratio * np.exp(log_prob)))
    return emi


def adjusted_mutual_information(pred, truth) -> float:
    """
    AMI = (MI - E[MI]) / (mean(H(pred), H(truth)) - E[MI]), натуральный логарифм.
    Нулевой знаменатель (тривиальные разбиения, MI = E[MI]) даёт 0.
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if len(pred) != len(truth):
        raise ValueError(f"AMI: длины разбиений различаются ({len(pred)} и {len(truth)})")
    if not len(pred):
        raise ValueError("AMI: пустые разбиения")
    table = _contingency(truth, pred)
    mi = _mutual_information(table)
    emi = expected_mutual_information(table.sum(axis=1), table.sum(axis=0))
    normalizer = 0.5 * (_entropy(table.sum(axis=1)) + _entropy(table.sum(axis=0)))
    denominator = normalizer - emi
    if abs(denominator) < 1e-12:
        return 0.0
    return float((mi - emi) / denominator)


# ===========================================
# Сводки и оценка моделей
# ===========================================

class MetricSummary(BaseModel):
    """Значения метрики по повторам, среднее и выборочное ст. отклонение (n-1)."""
    model_config = ConfigDict(frozen=True)

    metric: str
    per_run: List[float]
    mean: float
    std: float

    @classmethod
    def from_values(cls, metric: str, values) -> 'MetricSummary':
        values = [float(v) for v in values]
        mean = float(np.mean(values)) if values else 0.0
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return cls(metric=metric, per_run=values, mean=mean, std=std)

    @model_validator(mode='after')
    def check_recomputable(self):
        mean = float(np.mean(self.per_run)) if self.per_run else 0.0
        std = float(np.std(self.per_run, ddof=1)) if len(self.per_run) > 1 else 0.0
        if not (math.isclose(mean, self.mean, rel_tol=1e-12, abs_tol=1e-12)
                and math.isclose(std, self.std, rel_tol=1e-12, abs_tol=1e-12)):
            raise ValueError(f"Сводка '{self.metric}' не согласована со значениями по повторам")
        return self


def evaluate_link_prediction(params: Parameters, spec: ModelSpec, split: EdgeSplit, features: FeatureMatrix,
                             a_norm: Optional[SparseMatrix] = None) -> Tuple[float, float]:
    """AUC и AP на тестовых парах; для VAE эмбеддинг - μ."""
    if a_norm is None:
        a_norm = normalize_adjacency(split.train_adjacency)
    z = embed(a_norm, features, params, spec)
    pos_scores = score_edges(z, split.test_pos)
    neg_scores = score_edges(z, split.test_neg)
    return roc_auc(pos_scores, neg_scores), average_precision(pos_scores, neg_scores)


def evaluate_clustering(params: Parameters, spec: ModelSpec, graph: Graph, features: FeatureMatrix,
                        rng: np.random.Generator, a_norm: Optional[SparseMatrix] = None,
                        n_clusters: Optional[int] = None) -> float:
    """AMI кластеров k-means в пространстве эмбеддингов против меток графа (k по умолчанию = число классов)."""
    if graph.labels is None:
        raise InvalidGraphError(f"Граф '{graph.name}' без меток: кластеризацию оценить нельзя")
    if a_norm is None:
        a_norm = normalize_adjacency(graph.adjacency)
    z = embed(a_norm, features, params, spec)
    result = kmeans(z, n_clusters or graph.n_classes, rng)
    return adjusted_mutual_information(result.assignments, graph.labels)
