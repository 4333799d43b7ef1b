"""
Числовая основа: разреженные/плотные матрицы, нормализация смежности, граф.

SparseMatrix - это scipy.sparse.csr_matrix в каноническом виде
(indptr = row_offsets, indices = col_indices, data = values), DenseMatrix -
numpy.ndarray формы (n_rows, n_cols) с dtype float64.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError, InvalidGraphError

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix
DenseMatrix = np.ndarray
# Признаки узлов: разреженные (bag-of-words), плотные или отсутствуют (I_n)
FeatureMatrix = Optional[Union[SparseMatrix, DenseMatrix]]


# ===========================================
# Построение матриц
# ===========================================

def canonicalize(matrix) -> SparseMatrix:
    """Приводит матрицу к каноническому CSR: float64, отсортированные столбцы, без дублей."""
    csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
    csr.sum_duplicates()
    return csr


def make_sparse(n_rows, n_cols, rows, cols, values=None) -> SparseMatrix:
    """
    Собирает CSR из списка (row, col, value) в произвольном порядке.
    Повторяющиеся позиции суммируются, результат не зависит от порядка входа.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if values is None:
        values = np.ones(len(rows), dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if not (len(rows) == len(cols) == len(values)):
        raise DimensionMismatchError(
            f"Длины rows/cols/values не совпадают: {len(rows)}, {len(cols)}, {len(values)}")
    if len(rows) and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise DimensionMismatchError(f"Индекс вне матрицы {n_rows}x{n_cols}")
    # lexsort даёт одинаковый порядок суммирования дублей при любом порядке входа
    order = np.lexsort((values, cols, rows))
    coo = sp.coo_matrix((values[order], (rows[order], cols[order])), shape=(n_rows, n_cols))
    return canonicalize(coo)


def is_symmetric(matrix: SparseMatrix) -> bool:
    if matrix.shape[0] != matrix.shape[1]:
        return False
    return (matrix != matrix.T).nnz == 0


# ===========================================
# Ядра
# ===========================================

def spmm(a: SparseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Произведение разреженной CSR матрицы на плотную."""
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatchError(f"spmm: {a.shape} x {b.shape}")
    return np.asarray(a @ b, dtype=np.float64)


def gemm(a: DenseMatrix, b: DenseMatrix, transpose_a=False, transpose_b=False) -> DenseMatrix:
    """Плотное произведение op(a) @ op(b), op - транспонирование по флагу."""
    left = a.T if transpose_a else a
    right = b.T if transpose_b else b
    if left.shape[1] != right.shape[0]:
        raise DimensionMismatchError(f"gemm: {left.shape} x {right.shape}")
    return np.matmul(left, right)


def right_multiply(h: FeatureMatrix, w: DenseMatrix) -> DenseMatrix:
    """H @ W; H = None означает единичную матрицу, которую не материализуем."""
    if h is None:
        return w
    if sp.issparse(h):
        return spmm(sp.csr_matrix(h), w)
    return gemm(h, w)


def transpose_multiply(h: FeatureMatrix, s: DenseMatrix) -> DenseMatrix:
    """H^T @ S с тем же соглашением H = None -> I."""
    if h is None:
        return s
    if h.shape[0] != s.shape[0]:
        raise DimensionMismatchError(f"transpose_multiply: {h.shape}^T x {s.shape}")
    if sp.issparse(h):
        return np.asarray(h.T @ s, dtype=np.float64)
    return gemm(h, s, transpose_a=True)


# ===========================================
# Нормализация смежности
# ===========================================

def _require_square(adjacency):
    if adjacency.shape[0] != adjacency.shape[1]:
        raise DimensionMismatchError(f"Матрица смежности не квадратная: {adjacency.shape}")


def degree_vector(adjacency: SparseMatrix, add_self_loops=False) -> np.ndarray:
    """Взвешенные степени узлов; +1 на узел при add_self_loops."""
    _require_square(adjacency)
    degrees = np.asarray(adjacency.sum(axis=1), dtype=np.float64).ravel()
    if add_self_loops:
        degrees = degrees + 1.0
    return degrees


def normalize_adjacency(adjacency: SparseMatrix) -> SparseMatrix:
    """
    Ã = D^{-1/2} (A + I) D^{-1/2}, D - степени A + I.

    Значение (i, j) считается как (d_i^{-1/2} * d_j^{-1/2}) * a_ij, поэтому
    Ã симметрична побитово при симметричной A.
    """
    adjacency = canonicalize(adjacency)
    _require_square(adjacency)
    if adjacency.nnz and adjacency.data.min() < 0:
        raise InvalidGraphError("Отрицательный вес ребра в матрице смежности")

    n = adjacency.shape[0]
    with_loops = (adjacency + sp.identity(n, dtype=np.float64, format='csr')).tocoo()
    d_inv_sqrt = 1.0 / np.sqrt(degree_vector(adjacency, add_self_loops=True))
    scale = d_inv_sqrt[with_loops.row] * d_inv_sqrt[with_loops.col]
    return make_sparse(n, n, with_loops.row, with_loops.col, scale * with_loops.data)


# ===========================================
# Граф
# ===========================================

@dataclass(frozen=True)
class Graph:
    """
    Неориентированный граф: симметричная смежность без петель,
    необязательные признаки (n x f) и метки классов 0..k-1.
    """
    adjacency: SparseMatrix
    features: FeatureMatrix = None
    labels: Optional[np.ndarray] = None
    is_weighted: bool = False
    name: str = "graph"

    def __post_init__(self):
        adjacency = self.adjacency
        _require_square(adjacency)
        if not is_symmetric(adjacency):
            raise InvalidGraphError(f"Граф '{self.name}': смежность не симметрична")
        if adjacency.diagonal().any():
            raise InvalidGraphError(f"Граф '{self.name}': петли не хранятся в смежности")
        n = adjacency.shape[0]
        if self.features is not None and self.features.shape[0] != n:
            raise DimensionMismatchError(
                f"Граф '{self.name}': признаков {self.features.shape[0]} строк, узлов {n}")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise DimensionMismatchError(f"Граф '{self.name}': меток {labels.shape}, узлов {n}")
            if n and not np.array_equal(np.unique(labels), np.arange(labels.max() + 1)):
                raise InvalidGraphError(f"Граф '{self.name}': метки классов не образуют 0..k-1")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def n_features(self) -> Optional[int]:
        return None if self.features is None else self.features.shape[1]

    @property
    def n_classes(self) -> Optional[int]:
        return None if self.labels is None else int(np.max(self.labels)) + 1

    def edge_pairs(self) -> np.ndarray:
        """Рёбра как массив (m, 2) пар i < j в порядке CSR."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        pairs = np.column_stack([upper.row, upper.col]).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]
