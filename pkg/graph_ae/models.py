"""
Энкодеры (linear / GCN, AE / VAE) и декодер скалярного произведения.

Все прямые проходы чистые: результат зависит только от входов и явно
переданного генератора случайных чисел.
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

from gae_bench import settings

from .exceptions import DecoderSizeError, DimensionMismatchError
from .linalg import DenseMatrix, FeatureMatrix, SparseMatrix, gemm, right_multiply, spmm

logger = logging.getLogger(__name__)


# --- Описание модели ---

class ModelSpec(BaseModel):
    """
    Декларативное описание модели.

    encoder=linear -> depth=1 и нет скрытых слоёв; encoder=gcn -> depth >= 2,
    скрытые слои по умолчанию 32-мерные.
    """
    model_config = ConfigDict(frozen=True)

    encoder: Literal['linear', 'gcn']
    depth: int = 1
    variational: bool = False
    embedding_dim: int = Field(default=settings.DEFAULT_EMBEDDING_DIM, ge=1)
    hidden_dims: Tuple[int, ...] = ()
    use_features: bool = False
    # Только для GCN VAE: False -> отдельные сети для μ и log σ
    shared_trunk: bool = True

    @field_validator('hidden_dims', mode='before')
    @classmethod
    def parse_hidden_dims(cls, value):
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(',') if part.strip())
        return value

    @model_validator(mode='before')
    @classmethod
    def fill_defaults(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if data.get('encoder') == 'gcn':
            depth = int(data.get('depth') or 2)
            data['depth'] = depth
            if not data.get('hidden_dims'):
                data['hidden_dims'] = (settings.DEFAULT_HIDDEN_DIM,) * (depth - 1)
        elif data.get('encoder') == 'linear' and data.get('depth') is None:
            data['depth'] = 1
        return data

    @model_validator(mode='after')
    def check_layout(self):
        if self.encoder == 'linear' and (self.depth != 1 or self.hidden_dims):
            raise ValueError("Линейный энкодер: depth = 1 и без скрытых слоёв")
        if self.encoder == 'gcn':
            if self.depth < 2:
                raise ValueError("GCN энкодер требует depth >= 2")
            if len(self.hidden_dims) != self.depth - 1:
                raise ValueError(
                    f"hidden_dims должно содержать depth-1 = {self.depth - 1} размеров, получено {len(self.hidden_dims)}")
        if any(dim < 1 for dim in self.hidden_dims):
            raise ValueError("Размеры скрытых слоёв должны быть >= 1")
        return self

    @property
    def label(self) -> str:
        family = 'linear' if self.encoder == 'linear' else f'gcn{self.depth}'
        return f"{family}_{'vae' if self.variational else 'ae'}"

    @property
    def display_name(self) -> str:
        family = 'Linear' if self.encoder == 'linear' else f'{self.depth}-layer GCN'
        return f"{family} {'VAE' if self.variational else 'AE'}"

    @property
    def trunk_depth(self) -> int:
        return self.depth - 1


# --- Параметры и кэш прямого прохода ---

@dataclass(frozen=True)
class Parameters:
    """
    Весовые матрицы в фиксированном порядке:
    AE: W^(0..L-1); VAE: W^(0..L-2), W_mu, W_sigma;
    VAE с раздельными сетями: ствол μ, W_mu, ствол σ, W_sigma.
    """
    weights: Tuple[DenseMatrix, ...]

    def __len__(self):
        return len(self.weights)

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return [w.shape for w in self.weights]


@dataclass(frozen=True)
class ForwardCache:
    """
    Промежуточные значения прямого прохода для обратного.

    layer_activations - H^(0)..H^(L); H^(0) = None означает I_n
    (беспризнаковый вход не материализуется). Для VAE последний элемент - μ.
    """
    a_norm: SparseMatrix
    features: FeatureMatrix
    layer_activations: Tuple[Optional[DenseMatrix], ...]
    z: DenseMatrix
    mu: Optional[DenseMatrix] = None
    # log σ после клипа; log_sigma_active - где клип не сработал (там градиент ненулевой)
    log_sigma: Optional[DenseMatrix] = None
    log_sigma_active: Optional[np.ndarray] = None
    epsilon: Optional[DenseMatrix] = None
    sigma_activations: Optional[Tuple[Optional[DenseMatrix], ...]] = None

    @property
    def variational(self) -> bool:
        return self.mu is not None


def parameter_shapes(spec: ModelSpec, n_input: int) -> List[Tuple[int, int]]:
    dims = [n_input, *spec.hidden_dims, spec.embedding_dim]
    trunk = [(dims[layer], dims[layer + 1]) for layer in range(spec.trunk_depth)]
    head = (dims[spec.trunk_depth], spec.embedding_dim)
    if not spec.variational:
        return trunk + [head]
    if spec.shared_trunk:
        return trunk + [head, head]
    return trunk + [head] + trunk + [head]


def head_indices(spec: ModelSpec) -> Tuple[int, Optional[int]]:
    """Индексы выходных матриц: (W^(L-1) или W_mu, W_sigma или None)."""
    t = spec.trunk_depth
    if not spec.variational:
        return t, None
    if spec.shared_trunk:
        return t, t + 1
    return t, 2 * t + 1


def input_dim(spec: ModelSpec, n_nodes: int, features: FeatureMatrix) -> int:
    if not spec.use_features:
        return n_nodes
    if features is None:
        raise DimensionMismatchError("Модель использует признаки, но они не переданы")
    return features.shape[1]


def init_parameters(spec: ModelSpec, n_input: int, rng: np.random.Generator) -> Parameters:
    """Glorot/Xavier uniform: U(-r, r), r = sqrt(6 / (fan_in + fan_out))."""
    weights = []
    for fan_in, fan_out in parameter_shapes(spec, n_input):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return Parameters(tuple(weights))


def check_parameters(params: Parameters, spec: ModelSpec, n_input: int):
    expected = parameter_shapes(spec, n_input)
    if params.shapes != expected:
        raise DimensionMismatchError(f"Формы весов {params.shapes} не совпадают с ожидаемыми {expected}")


# --- Энкодеры ---

def propagate(a_norm: SparseMatrix, h: FeatureMatrix, w: DenseMatrix) -> DenseMatrix:
    """Ã H W; при H = None считается Ã W."""
    return spmm(a_norm, right_multiply(h, w))


def trunk_forward(a_norm, features, trunk_weights) -> List[Optional[DenseMatrix]]:
    """Скрытые слои H^(l) = ReLU(Ã H^(l-1) W^(l-1)); возвращает H^(0)..H^(L-1)."""
    activations = [features]
    for w in trunk_weights:
        activations.append(np.maximum(propagate(a_norm, activations[-1], w), 0.0))
    return activations


def encode_linear(a_norm: SparseMatrix, features: FeatureMatrix, w: DenseMatrix) -> DenseMatrix:
    """Z = ÃW без признаков, Z = ÃXW с признаками."""
    expected_rows = a_norm.shape[1] if features is None else features.shape[1]
    if w.shape[0] != expected_rows:
        raise DimensionMismatchError(f"encode_linear: W {w.shape}, ожидалось {expected_rows} строк")
    if features is not None and features.shape[0] != a_norm.shape[1]:
        raise DimensionMismatchError(f"encode_linear: X {features.shape} и Ã {a_norm.shape}")
    return propagate(a_norm, features, w)


def clamp_log_sigma(log_sigma: DenseMatrix) -> DenseMatrix:
    return np.clip(log_sigma, settings.LOG_SIGMA_MIN, settings.LOG_SIGMA_MAX)


def reparameterize(mu: DenseMatrix, log_sigma: DenseMatrix,
                   rng: np.random.Generator) -> Tuple[DenseMatrix, DenseMatrix]:
    """z = μ + exp(log σ) ⊙ ε, ε ~ N(0, I); ε возвращается для обратного прохода."""
    if mu.shape != log_sigma.shape:
        raise DimensionMismatchError(f"reparameterize: μ {mu.shape}, log σ {log_sigma.shape}")
    epsilon = rng.standard_normal(mu.shape)
    return mu + np.exp(clamp_log_sigma(log_sigma)) * epsilon, epsilon


def encode(a_norm: SparseMatrix, features: FeatureMatrix, params: Parameters, spec: ModelSpec,
           rng: Optional[np.random.Generator] = None,
           epsilon: Optional[DenseMatrix] = None) -> ForwardCache:
    """
    Прямой проход любой из архитектур.

    Для VAE: epsilon задан -> используется он (замороженный шум),
    иначе rng -> свежая выборка, иначе детерминированный режим ε = 0, z = μ.
    """
    n = a_norm.shape[0]
    inputs = features if spec.use_features else None
    check_parameters(params, spec, input_dim(spec, n, inputs))

    t = spec.trunk_depth
    weights = params.weights
    activations = trunk_forward(a_norm, inputs, weights[:t])
    first_head, second_head = head_indices(spec)
    output = propagate(a_norm, activations[-1], weights[first_head])

    if not spec.variational:
        return ForwardCache(a_norm=a_norm, features=inputs,
                            layer_activations=tuple(activations) + (output,), z=output)

    mu = output
    sigma_activations = None
    if spec.shared_trunk:
        log_sigma = propagate(a_norm, activations[-1], weights[second_head])
    else:
        sigma_activations = tuple(trunk_forward(a_norm, inputs, weights[t + 1:second_head]))
        log_sigma = propagate(a_norm, sigma_activations[-1], weights[second_head])

    log_sigma_active = (log_sigma > settings.LOG_SIGMA_MIN) & (log_sigma < settings.LOG_SIGMA_MAX)
    log_sigma = clamp_log_sigma(log_sigma)
    if epsilon is not None:
        if epsilon.shape != mu.shape:
            raise DimensionMismatchError(f"ε {epsilon.shape}, μ {mu.shape}")
        z = mu + np.exp(log_sigma) * epsilon
    elif rng is not None:
        z, epsilon = reparameterize(mu, log_sigma, rng)
    else:
        epsilon = np.zeros_like(mu)
        z = mu.copy()

    return ForwardCache(a_norm=a_norm, features=inputs,
                        layer_activations=tuple(activations) + (mu,), z=z, mu=mu,
                        log_sigma=log_sigma, log_sigma_active=log_sigma_active, epsilon=epsilon,
                        sigma_activations=sigma_activations)


def encode_gcn(a_norm: SparseMatrix, features: FeatureMatrix, params: Parameters, spec: ModelSpec,
               rng: Optional[np.random.Generator] = None) -> ForwardCache:
    if spec.encoder != 'gcn':
        raise ValueError(f"encode_gcn вызван для энкодера '{spec.encoder}'")
    return encode(a_norm, features, params, spec, rng=rng)


def embed(a_norm: SparseMatrix, features: FeatureMatrix, params: Parameters, spec: ModelSpec) -> DenseMatrix:
    """Эмбеддинг для оценки: Z для AE, μ для VAE (без сэмплирования)."""
    cache = encode(a_norm, features, params, spec)
    return cache.mu if cache.variational else cache.z


# --- Декодер ---

def check_decoder_size(n_nodes: int, max_nodes: int = settings.DECODER_MAX_NODES):
    if n_nodes > max_nodes:
        raise DecoderSizeError(
            f"Декодер ZZ^T для n={n_nodes} превышает лимит {max_nodes} узлов")


def decode_inner_product_logits(z: DenseMatrix, max_nodes: int = settings.DECODER_MAX_NODES) -> DenseMatrix:
    """Полная симметричная матрица логитов ZZ^T (вероятности - sigmoid от неё)."""
    check_decoder_size(z.shape[0], max_nodes)
    logits = gemm(z, z, transpose_b=True)
    return np.triu(logits) + np.triu(logits, k=1).T


def score_edges(z: DenseMatrix, pairs) -> np.ndarray:
    """σ(z_i · z_j) для каждой пары без построения n x n матрицы."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = z.shape[0]
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n):
        raise IndexError(f"Индекс пары вне диапазона 0..{n - 1}")
    logits = np.einsum('ij,ij->i', z[pairs[:, 0]], z[pairs[:, 1]])
    return expit(logits)
