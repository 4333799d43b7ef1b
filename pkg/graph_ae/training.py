"""
Функции потерь, точный обратный проход и Adam.

Цель: norm * взвешенная BCE по всем n^2 парам (включая петли) +
kl_scale * KL(q(Z|A) || N(0, I)) для VAE.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit
import scipy.sparse as sp

from gae_bench import settings

from .evaluation import average_precision, roc_auc
from .exceptions import DimensionMismatchError, DivergenceError, InvalidGraphError, NonFiniteGradientError
from .linalg import DenseMatrix, FeatureMatrix, SparseMatrix, gemm, normalize_adjacency, spmm, transpose_multiply
from .models import (
    ForwardCache, ModelSpec, Parameters, check_decoder_size, check_parameters, clamp_log_sigma, encode,
    head_indices, init_parameters, input_dim, score_edges,
)

logger = logging.getLogger(__name__)


# ===========================================
# Конфигурации
# ===========================================

class LossConfig(BaseModel):
    """Константы взвешенной кросс-энтропии и масштаб KL (0 для AE, 1/n для VAE)."""
    model_config = ConfigDict(frozen=True)

    pos_weight: float = Field(gt=0)
    norm: float = Field(gt=0)
    kl_scale: float = Field(default=0.0, ge=0)


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=settings.DEFAULT_EPOCHS, ge=0)
    learning_rate: float = Field(default=settings.DEFAULT_LEARNING_RATE, gt=0)
    beta1: float = Field(default=settings.ADAM_BETA1, ge=0, lt=1)
    beta2: float = Field(default=settings.ADAM_BETA2, ge=0, lt=1)
    epsilon_hat: float = Field(default=settings.ADAM_EPSILON, gt=0)
    decoder_max_nodes: int = Field(default=settings.DECODER_MAX_NODES, ge=1)


def reconstruction_target(train_adjacency: SparseMatrix) -> SparseMatrix:
    """Положительные метки: A_train + I."""
    n = train_adjacency.shape[0]
    target = sp.csr_matrix(train_adjacency, dtype=np.float64) + sp.identity(n, dtype=np.float64, format='csr')
    target.data[:] = 1.0
    return target


def loss_config_for(train_adjacency: SparseMatrix, variational: bool) -> LossConfig:
    """
    S = 2|E_train| + n положительных элементов цели;
    pos_weight = (n^2 - S) / S, norm = n^2 / (2 (n^2 - S)).
    """
    n = train_adjacency.shape[0]
    positives = train_adjacency.nnz + n
    total = n * n
    if positives >= total:
        raise InvalidGraphError("Обучающий граф полный: нет отрицательных пар для реконструкции")
    return LossConfig(
        pos_weight=(total - positives) / positives,
        norm=total / (2.0 * (total - positives)),
        kl_scale=1.0 / n if variational else 0.0,
    )


# ===========================================
# Потери
# ===========================================

def _weighted_bce(logits, labels, pos_weight):
    # (1 - y) x + (1 + (w - 1) y) log(1 + e^{-x}), log(1 + e^{-x}) через max(-x, 0) + log1p(e^{-|x|})
    softplus_neg = np.maximum(-logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    return (1.0 - labels) * logits + (1.0 + (pos_weight - 1.0) * labels) * softplus_neg


def reconstruction_loss(logits: DenseMatrix, target: SparseMatrix, cfg: LossConfig) -> float:
    """norm * среднее по n^2 элементам взвешенной BCE, считается по логитам."""
    if logits.shape != target.shape or logits.shape[0] != logits.shape[1]:
        raise DimensionMismatchError(f"reconstruction_loss: логиты {logits.shape}, цель {target.shape}")
    labels = target.toarray()
    return float(cfg.norm * _weighted_bce(logits, labels, cfg.pos_weight).mean())


def kl_divergence(mu: DenseMatrix, log_sigma: DenseMatrix) -> float:
    """(1/n) Σ ½(exp(2 log σ) + μ² - 1 - 2 log σ)."""
    if mu.shape != log_sigma.shape:
        raise DimensionMismatchError(f"kl_divergence: μ {mu.shape}, log σ {log_sigma.shape}")
    clamped = clamp_log_sigma(log_sigma)
    # expm1(2l) - 2l не теряет точность около нуля и остаётся >= 0
    terms = np.expm1(2.0 * clamped) - 2.0 * clamped + mu * mu
    return float(0.5 * terms.sum() / mu.shape[0])


def _reconstruction_terms(z: DenseMatrix, target: SparseMatrix, cfg: LossConfig, need_grad: bool):
    """
    Потеря реконструкции и dL/dZ по блокам строк ZZ^T.

    Матрица логитов симметрична, поэтому dL/dZ = 2 G Z, G = dL/dlogits.
    """
    n = z.shape[0]
    if target.shape != (n, n):
        raise DimensionMismatchError(f"Цель {target.shape} не соответствует Z {z.shape}")
    block = max(1, settings.DECODER_BLOCK_ENTRIES // max(n, 1))
    scale = cfg.norm / float(n * n)
    total = 0.0
    grad = np.zeros_like(z) if need_grad else None
    for start in range(0, n, block):
        stop = min(n, start + block)
        logits = gemm(z[start:stop], z, transpose_b=True)
        labels = target[start:stop].toarray()
        total += float(_weighted_bce(logits, labels, cfg.pos_weight).sum())
        if need_grad:
            residual = (1.0 - labels) - (1.0 + (cfg.pos_weight - 1.0) * labels) * expit(-logits)
            grad[start:stop] = (2.0 * scale) * gemm(residual, z)
    return scale * total, grad


def total_loss(cache: ForwardCache, target: SparseMatrix, spec: ModelSpec, cfg: LossConfig) -> float:
    loss, _ = _reconstruction_terms(cache.z, target, cfg, need_grad=False)
    if spec.variational:
        loss += cfg.kl_scale * kl_divergence(cache.mu, cache.log_sigma)
    return loss


# ===========================================
# Обратный проход
# ===========================================

@dataclass(frozen=True)
class GradientSet:
    grads: Tuple[DenseMatrix, ...]

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.grads)


def _head_backward(a_norm, h, w, d_out, need_input_grad):
    """Для out = Ã H W: dW = H^T Ã^T dOut, dH = Ã^T dOut W^T."""
    propagated = spmm(a_norm.T, d_out)
    grad_w = transpose_multiply(h, propagated)
    d_h = gemm(propagated, w, transpose_b=True) if need_input_grad else None
    return grad_w, d_h


def _trunk_backward(a_norm, activations, trunk_weights, d_h):
    grads = [None] * len(trunk_weights)
    for layer in reversed(range(len(trunk_weights))):
        d_pre = d_h * (activations[layer + 1] > 0)
        grads[layer], d_h = _head_backward(a_norm, activations[layer], trunk_weights[layer], d_pre,
                                           need_input_grad=layer > 0)
    return grads


def _loss_and_gradients(cache, target, params, spec, cfg) -> Tuple[float, GradientSet]:
    if cache.variational != spec.variational:
        raise DimensionMismatchError("Кэш прямого прохода не соответствует ModelSpec (AE/VAE)")
    n = cache.z.shape[0]
    check_parameters(params, spec, input_dim(spec, n, cache.features))

    loss, d_z = _reconstruction_terms(cache.z, target, cfg, need_grad=True)
    a_norm = cache.a_norm
    weights = params.weights
    t = spec.trunk_depth
    first_head, second_head = head_indices(spec)
    activations = cache.layer_activations[:-1]
    grads: List[Optional[DenseMatrix]] = [None] * len(weights)

    if not spec.variational:
        grads[first_head], d_h = _head_backward(a_norm, activations[-1], weights[first_head], d_z, t > 0)
        grads[:t] = _trunk_backward(a_norm, activations, weights[:t], d_h)
        return loss, GradientSet(tuple(grads))

    loss += cfg.kl_scale * kl_divergence(cache.mu, cache.log_sigma)
    # dz/dμ = 1, dz/dlog σ = exp(log σ) ⊙ ε; вне границ клипа градиент 0
    d_mu = d_z + cfg.kl_scale * cache.mu / n
    log_sigma = cache.log_sigma
    d_log_sigma = (d_z * np.exp(log_sigma) * cache.epsilon
                   + cfg.kl_scale * np.expm1(2.0 * log_sigma) / n) * cache.log_sigma_active

    grads[first_head], d_h_mu = _head_backward(a_norm, activations[-1], weights[first_head], d_mu, t > 0)
    if spec.shared_trunk:
        grads[second_head], d_h_sigma = _head_backward(
            a_norm, activations[-1], weights[second_head], d_log_sigma, t > 0)
        if t:
            grads[:t] = _trunk_backward(a_norm, activations, weights[:t], d_h_mu + d_h_sigma)
    else:
        sigma_activations = cache.sigma_activations
        grads[second_head], d_h_sigma = _head_backward(
            a_norm, sigma_activations[-1], weights[second_head], d_log_sigma, t > 0)
        if t:
            grads[:t] = _trunk_backward(a_norm, activations, weights[:t], d_h_mu)
            grads[t + 1:second_head] = _trunk_backward(
                a_norm, sigma_activations, weights[t + 1:second_head], d_h_sigma)
    return loss, GradientSet(tuple(grads))


def backward(cache: ForwardCache, target: SparseMatrix, params: Parameters, spec: ModelSpec,
             cfg: LossConfig) -> GradientSet:
    """Точные градиенты norm·BCE + kl_scale·KL по всем весовым матрицам."""
    _, grads = _loss_and_gradients(cache, target, params, spec, cfg)
    return grads


# ===========================================
# Adam
# ===========================================

@dataclass(frozen=True)
class OptimizerState:
    step: int
    first_moment: Tuple[DenseMatrix, ...]
    second_moment: Tuple[DenseMatrix, ...]
    learning_rate: float
    beta1: float = settings.ADAM_BETA1
    beta2: float = settings.ADAM_BETA2
    epsilon_hat: float = settings.ADAM_EPSILON

    @classmethod
    def initial(cls, params: Parameters, hp: TrainingConfig) -> 'OptimizerState':
        zeros = tuple(np.zeros_like(w) for w in params.weights)
        return cls(step=0, first_moment=zeros, second_moment=zeros, learning_rate=hp.learning_rate,
                   beta1=hp.beta1, beta2=hp.beta2, epsilon_hat=hp.epsilon_hat)


def adam_step(params: Parameters, grads: GradientSet,
              state: OptimizerState) -> Tuple[Parameters, OptimizerState]:
    """Шаг Adam с коррекцией смещения моментов."""
    if [g.shape for g in grads.grads] != params.shapes or len(state.first_moment) != len(params):
        raise DimensionMismatchError("adam_step: формы градиентов и параметров не совпадают")
    if not grads.is_finite():
        raise NonFiniteGradientError(f"Неконечный градиент на шаге {state.step + 1}")

    step = state.step + 1
    bias1 = 1.0 - state.beta1 ** step
    bias2 = 1.0 - state.beta2 ** step
    weights, first, second = [], [], []
    for w, g, m, v in zip(params.weights, grads.grads, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        weights.append(w - state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon_hat))
        first.append(m)
        second.append(v)
    new_state = OptimizerState(step=step, first_moment=tuple(first), second_moment=tuple(second),
                               learning_rate=state.learning_rate, beta1=state.beta1, beta2=state.beta2,
                               epsilon_hat=state.epsilon_hat)
    return Parameters(tuple(weights)), new_state


# ===========================================
# Обучение
# ===========================================

@dataclass
class TrainResult:
    params: Parameters
    loss_trace: List[float] = field(default_factory=list)
    # Метрики на валидации по эпохам: только записываются, на обучение не влияют
    val_auc_trace: List[float] = field(default_factory=list)
    val_ap_trace: List[float] = field(default_factory=list)


def train(graph_train: SparseMatrix, features: FeatureMatrix, spec: ModelSpec, hp: TrainingConfig,
          rng: np.random.Generator, validation: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrainResult:
    """
    Полнобатчевое обучение: на каждой эпохе один прямой проход,
    один обратный и один шаг Adam.
    """
    n = graph_train.shape[0]
    check_decoder_size(n, hp.decoder_max_nodes)
    a_norm = normalize_adjacency(graph_train)
    target = reconstruction_target(graph_train)
    cfg = loss_config_for(graph_train, spec.variational)
    inputs = features if spec.use_features else None
    params = init_parameters(spec, input_dim(spec, n, inputs), rng)
    state = OptimizerState.initial(params, hp)
    result = TrainResult(params=params)
    logger.debug(f"Старт обучения {spec.label}: n={n}, epochs={hp.epochs}, lr={hp.learning_rate}, "
                 f"pos_weight={cfg.pos_weight:.3f}, norm={cfg.norm:.4f}")

    for epoch in range(hp.epochs):
        cache = encode(a_norm, inputs, params, spec, rng=rng)
        loss, grads = _loss_and_gradients(cache, target, params, spec, cfg)
        if not np.isfinite(loss):
            logger.error(f"Неконечная потеря на эпохе {epoch}: {loss}")
            raise DivergenceError(epoch, loss)
        result.loss_trace.append(loss)
        if validation is not None:
            embedding = cache.mu if cache.variational else cache.z
            val_pos, val_neg = validation
            if len(val_pos) and len(val_neg):
                pos_scores = score_edges(embedding, val_pos)
                neg_scores = score_edges(embedding, val_neg)
                result.val_auc_trace.append(roc_auc(pos_scores, neg_scores))
                result.val_ap_trace.append(average_precision(pos_scores, neg_scores))
        try:
            params, state = adam_step(params, grads, state)
        except NonFiniteGradientError:
            logger.error(f"Обучение {spec.label} прервано на эпохе {epoch}", exc_info=True)
            raise
        if epoch % 50 == 0:
            logger.debug(f"Эпоха {epoch}: loss={loss:.5f}")

    result.params = params
    if result.loss_trace:
        logger.debug(f"Обучение {spec.label} завершено: loss {result.loss_trace[0]:.5f} -> {result.loss_trace[-1]:.5f}")
    return result
