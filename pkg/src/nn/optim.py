"""
Функция потерь MSE и оптимизатор Adam
"""
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from ..shared.errors import DimensionError, DivergenceError


def mse_loss(predictions, targets) -> Tuple[float, np.ndarray]:
    """
    Среднеквадратичная ошибка (1/n)Σ(p-t)² и её градиент (2/n)(p-t)
    """
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DimensionError("mse_loss: empty vectors")
    if p.size != t.size:
        raise DimensionError(f"mse_loss: {p.size} predictions vs {t.size} targets")
    residual = p - t
    n = p.size
    return float(np.dot(residual, residual) / n), (2.0 / n) * residual


@dataclass(frozen=True, eq=False)
class AdamState:
    """Состояние Adam: шаг, первый и второй моменты, гиперпараметры"""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> 'AdamState':
        return cls(np.zeros(size), np.zeros(size), 0, lr, beta1, beta2, eps)

    def with_lr(self, lr: Optional[float]) -> 'AdamState':
        return self if lr is None else replace(self, lr=lr)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> Tuple[np.ndarray, AdamState]:
    """
    Один шаг Adam с коррекцией смещения моментов

    Raises:
        DivergenceError: NaN или Inf в градиенте
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError(f"adam_step: params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient; training diverged")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new_params)):
        raise DivergenceError("non-finite parameters after Adam step; training diverged")
    return new_params, replace(state, m=m, v=v, step=step)
