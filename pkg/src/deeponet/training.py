"""
Обучение операторных моделей: Adam по MSE на мини-батчах
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from ..nn.optim import AdamState, adam_step, mse_loss
from ..shared.errors import DimensionError, DivergenceError
from .model import BranchBatch, OperatorModelBase

logger = logging.getLogger(__name__)

# число частей мини-батча не зависит от числа потоков, поэтому результат тоже
GRADIENT_CHUNKS = 4

# потеря выше начальной (не меньше 1) в столько раз считается расхождением
DIVERGENCE_FACTOR = 1e4


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    # скорость к последней эпохе; между эпохами меняется геометрически
    final_learning_rate: Optional[float] = None

    def learning_rate_at(self, epoch: int) -> float:
        if self.final_learning_rate is None or self.epochs <= 1:
            return self.learning_rate
        ratio = self.final_learning_rate / self.learning_rate
        return self.learning_rate * ratio ** ((epoch - 1) / (self.epochs - 1))

    @classmethod
    def from_app_config(cls, config, overrides: Optional[dict] = None) -> 'TrainingConfig':
        values = {
            'epochs': config.epochs,
            'batch_size': config.batch_size,
            'learning_rate': config.learning_rate,
            'seed': config.seed,
            'final_learning_rate': config.final_learning_rate,
        }
        for key, value in (overrides or {}).items():
            if key in values and value is not None:
                values[key] = value
        return cls(**values)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]


@dataclass
class TrainingResult:
    """Журнал обучения и состояние для продолжения"""
    log: List[EpochRecord] = field(default_factory=list)
    adam: Optional[AdamState] = None
    rng_state: Optional[dict] = None

    @property
    def final_train_loss(self) -> float:
        return self.log[-1].train_loss

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'epoch': [r.epoch for r in self.log],
            'train_loss': [r.train_loss for r in self.log],
            'val_loss': [np.nan if r.val_loss is None else r.val_loss for r in self.log],
        })

    def export_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


class PreparedSamples:
    """Данные части выборки, подготовленные для модели"""

    def __init__(self, model: OperatorModelBase, samples):
        (self.batch, self.scenario_rows, self.pipe_rows,
         self.x_rel, self.t_rel, self.target) = samples.arrays(model.descriptor)

    def __len__(self):
        return self.target.size

    def subset(self, rows: np.ndarray) -> Tuple[BranchBatch, np.ndarray]:
        """Подвыборка сценариев для строк rows и перенумерованные индексы сценариев"""
        scenarios, local = np.unique(self.scenario_rows[rows], return_inverse=True)
        return self.batch.select(scenarios), local


def predict_raw(model: OperatorModelBase, arrays: PreparedSamples) -> np.ndarray:
    return model.predict_values(arrays.batch, arrays.scenario_rows, arrays.pipe_rows, arrays.x_rel, arrays.t_rel)


def dataset_loss(model: OperatorModelBase, samples) -> float:
    """MSE модели по части выборки (без ленты)"""
    arrays = PreparedSamples(model, samples)
    loss, _ = mse_loss(predict_raw(model, arrays), arrays.target)
    return loss


def _chunk_gradient(model: OperatorModelBase, arrays: PreparedSamples, rows: np.ndarray,
                    batch_size: int) -> Tuple[float, np.ndarray]:
    """Вклад части батча в сумму квадратов ошибок и в градиент MSE батча"""
    sub_batch, local = arrays.subset(rows)
    tape = model.tape()
    out = model.predict(tape, sub_batch, local, arrays.pipe_rows[rows], arrays.x_rel[rows], arrays.t_rel[rows])
    residual = out.value[:, 0] - arrays.target[rows]
    seed = (2.0 / batch_size) * residual
    return float(np.dot(residual, residual)), tape.backward(seed.reshape(-1, 1), out)


def batch_gradient(model: OperatorModelBase, arrays: PreparedSamples, rows: np.ndarray,
                   pool: Optional[ThreadPoolExecutor] = None) -> Tuple[float, np.ndarray]:
    """
    Градиент MSE по батчу rows. Батч делится на части, смежные по сценариям;
    градиенты частей суммируются в порядке частей
    """
    rows = rows[np.argsort(arrays.scenario_rows[rows], kind='stable')]
    chunks = [c for c in np.array_split(rows, min(GRADIENT_CHUNKS, rows.size)) if c.size]
    if pool is not None:
        parts = list(pool.map(lambda c: _chunk_gradient(model, arrays, c, rows.size), chunks))
    else:
        parts = [_chunk_gradient(model, arrays, c, rows.size) for c in chunks]
    total = 0.0
    grad = np.zeros(model.store.size)
    for squared, chunk_grad in parts:
        total += squared
        grad += chunk_grad
    return total / rows.size, grad


def train(model: OperatorModelBase, train_set, config: TrainingConfig, val_set=None, threads: int = 1,
          adam: Optional[AdamState] = None, rng_state: Optional[dict] = None) -> TrainingResult:
    """
    Обучение на train_set; модель изменяется на месте.
    adam и rng_state позволяют продолжить обучение с чекпоинта

    Raises:
        DimensionError: пустая обучающая выборка
        DivergenceError: NaN/Inf в потере или градиенте либо рост потери
            более чем в DIVERGENCE_FACTOR раз относительно начальной
    """
    if len(train_set) == 0:
        raise DimensionError("training set is empty")
    arrays = PreparedSamples(model, train_set)
    val_arrays = PreparedSamples(model, val_set) if val_set is not None and len(val_set) else None

    rng = np.random.default_rng(config.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if adam is None:
        adam = AdamState.zeros(model.store.size, lr=config.learning_rate)

    initial_loss, _ = mse_loss(predict_raw(model, arrays), arrays.target)
    loss_limit = DIVERGENCE_FACTOR * max(initial_loss, 1.0)

    result = TrainingResult()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    logger.info(f"Training {model.descriptor.kind} model: {model.store.size} parameters, "
                f"{len(arrays)} samples, {config.epochs} epochs, batch {config.batch_size}")
    try:
        for epoch in range(1, config.epochs + 1):
            adam = adam.with_lr(config.learning_rate_at(epoch))
            order = rng.permutation(len(arrays))
            for start in range(0, len(arrays), config.batch_size):
                rows = order[start:start + config.batch_size]
                loss, grad = batch_gradient(model, arrays, rows, pool)
                if not np.isfinite(loss) or loss > loss_limit:
                    raise DivergenceError(f"loss became {loss:.6g} at epoch {epoch}, step {adam.step + 1} "
                                          f"(initial {initial_loss:.6g})")
                new_params, adam = adam_step(adam, model.store.values, grad)
                model.store.load(new_params)

            train_loss, _ = mse_loss(predict_raw(model, arrays), arrays.target)
            val_loss = None
            if val_arrays is not None:
                val_loss, _ = mse_loss(predict_raw(model, val_arrays), val_arrays.target)
            if not np.isfinite(train_loss) or train_loss > loss_limit:
                raise DivergenceError(f"training loss became {train_loss:.6g} at epoch {epoch} "
                                      f"(initial {initial_loss:.6g})")
            result.log.append(EpochRecord(epoch, train_loss, val_loss))
            val_text = f", val {val_loss:.6g}" if val_loss is not None else ""
            logger.info(f"Epoch {epoch}/{config.epochs}: train {train_loss:.6g}{val_text}")
    finally:
        if pool is not None:
            pool.shutdown()

    result.adam = adam
    result.rng_state = rng.bit_generator.state
    return result
