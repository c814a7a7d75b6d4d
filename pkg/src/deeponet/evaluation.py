"""
Оценка качества модели на части выборки
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..network.topology import line_graph_adjacency, topology_hash
from ..shared.errors import DimensionError
from .model import GRAPH, VANILLA, ModelDescriptor, OperatorModelBase, ParameterReport, build_model, clamp_fraction
from .training import PreparedSamples, predict_raw, train

logger = logging.getLogger(__name__)


@dataclass
class EvaluationReport:
    kind: str
    sample_count: int
    rmse: float
    mae: float
    max_abs_error: float
    baseline_value: float
    baseline_rmse: float
    parameters: ParameterReport
    extra: dict = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return self.parameters.total

    @property
    def improvement(self) -> float:
        """Во сколько раз RMSE модели меньше RMSE постоянного предсказателя"""
        return self.baseline_rmse / self.rmse if self.rmse > 0 else float('inf')

    def to_dict(self):
        return {
            'kind': self.kind,
            'sample_count': self.sample_count,
            'rmse': self.rmse,
            'mae': self.mae,
            'max_abs_error': self.max_abs_error,
            'baseline_value': self.baseline_value,
            'baseline_rmse': self.baseline_rmse,
            'parameter_count': self.parameter_count,
            'parameters': self.parameters.to_dict(),
            **self.extra,
        }


def rmse(predictions, targets) -> float:
    residual = np.asarray(predictions, dtype=float) - np.asarray(targets, dtype=float)
    return float(np.sqrt(np.mean(residual * residual)))


def constant_baseline(train_set) -> float:
    """Постоянный предсказатель: среднее целей обучающей части"""
    if len(train_set) == 0:
        raise DimensionError("cannot fit the constant baseline on an empty training set")
    return float(np.mean(train_set.targets))


def predict_samples(model: OperatorModelBase, samples, clamp: bool = True) -> np.ndarray:
    predictions = predict_raw(model, PreparedSamples(model, samples))
    return clamp_fraction(predictions) if clamp else predictions


def evaluate(model: OperatorModelBase, test_set, baseline_value: Optional[float] = None) -> EvaluationReport:
    """RMSE, MAE и максимальная ошибка ограниченных оценок; сравнение с постоянным предсказателем"""
    targets = test_set.targets
    predictions = predict_samples(model, test_set, clamp=True)
    errors = np.abs(predictions - targets)
    if baseline_value is None:
        baseline_value = float(np.mean(targets))
    report = EvaluationReport(
        kind=model.descriptor.kind,
        sample_count=int(targets.size),
        rmse=rmse(predictions, targets),
        mae=float(np.mean(errors)),
        max_abs_error=float(np.max(errors)),
        baseline_value=baseline_value,
        baseline_rmse=rmse(np.full(targets.size, baseline_value), targets),
        parameters=model.parameter_count(),
    )
    logger.info(f"Evaluated {report.kind} model on {report.sample_count} samples: RMSE {report.rmse:.6g}, "
                f"baseline RMSE {report.baseline_rmse:.6g}")
    return report


def compare_models(splits, topology, hyperparameters: dict, training_config, threads: int = 1,
                   adjacency=None) -> dict:
    """
    Обучение графовой и классической моделей при одинаковой размерности головы p
    и сравнение их метрик на тестовой части
    """
    adjacency = adjacency if adjacency is not None else line_graph_adjacency(topology)
    header = splits.train.header
    baseline_value = constant_baseline(splits.train)
    reports = {}
    for kind in (GRAPH, VANILLA):
        descriptor = ModelDescriptor.for_topology(
            kind, topology, adjacency, topology_hash(topology), sensors=header.sensors,
            boundary_samples=header.boundary_samples, flow_channel=header.flow_channel,
            horizon_s=header.horizon_s, **hyperparameters)
        model = build_model(descriptor, np.random.default_rng([training_config.seed, 2]))
        result = train(model, splits.train, training_config, splits.val, threads=threads)
        report = evaluate(model, splits.test, baseline_value)
        report.extra = {'final_train_loss': result.final_train_loss,
                        'final_val_loss': result.log[-1].val_loss}
        reports[kind] = report
    graph, vanilla = reports[GRAPH], reports[VANILLA]
    return {
        'head_dimension': hyperparameters.get('head'),
        'graph': graph.to_dict(),
        'vanilla': vanilla.to_dict(),
        'graph_beats_vanilla': graph.rmse <= vanilla.rmse,
        'graph_improvement_over_constant': graph.improvement,
        'parameter_ratio': graph.parameter_count / vanilla.parameter_count,
    }
