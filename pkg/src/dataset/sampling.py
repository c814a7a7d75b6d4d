"""
Выборка режимов работы сети: расписания скоростей, граничные сигналы
управляемых узлов и начальные поля долей водорода
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..network.topology import require_valid, topology_hash
from ..shared.errors import ScenarioError
from ..shared.models import (BoundarySignal, FractionField, NetworkTopology, NodeKind, PiecewiseConstant,
                             Scenario, VelocitySchedule)
from ..shared.schemas import SamplingConfigSchema, load_data, read_json

logger = logging.getLogger(__name__)

Range = Tuple[float, float]

INITIAL_FAMILIES = ("constant", "step", "smooth")
SMOOTH_KNOTS = 5


@dataclass(frozen=True)
class SamplingConfig:
    """Распределения сценариев и параметры выборки запросов"""
    scenario_count: int = 200
    horizon_s: float = 3600.0
    cells: int = 50
    courant: float = 0.9
    snapshot_stride: int = 10
    reference_density: float = 1.0
    velocity_range: Range = (0.5, 2.0)
    source_fraction_range: Range = (0.0, 0.1)
    injection_fraction_range: Range = (0.3, 1.0)
    initial_fraction_range: Range = (0.0, 0.3)
    injection_flow_range: Optional[Range] = None
    velocity_breakpoints: Tuple[int, int] = (0, 2)
    signal_breakpoints: Tuple[int, int] = (0, 3)
    initial_family: str = "step"
    queries_per_scenario: int = 200
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    sensors: int = 4
    boundary_samples: int = 16
    sensor_noise: float = 0.0
    flow_channel: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ('velocity_range', 'source_fraction_range', 'injection_fraction_range',
                     'initial_fraction_range', 'injection_flow_range', 'velocity_breakpoints',
                     'signal_breakpoints', 'split'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))

    def check(self) -> None:
        """
        Raises:
            ScenarioError: нижняя граница выше верхней, значения вне физических
                пределов, нулевая максимальная скорость, доли разбиения не дают 1
        """
        ranges = {
            'velocity_range': (self.velocity_range, 0.0, math.inf),
            'source_fraction_range': (self.source_fraction_range, 0.0, 1.0),
            'injection_fraction_range': (self.injection_fraction_range, 0.0, 1.0),
            'initial_fraction_range': (self.initial_fraction_range, 0.0, 1.0),
        }
        if self.injection_flow_range is not None:
            ranges['injection_flow_range'] = (self.injection_flow_range, 0.0, math.inf)
        for name, ((lo, hi), low_bound, high_bound) in ranges.items():
            if lo > hi:
                raise ScenarioError(f"infeasible {name}: lower bound {lo} above upper bound {hi}")
            if lo < low_bound or hi > high_bound:
                raise ScenarioError(f"infeasible {name}: [{lo}, {hi}] outside [{low_bound}, {high_bound}]")
        if self.velocity_range[1] <= 0.0:
            raise ScenarioError("infeasible velocity_range: maximum velocity must be > 0")
        for name in ('velocity_breakpoints', 'signal_breakpoints'):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ScenarioError(f"infeasible {name}: [{lo}, {hi}]")
        if any(r < 0 for r in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ScenarioError(f"split ratios {list(self.split)} must be non-negative and sum to 1")
        if self.initial_family not in INITIAL_FAMILIES:
            raise ScenarioError(f"unknown initial family '{self.initial_family}'")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> 'SamplingConfig':
        loaded = load_data(data, SamplingConfigSchema(), source="sampling config")
        return cls(**loaded)

    @classmethod
    def load(cls, path: str) -> 'SamplingConfig':
        loaded = load_data(read_json(path), SamplingConfigSchema(), source=path)
        return cls(**loaded)


def scenario_time_step(topology: NetworkTopology, config: SamplingConfig, max_velocity: float) -> float:
    """
    Шаг по времени, делящий горизонт на целое число шагов и
    удовлетворяющий v_max·dt/Δx_min ≤ courant
    """
    dx_min = min(pipe.length_m for pipe in topology.pipes) / config.cells
    if max_velocity <= 0.0:
        return config.horizon_s
    dt_limit = config.courant * dx_min / max_velocity
    steps = max(int(math.ceil(config.horizon_s / dt_limit)), 1)
    while max_velocity * (config.horizon_s / steps) / dx_min > 1.0:
        steps += 1
    return config.horizon_s / steps


def _breakpoint_times(rng: np.random.Generator, count_range: Tuple[int, int], horizon: float) -> List[float]:
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    interior = np.unique(rng.uniform(0.0, horizon, size=count))
    return [0.0] + [float(t) for t in interior if t > 0.0]


def _sample_schedule(rng: np.random.Generator, count_range: Tuple[int, int], horizon: float,
                     value_range: Range) -> Tuple[List[float], List[float]]:
    times = _breakpoint_times(rng, count_range, horizon)
    values = rng.uniform(value_range[0], value_range[1], size=len(times))
    return times, [float(v) for v in values]


def _sample_initial(rng: np.random.Generator, pipe_id: str, length_m: float,
                    config: SamplingConfig) -> FractionField:
    lo, hi = config.initial_fraction_range
    if config.initial_family == "constant":
        return FractionField.constant(pipe_id, length_m, config.cells, float(rng.uniform(lo, hi)))
    if config.initial_family == "step":
        left, right = rng.uniform(lo, hi, size=2)
        position = float(rng.uniform(0.1, 0.9)) * length_m
        profile = PiecewiseConstant((0.0, position), (float(left), float(right)))
        return FractionField.from_profile(pipe_id, length_m, config.cells, profile)
    # гладкий профиль: линейная интерполяция случайных узлов
    knots = rng.uniform(lo, hi, size=SMOOTH_KNOTS)
    knot_x = np.linspace(0.0, length_m, SMOOTH_KNOTS)
    centers = (np.arange(config.cells) + 0.5) * (length_m / config.cells)
    return FractionField(pipe_id, length_m, np.clip(np.interp(centers, knot_x, knots), 0.0, 1.0))


def sample_scenario(rng: np.random.Generator, topology: NetworkTopology, config: SamplingConfig,
                    scenario_id: str) -> Scenario:
    """Один случайный сценарий; порядок обращений к rng фиксирован"""
    horizon = config.horizon_s
    velocities = {}
    for pipe in topology.pipes:
        times, values = _sample_schedule(rng, config.velocity_breakpoints, horizon, config.velocity_range)
        velocities[pipe.id] = VelocitySchedule(tuple(times), tuple(values), pipe_id=pipe.id)

    signals: Dict[str, BoundarySignal] = {}
    for node in topology.nodes:
        if not node.kind.is_controlled or node.boundary_signal_id in signals:
            continue
        fraction_range = (config.injection_fraction_range if node.kind is NodeKind.HYDROGEN_INJECTION
                          else config.source_fraction_range)
        times, values = _sample_schedule(rng, config.signal_breakpoints, horizon, fraction_range)
        rates = None
        if node.kind is NodeKind.HYDROGEN_INJECTION and config.injection_flow_range is not None:
            rates = tuple(float(r) for r in rng.uniform(*config.injection_flow_range, size=len(times)))
        signals[node.boundary_signal_id] = BoundarySignal(tuple(times), tuple(values),
                                                          signal_id=node.boundary_signal_id,
                                                          mass_flow_rates=rates)

    initial_fields = {pipe.id: _sample_initial(rng, pipe.id, pipe.length_m, config) for pipe in topology.pipes}
    max_velocity = max(schedule.max_velocity for schedule in velocities.values())
    return Scenario(
        topology=topology,
        velocities=velocities,
        boundary_signals=signals,
        initial_fields=initial_fields,
        horizon_s=horizon,
        dt_s=scenario_time_step(topology, config, max_velocity),
        snapshot_stride=config.snapshot_stride,
        reference_density=config.reference_density,
        scenario_id=scenario_id,
    )


def sample_scenarios(topology: NetworkTopology, config: SamplingConfig) -> List[Scenario]:
    """
    Детерминированная (при заданном seed) выборка сценариев.
    Идентификаторы: <первые 8 знаков хеша топологии>-<номер>
    """
    require_valid(topology)
    config.check()
    rng = np.random.default_rng(config.seed)
    prefix = topology_hash(topology)[:8]
    scenarios = [sample_scenario(rng, topology, config, f"{prefix}-{i:05d}")
                 for i in range(config.scenario_count)]
    logger.info(f"Sampled {len(scenarios)} scenarios (seed {config.seed}, family {config.initial_family})")
    return scenarios
