"""
Виртуальные датчики и сборка входов ветвей по сценарию
"""
import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..deeponet.model import BranchInput
from ..network.topology import nearest_controlled_ancestors
from ..shared.errors import DomainError
from ..shared.models import NetworkTopology, Scenario
from ..simulator.transport import SimulationResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensorLayout:
    """Позиции датчиков (м) по трубам; не больше sensors на трубу"""
    sensors: int
    positions: Mapping[str, Tuple[float, ...]]

    def __post_init__(self):
        positions = {pipe_id: tuple(float(x) for x in xs) for pipe_id, xs in self.positions.items()}
        for pipe_id, xs in positions.items():
            if len(xs) > self.sensors:
                raise DomainError(f"sensor layout: {len(xs)} sensors on {pipe_id}, at most {self.sensors} allowed")
        object.__setattr__(self, 'positions', MappingProxyType(positions))

    @classmethod
    def uniform(cls, topology: NetworkTopology, sensors: int) -> 'SensorLayout':
        """S равномерно расположенных внутренних точек: x_s = (s+1)·L/(S+1)"""
        return cls(sensors, {
            pipe.id: tuple((s + 1) * pipe.length_m / (sensors + 1) for s in range(sensors))
            for pipe in topology.pipes
        })

    def check(self, topology: NetworkTopology) -> None:
        for pipe_id, xs in self.positions.items():
            if pipe_id not in topology.pipe_map:
                raise DomainError(f"sensor layout references unknown pipe '{pipe_id}'")
            length = topology.pipe(pipe_id).length_m
            for x in xs:
                if not (0.0 <= x <= length):
                    raise DomainError(f"sensor at {x} m outside pipe {pipe_id} [0, {length}]")


@dataclass(frozen=True, eq=False)
class SensorReading:
    """Показания датчиков трубы, дополненные нулями до S, и маска реальных значений"""
    values: np.ndarray
    mask: np.ndarray


def read_sensors(result: SimulationResult, layout: SensorLayout, noise: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> Dict[str, SensorReading]:
    """
    Показания в момент t=0: значение ячейки, содержащей позицию датчика.
    При noise > 0 добавляется равномерный шум ±noise с ограничением в [0, 1]
    """
    layout.check(result.topology)
    initial = result.initial
    readings = {}
    for pipe_id in result.topology.pipe_ids:
        xs = layout.positions.get(pipe_id, ())
        values = np.zeros(layout.sensors)
        mask = np.zeros(layout.sensors)
        for s, x in enumerate(xs):
            values[s] = initial[pipe_id].value_at(x)
            mask[s] = 1.0
        if noise > 0.0 and xs:
            if rng is None:
                raise DomainError("sensor noise requires a random generator")
            count = len(xs)
            values[:count] = np.clip(values[:count] + rng.uniform(-noise, noise, size=count), 0.0, 1.0)
        readings[pipe_id] = SensorReading(values, mask)
    return readings


def boundary_times(horizon_s: float, samples: int) -> np.ndarray:
    """K равномерных моментов на [0, T] включая концы"""
    return np.linspace(0.0, horizon_s, samples)


def boundary_inputs(scenario: Scenario, samples: int) -> Dict[str, Tuple[np.ndarray, bool]]:
    """
    u_bound по трубам. Для трубы из управляемого узла - сигнал этого узла;
    иначе среднее сигналов ближайших управляемых узлов выше по потоку с
    признаком косвенности; без таких узлов - нули
    """
    topology = scenario.topology
    times = boundary_times(scenario.horizon_s, samples)
    cache: Dict[str, Tuple[np.ndarray, bool]] = {}
    result = {}
    for pipe in topology.pipes:
        node_id = pipe.from_node
        if node_id not in cache:
            node = topology.node_map[node_id]
            if node.kind.is_controlled:
                cache[node_id] = (scenario.boundary_signals[node.boundary_signal_id].sample(times), False)
            else:
                ancestors = nearest_controlled_ancestors(topology, node_id)
                if ancestors:
                    series = [scenario.boundary_signals[topology.node_map[a].boundary_signal_id].sample(times)
                              for a in ancestors]
                    cache[node_id] = (np.mean(series, axis=0), True)
                else:
                    cache[node_id] = (np.zeros(samples), True)
        values, indirect = cache[node_id]
        result[pipe.id] = (values.copy(), indirect)
    return result


def flow_inputs(scenario: Scenario, samples: int, velocity_upper: float) -> Dict[str, np.ndarray]:
    """Расписание скорости трубы в моменты u_bound, нормированное на верхнюю границу скорости"""
    times = boundary_times(scenario.horizon_s, samples)
    return {pipe_id: np.clip(schedule.sample(times) / velocity_upper, 0.0, 1.0)
            for pipe_id, schedule in scenario.velocities.items()}


def branch_inputs_for(scenario: Scenario, result: SimulationResult, layout: SensorLayout, samples: int,
                      noise: float = 0.0, rng: Optional[np.random.Generator] = None,
                      velocity_upper: Optional[float] = None) -> Dict[str, BranchInput]:
    """Входы ветвей всех труб одного сценария"""
    readings = read_sensors(result, layout, noise, rng)
    bounds = boundary_inputs(scenario, samples)
    flows = flow_inputs(scenario, samples, velocity_upper) if velocity_upper else {}
    return {
        pipe_id: BranchInput(pipe_id, readings[pipe_id].values, readings[pipe_id].mask,
                             bounds[pipe_id][0], bounds[pipe_id][1], flows.get(pipe_id))
        for pipe_id in scenario.topology.pipe_ids
    }
