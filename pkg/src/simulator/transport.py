"""
Перенос массовой доли водорода: смешение в узлах, противопоточная схема,
сетевой симулятор с хранением снимков
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..network.topology import find_directed_cycle, require_valid
from ..shared.errors import CflViolationError, CycleError, DomainError, QueryError, ScenarioError
from ..shared.models import FractionField, NetworkTopology, Scenario

logger = logging.getLogger(__name__)

# допуск сравнения моментов времени со снимками
TIME_TOLERANCE = 1e-9


def mix_at_node(inflows: Sequence[Tuple[float, float]],
                injection: Optional[Tuple[float, float]] = None) -> float:
    """
    Массово-взвешенное смешение потоков в узле: Σ(m·w) / Σm.

    Args:
        inflows: Пары (расход кг/с > 0, доля водорода в [0, 1])
        injection: Необязательный подмешиваемый поток (расход, доля)

    Returns:
        Доля водорода на выходе узла
    """
    streams = list(inflows)
    if injection is not None:
        streams.append(injection)
    if not streams:
        raise DomainError("mix_at_node: no inflow and no injection")
    total_mass = 0.0
    hydrogen_mass = 0.0
    lo, hi = 1.0, 0.0
    for rate, fraction in streams:
        if not rate > 0:
            raise DomainError(f"mix_at_node: mass flow rate must be > 0, got {rate}")
        if not (0.0 <= fraction <= 1.0):
            raise DomainError(f"mix_at_node: fraction must lie in [0, 1], got {fraction}")
        total_mass += rate
        hydrogen_mass += rate * fraction
        lo, hi = min(lo, fraction), max(hi, fraction)
    # результат - выпуклая комбинация, округление не выводит за [min, max]
    return min(max(hydrogen_mass / total_mass, lo), hi)


def _upwind_values(values: np.ndarray, courant: float, inlet_fraction: float) -> np.ndarray:
    if courant == 0.0:
        return values.copy()
    upstream = np.empty_like(values)
    upstream[0] = inlet_fraction
    upstream[1:] = values[:-1]
    if courant == 1.0:
        return upstream
    new_values = values - courant * (values - upstream)
    # выпуклая комбинация: ограничиваем локальными min/max
    return np.minimum(np.maximum(new_values, np.minimum(values, upstream)), np.maximum(values, upstream))


def step_upwind(field: FractionField, v: float, dt: float, inlet_fraction: float) -> FractionField:
    """
    Один шаг противопоточной схемы первого порядка для ∂w/∂t + v ∂w/∂x = 0

    Raises:
        CflViolationError: v·dt/Δx > 1
        DomainError: v < 0 или доля на входе вне [0, 1]
    """
    if v < 0:
        raise DomainError(f"step_upwind: negative velocity {v} on pipe {field.pipe_id}")
    if not (0.0 <= inlet_fraction <= 1.0):
        raise DomainError(f"step_upwind: inlet fraction {inlet_fraction} outside [0, 1]")
    courant = v * dt / field.dx
    if courant > 1.0:
        raise CflViolationError(field.pipe_id, courant)
    return field.with_values(_upwind_values(field.values, courant, inlet_fraction))


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """
    Результат симуляции: снимки полей в моменты times (по возрастанию)
    и доли на выходе узлов на каждом шаге
    """
    topology: NetworkTopology
    times: np.ndarray
    snapshots: Tuple[Mapping[str, FractionField], ...]
    node_times: np.ndarray
    node_outlet_fractions: Mapping[str, np.ndarray]
    horizon_s: float
    scenario_id: str = "scenario"

    def snapshot_index(self, t: float) -> int:
        """Индекс снимка в момент t; QueryError, если такого снимка нет"""
        idx = int(np.searchsorted(self.times, t - TIME_TOLERANCE * max(1.0, abs(t))))
        if idx < len(self.times) and abs(self.times[idx] - t) <= TIME_TOLERANCE * max(1.0, abs(t)):
            return idx
        raise QueryError(f"time {t} s is not a stored snapshot time")

    def field_at(self, pipe_id: str, t: float) -> FractionField:
        snapshot = self.snapshots[self.snapshot_index(t)]
        if pipe_id not in snapshot:
            raise QueryError(f"unknown pipe '{pipe_id}'")
        return snapshot[pipe_id]

    def fraction_at(self, pipe_id: str, x: float, t: float) -> float:
        """Доля в ячейке, содержащей x, в снимке момента t"""
        field = self.field_at(pipe_id, t)
        if not (0.0 <= x <= field.length_m):
            raise QueryError(f"x={x} outside pipe {pipe_id} [0, {field.length_m}]")
        return field.value_at(x)

    @property
    def initial(self) -> Mapping[str, FractionField]:
        return self.snapshots[0]

    @property
    def final(self) -> Mapping[str, FractionField]:
        return self.snapshots[-1]

    def to_frame(self) -> pd.DataFrame:
        """Таблица (time_s, pipe_id, cell_index, x_m, fraction)"""
        frames = []
        for t, snapshot in zip(self.times, self.snapshots):
            for pipe_id in self.topology.pipe_ids:
                field = snapshot[pipe_id]
                frames.append(pd.DataFrame({
                    'time_s': np.full(field.cell_count, float(t)),
                    'pipe_id': pipe_id,
                    'cell_index': np.arange(field.cell_count),
                    'x_m': field.cell_centers(),
                    'fraction': field.values,
                }))
        return pd.concat(frames, ignore_index=True)

    def export_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
        logger.info(f"Simulation result written to {path}")


@dataclass(frozen=True)
class Exceedance:
    """Превышение допустимой доли водорода в трубе"""
    pipe_id: str
    first_time_s: float
    max_fraction: float


def exceedance(result: SimulationResult, threshold: float) -> List[Exceedance]:
    """Трубы, где сохранённая доля когда-либо превышает threshold"""
    found = []
    for pipe_id in result.topology.pipe_ids:
        first, peak = None, 0.0
        for t, snapshot in zip(result.times, result.snapshots):
            top = float(snapshot[pipe_id].values.max())
            peak = max(peak, top)
            if first is None and top > threshold:
                first = float(t)
        if first is not None:
            found.append(Exceedance(pipe_id, first, peak))
    return found


def validate_scenario(scenario: Scenario) -> None:
    """
    Проверка покрытия и условия Куранта

    Raises:
        ScenarioError: пропущены расписания, сигналы или поля
        CflViolationError: max v·dt/Δx > 1
        CycleError: ориентированный цикл в сети
    """
    topology = scenario.topology
    require_valid(topology)
    pipe_ids = set(topology.pipe_ids)
    for label, mapping in (('velocity schedule', scenario.velocities),
                           ('initial field', scenario.initial_fields)):
        missing = pipe_ids - set(mapping)
        extra = set(mapping) - pipe_ids
        if missing:
            raise ScenarioError(f"missing {label} for pipe(s): {', '.join(sorted(missing))}")
        if extra:
            raise ScenarioError(f"{label} for unknown pipe(s): {', '.join(sorted(extra))}")
    for pipe_id, field in scenario.initial_fields.items():
        length = topology.pipe(pipe_id).length_m
        if abs(field.length_m - length) > 1e-9 * length:
            raise ScenarioError(f"initial field of {pipe_id} has length {field.length_m}, pipe has {length}")
    signal_ids = {n.boundary_signal_id for n in topology.nodes if n.kind.is_controlled}
    missing_signals = signal_ids - set(scenario.boundary_signals)
    if missing_signals:
        raise ScenarioError(f"missing boundary signal(s): {', '.join(sorted(missing_signals))}")
    if not (scenario.dt_s > 0 and scenario.horizon_s > 0):
        raise ScenarioError("dt_s and horizon_s must be > 0")
    if scenario.snapshot_stride < 1:
        raise ScenarioError("snapshot_stride must be >= 1")
    pipe_id, courant = scenario.max_courant()
    if courant > 1.0:
        raise CflViolationError(pipe_id, courant)
    cycle = find_directed_cycle(topology)
    if cycle is not None:
        raise CycleError(f"directed cycle through pipes: {' -> '.join(cycle)}")


class _NodeMixer:
    """Правило выходной доли одного узла"""

    def __init__(self, scenario: Scenario, node_id: str):
        topology = scenario.topology
        node = topology.node_map[node_id]
        self.node_id = node_id
        self.signal = scenario.boundary_signals.get(node.boundary_signal_id) if node.kind.is_controlled else None
        self.inflow_pipes = [p.id for p in topology.pipes if p.to_node == node_id]
        self.areas = {p.id: topology.pipe(p.id).area_m2 for p in topology.pipes if p.to_node == node_id}
        self.density = scenario.reference_density
        self.held: Optional[float] = None

    def outlet(self, t: float, velocities: Mapping[str, float], ends: Mapping[str, float]) -> float:
        inflows = []
        for pipe_id in self.inflow_pipes:
            rate = velocities[pipe_id] * self.areas[pipe_id] * self.density
            if rate > 0:
                inflows.append((rate, ends[pipe_id]))
        if self.signal is not None:
            injection_rate = self.signal.mass_flow_at(t)
            if not self.inflow_pipes or injection_rate is None:
                # режим узла задаёт состав на выходе
                self.held = self.signal.at(t)
                return self.held
            injection = (injection_rate, self.signal.at(t)) if injection_rate > 0 else None
            if inflows or injection is not None:
                self.held = mix_at_node(inflows, injection)
                return self.held
        elif inflows:
            self.held = mix_at_node(inflows)
            return self.held
        if self.held is None:
            # нет потока с самого начала: среднее по концам входящих труб
            self.held = float(np.mean([ends[p] for p in self.inflow_pipes])) if self.inflow_pipes else 0.0
        return self.held


def simulate_network(scenario: Scenario) -> SimulationResult:
    """
    Явный расчёт по шагам: сначала выходные доли всех узлов по состоянию
    на начало шага, затем шаг противопоточной схемы в каждой трубе
    """
    validate_scenario(scenario)
    topology = scenario.topology
    pipes = topology.pipes
    steps = scenario.step_count
    dt, horizon = scenario.dt_s, scenario.horizon_s
    stride = scenario.snapshot_stride

    mixers = {node.id: _NodeMixer(scenario, node.id) for node in topology.nodes}
    state: Dict[str, np.ndarray] = {p.id: scenario.initial_fields[p.id].values.copy() for p in pipes}
    dx = {p.id: scenario.initial_fields[p.id].dx for p in pipes}

    times: List[float] = [0.0]
    snapshots = [dict(scenario.initial_fields)]
    node_times = np.empty(steps + 1)
    node_series = {node.id: np.empty(steps + 1) for node in topology.nodes}

    def record_nodes(index: int, t: float, velocities: Mapping[str, float]):
        ends = {p.id: float(state[p.id][-1]) for p in pipes}
        node_times[index] = t
        outlets = {}
        for node in topology.nodes:
            outlets[node.id] = mixers[node.id].outlet(t, velocities, ends)
            node_series[node.id][index] = outlets[node.id]
        return outlets

    logger.debug(f"Simulating {scenario.scenario_id}: {steps} steps of {dt} s, stride {stride}")
    for n in range(steps):
        t = n * dt
        step_dt = min(dt, horizon - t) if n == steps - 1 else dt
        velocities = {p.id: scenario.velocities[p.id].at(t) for p in pipes}
        outlets = record_nodes(n, t, velocities)
        for pipe in pipes:
            courant = velocities[pipe.id] * step_dt / dx[pipe.id]
            if courant > 1.0:
                raise CflViolationError(pipe.id, courant)
            state[pipe.id] = _upwind_values(state[pipe.id], courant, outlets[pipe.from_node])
        if (n + 1) % stride == 0 or n == steps - 1:
            t_next = horizon if n == steps - 1 else (n + 1) * dt
            times.append(t_next)
            snapshots.append({p.id: scenario.initial_fields[p.id].with_values(state[p.id]) for p in pipes})

    final_velocities = {p.id: scenario.velocities[p.id].at(horizon) for p in pipes}
    record_nodes(steps, horizon, final_velocities)
    for series in node_series.values():
        series.flags.writeable = False
    node_times.flags.writeable = False
    times_array = np.asarray(times)
    times_array.flags.writeable = False
    logger.debug(f"Scenario {scenario.scenario_id} finished: {len(times)} snapshots")

    return SimulationResult(
        topology=topology,
        times=times_array,
        snapshots=tuple(snapshots),
        node_times=node_times,
        node_outlet_fractions=node_series,
        horizon_s=horizon,
        scenario_id=scenario.scenario_id,
    )
