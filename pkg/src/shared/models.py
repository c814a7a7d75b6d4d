"""
Модели данных HENG: топология сети, кусочно-постоянные сигналы, поля долей, сценарии
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ScenarioError


class NodeKind(Enum):
    """Роль узла сети"""
    SOURCE = "source"
    HYDROGEN_INJECTION = "hydrogen-injection"
    JUNCTION = "junction"
    LOAD = "load"

    @property
    def is_controlled(self) -> bool:
        """Узел с граничным сигналом, заданным режимом работы"""
        return self in (NodeKind.SOURCE, NodeKind.HYDROGEN_INJECTION)


@dataclass(frozen=True)
class Node:
    """Узел сети (источник, станция подмешивания водорода, соединение, потребитель)"""
    id: str
    kind: NodeKind
    boundary_signal_id: Optional[str] = None

    def to_dict(self):
        return {
            'id': self.id,
            'kind': self.kind.value,
            'boundary_signal_id': self.boundary_signal_id,
        }


@dataclass(frozen=True)
class Pipe:
    """Труба: ориентирована от from_node к to_node"""
    id: str
    from_node: str
    to_node: str
    length_m: float
    area_m2: float

    def to_dict(self):
        return {
            'id': self.id,
            'from_node': self.from_node,
            'to_node': self.to_node,
            'length_m': self.length_m,
            'area_m2': self.area_m2,
        }


@dataclass(frozen=True)
class NetworkTopology:
    """Ориентированный граф узлов и труб. Неизменяем после создания"""
    nodes: Tuple[Node, ...]
    pipes: Tuple[Pipe, ...]

    @cached_property
    def node_map(self) -> Dict[str, Node]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def pipe_map(self) -> Dict[str, Pipe]:
        return {pipe.id: pipe for pipe in self.pipes}

    @property
    def pipe_ids(self) -> Tuple[str, ...]:
        return tuple(pipe.id for pipe in self.pipes)

    @property
    def node_ids(self) -> Tuple[str, ...]:
        return tuple(node.id for node in self.nodes)

    def pipe(self, pipe_id: str) -> Pipe:
        return self.pipe_map[pipe_id]

    def to_dict(self):
        return {
            'nodes': [node.to_dict() for node in self.nodes],
            'pipes': [pipe.to_dict() for pipe in self.pipes],
        }


def _validate_breakpoints(owner: str, breakpoints: Sequence[float], values: Sequence[float]):
    if len(breakpoints) == 0:
        raise ScenarioError(f"{owner}: at least one breakpoint required")
    if len(breakpoints) != len(values):
        raise ScenarioError(f"{owner}: {len(breakpoints)} breakpoints but {len(values)} values")
    if breakpoints[0] != 0:
        raise ScenarioError(f"{owner}: first breakpoint must be 0, got {breakpoints[0]}")
    if any(b <= a for a, b in zip(breakpoints, breakpoints[1:])):
        raise ScenarioError(f"{owner}: breakpoints must be strictly ascending")
    if not all(np.isfinite(values)):
        raise ScenarioError(f"{owner}: values must be finite")


@dataclass(frozen=True)
class PiecewiseConstant:
    """
    Кусочно-постоянная функция, непрерывная справа:
    значение values[k] действует на [breakpoints[k], breakpoints[k+1])
    """
    breakpoints: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'breakpoints', tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        _validate_breakpoints(type(self).__name__, self.breakpoints, self.values)

    def interval_index(self, t: float) -> int:
        """Индекс интервала, содержащего t (t < 0 относится к первому)"""
        return max(int(np.searchsorted(self.breakpoints, t, side='right')) - 1, 0)

    def at(self, t: float) -> float:
        return self.values[self.interval_index(t)]

    def sample(self, times) -> np.ndarray:
        """Векторизованная выборка значений в моменты times"""
        idx = np.searchsorted(self.breakpoints, np.asarray(times, dtype=float), side='right') - 1
        return np.asarray(self.values)[np.clip(idx, 0, None)]

    @classmethod
    def constant(cls, value: float):
        return cls((0.0,), (value,))


@dataclass(frozen=True)
class VelocitySchedule(PiecewiseConstant):
    """Скорость адвекции v = m/(A·ρ) по трубе, м/с; v ≥ 0"""
    pipe_id: str = ""

    def __post_init__(self):
        super().__post_init__()
        if any(v < 0 for v in self.values):
            raise ScenarioError(f"velocity schedule of {self.pipe_id}: velocities must be >= 0 (flow reversal is not modeled)")

    @property
    def velocities(self) -> Tuple[float, ...]:
        return self.values

    @property
    def max_velocity(self) -> float:
        return max(self.values)


@dataclass(frozen=True)
class BoundarySignal(PiecewiseConstant):
    """
    Граничный сигнал управляемого узла: массовая доля водорода по интервалам.
    mass_flow_rates (кг/с, опционально) задаёт расход подмешиваемого потока
    """
    signal_id: str = ""
    mass_flow_rates: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        super().__post_init__()
        if any(not (0.0 <= v <= 1.0) for v in self.values):
            raise ScenarioError(f"boundary signal {self.signal_id}: fractions must lie in [0, 1]")
        if self.mass_flow_rates is not None:
            rates = tuple(float(r) for r in self.mass_flow_rates)
            if len(rates) != len(self.values):
                raise ScenarioError(f"boundary signal {self.signal_id}: one mass flow rate per interval required")
            if any(r < 0 for r in rates):
                raise ScenarioError(f"boundary signal {self.signal_id}: mass flow rates must be >= 0")
            object.__setattr__(self, 'mass_flow_rates', rates)

    @property
    def fractions(self) -> Tuple[float, ...]:
        return self.values

    def mass_flow_at(self, t: float) -> Optional[float]:
        if self.mass_flow_rates is None:
            return None
        return self.mass_flow_rates[self.interval_index(t)]


@dataclass(frozen=True, eq=False)
class FractionField:
    """Средние по ячейкам массовые доли водорода на равномерной сетке трубы"""
    pipe_id: str
    length_m: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise ScenarioError(f"fraction field of {self.pipe_id}: need at least 2 cells")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ScenarioError(f"fraction field of {self.pipe_id}: values must lie in [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @property
    def cell_count(self) -> int:
        return int(self.values.size)

    @property
    def dx(self) -> float:
        return self.length_m / self.cell_count

    def cell_index(self, x: float) -> int:
        """Индекс ячейки, содержащей координату x (x = L относится к последней)"""
        return min(int(x / self.dx), self.cell_count - 1)

    def value_at(self, x: float) -> float:
        return float(self.values[self.cell_index(x)])

    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.cell_count) + 0.5) * self.dx

    def with_values(self, values: np.ndarray) -> 'FractionField':
        return FractionField(self.pipe_id, self.length_m, values)

    def equals(self, other: 'FractionField') -> bool:
        return (self.pipe_id == other.pipe_id and self.length_m == other.length_m
                and np.array_equal(self.values, other.values))

    @classmethod
    def constant(cls, pipe_id: str, length_m: float, cells: int, value: float) -> 'FractionField':
        return cls(pipe_id, length_m, np.full(cells, float(value)))

    @classmethod
    def from_profile(cls, pipe_id: str, length_m: float, cells: int, profile) -> 'FractionField':
        """
        Дискретизация профиля w0(x): для PiecewiseConstant берётся точное
        среднее по ячейке, для произвольной функции - значение в центре ячейки
        """
        dx = length_m / cells
        edges = np.arange(cells + 1) * dx
        if isinstance(profile, PiecewiseConstant):
            values = np.empty(cells)
            for i in range(cells):
                lo, hi = edges[i], edges[i + 1]
                cuts = [b for b in profile.breakpoints if lo < b < hi]
                points = [lo] + cuts + [hi]
                total = sum(profile.at(a) * (b - a) for a, b in zip(points, points[1:]))
                values[i] = total / (hi - lo)
            return cls(pipe_id, length_m, np.clip(values, 0.0, 1.0))
        centers = (np.arange(cells) + 0.5) * dx
        return cls(pipe_id, length_m, np.array([profile(x) for x in centers], dtype=float))


@dataclass(frozen=True)
class Scenario:
    """Полное описание режима: скорости, граничные сигналы, начальные поля, горизонт"""
    topology: NetworkTopology
    velocities: Mapping[str, VelocitySchedule]
    boundary_signals: Mapping[str, BoundarySignal]
    initial_fields: Mapping[str, FractionField]
    horizon_s: float
    dt_s: float
    snapshot_stride: int = 10
    reference_density: float = 1.0
    scenario_id: str = "scenario"

    @property
    def step_count(self) -> int:
        # последний шаг укорачивается, чтобы закончить ровно в horizon_s
        return max(int(np.ceil(self.horizon_s / self.dt_s - 1e-9)), 1)

    def cells(self, pipe_id: str) -> int:
        return self.initial_fields[pipe_id].cell_count

    def max_courant(self) -> Tuple[str, float]:
        """Максимальное число Куранта по трубам и интервалам"""
        worst_pipe, worst = "", 0.0
        for pipe_id, schedule in self.velocities.items():
            courant = schedule.max_velocity * self.dt_s / self.initial_fields[pipe_id].dx
            if courant > worst:
                worst_pipe, worst = pipe_id, courant
        return worst_pipe, worst


@dataclass
class RunManifest:
    """Манифест запуска CLI: достаточен для точного воспроизведения"""
    command: str
    config: dict
    input_hashes: Dict[str, str]
    seed: Optional[int]
    tool_version: str
    duration_s: float = 0.0
    exit_code: int = 0
    output_dir: str = ""
    started_at: str = ""
    memory_mb: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'command': self.command,
            'config': self.config,
            'input_hashes': self.input_hashes,
            'seed': self.seed,
            'tool_version': self.tool_version,
            'duration_s': self.duration_s,
            'exit_code': self.exit_code,
            'output_dir': self.output_dir,
            'started_at': self.started_at,
            'memory_mb': self.memory_mb,
            'extra': self.extra,
        }
