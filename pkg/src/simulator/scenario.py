"""
Загрузка сценария из JSON-документа
"""
import logging
from typing import Optional

from ..shared.config import AppConfig
from ..shared.errors import ScenarioError
from ..shared.models import BoundarySignal, FractionField, NetworkTopology, PiecewiseConstant, Scenario, VelocitySchedule
from ..shared.schemas import ScenarioSchema, load_data, read_json

logger = logging.getLogger(__name__)


def _initial_field(pipe_id: str, length_m: float, cells: int, spec: dict) -> FractionField:
    if spec.get('constant') is not None:
        return FractionField.constant(pipe_id, length_m, cells, spec['constant'])
    if spec.get('values') is not None:
        values = spec['values']
        if len(values) != cells:
            raise ScenarioError(f"initial field of {pipe_id}: {len(values)} values but {cells} cells")
        return FractionField(pipe_id, length_m, values)
    step = spec['step']
    position = step['position_m']
    if not (0.0 < position < length_m):
        raise ScenarioError(f"initial step of {pipe_id}: position {position} outside (0, {length_m})")
    profile = PiecewiseConstant((0.0, position), (step['left'], step['right']))
    return FractionField.from_profile(pipe_id, length_m, cells, profile)


def scenario_from_document(topology: NetworkTopology, document: dict,
                           config: Optional[AppConfig] = None) -> Scenario:
    """
    Построение сценария по проверенному схемой документу.
    Значения по умолчанию (шаг снимков, плотность, число ячеек) берутся из config.ini
    """
    config = config or AppConfig()
    default_cells = document.get('default_cells') or config.default_cells
    cells = document.get('cells') or {}

    velocities = {}
    for pipe_id, signal in document['velocities'].items():
        velocities[pipe_id] = VelocitySchedule(tuple(signal['breakpoints']), tuple(signal['values']),
                                               pipe_id=pipe_id)

    boundary_signals = {}
    for signal_id, signal in document['boundary_signals'].items():
        rates = signal.get('mass_flow_rates')
        boundary_signals[signal_id] = BoundarySignal(
            tuple(signal['breakpoints']), tuple(signal['values']), signal_id=signal_id,
            mass_flow_rates=tuple(rates) if rates is not None else None)

    initial_fields = {}
    for pipe_id, spec in document['initial_fields'].items():
        if pipe_id not in topology.pipe_map:
            raise ScenarioError(f"initial field for unknown pipe '{pipe_id}'")
        pipe = topology.pipe(pipe_id)
        initial_fields[pipe_id] = _initial_field(pipe_id, pipe.length_m, cells.get(pipe_id, default_cells), spec)

    return Scenario(
        topology=topology,
        velocities=velocities,
        boundary_signals=boundary_signals,
        initial_fields=initial_fields,
        horizon_s=document['horizon_s'],
        dt_s=document['dt_s'],
        snapshot_stride=document.get('snapshot_stride') or config.snapshot_stride,
        reference_density=document.get('reference_density') or config.reference_density,
        scenario_id=document.get('scenario_id', 'scenario'),
    )


def load_scenario(path: str, topology: NetworkTopology, config: Optional[AppConfig] = None) -> Scenario:
    """Загрузка сценария из файла"""
    document = load_data(read_json(path), ScenarioSchema(), source=path)
    scenario = scenario_from_document(topology, document, config)
    logger.info(f"Scenario {scenario.scenario_id} loaded from {path}: horizon {scenario.horizon_s} s, dt {scenario.dt_s} s")
    return scenario
