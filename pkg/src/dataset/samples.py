"""
Сборка обучающих выборок (U, T, w), разбиение по сценариям и хранение на диске

Файл выборки - JSON-lines: запись header, затем по одной записи condition
на сценарий (входы ветвей, общие для его точек), затем записи sample
"""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..deeponet.model import BranchBatch, BranchInput, ModelDescriptor, TrunkInput
from ..network.topology import topology_hash
from ..shared.errors import DatasetFormatError, DimensionError
from ..shared.models import NetworkTopology, Scenario
from ..shared.utils import ensure_parent
from ..simulator.transport import SimulationResult, simulate_network
from .sampling import SamplingConfig, sample_scenarios
from .sensors import SensorLayout, branch_inputs_for

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
SAMPLE_COLUMNS = ['scenario_id', 'pipe_id', 'x_rel', 't_rel', 'x_m', 't_s', 'target']
FLOAT_COLUMNS = ('x_rel', 't_rel', 'x_m', 't_s', 'target')


def _frame(columns: Optional[Mapping[str, Sequence]] = None) -> pd.DataFrame:
    frame = pd.DataFrame(columns or {name: [] for name in SAMPLE_COLUMNS}, columns=SAMPLE_COLUMNS)
    for name in FLOAT_COLUMNS:
        frame[name] = frame[name].astype(np.float64)
    for name in ('scenario_id', 'pipe_id'):
        frame[name] = frame[name].astype(object)
    return frame


@dataclass(frozen=True)
class DatasetHeader:
    """Самоописание файла выборки"""
    topology_hash: str
    sensors: int
    boundary_samples: int
    horizon_s: float
    pipe_ids: Tuple[str, ...]
    pipe_lengths: Dict[str, float]
    flow_channel: bool = False
    split: str = "train"
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        data = asdict(self)
        data['pipe_ids'] = list(self.pipe_ids)
        data['record'] = 'header'
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> 'DatasetHeader':
        fields_ = {k: v for k, v in data.items() if k not in ('record', 'scenario_count', 'sample_count')}
        fields_['pipe_ids'] = tuple(fields_['pipe_ids'])
        return cls(**fields_)


@dataclass(frozen=True)
class Sample:
    """Одна обучающая тройка: условия сценария, точка запроса, целевая доля"""
    scenario_id: str
    branch_inputs: Mapping[str, BranchInput]
    query: TrunkInput
    target: float


@dataclass(eq=False)
class SampleSet:
    """Точки одной части выборки с условиями их сценариев"""
    header: DatasetHeader
    conditions: Dict[str, Dict[str, BranchInput]]
    frame: pd.DataFrame = field(default_factory=_frame)

    def __len__(self):
        return len(self.frame)

    def __iter__(self) -> Iterator[Sample]:
        for row in self.frame.itertuples(index=False):
            yield Sample(row.scenario_id, self.conditions[row.scenario_id],
                         TrunkInput(row.pipe_id, float(row.x_rel), float(row.t_rel)), float(row.target))

    @property
    def scenario_ids(self) -> List[str]:
        return list(self.conditions)

    @property
    def targets(self) -> np.ndarray:
        return self.frame['target'].to_numpy(dtype=np.float64)

    def arrays(self, descriptor: ModelDescriptor):
        """
        Матрицы ветвей по сценариям и индексы запросов:
        (batch, scenario_rows, pipe_rows, x_rel, t_rel, target)
        """
        if len(self) == 0:
            raise DimensionError(f"{self.header.split} split is empty")
        scenario_order = {sid: i for i, sid in enumerate(self.conditions)}
        pipe_index = {pid: i for i, pid in enumerate(descriptor.pipe_ids)}
        unknown = set(self.frame['pipe_id']) - set(pipe_index)
        if unknown:
            raise DimensionError(f"samples reference pipes unknown to the model: {sorted(unknown)}")
        batch = BranchBatch.from_inputs(descriptor, [self.conditions[sid] for sid in self.conditions])
        return (batch,
                self.frame['scenario_id'].map(scenario_order).to_numpy(dtype=np.intp),
                self.frame['pipe_id'].map(pipe_index).to_numpy(dtype=np.intp),
                self.frame['x_rel'].to_numpy(dtype=np.float64),
                self.frame['t_rel'].to_numpy(dtype=np.float64),
                self.targets)

    def equals(self, other: 'SampleSet') -> bool:
        if self.header != other.header or list(self.conditions) != list(other.conditions):
            return False
        for sid, inputs in self.conditions.items():
            theirs = other.conditions[sid]
            if list(inputs) != list(theirs):
                return False
            if any(inputs[p].to_dict() != theirs[p].to_dict() for p in inputs):
                return False
        return self.frame.reset_index(drop=True).equals(other.frame.reset_index(drop=True))


class DatasetSplits(NamedTuple):
    train: SampleSet
    val: SampleSet
    test: SampleSet

    def by_name(self, name: str) -> SampleSet:
        return getattr(self, name)


def split_sizes(count: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """train = round(r_train·n), val = round(r_val·n), test - остаток"""
    train = min(int(round(ratios[0] * count)), count)
    val = min(int(round(ratios[1] * count)), count - train)
    return train, val, count - train - val


def build_samples(scenarios: Sequence[Scenario], results: Sequence[SimulationResult], layout: SensorLayout,
                  config: SamplingConfig) -> DatasetSplits:
    """
    Точки запросов: труба и x_rel равномерно, момент - равномерно среди
    сохранённых снимков; цель - доля в ячейке снимка. Разбиение по сценариям
    """
    if len(scenarios) != len(results):
        raise DimensionError(f"{len(scenarios)} scenarios but {len(results)} simulation results")
    if not scenarios:
        raise DimensionError("no scenarios to build samples from")
    topology = scenarios[0].topology
    rng = np.random.default_rng([config.seed, 1])
    pipe_ids = topology.pipe_ids
    lengths = {p.id: float(p.length_m) for p in topology.pipes}
    velocity_upper = config.velocity_range[1] if config.flow_channel else None

    conditions: Dict[str, Dict[str, BranchInput]] = {}
    rows: Dict[str, dict] = {}
    for scenario, result in zip(scenarios, results):
        conditions[scenario.scenario_id] = branch_inputs_for(
            scenario, result, layout, config.boundary_samples, config.sensor_noise, rng, velocity_upper)
        n = config.queries_per_scenario
        pipe_rows = rng.integers(0, len(pipe_ids), size=n)
        x_rel = rng.uniform(0.0, 1.0, size=n)
        time_rows = rng.integers(0, len(result.times), size=n)
        targets = np.empty(n)
        t_s = result.times[time_rows]
        x_m = np.empty(n)
        for k in range(n):
            pipe_id = pipe_ids[pipe_rows[k]]
            x_m[k] = x_rel[k] * lengths[pipe_id]
            targets[k] = result.fraction_at(pipe_id, x_m[k], t_s[k])
        rows[scenario.scenario_id] = {
            'scenario_id': [scenario.scenario_id] * n,
            'pipe_id': [pipe_ids[i] for i in pipe_rows],
            'x_rel': x_rel,
            't_rel': t_s / scenario.horizon_s,
            'x_m': x_m,
            't_s': t_s,
            'target': targets,
        }

    ids = [s.scenario_id for s in scenarios]
    order = rng.permutation(len(ids))
    n_train, n_val, _ = split_sizes(len(ids), config.split)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])

    sets = []
    for name, members in zip(SPLIT_NAMES, parts):
        members = sorted(int(i) for i in members)
        header = DatasetHeader(topology_hash(topology), config.sensors, config.boundary_samples,
                               scenarios[0].horizon_s, pipe_ids, lengths, config.flow_channel, name)
        chosen = [ids[i] for i in members]
        if chosen:
            frame = _frame({name: np.concatenate([np.asarray(rows[sid][name]) for sid in chosen])
                            for name in SAMPLE_COLUMNS})
        else:
            frame = _frame()
        sets.append(SampleSet(header, {sid: conditions[sid] for sid in chosen}, frame))
    splits = DatasetSplits(*sets)
    logger.info(f"Built samples: train {len(splits.train.conditions)}, val {len(splits.val.conditions)}, "
                f"test {len(splits.test.conditions)} scenarios")
    return splits


def simulate_all(scenarios: Sequence[Scenario], threads: int = 1) -> List[SimulationResult]:
    """Симуляция сценариев; порядок результатов совпадает с порядком сценариев"""
    if threads <= 1:
        return [simulate_network(s) for s in scenarios]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(simulate_network, scenarios))


def generate_dataset(topology: NetworkTopology, config: SamplingConfig, threads: int = 1,
                     layout: Optional[SensorLayout] = None) -> DatasetSplits:
    """Выборка сценариев, симуляция и сборка частей выборки"""
    scenarios = sample_scenarios(topology, config)
    results = simulate_all(scenarios, threads)
    layout = layout or SensorLayout.uniform(topology, config.sensors)
    return build_samples(scenarios, results, layout, config)


# --- хранение ---

def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def persist(samples: SampleSet, path: str) -> None:
    """Запись части выборки в JSON-lines"""
    ensure_parent(path)
    header = samples.header.to_dict()
    header['scenario_count'] = len(samples.conditions)
    header['sample_count'] = len(samples)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(_dumps(header) + '\n')
        for sid, inputs in samples.conditions.items():
            f.write(_dumps({'record': 'condition', 'scenario_id': sid,
                            'pipes': {p: inputs[p].to_dict() for p in samples.header.pipe_ids}}) + '\n')
        for row in samples.frame.itertuples(index=False):
            f.write(_dumps({'record': 'sample', 'scenario_id': row.scenario_id, 'pipe_id': row.pipe_id,
                            'x_rel': float(row.x_rel), 't_rel': float(row.t_rel), 'x_m': float(row.x_m),
                            't_s': float(row.t_s), 'target': float(row.target)}) + '\n')
    logger.info(f"Wrote {len(samples)} {samples.header.split} samples to {path}")


def export_csv(samples: SampleSet, path: str) -> None:
    ensure_parent(path)
    samples.frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def load_samples(path: str, expected_topology_hash: Optional[str] = None) -> SampleSet:
    """
    Чтение части выборки.

    Raises:
        DatasetFormatError: неизвестная версия, несовпадение хеша топологии,
            повреждённые записи или цели вне [0, 1]
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError as e:
        raise DatasetFormatError(f"dataset file not found: {path}") from e
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")
    try:
        records = [json.loads(line) for line in lines if line]
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: malformed record: {e.msg}") from e

    head = records[0]
    if head.get('record') != 'header':
        raise DatasetFormatError(f"{path}: first record must be the header")
    if head.get('schema_version') != SCHEMA_VERSION:
        raise DatasetFormatError(f"{path}: unsupported schema version {head.get('schema_version')}")
    try:
        header = DatasetHeader.from_dict(head)
    except TypeError as e:
        raise DatasetFormatError(f"{path}: malformed header: {e}") from e
    if expected_topology_hash is not None and header.topology_hash != expected_topology_hash:
        raise DatasetFormatError(f"{path}: topology hash {header.topology_hash[:12]} does not match "
                                 f"network {expected_topology_hash[:12]}")

    conditions: Dict[str, Dict[str, BranchInput]] = {}
    columns: Dict[str, list] = {name: [] for name in SAMPLE_COLUMNS}
    for number, record in enumerate(records[1:], start=2):
        kind = record.get('record')
        try:
            if kind == 'condition':
                conditions[record['scenario_id']] = {
                    p: BranchInput.from_dict(p, record['pipes'][p]) for p in header.pipe_ids
                }
            elif kind == 'sample':
                if record['scenario_id'] not in conditions:
                    raise DatasetFormatError(f"{path}: sample references unknown scenario '{record['scenario_id']}'")
                for name in SAMPLE_COLUMNS:
                    columns[name].append(record[name])
            else:
                raise DatasetFormatError(f"{path}: unknown record type '{kind}'")
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{path}: malformed {kind} record on line {number}: {e}") from e

    frame = _frame(columns)
    if len(frame) and not ((frame['target'] >= 0.0) & (frame['target'] <= 1.0)).all():
        raise DatasetFormatError(f"{path}: targets outside [0, 1]")
    return SampleSet(header, conditions, frame)


def write_dataset(splits: DatasetSplits, out_dir: str) -> Dict[str, str]:
    """train/val/test .jsonl и CSV-копии; возвращает пути файлов выборки"""
    paths = {}
    for name in SPLIT_NAMES:
        path = os.path.join(out_dir, f"{name}.jsonl")
        persist(splits.by_name(name), path)
        export_csv(splits.by_name(name), os.path.join(out_dir, f"{name}.csv"))
        paths[name] = path
    return paths


def load_dataset(data_dir: str, expected_topology_hash: Optional[str] = None) -> DatasetSplits:
    return DatasetSplits(*(load_samples(os.path.join(data_dir, f"{name}.jsonl"), expected_topology_hash)
                           for name in SPLIT_NAMES))
