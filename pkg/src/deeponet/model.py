"""
Графово-расширенный DeepONet и классический DeepONet с мультипликативным объединением ветвей

Графовая модель:
    h_ij = branch_ij([u_init; mask; u_bound; indirect])       по трубе
    b    = R раундов h'_p = act(W_self·h_p + W_nbr·mean_{q∈adj(p)} h_q + bias)
    ŵ    = ⟨P·b_ij, trunk([embed(ij); x; t])⟩ + β

Классическая модель:
    ŵ    = ⟨Π_ij branch_ij(U_ij), trunk([embed(ij); x; t])⟩ + β
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..network.topology import AdjacencyMap
from ..nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..nn.layers import Activation, Mlp
from ..nn.optim import AdamState
from ..nn.tape import GradientTape, ParameterStore, Var
from ..shared.errors import CheckpointMismatchError, DimensionError, DomainError, QueryError

logger = logging.getLogger(__name__)

GRAPH = "graph"
VANILLA = "vanilla"


@dataclass(frozen=True, eq=False)
class BranchInput:
    """
    Входы ветви одной трубы: показания датчиков начального поля с маской
    и выборка граничного сигнала на входе трубы в K равномерных моментах
    """
    pipe_id: str
    u_init: np.ndarray
    init_mask: np.ndarray
    u_bound: np.ndarray
    bound_indirect: bool = False
    u_flow: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ('u_init', 'init_mask', 'u_bound', 'u_flow'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=np.float64).reshape(-1))

    def check(self, sensors: int, boundary_samples: int, flow_channel: bool) -> None:
        if self.u_init.size != sensors or self.init_mask.size != sensors:
            raise DimensionError(f"branch input of {self.pipe_id}: expected {sensors} sensor entries, "
                                 f"got {self.u_init.size} readings and {self.init_mask.size} mask entries")
        if self.u_bound.size != boundary_samples:
            raise DimensionError(f"branch input of {self.pipe_id}: expected {boundary_samples} boundary samples, "
                                 f"got {self.u_bound.size}")
        if flow_channel and (self.u_flow is None or self.u_flow.size != boundary_samples):
            raise DimensionError(f"branch input of {self.pipe_id}: flow channel needs {boundary_samples} samples")
        for name in ('u_init', 'init_mask', 'u_bound'):
            values = getattr(self, name)
            if not np.all((values >= 0.0) & (values <= 1.0)):
                raise DomainError(f"branch input of {self.pipe_id}: {name} values must lie in [0, 1]")

    def vector(self, flow_channel: bool = False) -> np.ndarray:
        parts = [self.u_init, self.init_mask, self.u_bound, np.array([1.0 if self.bound_indirect else 0.0])]
        if flow_channel:
            parts.append(self.u_flow)
        return np.concatenate(parts)

    def to_dict(self):
        data = {
            'u_init': self.u_init.tolist(),
            'init_mask': self.init_mask.tolist(),
            'u_bound': self.u_bound.tolist(),
            'bound_indirect': bool(self.bound_indirect),
        }
        if self.u_flow is not None:
            data['u_flow'] = self.u_flow.tolist()
        return data

    @classmethod
    def from_dict(cls, pipe_id: str, data: Mapping) -> 'BranchInput':
        mask = data.get('init_mask')
        if mask is None:
            mask = np.ones(len(data['u_init']))
        return cls(pipe_id, data['u_init'], mask, data['u_bound'],
                   bool(data.get('bound_indirect', False)), data.get('u_flow'))


@dataclass(frozen=True)
class TrunkInput:
    """Точка запроса: труба, относительная координата и нормированное время"""
    pipe_id: str
    x_rel: float
    t_rel: float

    def __post_init__(self):
        if not (0.0 <= self.x_rel <= 1.0):
            raise QueryError(f"x_rel={self.x_rel} outside [0, 1]")
        if not (0.0 <= self.t_rel <= 1.0):
            raise QueryError(f"t_rel={self.t_rel} outside [0, 1]")


@dataclass(frozen=True)
class ModelDescriptor:
    """Описание архитектуры; хранится в чекпоинте"""
    kind: str
    pipe_ids: Tuple[str, ...]
    adjacency: Dict[str, Tuple[str, ...]]
    topology_hash: str
    sensors: int = 4
    boundary_samples: int = 16
    flow_channel: bool = False
    latent: int = 32
    head: int = 16
    embedding: int = 8
    rounds: int = 2
    hidden_width: int = 64
    hidden_layers: int = 2
    share_rounds: bool = True
    aggregator_activation: str = "tanh"
    horizon_s: float = 1.0
    pipe_lengths: Dict[str, float] = field(default_factory=dict)

    @property
    def branch_input_dim(self) -> int:
        return 2 * self.sensors + self.boundary_samples + 1 + (self.boundary_samples if self.flow_channel else 0)

    def to_dict(self):
        data = asdict(self)
        data['pipe_ids'] = list(self.pipe_ids)
        data['adjacency'] = {k: list(v) for k, v in sorted(self.adjacency.items())}
        data['pipe_lengths'] = dict(sorted(self.pipe_lengths.items()))
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> 'ModelDescriptor':
        data = dict(data)
        data['pipe_ids'] = tuple(data['pipe_ids'])
        data['adjacency'] = {k: tuple(v) for k, v in data['adjacency'].items()}
        return cls(**data)

    @classmethod
    def for_topology(cls, kind: str, topology, adjacency: AdjacencyMap, topology_hash: str,
                     **hyperparameters) -> 'ModelDescriptor':
        return cls(
            kind=kind,
            pipe_ids=topology.pipe_ids,
            adjacency={p: tuple(sorted(adjacency[p])) for p in topology.pipe_ids},
            topology_hash=topology_hash,
            pipe_lengths={p.id: float(p.length_m) for p in topology.pipes},
            **hyperparameters,
        )


@dataclass
class ParameterReport:
    """Поэлементный подсчёт обучаемых скаляров"""
    kind: str
    components: Dict[str, int]
    per_pipe_branch: Dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def to_dict(self):
        return {'kind': self.kind, 'total': self.total, 'components': dict(self.components),
                'per_pipe_branch': dict(self.per_pipe_branch)}


class BranchBatch:
    """Матрицы входов ветвей для m сценариев: {pipe_id: (m, branch_input_dim)}"""

    def __init__(self, matrices: Mapping[str, np.ndarray]):
        self.matrices = dict(matrices)
        sizes = {m.shape[0] for m in self.matrices.values()}
        if len(sizes) != 1:
            raise DimensionError("branch matrices must have the same number of rows")
        self.rows = sizes.pop()

    @classmethod
    def from_inputs(cls, descriptor: ModelDescriptor, conditions: Sequence[Mapping[str, BranchInput]]):
        matrices = {}
        for pipe_id in descriptor.pipe_ids:
            rows = []
            for condition in conditions:
                if pipe_id not in condition:
                    raise DimensionError(f"missing branch input for pipe '{pipe_id}'")
                item = condition[pipe_id]
                item.check(descriptor.sensors, descriptor.boundary_samples, descriptor.flow_channel)
                rows.append(item.vector(descriptor.flow_channel))
            matrices[pipe_id] = np.vstack(rows)
        return cls(matrices)

    def select(self, rows: np.ndarray) -> 'BranchBatch':
        return BranchBatch({p: m[rows] for p, m in self.matrices.items()})


class OperatorModelBase:
    """Общая часть: хранилище параметров, ствол (trunk) с вложениями труб, смещение головы"""

    def __init__(self, descriptor: ModelDescriptor, rng: Optional[np.random.Generator] = None):
        self.descriptor = descriptor
        self.pipe_index = {pipe_id: i for i, pipe_id in enumerate(descriptor.pipe_ids)}
        self.store = ParameterStore()
        d = descriptor
        self.embedding_name = self.store.add('trunk/embeddings', (len(d.pipe_ids), d.embedding), init='embedding')
        self.trunk = Mlp.create(self.store, 'trunk', [d.embedding + 2] + [d.hidden_width] * d.hidden_layers + [d.head],
                                Activation.TANH, Activation.IDENTITY)
        self._build_branch()
        self.head_bias_name = self.store.add('head/bias', (1,), init='zeros')
        self.store.build(rng if rng is not None else np.random.default_rng(0))

    def _build_branch(self):
        raise NotImplementedError

    def branch_output(self, tape: GradientTape, batch: BranchBatch,
                      adjacency: Optional[AdjacencyMap] = None) -> Tuple[Var, str]:
        """Возвращает признаки ветви и способ их выбора для запросов ('pipe' или 'scenario')"""
        raise NotImplementedError

    # --- общие части ---

    def tape(self, record: bool = True) -> GradientTape:
        return GradientTape(self.store, record=record)

    def trunk_output(self, tape: GradientTape, pipe_rows: np.ndarray, x_rel: np.ndarray, t_rel: np.ndarray) -> Var:
        embeddings = tape.gather_rows(tape.parameter(self.embedding_name), pipe_rows)
        coords = tape.constant(np.column_stack([x_rel, t_rel]))
        return self.trunk.forward(tape.concat([embeddings, coords], axis=1), tape)

    def predict(self, tape: GradientTape, batch: BranchBatch, scenario_rows: np.ndarray, pipe_rows: np.ndarray,
                x_rel: np.ndarray, t_rel: np.ndarray, adjacency: Optional[AdjacencyMap] = None) -> Var:
        """
        Сырые (без ограничения в [0, 1]) оценки для n запросов; форма (n, 1).
        scenario_rows - строки batch, pipe_rows - индексы труб в descriptor.pipe_ids
        """
        scenario_rows = np.asarray(scenario_rows, dtype=np.intp)
        pipe_rows = np.asarray(pipe_rows, dtype=np.intp)
        features, layout = self.branch_output(tape, batch, adjacency)
        if layout == 'pipe':
            rows = pipe_rows * batch.rows + scenario_rows
        else:
            rows = scenario_rows
        branch_rows = self._project(tape, tape.gather_rows(features, rows))
        trunk = self.trunk_output(tape, pipe_rows, np.asarray(x_rel, dtype=float), np.asarray(t_rel, dtype=float))
        out = tape.add_scalar(tape.rowdot(branch_rows, trunk), tape.parameter(self.head_bias_name))
        tape.output = out
        return out

    def _project(self, tape: GradientTape, rows: Var) -> Var:
        return rows

    def predict_values(self, batch: BranchBatch, scenario_rows, pipe_rows, x_rel, t_rel) -> np.ndarray:
        out = self.predict(self.tape(record=False), batch, scenario_rows, pipe_rows, x_rel, t_rel)
        return out.value[:, 0].copy()

    def _single_query(self, branch_inputs: Mapping[str, BranchInput], query: TrunkInput,
                      tape: Optional[GradientTape], adjacency: Optional[AdjacencyMap]) -> float:
        if query.pipe_id not in self.pipe_index:
            raise QueryError(f"unknown pipe '{query.pipe_id}'")
        tape = tape if tape is not None else self.tape(record=False)
        batch = BranchBatch.from_inputs(self.descriptor, [branch_inputs])
        out = self.predict(tape, batch, np.array([0]), np.array([self.pipe_index[query.pipe_id]]),
                           np.array([query.x_rel]), np.array([query.t_rel]), adjacency)
        return float(out.value[0, 0])

    def parameter_count(self) -> ParameterReport:
        store = self.store
        per_pipe = {p: store.count(f'branch/{p}/') for p in self.descriptor.pipe_ids}
        components = {
            'branch': sum(per_pipe.values()),
            'aggregator': store.count('aggregator/'),
            'projection': store.count('projection/'),
            'trunk': store.count('trunk/layer'),
            'embeddings': store.count('trunk/embeddings'),
            'head_bias': store.count('head/'),
        }
        return ParameterReport(self.descriptor.kind, components, per_pipe)

    # --- сохранение ---

    def to_checkpoint(self, adam: Optional[AdamState] = None, rng_state: Optional[dict] = None,
                      extra: Optional[dict] = None) -> Checkpoint:
        return Checkpoint(descriptor=self.descriptor.to_dict(), params=self.store.values.copy(),
                          adam=adam, rng_state=rng_state, extra=extra or {})

    def save(self, path: str, adam: Optional[AdamState] = None, rng_state: Optional[dict] = None,
             extra: Optional[dict] = None) -> None:
        save_checkpoint(path, self.to_checkpoint(adam, rng_state, extra))


class GraphOperatorModel(OperatorModelBase):
    """Графово-расширенный DeepONet: ветви по трубам + агрегатор по линейному графу"""

    def _build_branch(self):
        d = self.descriptor
        self.branches: Dict[str, Mlp] = {}
        for pipe_id in d.pipe_ids:
            self.branches[pipe_id] = Mlp.create(
                self.store, f'branch/{pipe_id}',
                [d.branch_input_dim] + [d.hidden_width] * d.hidden_layers + [d.latent],
                Activation.TANH, Activation.TANH)
        rounds = 1 if d.share_rounds else d.rounds
        self.aggregator_names: List[Tuple[str, str, str]] = []
        for r in range(rounds if d.rounds > 0 else 0):
            prefix = 'aggregator' if d.share_rounds else f'aggregator/round{r}'
            self.aggregator_names.append((
                self.store.add(f'{prefix}/W_self', (d.latent, d.latent), init='glorot'),
                self.store.add(f'{prefix}/W_nbr', (d.latent, d.latent), init='glorot'),
                self.store.add(f'{prefix}/bias', (d.latent,), init='zeros'),
            ))
        self.projection_name = self.store.add('projection/W', (d.head, d.latent), init='glorot')
        self.aggregator_activation = Activation(d.aggregator_activation)

    def _adjacency(self, adjacency: Optional[AdjacencyMap]) -> Mapping[str, Sequence[str]]:
        if adjacency is None:
            return self.descriptor.adjacency
        if set(adjacency) != set(self.descriptor.pipe_ids):
            raise DimensionError("adjacency keys do not match the model's pipes")
        return adjacency

    def branch_features(self, tape: GradientTape, batch: BranchBatch) -> Dict[str, Var]:
        features = {}
        for pipe_id, mlp in self.branches.items():
            if pipe_id not in batch.matrices:
                raise DimensionError(f"missing branch input for pipe '{pipe_id}'")
            features[pipe_id] = mlp.forward(tape.constant(batch.matrices[pipe_id]), tape)
        return features

    def aggregate_features(self, tape: GradientTape, features: Mapping[str, Var],
                           adjacency: Optional[AdjacencyMap] = None) -> Dict[str, Var]:
        adjacency = self._adjacency(adjacency)
        if set(features) != set(adjacency):
            raise DimensionError("feature keys do not match adjacency keys")
        h = dict(features)
        for r in range(self.descriptor.rounds):
            w_self_name, w_nbr_name, bias_name = self.aggregator_names[0 if self.descriptor.share_rounds else r]
            w_self = tape.parameter(w_self_name)
            w_nbr = tape.parameter(w_nbr_name)
            bias = tape.parameter(bias_name)
            updated = {}
            for pipe_id in self.descriptor.pipe_ids:
                pre = tape.linear(h[pipe_id], w_self, bias)
                neighbors = sorted(adjacency[pipe_id])
                if neighbors:
                    # среднее по пустому множеству - нулевой вектор, вклад W_nbr отсутствует
                    pre = tape.add(pre, tape.linear(tape.mean([h[q] for q in neighbors]), w_nbr))
                updated[pipe_id] = tape.tanh(pre) if self.aggregator_activation is Activation.TANH else pre
            h = updated
        return h

    def branch_output(self, tape, batch, adjacency=None):
        aggregated = self.aggregate_features(tape, self.branch_features(tape, batch), adjacency)
        return tape.concat([aggregated[p] for p in self.descriptor.pipe_ids], axis=0), 'pipe'

    def _project(self, tape, rows):
        return tape.linear(rows, tape.parameter(self.projection_name))

    def estimate(self, branch_inputs, adjacency, query, tape=None) -> float:
        return self._single_query(branch_inputs, query, tape, adjacency)


class VanillaOperatorModel(OperatorModelBase):
    """Классический DeepONet: отдельная ветвь на трубу, произведение выходов ветвей"""

    def _build_branch(self):
        d = self.descriptor
        self.branches: Dict[str, Mlp] = {}
        for pipe_id in d.pipe_ids:
            self.branches[pipe_id] = Mlp.create(
                self.store, f'branch/{pipe_id}',
                [d.branch_input_dim] + [d.hidden_width] * d.hidden_layers + [d.head],
                Activation.TANH, Activation.IDENTITY)

    def branch_features(self, tape: GradientTape, batch: BranchBatch) -> Dict[str, Var]:
        features = {}
        for pipe_id, mlp in self.branches.items():
            if pipe_id not in batch.matrices:
                raise DimensionError(f"missing branch input for pipe '{pipe_id}'")
            features[pipe_id] = mlp.forward(tape.constant(batch.matrices[pipe_id]), tape)
        return features

    def branch_output(self, tape, batch, adjacency=None):
        features = self.branch_features(tape, batch)
        combined = None
        for pipe_id in self.descriptor.pipe_ids:
            combined = features[pipe_id] if combined is None else tape.mul(combined, features[pipe_id])
        return combined, 'scenario'

    def estimate(self, branch_inputs, query, tape=None) -> float:
        return self._single_query(branch_inputs, query, tape, None)


def build_model(descriptor: ModelDescriptor, rng: Optional[np.random.Generator] = None) -> OperatorModelBase:
    if descriptor.kind == GRAPH:
        return GraphOperatorModel(descriptor, rng)
    if descriptor.kind == VANILLA:
        return VanillaOperatorModel(descriptor, rng)
    raise DomainError(f"unknown model kind '{descriptor.kind}'")


def load_model(path: str, expected_topology_hash: Optional[str] = None):
    """
    Загрузка модели из чекпоинта.

    Raises:
        CheckpointMismatchError: хеш топологии чекпоинта не совпадает с загруженной сетью
    """
    checkpoint = load_checkpoint(path)
    descriptor = ModelDescriptor.from_dict(checkpoint.descriptor)
    if expected_topology_hash is not None and descriptor.topology_hash != expected_topology_hash:
        raise CheckpointMismatchError(
            f"checkpoint topology hash {descriptor.topology_hash[:12]} does not match network {expected_topology_hash[:12]}")
    model = build_model(descriptor)
    model.store.load(checkpoint.params)
    logger.info(f"Loaded {descriptor.kind} model from {path}")
    return model, checkpoint


# --- операции в функциональной форме ---

def _single_batch(model: OperatorModelBase, branch_inputs: Mapping[str, BranchInput]) -> BranchBatch:
    return BranchBatch.from_inputs(model.descriptor, [branch_inputs])


def branch_forward(model: GraphOperatorModel, branch_inputs: Mapping[str, BranchInput],
                   tape: Optional[GradientTape] = None) -> Dict[str, np.ndarray]:
    """Признаки ветвей h_ij ∈ R^d для каждой трубы"""
    tape = tape if tape is not None else model.tape(record=False)
    features = model.branch_features(tape, _single_batch(model, branch_inputs))
    return {p: v.value[0].copy() for p, v in features.items()}


def aggregate(model: GraphOperatorModel, features: Mapping[str, np.ndarray], adjacency: AdjacencyMap,
              tape: Optional[GradientTape] = None) -> Dict[str, np.ndarray]:
    """R раундов передачи сообщений по линейному графу"""
    tape = tape if tape is not None else model.tape(record=False)
    if set(features) != set(adjacency):
        raise DimensionError("feature keys do not match adjacency keys")
    d = model.descriptor.latent
    wrapped = {}
    for pipe_id, value in features.items():
        value = np.asarray(value, dtype=np.float64).reshape(1, -1)
        if value.shape[1] != d:
            raise DimensionError(f"feature of {pipe_id} has width {value.shape[1]}, expected {d}")
        wrapped[pipe_id] = tape.constant(value)
    out = model.aggregate_features(tape, wrapped, adjacency)
    return {p: v.value[0].copy() for p, v in out.items()}


def estimate(model: GraphOperatorModel, branch_inputs: Mapping[str, BranchInput], adjacency: AdjacencyMap,
             query: TrunkInput, tape: Optional[GradientTape] = None) -> float:
    """Сырая оценка ŵ графовой моделью (без ограничения в [0, 1])"""
    return model.estimate(branch_inputs, adjacency, query, tape)


def estimate_vanilla(model: VanillaOperatorModel, branch_inputs: Mapping[str, BranchInput],
                     query: TrunkInput, tape: Optional[GradientTape] = None) -> float:
    """Сырая оценка ŵ классическим DeepONet"""
    return model.estimate(branch_inputs, query, tape)


def parameter_count(model: OperatorModelBase) -> ParameterReport:
    return model.parameter_count()


def clamp_fraction(value):
    """Ограничение оценки физическим диапазоном [0, 1] (только при выдаче)"""
    return np.clip(value, 0.0, 1.0)
