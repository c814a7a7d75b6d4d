"""
Схемы JSON-документов (marshmallow): сеть, сценарий, конфигурации выборки и модели
Ошибки формы документа превращаются в InputError (код выхода 2)
"""
import json
from typing import Any

from marshmallow import (
    EXCLUDE, RAISE, Schema, ValidationError, fields, post_load, validate, validates_schema,
)

from .errors import InputError
from .models import NetworkTopology, Node, NodeKind, Pipe

NODE_KINDS = [kind.value for kind in NodeKind]


class NodeSchema(Schema):
    """Узел сети"""
    class Meta:
        unknown = RAISE

    id = fields.String(required=True, validate=validate.Length(min=1))
    kind = fields.String(required=True, validate=validate.OneOf(NODE_KINDS))
    boundary_signal_id = fields.String(load_default=None, allow_none=True)

    @post_load
    def make_node(self, data, **kwargs):
        return Node(id=data['id'], kind=NodeKind(data['kind']),
                    boundary_signal_id=data.get('boundary_signal_id'))


class PipeSchema(Schema):
    """Труба сети; физические ограничения проверяет validate()"""
    class Meta:
        unknown = RAISE

    id = fields.String(required=True, validate=validate.Length(min=1))
    from_node = fields.String(required=True)
    to_node = fields.String(required=True)
    length_m = fields.Float(required=True, allow_nan=False)
    area_m2 = fields.Float(required=True, allow_nan=False)

    @post_load
    def make_pipe(self, data, **kwargs):
        return Pipe(**data)


class NetworkSchema(Schema):
    """Файл сети: ключи верхнего уровня nodes и pipes"""
    class Meta:
        unknown = EXCLUDE

    nodes = fields.List(fields.Nested(NodeSchema), required=True)
    pipes = fields.List(fields.Nested(PipeSchema), required=True)

    @post_load
    def make_topology(self, data, **kwargs):
        return NetworkTopology(nodes=tuple(data['nodes']), pipes=tuple(data['pipes']))


class SignalSchema(Schema):
    """Кусочно-постоянный сигнал во времени"""
    breakpoints = fields.List(fields.Float(allow_nan=False), required=True,
                              validate=validate.Length(min=1))
    values = fields.List(fields.Float(allow_nan=False), required=True,
                         validate=validate.Length(min=1))
    mass_flow_rates = fields.List(fields.Float(allow_nan=False), load_default=None)


class StepProfileSchema(Schema):
    position_m = fields.Float(required=True)
    left = fields.Float(required=True)
    right = fields.Float(required=True)


class InitialFieldSchema(Schema):
    """Начальное поле: ровно одно из constant / values / step"""
    constant = fields.Float(load_default=None)
    values = fields.List(fields.Float(allow_nan=False), load_default=None)
    step = fields.Nested(StepProfileSchema, load_default=None)

    @validates_schema
    def exactly_one(self, data, **kwargs):
        given = [key for key in ('constant', 'values', 'step') if data.get(key) is not None]
        if len(given) != 1:
            raise ValidationError("exactly one of 'constant', 'values', 'step' is required")


class ScenarioSchema(Schema):
    """Файл сценария"""
    class Meta:
        unknown = EXCLUDE

    scenario_id = fields.String(load_default="scenario")
    horizon_s = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    dt_s = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    snapshot_stride = fields.Integer(load_default=None, validate=validate.Range(min=1))
    reference_density = fields.Float(load_default=None, validate=validate.Range(min=0, min_inclusive=False))
    default_cells = fields.Integer(load_default=None, validate=validate.Range(min=2))
    cells = fields.Dict(keys=fields.String(), values=fields.Integer(validate=validate.Range(min=2)),
                        load_default=dict)
    velocities = fields.Dict(keys=fields.String(), values=fields.Nested(SignalSchema), required=True)
    boundary_signals = fields.Dict(keys=fields.String(), values=fields.Nested(SignalSchema), required=True)
    initial_fields = fields.Dict(keys=fields.String(), values=fields.Nested(InitialFieldSchema), required=True)


class RangeField(fields.List):
    """Пара [нижняя, верхняя] граница"""

    def __init__(self, **kwargs):
        super().__init__(fields.Float(allow_nan=False), validate=validate.Length(equal=2), **kwargs)


class SamplingConfigSchema(Schema):
    """Конфигурация генерации сценариев и выборок"""
    class Meta:
        unknown = RAISE

    scenario_count = fields.Integer(load_default=200, validate=validate.Range(min=1))
    horizon_s = fields.Float(load_default=3600.0, validate=validate.Range(min=0, min_inclusive=False))
    cells = fields.Integer(load_default=50, validate=validate.Range(min=2))
    courant = fields.Float(load_default=0.9, validate=validate.Range(min=0, max=1, min_inclusive=False))
    snapshot_stride = fields.Integer(load_default=10, validate=validate.Range(min=1))
    reference_density = fields.Float(load_default=1.0)
    velocity_range = RangeField(load_default=lambda: [0.5, 2.0])
    source_fraction_range = RangeField(load_default=lambda: [0.0, 0.1])
    injection_fraction_range = RangeField(load_default=lambda: [0.3, 1.0])
    initial_fraction_range = RangeField(load_default=lambda: [0.0, 0.3])
    injection_flow_range = RangeField(load_default=None, allow_none=True)
    velocity_breakpoints = fields.List(fields.Integer(), load_default=lambda: [0, 2],
                                       validate=validate.Length(equal=2))
    signal_breakpoints = fields.List(fields.Integer(), load_default=lambda: [0, 3],
                                     validate=validate.Length(equal=2))
    initial_family = fields.String(load_default="step",
                                   validate=validate.OneOf(["constant", "step", "smooth"]))
    queries_per_scenario = fields.Integer(load_default=200, validate=validate.Range(min=1))
    split = fields.List(fields.Float(), load_default=lambda: [0.8, 0.1, 0.1],
                        validate=validate.Length(equal=3))
    sensors = fields.Integer(load_default=4, validate=validate.Range(min=0))
    boundary_samples = fields.Integer(load_default=16, validate=validate.Range(min=2))
    sensor_noise = fields.Float(load_default=0.0, validate=validate.Range(min=0))
    flow_channel = fields.Boolean(load_default=False)
    seed = fields.Integer(load_default=0)


class ModelConfigSchema(Schema):
    """Гиперпараметры модели и обучения"""
    class Meta:
        unknown = RAISE

    latent = fields.Integer(load_default=None, validate=validate.Range(min=1))
    head = fields.Integer(load_default=None, validate=validate.Range(min=1))
    embedding = fields.Integer(load_default=None, validate=validate.Range(min=1))
    rounds = fields.Integer(load_default=None, validate=validate.Range(min=0))
    hidden_width = fields.Integer(load_default=None, validate=validate.Range(min=1))
    hidden_layers = fields.Integer(load_default=None, validate=validate.Range(min=0))
    share_rounds = fields.Boolean(load_default=True)
    epochs = fields.Integer(load_default=None, validate=validate.Range(min=1))
    batch_size = fields.Integer(load_default=None, validate=validate.Range(min=1))
    learning_rate = fields.Float(load_default=None, validate=validate.Range(min=0, min_inclusive=False))
    final_learning_rate = fields.Float(load_default=None, validate=validate.Range(min=0, min_inclusive=False))
    seed = fields.Integer(load_default=None)


class BranchInputSchema(Schema):
    """Входы ветви для одной трубы"""
    u_init = fields.List(fields.Float(allow_nan=False), required=True)
    init_mask = fields.List(fields.Float(allow_nan=False), load_default=None)
    u_bound = fields.List(fields.Float(allow_nan=False), required=True)
    bound_indirect = fields.Boolean(load_default=False)
    u_flow = fields.List(fields.Float(allow_nan=False), load_default=None)


class BranchInputsSchema(Schema):
    """Файл входов ветвей: {pipe_id: BranchInput}"""
    pipes = fields.Dict(keys=fields.String(), values=fields.Nested(BranchInputSchema), required=True)


def read_json(path: str) -> Any:
    """Прочитать JSON-файл; ошибки формата - InputError"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise InputError(f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


def load_document(path: str, schema: Schema) -> Any:
    """Прочитать и проверить документ по схеме"""
    data = read_json(path)
    return load_data(data, schema, source=path)


def load_data(data: Any, schema: Schema, source: str = "<document>") -> Any:
    try:
        return schema.load(data)
    except ValidationError as e:
        raise InputError(f"{source}: {e.messages}") from e
