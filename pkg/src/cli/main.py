"""
Единая точка входа командной строки HENG

Коды выхода: 0 - успех, 1 - предметная ошибка, 2 - ошибка входных данных
"""
import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from datetime import datetime
from typing import Callable, Dict, List, Optional

import numpy as np

from ..dataset.samples import generate_dataset, load_dataset, write_dataset
from ..dataset.sampling import SamplingConfig
from ..deeponet.evaluation import constant_baseline, evaluate
from ..deeponet.model import (GRAPH, VANILLA, BranchInput, ModelDescriptor, TrunkInput, build_model,
                              clamp_fraction, load_model)
from ..deeponet.training import TrainingConfig, train
from ..network.topology import (line_graph_adjacency, load_network, require_valid, topology_hash, validate)
from ..shared import __version__
from ..shared.config import AppConfig
from ..shared.database import RunRegistry
from ..shared.errors import HengError, InputError, QueryError, TopologyError
from ..shared.models import RunManifest
from ..shared.schemas import BranchInputsSchema, ModelConfigSchema, load_document, read_json
from ..shared.utils import canonical_json, ensure_parent, file_sha256, peak_memory_mb, setup_logging
from ..simulator.scenario import load_scenario
from ..simulator.transport import exceedance, simulate_network

logger = logging.getLogger(__name__)

NETWORK_COPY = "network.json"


class RunContext:
    """Сведения о запуске для манифеста"""

    def __init__(self, command: str, seed: Optional[int]):
        self.command = command
        self.seed = seed
        self.config: dict = {}
        self.input_hashes: Dict[str, str] = {}
        self.output_dir: str = ""
        self.extra: dict = {}

    def add_input(self, path: str) -> None:
        if path and os.path.isfile(path):
            self.input_hashes[os.path.abspath(path)] = file_sha256(path)


def _threads(args, config: AppConfig) -> int:
    return args.threads if args.threads and args.threads > 0 else config.threads


def _run_dir(args, config: AppConfig) -> str:
    """Каталог манифестов команд без собственного каталога результата"""
    if args.run_dir:
        return os.path.abspath(args.run_dir)
    return os.path.join(os.path.dirname(config.registry_path), 'runs')


def _write_json(path: str, data) -> None:
    ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write('\n')


# --- команды ---

def cmd_validate(args, config: AppConfig, ctx: RunContext) -> int:
    ctx.add_input(args.network)
    ctx.output_dir = _run_dir(args, config)
    topology = load_network(args.network)
    report = validate(topology)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    elif report.is_valid:
        print(f"OK: {len(topology.nodes)} nodes, {len(topology.pipes)} pipes")
    else:
        for violation in report:
            print(f"[{violation.code}] {violation.subject}: {violation.message}")
    return 0 if report.is_valid else 1


def cmd_simulate(args, config: AppConfig, ctx: RunContext) -> int:
    ctx.add_input(args.network)
    ctx.add_input(args.scenario)
    topology = load_network(args.network)
    require_valid(topology)
    scenario = load_scenario(args.scenario, topology, config)
    result = simulate_network(scenario)
    ensure_parent(args.out)
    result.export_csv(args.out)
    ctx.output_dir = os.path.dirname(os.path.abspath(args.out))

    threshold = args.threshold if args.threshold is not None else config.permissible_fraction
    found = exceedance(result, threshold)
    ctx.config = {'threshold': threshold, 'dt_s': scenario.dt_s, 'horizon_s': scenario.horizon_s,
                  'snapshot_stride': scenario.snapshot_stride, 'reference_density': scenario.reference_density}
    ctx.extra = {'snapshots': len(result.times), 'exceedances': [asdict(e) for e in found]}
    print(f"Simulated {scenario.step_count} steps, {len(result.times)} snapshots -> {args.out}")
    for item in found:
        print(f"  pipe {item.pipe_id}: fraction above {threshold} from t={item.first_time_s:g} s "
              f"(max {item.max_fraction:.4f})")
    return 0


def cmd_gen_dataset(args, config: AppConfig, ctx: RunContext) -> int:
    ctx.add_input(args.network)
    ctx.add_input(args.sampling_config)
    topology = load_network(args.network)
    require_valid(topology)
    document = read_json(args.sampling_config)
    if args.seed is not None:
        document = dict(document, seed=args.seed)
    sampling = SamplingConfig.from_dict({**config.sampling_defaults(), **document})
    ctx.seed = sampling.seed
    ctx.config = sampling.to_dict()

    splits = generate_dataset(topology, sampling, threads=_threads(args, config))
    write_dataset(splits, args.out_dir)
    with open(os.path.join(args.out_dir, NETWORK_COPY), 'w', encoding='utf-8', newline='\n') as f:
        f.write(canonical_json(topology.to_dict()) + '\n')
    ctx.output_dir = os.path.abspath(args.out_dir)

    sizes = {name: len(getattr(splits, name).conditions) for name in ('train', 'val', 'test')}
    ctx.extra = {'split_scenarios': sizes, 'split_samples': {n: len(getattr(splits, n)) for n in sizes}}
    print(f"Dataset written to {args.out_dir}: "
          + ", ".join(f"{name} {count} scenarios / {len(getattr(splits, name))} samples"
                      for name, count in sizes.items()))
    return 0


def _model_hyperparameters(config: AppConfig, document: dict) -> dict:
    def pick(key, default):
        value = document.get(key)
        return default if value is None else value

    return {
        'latent': pick('latent', config.latent),
        'head': pick('head', config.head),
        'embedding': pick('embedding', config.embedding),
        'rounds': pick('rounds', config.rounds),
        'hidden_width': pick('hidden_width', config.hidden_width),
        'hidden_layers': pick('hidden_layers', config.hidden_layers),
        'share_rounds': pick('share_rounds', True),
    }


def _dataset_network(data_dir: str):
    path = os.path.join(data_dir, NETWORK_COPY)
    if not os.path.isfile(path):
        raise InputError(f"{data_dir}: missing {NETWORK_COPY}; regenerate the dataset with gen-dataset")
    return path, load_network(path)


def cmd_train(args, config: AppConfig, ctx: RunContext) -> int:
    network_path, topology = _dataset_network(args.dataset_dir)
    ctx.add_input(network_path)
    expected = topology_hash(topology)
    splits = load_dataset(args.dataset_dir, expected)
    for name in ('train', 'val', 'test'):
        ctx.add_input(os.path.join(args.dataset_dir, f"{name}.jsonl"))

    document = {}
    if args.model_config:
        ctx.add_input(args.model_config)
        document = load_document(args.model_config, ModelConfigSchema())
    overrides = {k: document.get(k) for k in ('epochs', 'batch_size', 'learning_rate', 'final_learning_rate', 'seed')}
    if args.epochs is not None:
        overrides['epochs'] = args.epochs
    if args.learning_rate is not None:
        overrides['learning_rate'] = args.learning_rate
    if args.final_learning_rate is not None:
        overrides['final_learning_rate'] = args.final_learning_rate
    if args.seed is not None:
        overrides['seed'] = args.seed
    training = TrainingConfig.from_app_config(config, overrides)
    ctx.seed = training.seed

    adam, rng_state = None, None
    if args.resume:
        ctx.add_input(args.resume)
        model, checkpoint = load_model(args.resume, expected)
        adam, rng_state = checkpoint.adam, checkpoint.rng_state
    else:
        header = splits.train.header
        descriptor = ModelDescriptor.for_topology(
            VANILLA if args.baseline else GRAPH, topology, line_graph_adjacency(topology), expected,
            sensors=header.sensors, boundary_samples=header.boundary_samples, flow_channel=header.flow_channel,
            horizon_s=header.horizon_s, **_model_hyperparameters(config, document))
        model = build_model(descriptor, np.random.default_rng([training.seed, 2]))

    ctx.config = {'training': training.__dict__, 'descriptor': model.descriptor.to_dict()}
    result = train(model, splits.train, training, splits.val, threads=_threads(args, config),
                   adam=adam, rng_state=rng_state)
    model.save(args.out, result.adam, result.rng_state,
               extra={'epochs': training.epochs, 'train_target_mean': constant_baseline(splits.train)})
    loss_path = os.path.splitext(args.out)[0] + "_loss.csv"
    result.export_csv(loss_path)
    ctx.output_dir = os.path.dirname(os.path.abspath(args.out))
    ctx.extra = {'final_train_loss': result.final_train_loss, 'loss_csv': loss_path,
                 'parameter_count': model.parameter_count().total}
    print(f"Trained {model.descriptor.kind} model ({model.parameter_count().total} parameters): "
          f"final train loss {result.final_train_loss:.6g} -> {args.out}")
    return 0


def cmd_eval(args, config: AppConfig, ctx: RunContext) -> int:
    network_path, topology = _dataset_network(args.dataset_dir)
    expected = topology_hash(topology)
    ctx.add_input(args.checkpoint)
    model, _ = load_model(args.checkpoint, expected)
    splits = load_dataset(args.dataset_dir, expected)
    report = evaluate(model, splits.by_name(args.split), constant_baseline(splits.train))
    report.extra = {'split': args.split, 'checkpoint': os.path.abspath(args.checkpoint)}
    out = args.out or os.path.splitext(args.checkpoint)[0] + f"_{args.split}_metrics.json"
    _write_json(out, report.to_dict())
    ctx.output_dir = os.path.dirname(os.path.abspath(out))
    ctx.extra = {'metrics': out, 'rmse': report.rmse}
    print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    return 0


def cmd_query(args, config: AppConfig, ctx: RunContext) -> int:
    ctx.output_dir = _run_dir(args, config)
    ctx.add_input(args.checkpoint)
    ctx.add_input(args.network)
    ctx.add_input(args.branch_inputs)
    topology = load_network(args.network)
    require_valid(topology)
    model, _ = load_model(args.checkpoint, topology_hash(topology))
    descriptor = model.descriptor
    if args.pipe not in descriptor.pipe_lengths:
        raise QueryError(f"unknown pipe '{args.pipe}'")
    length = descriptor.pipe_lengths[args.pipe]
    if not (0.0 <= args.x <= length):
        raise QueryError(f"x={args.x} m outside pipe {args.pipe} [0, {length}]")
    if not (0.0 <= args.t <= descriptor.horizon_s):
        raise QueryError(f"t={args.t} s outside horizon [0, {descriptor.horizon_s}]")

    document = load_document(args.branch_inputs, BranchInputsSchema())
    inputs = {pipe_id: BranchInput.from_dict(pipe_id, data) for pipe_id, data in document['pipes'].items()}
    query = TrunkInput(args.pipe, args.x / length, args.t / descriptor.horizon_s)
    raw = model.estimate(inputs, line_graph_adjacency(topology), query) if descriptor.kind == GRAPH \
        else model.estimate(inputs, query)
    value = float(clamp_fraction(raw))
    threshold = args.threshold if args.threshold is not None else config.permissible_fraction
    ctx.extra = {'pipe': args.pipe, 'x_m': args.x, 't_s': args.t, 'estimate': value}
    print(f"{value:.6f}")
    if value > threshold:
        print(f"warning: estimate exceeds permissible fraction {threshold}")
    return 0


def cmd_runs(args, config: AppConfig, ctx: RunContext) -> int:
    registry = RunRegistry(config.registry_path)
    try:
        for run in registry.recent(args.limit):
            print(f"{run['id']:>5}  {run['started_at']}  {run['command']:<12} exit={run['exit_code']}  "
                  f"{run['duration_s']:.2f}s  {run['output_dir'] or ''}")
    finally:
        registry.close()
    return 0


COMMANDS: Dict[str, Callable] = {
    'validate': cmd_validate,
    'simulate': cmd_simulate,
    'gen-dataset': cmd_gen_dataset,
    'train': cmd_train,
    'eval': cmd_eval,
    'query': cmd_query,
    'runs': cmd_runs,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='heng', description='HENG pipeline transport simulator and operator models')
    parser.add_argument('--config', help='Путь к config.ini')
    parser.add_argument('--seed', type=int, help='Единый seed для всех случайных величин')
    parser.add_argument('--threads', type=int, help='Максимальное число потоков')
    parser.add_argument('--run-dir', help='Каталог манифестов для validate и query')
    parser.add_argument('-v', '--verbose', action='store_true', help='Подробный журнал (DEBUG)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('validate', help='Проверка файла сети')
    p.add_argument('network')
    p.add_argument('--json', action='store_true', help='Отчёт в JSON')

    p = sub.add_parser('simulate', help='Расчёт переноса водорода по сценарию')
    p.add_argument('network')
    p.add_argument('scenario')
    p.add_argument('--out', required=True, help='CSV-файл результата')
    p.add_argument('--threshold', type=float, help='Допустимая доля водорода')

    p = sub.add_parser('gen-dataset', help='Генерация обучающей выборки')
    p.add_argument('network')
    p.add_argument('sampling_config')
    p.add_argument('--out-dir', required=True)

    p = sub.add_parser('train', help='Обучение модели')
    p.add_argument('dataset_dir')
    p.add_argument('--model-config', help='JSON с гиперпараметрами модели')
    p.add_argument('--out', required=True, help='Файл чекпоинта')
    p.add_argument('--baseline', action='store_true', help='Классический DeepONet вместо графового')
    p.add_argument('--resume', help='Продолжить с чекпоинта')
    p.add_argument('--epochs', type=int)
    p.add_argument('--learning-rate', type=float)
    p.add_argument('--final-learning-rate', type=float, help='Скорость обучения к последней эпохе')

    p = sub.add_parser('eval', help='Метрики на части выборки')
    p.add_argument('checkpoint')
    p.add_argument('dataset_dir')
    p.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    p.add_argument('--out', help='JSON с метриками')

    p = sub.add_parser('query', help='Оценка доли водорода в точке')
    p.add_argument('checkpoint')
    p.add_argument('network')
    p.add_argument('branch_inputs')
    p.add_argument('pipe')
    p.add_argument('x', type=float, help='Координата вдоль трубы, м')
    p.add_argument('t', type=float, help='Время, с')
    p.add_argument('--threshold', type=float)

    p = sub.add_parser('runs', help='Журнал запусков')
    p.add_argument('--limit', type=int, default=20)
    return parser


def _finish(ctx: RunContext, config: AppConfig, exit_code: int, started_at: datetime, duration: float) -> None:
    manifest = RunManifest(
        command=ctx.command,
        config=ctx.config,
        input_hashes=ctx.input_hashes,
        seed=ctx.seed,
        tool_version=__version__,
        duration_s=duration,
        exit_code=exit_code,
        output_dir=ctx.output_dir,
        started_at=started_at.isoformat(timespec='seconds'),
        memory_mb=peak_memory_mb(),
        extra=ctx.extra,
    )
    if ctx.output_dir and exit_code == 0:
        _write_json(os.path.join(ctx.output_dir, f"manifest_{ctx.command}.json"), manifest.to_dict())
    if ctx.command == 'runs' or not config.registry_enabled:
        return
    try:
        registry = RunRegistry(config.registry_path)
        try:
            registry.record(manifest)
        finally:
            registry.close()
    except Exception as e:
        logger.warning(f"Run registry unavailable: {e}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = AppConfig(args.config)
    setup_logging('DEBUG' if args.verbose else config.log_level, config.log_file)

    ctx = RunContext(args.command, args.seed)
    started_at = datetime.now()
    clock = time.perf_counter()
    try:
        exit_code = COMMANDS[args.command](args, config, ctx)
    except TopologyError as e:
        for violation in e.violations:
            print(f"[{violation.code}] {violation.subject}: {violation.message}", file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        exit_code = e.exit_code
    except HengError as e:
        print(f"error: {e}", file=sys.stderr)
        exit_code = e.exit_code
    _finish(ctx, config, exit_code, started_at, time.perf_counter() - clock)
    logger.info(f"Command {args.command} finished with exit code {exit_code}")
    return exit_code
