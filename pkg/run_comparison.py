#!/usr/bin/env python3
"""
Сравнение графового и классического DeepONet на эталонной сети из 6 труб:
генерация выборки, обучение обеих моделей при одинаковом p, метрики в comparison.json
"""
import argparse
import json
import os
import sys
import time

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.dataset.samples import generate_dataset, write_dataset
from src.dataset.sampling import SamplingConfig
from src.deeponet.evaluation import compare_models
from src.deeponet.training import TrainingConfig
from src.network.topology import load_network, require_valid
from src.shared.config import AppConfig
from src.shared.schemas import ModelConfigSchema, load_document, read_json
from src.shared.utils import setup_logging

ROOT = os.path.dirname(os.path.abspath(__file__))
HYPERPARAMETERS = ('latent', 'head', 'embedding', 'rounds', 'hidden_width', 'hidden_layers', 'share_rounds')


def print_header(text):
    print("\n" + "=" * 70)
    print(f"  {text}")
    print("=" * 70)


def main():
    parser = argparse.ArgumentParser(description='Graph-enhanced vs classical DeepONet on the 6-pipe network')
    parser.add_argument('--network', default=os.path.join(ROOT, 'networks', 'six_pipe.json'))
    parser.add_argument('--sampling', default=os.path.join(ROOT, 'configs', 'sampling_six_pipe.json'))
    parser.add_argument('--model-config', default=os.path.join(ROOT, 'configs', 'model_default.json'))
    parser.add_argument('--out-dir', default=os.path.join(ROOT, 'data', 'comparison'))
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--threads', type=int)
    args = parser.parse_args()

    config = AppConfig()
    setup_logging(config.log_level, config.log_file)
    threads = args.threads or config.threads

    topology = load_network(args.network)
    require_valid(topology)
    sampling = SamplingConfig.from_dict({**config.sampling_defaults(), **read_json(args.sampling), 'seed': args.seed})
    model_config = load_document(args.model_config, ModelConfigSchema())

    print_header("Generating dataset")
    started = time.perf_counter()
    splits = generate_dataset(topology, sampling, threads=threads)
    write_dataset(splits, args.out_dir)
    print(f"✓ {len(splits.train)} train / {len(splits.val)} val / {len(splits.test)} test samples "
          f"({time.perf_counter() - started:.1f} s)")

    print_header("Training graph-enhanced and classical models")
    hyperparameters = {key: model_config[key] if model_config.get(key) is not None else getattr(config, key)
                       for key in HYPERPARAMETERS}
    overrides = {key: model_config.get(key) for key in ('batch_size', 'learning_rate', 'final_learning_rate')}
    overrides.update(epochs=args.epochs or model_config.get('epochs'), seed=args.seed)
    training = TrainingConfig.from_app_config(config, overrides)
    comparison = compare_models(splits, topology, hyperparameters, training, threads=threads)
    comparison['duration_s'] = time.perf_counter() - started

    out = os.path.join(args.out_dir, 'comparison.json')
    with open(out, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(comparison, f, indent=2, sort_keys=True)
        f.write('\n')

    print_header("Results")
    for kind in ('graph', 'vanilla'):
        report = comparison[kind]
        print(f"{kind:>8}: RMSE {report['rmse']:.5f}, MAE {report['mae']:.5f}, "
              f"parameters {report['parameter_count']}")
    print(f"constant predictor RMSE {comparison['graph']['baseline_rmse']:.5f}")
    symbol = "✓" if comparison['graph_beats_vanilla'] else "✗"
    print(f"{symbol} graph model RMSE <= classical model RMSE")
    print(f"Written {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
