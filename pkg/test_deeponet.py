"""
Tests for the graph-enhanced and vanilla operator models: hand-computed
examples, gradients, locality, relabeling equivariance and checkpoints
"""
import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.deeponet.model import (GRAPH, VANILLA, BranchInput, ModelDescriptor, TrunkInput, aggregate, branch_forward,
                                build_model, clamp_fraction, estimate, estimate_vanilla, load_model, parameter_count)
from src.network.topology import line_graph_adjacency, load_network, relabel, topology_hash
from src.shared.errors import CheckpointMismatchError, DimensionError, DomainError, QueryError
from src.shared.models import NetworkTopology, Node, NodeKind, Pipe

ROOT = os.path.dirname(os.path.abspath(__file__))

SMALL = dict(sensors=2, boundary_samples=3, latent=3, head=2, embedding=2, rounds=2, hidden_width=4, hidden_layers=1)


def path_network(count):
    nodes = [Node('s', NodeKind.SOURCE, 'sig')]
    nodes += [Node(f'j{i}', NodeKind.JUNCTION) for i in range(1, count)]
    nodes.append(Node('l', NodeKind.LOAD))
    names = [n.id for n in nodes]
    pipes = tuple(Pipe(f'p{i + 1}', names[i], names[i + 1], 100.0, 1.0) for i in range(count))
    return NetworkTopology(tuple(nodes), pipes)


def make_model(topology, kind=GRAPH, seed=0, **hyper):
    params = dict(SMALL)
    params.update(hyper)
    descriptor = ModelDescriptor.for_topology(kind, topology, line_graph_adjacency(topology),
                                              topology_hash(topology), **params)
    return build_model(descriptor, np.random.default_rng(seed))


def random_inputs(model, rng):
    d = model.descriptor
    return {p: BranchInput(p, rng.uniform(size=d.sensors), np.ones(d.sensors), rng.uniform(size=d.boundary_samples),
                           bool(rng.integers(2)))
            for p in d.pipe_ids}


def zero_branch(model, pipe_id):
    for name in model.store.names:
        if name.startswith(f'branch/{pipe_id}/'):
            model.store.view(name)[...] = 0.0


# --- входы ---

def test_branch_input_vector_layout():
    item = BranchInput('p', [0.1, 0.2], [1.0, 0.0], [0.3, 0.4, 0.5], True)
    assert item.vector().tolist() == [0.1, 0.2, 1.0, 0.0, 0.3, 0.4, 0.5, 1.0]
    with_flow = BranchInput('p', [0.1, 0.2], [1.0, 1.0], [0.3, 0.4, 0.5], False, [0.9, 0.8, 0.7])
    assert with_flow.vector(flow_channel=True)[-4:].tolist() == [0.0, 0.9, 0.8, 0.7]


def test_branch_input_checks():
    with pytest.raises(DimensionError):
        BranchInput('p', [0.1], [1.0], [0.3, 0.4, 0.5]).check(2, 3, False)
    with pytest.raises(DimensionError):
        BranchInput('p', [0.1, 0.2], [1.0, 1.0], [0.3]).check(2, 3, False)
    with pytest.raises(DimensionError):
        BranchInput('p', [0.1, 0.2], [1.0, 1.0], [0.3, 0.4, 0.5]).check(2, 3, True)
    with pytest.raises(DomainError):
        BranchInput('p', [0.1, 1.2], [1.0, 1.0], [0.3, 0.4, 0.5]).check(2, 3, False)


def test_branch_input_dict_defaults_mask():
    item = BranchInput.from_dict('p', {'u_init': [0.1, 0.2], 'u_bound': [0.3, 0.4, 0.5]})
    assert item.init_mask.tolist() == [1.0, 1.0]
    assert item.bound_indirect is False


def test_trunk_input_range():
    TrunkInput('p', 0.0, 1.0)
    with pytest.raises(QueryError):
        TrunkInput('p', 1.5, 0.5)
    with pytest.raises(QueryError):
        TrunkInput('p', 0.5, -0.1)


# --- примеры, посчитанные вручную ---

def test_zero_branch_weights_give_tanh_of_bias():
    model = make_model(path_network(1))
    zero_branch(model, 'p1')
    bias = np.array([0.3, -0.2, 0.7])
    model.store.view('branch/p1/layer1/b')[:] = bias
    features = branch_forward(model, random_inputs(model, np.random.default_rng(0)))
    assert features['p1'] == pytest.approx(np.tanh(bias))


def test_single_hidden_unit_branch():
    model = make_model(path_network(1), hidden_width=1, latent=1, head=1)
    inputs = random_inputs(model, np.random.default_rng(1))
    vector = inputs['p1'].vector()
    w0 = np.linspace(-0.5, 0.5, vector.size)
    model.store.view('branch/p1/layer0/W')[:] = w0
    model.store.view('branch/p1/layer0/b')[:] = [0.1]
    model.store.view('branch/p1/layer1/W')[:] = [[2.0]]
    model.store.view('branch/p1/layer1/b')[:] = [-0.4]
    expected = np.tanh(2.0 * np.tanh(w0 @ vector + 0.1) - 0.4)
    assert branch_forward(model, inputs)['p1'][0] == pytest.approx(expected)


def test_isolated_pipe_aggregation():
    topology = path_network(1)
    model = make_model(topology, rounds=1)
    h = np.array([0.2, -0.5, 0.9])
    w_self = model.store.view('aggregator/W_self')
    bias = model.store.view('aggregator/bias')
    bias[:] = [0.05, 0.0, -0.1]
    out = aggregate(model, {'p1': h}, line_graph_adjacency(topology))
    assert out['p1'] == pytest.approx(np.tanh(w_self @ h + bias))


def test_identity_aggregator_passes_features_through():
    topology = path_network(3)
    model = make_model(topology, rounds=2, aggregator_activation='identity')
    model.store.view('aggregator/W_self')[:] = np.eye(3)
    model.store.view('aggregator/W_nbr')[:] = 0.0
    model.store.view('aggregator/bias')[:] = 0.0
    rng = np.random.default_rng(2)
    features = {p: rng.uniform(-1, 1, size=3) for p in topology.pipe_ids}
    out = aggregate(model, features, line_graph_adjacency(topology))
    for pipe_id, h in features.items():
        assert out[pipe_id] == pytest.approx(h, abs=1e-15)


def test_three_pipe_path_one_round_by_hand():
    topology = path_network(3)
    model = make_model(topology, rounds=1, seed=4)
    w_self = model.store.view('aggregator/W_self')
    w_nbr = model.store.view('aggregator/W_nbr')
    model.store.view('aggregator/bias')[:] = [0.1, -0.1, 0.2]
    bias = model.store.view('aggregator/bias')
    rng = np.random.default_rng(5)
    h = {p: rng.uniform(-1, 1, size=3) for p in topology.pipe_ids}
    out = aggregate(model, h, line_graph_adjacency(topology))
    assert out['p1'] == pytest.approx(np.tanh(w_self @ h['p1'] + w_nbr @ h['p2'] + bias))
    assert out['p2'] == pytest.approx(np.tanh(w_self @ h['p2'] + w_nbr @ ((h['p1'] + h['p3']) / 2) + bias))
    assert out['p3'] == pytest.approx(np.tanh(w_self @ h['p3'] + w_nbr @ h['p2'] + bias))


def test_zero_rounds_skip_aggregation():
    topology = path_network(2)
    model = make_model(topology, rounds=0)
    assert model.store.count('aggregator/') == 0
    features = {'p1': np.array([0.1, 0.2, 0.3]), 'p2': np.array([-0.1, 0.0, 0.5])}
    out = aggregate(model, features, line_graph_adjacency(topology))
    assert out['p1'].tolist() == [0.1, 0.2, 0.3]


def test_zero_projection_returns_head_bias():
    topology = path_network(2)
    model = make_model(topology)
    model.store.view('projection/W')[:] = 0.0
    model.store.view('head/bias')[:] = [0.123]
    inputs = random_inputs(model, np.random.default_rng(3))
    adjacency = line_graph_adjacency(topology)
    assert estimate(model, inputs, adjacency, TrunkInput('p2', 0.4, 0.7)) == 0.123


def test_zero_trunk_returns_head_bias():
    topology = path_network(2)
    model = make_model(topology)
    model.store.view('trunk/layer1/W')[:] = 0.0
    model.store.view('trunk/layer1/b')[:] = 0.0
    model.store.view('head/bias')[:] = [-0.05]
    inputs = random_inputs(model, np.random.default_rng(3))
    assert estimate(model, inputs, line_graph_adjacency(topology), TrunkInput('p1', 0.9, 0.1)) == -0.05


def test_scalar_head_example():
    topology = path_network(1)
    model = make_model(topology, latent=1, head=1, rounds=0, hidden_layers=0)
    zero_branch(model, 'p1')
    model.store.view('branch/p1/layer0/b')[:] = [np.arctanh(0.4)]
    model.store.view('projection/W')[:] = [[1.0]]
    model.store.view('trunk/layer0/W')[:] = 0.0
    model.store.view('trunk/layer0/b')[:] = [0.5]
    model.store.view('head/bias')[:] = [0.1]
    inputs = random_inputs(model, np.random.default_rng(6))
    value = estimate(model, inputs, line_graph_adjacency(topology), TrunkInput('p1', 0.5, 0.5))
    assert value == pytest.approx(0.3)


def test_vanilla_zero_branch_collapses_product():
    topology = path_network(3)
    model = make_model(topology, kind=VANILLA)
    zero_branch(model, 'p2')
    model.store.view('head/bias')[:] = [0.07]
    inputs = random_inputs(model, np.random.default_rng(7))
    assert estimate_vanilla(model, inputs, TrunkInput('p3', 0.2, 0.2)) == 0.07


def test_vanilla_two_pipe_chain_by_hand():
    topology = path_network(2)
    model = make_model(topology, kind=VANILLA, head=1, hidden_layers=0)
    zero_branch(model, 'p1')
    zero_branch(model, 'p2')
    model.store.view('branch/p1/layer0/b')[:] = [0.5]
    model.store.view('branch/p2/layer0/b')[:] = [0.4]
    model.store.view('trunk/layer0/W')[:] = 0.0
    model.store.view('trunk/layer0/b')[:] = [2.0]
    inputs = random_inputs(model, np.random.default_rng(8))
    assert estimate_vanilla(model, inputs, TrunkInput('p1', 0.0, 1.0)) == pytest.approx(0.4)


# --- число параметров ---

def test_parameter_count_breakdown():
    topology = path_network(1)
    graph = make_model(topology, latent=8, hidden_width=4, embedding=3)
    report = parameter_count(graph)
    # ветвь: 8->4->8; агрегатор: 2·8·8 + 8; проекция 2·8; ствол 5->4->2
    assert report.components == {'branch': 76, 'aggregator': 136, 'projection': 16, 'trunk': 34,
                                 'embeddings': 3, 'head_bias': 1}
    assert report.total == 266 == graph.store.size
    assert report.per_pipe_branch == {'p1': 76}

    unshared = make_model(topology, latent=8, hidden_width=4, embedding=3, share_rounds=False)
    assert parameter_count(unshared).components['aggregator'] == 272

    vanilla = make_model(topology, kind=VANILLA, latent=8, hidden_width=4, embedding=3)
    report = parameter_count(vanilla)
    assert report.components['branch'] == 46
    assert report.components['aggregator'] == 0
    assert report.total == 84 == vanilla.store.size


def test_parameter_count_grows_with_pipes():
    one = parameter_count(make_model(path_network(1))).total
    three = parameter_count(make_model(path_network(3))).total
    per_pipe = parameter_count(make_model(path_network(1))).components['branch'] + SMALL['embedding']
    assert three - one == 2 * per_pipe



def test_each_pipe_has_its_own_branch():
    topology = path_network(2)
    for kind in (GRAPH, VANILLA):
        report = parameter_count(make_model(topology, kind=kind))
        assert sorted(report.per_pipe_branch) == ['p1', 'p2']

    model = make_model(topology)
    inputs = random_inputs(model, np.random.default_rng(4))
    inputs['p2'] = BranchInput('p2', inputs['p1'].u_init, inputs['p1'].init_mask, inputs['p1'].u_bound,
                                inputs['p1'].bound_indirect)
    before = branch_forward(model, inputs)
    model.store.view('branch/p1/layer1/b')[:] += 0.5
    after = branch_forward(model, inputs)
    assert not np.allclose(after['p1'], before['p1'])
    assert np.array_equal(after['p2'], before['p2'])

# --- градиенты и запись ---

def test_graph_model_gradient_matches_finite_differences():
    topology = path_network(3)
    model = make_model(topology, seed=9)
    inputs = random_inputs(model, np.random.default_rng(10))
    adjacency = line_graph_adjacency(topology)
    query = TrunkInput('p2', 0.3, 0.6)

    tape = model.tape()
    estimate(model, inputs, adjacency, query, tape=tape)
    grad = tape.backward(1.0)

    rng = np.random.default_rng(11)
    h = 1e-5
    for i in rng.choice(model.store.size, size=20, replace=False):
        saved = model.store.values[i]
        model.store.values[i] = saved + h
        up = estimate(model, inputs, adjacency, query)
        model.store.values[i] = saved - h
        down = estimate(model, inputs, adjacency, query)
        model.store.values[i] = saved
        numeric = (up - down) / (2 * h)
        assert abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-3) < 1e-5


def test_recording_does_not_change_estimate():
    topology = path_network(3)
    model = make_model(topology, seed=12)
    inputs = random_inputs(model, np.random.default_rng(13))
    adjacency = line_graph_adjacency(topology)
    query = TrunkInput('p3', 0.8, 0.2)
    assert estimate(model, inputs, adjacency, query) == estimate(model, inputs, adjacency, query, tape=model.tape())


# --- локальность и эквивариантность ---

def test_output_ignores_pipes_beyond_round_count():
    topology = path_network(5)
    model = make_model(topology, rounds=2, seed=14)
    adjacency = line_graph_adjacency(topology)
    rng = np.random.default_rng(15)
    inputs = random_inputs(model, rng)
    query = TrunkInput('p1', 0.5, 0.5)
    base = estimate(model, inputs, adjacency, query)

    far = dict(inputs)
    far['p4'] = BranchInput('p4', rng.uniform(size=2), np.ones(2), rng.uniform(size=3), True)
    assert estimate(model, far, adjacency, query) == base

    near = dict(inputs)
    near['p2'] = BranchInput('p2', rng.uniform(size=2), np.ones(2), rng.uniform(size=3), True)
    assert estimate(model, near, adjacency, query) != base


def test_vanilla_output_depends_on_every_pipe():
    topology = path_network(5)
    model = make_model(topology, kind=VANILLA, seed=16)
    rng = np.random.default_rng(17)
    inputs = random_inputs(model, rng)
    query = TrunkInput('p1', 0.5, 0.5)
    far = dict(inputs)
    far['p5'] = BranchInput('p5', rng.uniform(size=2), np.ones(2), rng.uniform(size=3), True)
    assert estimate_vanilla(model, far, query) != estimate_vanilla(model, inputs, query)


def test_relabeling_pipes_is_equivariant():
    topology = load_network(os.path.join(ROOT, 'networks', 'six_pipe.json'))
    pipe_names = {p: f'q{i}' for i, p in enumerate(reversed(topology.pipe_ids))}
    node_names = {n: f'n_{n.lower()}' for n in topology.node_ids}
    renamed = relabel(topology, node_names, pipe_names)
    renamed = NetworkTopology(renamed.nodes, tuple(reversed(renamed.pipes)))

    model = make_model(topology, seed=18)
    twin = make_model(renamed, seed=19)
    for name in model.store.names:
        if name.startswith('branch/'):
            pipe_id, rest = name[len('branch/'):].split('/', 1)
            twin.store.view(f'branch/{pipe_names[pipe_id]}/{rest}')[...] = model.store.view(name)
        elif name == 'trunk/embeddings':
            source = model.store.view(name)
            target = twin.store.view(name)
            for pipe_id, row in model.pipe_index.items():
                target[twin.pipe_index[pipe_names[pipe_id]]] = source[row]
        else:
            twin.store.view(name)[...] = model.store.view(name)

    rng = np.random.default_rng(20)
    inputs = random_inputs(model, rng)
    renamed_inputs = {pipe_names[p]: BranchInput(pipe_names[p], b.u_init, b.init_mask, b.u_bound, b.bound_indirect)
                      for p, b in inputs.items()}
    adjacency = line_graph_adjacency(topology)
    renamed_adjacency = line_graph_adjacency(renamed)
    for pipe_id in topology.pipe_ids:
        for x, t in ((0.1, 0.2), (0.75, 0.9)):
            original = estimate(model, inputs, adjacency, TrunkInput(pipe_id, x, t))
            mirrored = estimate(twin, renamed_inputs, renamed_adjacency, TrunkInput(pipe_names[pipe_id], x, t))
            assert original == mirrored


# --- ошибки запросов ---

def test_estimate_errors():
    topology = path_network(2)
    model = make_model(topology)
    inputs = random_inputs(model, np.random.default_rng(21))
    adjacency = line_graph_adjacency(topology)
    with pytest.raises(QueryError):
        estimate(model, inputs, adjacency, TrunkInput('nope', 0.5, 0.5))
    missing = {'p1': inputs['p1']}
    with pytest.raises(DimensionError):
        estimate(model, missing, adjacency, TrunkInput('p1', 0.5, 0.5))
    with pytest.raises(DimensionError):
        estimate(model, inputs, {'p1': frozenset()}, TrunkInput('p1', 0.5, 0.5))


def test_unknown_model_kind():
    topology = path_network(1)
    descriptor = ModelDescriptor.for_topology('transformer', topology, line_graph_adjacency(topology),
                                              topology_hash(topology))
    with pytest.raises(DomainError):
        build_model(descriptor)


def test_clamp_fraction():
    assert clamp_fraction(-0.2) == 0.0
    assert clamp_fraction(1.3) == 1.0
    assert clamp_fraction(np.array([0.5, 2.0])).tolist() == [0.5, 1.0]


# --- чекпоинты ---

def test_model_checkpoint_roundtrip(tmp_path):
    topology = path_network(3)
    model = make_model(topology, seed=22)
    path = str(tmp_path / 'graph.ckpt')
    model.save(path, extra={'epochs': 0})
    loaded, checkpoint = load_model(path, topology_hash(topology))
    assert loaded.descriptor == model.descriptor
    assert checkpoint.extra == {'epochs': 0}
    inputs = random_inputs(model, np.random.default_rng(23))
    adjacency = line_graph_adjacency(topology)
    query = TrunkInput('p2', 0.6, 0.4)
    assert estimate(loaded, inputs, adjacency, query) == estimate(model, inputs, adjacency, query)
    assert ModelDescriptor.from_dict(model.descriptor.to_dict()) == model.descriptor


def test_checkpoint_topology_mismatch(tmp_path):
    model = make_model(path_network(2))
    path = str(tmp_path / 'graph.ckpt')
    model.save(path)
    with pytest.raises(CheckpointMismatchError):
        load_model(path, topology_hash(path_network(3)))
