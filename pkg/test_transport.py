"""
Tests for junction mixing, the upwind step and the network transport simulator
"""
import sys
import os
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.dataset.sampling import SamplingConfig, sample_scenarios
from src.network.topology import load_network
from src.shared.errors import CflViolationError, CycleError, DomainError, QueryError, ScenarioError
from src.shared.models import (BoundarySignal, FractionField, NetworkTopology, Node, NodeKind, Pipe, Scenario,
                               VelocitySchedule)
from src.simulator.transport import exceedance, mix_at_node, simulate_network, step_upwind

ROOT = os.path.dirname(os.path.abspath(__file__))


def chain(kinds, length=100.0, area=1.0):
    """Цепочка узлов n0 -> n1 -> ... с заданными ролями"""
    nodes = []
    for i, kind in enumerate(kinds):
        kind = NodeKind(kind)
        nodes.append(Node(f'n{i}', kind, f'sig{i}' if kind.is_controlled else None))
    pipes = tuple(Pipe(f'p{i + 1}', f'n{i}', f'n{i + 1}', length, area) for i in range(len(kinds) - 1))
    return NetworkTopology(tuple(nodes), pipes)


def y_topology(length=100.0):
    return NetworkTopology(
        nodes=(Node('a', NodeKind.SOURCE, 'sig_a'), Node('b', NodeKind.HYDROGEN_INJECTION, 'sig_b'),
               Node('j', NodeKind.JUNCTION), Node('l', NodeKind.LOAD)),
        pipes=(Pipe('pa', 'a', 'j', length, 0.1), Pipe('pb', 'b', 'j', length, 0.1), Pipe('pc', 'j', 'l', length, 0.2)),
    )


def make_scenario(topology, velocity, signals, initial, horizon, dt, cells=20, stride=1):
    velocities = {}
    for pipe in topology.pipes:
        bps, vals = velocity[pipe.id] if isinstance(velocity, dict) else ((0.0,), (velocity,))
        velocities[pipe.id] = VelocitySchedule(tuple(bps), tuple(vals), pipe_id=pipe.id)
    boundary = {}
    for sid, spec in signals.items():
        bps, vals = spec[0], spec[1]
        rates = spec[2] if len(spec) > 2 else None
        boundary[sid] = BoundarySignal(tuple(bps), tuple(vals), signal_id=sid, mass_flow_rates=rates)
    fields = {}
    for pipe in topology.pipes:
        value = initial[pipe.id] if isinstance(initial, dict) else initial
        fields[pipe.id] = value if isinstance(value, FractionField) else \
            FractionField.constant(pipe.id, pipe.length_m, cells, value)
    return Scenario(topology, velocities, boundary, fields, horizon, dt, snapshot_stride=stride)


# --- mix_at_node ---

def test_mix_single_stream_passes_through():
    assert mix_at_node([(5.0, 0.2)]) == 0.2


def test_mix_symmetric_streams():
    assert mix_at_node([(1.0, 0.0), (1.0, 1.0)]) == 0.5


def test_mix_mass_balance_by_hand():
    assert mix_at_node([(2.0, 0.3), (1.0, 0.6)]) == pytest.approx(0.4, abs=1e-15)


def test_mix_with_injection_stream():
    assert mix_at_node([(1.0, 0.0)], injection=(3.0, 1.0)) == pytest.approx(0.75)
    assert mix_at_node([], injection=(2.0, 0.4)) == 0.4


def test_mix_errors():
    with pytest.raises(DomainError):
        mix_at_node([])
    with pytest.raises(DomainError):
        mix_at_node([(0.0, 0.5)])
    with pytest.raises(DomainError):
        mix_at_node([(1.0, 0.5)], injection=(-1.0, 0.2))


def test_mix_conserves_hydrogen_mass():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(10_000):
        k = int(rng.integers(1, 6))
        rates = rng.uniform(0.01, 100.0, size=k)
        fractions = rng.uniform(0.0, 1.0, size=k)
        out = mix_at_node(list(zip(rates, fractions)))
        hydrogen_in = float(np.sum(rates * fractions))
        hydrogen_out = out * float(np.sum(rates))
        worst = max(worst, abs(hydrogen_out - hydrogen_in) / hydrogen_in)
        assert fractions.min() <= out <= fractions.max()
    assert worst < 1e-12


# --- step_upwind ---

def test_upwind_constant_state_is_unchanged():
    field = FractionField.constant('p', 10.0, 10, 0.3)
    assert step_upwind(field, 0.7, 1.0, 0.3).equals(field)


def test_upwind_zero_velocity_ignores_inlet():
    field = FractionField('p', 3.0, np.array([0.1, 0.4, 0.9]))
    assert step_upwind(field, 0.0, 5.0, 1.0).equals(field)


def test_upwind_unit_courant_is_exact_shift():
    field = FractionField('p', 2.0, np.array([0.1, 0.5]))
    shifted = step_upwind(field, 1.0, 1.0, 0.9)
    assert shifted.values.tolist() == [0.9, 0.1]


def test_upwind_formula_half_courant():
    field = FractionField('p', 2.0, np.array([0.2, 0.6]))
    out = step_upwind(field, 0.5, 1.0, 1.0)
    assert out.values == pytest.approx([0.6, 0.4])


def test_upwind_rejects_cfl_violation_and_reverse_flow():
    field = FractionField.constant('p', 2.0, 2, 0.5)
    with pytest.raises(CflViolationError) as info:
        step_upwind(field, 2.0, 1.0, 0.5)
    assert info.value.courant == pytest.approx(2.0)
    with pytest.raises(DomainError):
        step_upwind(field, -1.0, 1.0, 0.5)


# --- simulate_network ---

def test_steady_uniform_single_pipe():
    topology = chain(['source', 'load'])
    scenario = make_scenario(topology, 1.0, {'sig0': ((0.0,), (0.1,))}, 0.1, horizon=50.0, dt=2.0, stride=5)
    result = simulate_network(scenario)
    for snapshot in result.snapshots:
        assert np.all(snapshot['p1'].values == 0.1)
    assert result.times[0] == 0.0
    assert result.times[-1] == 50.0


def test_zero_velocity_keeps_initial_fields_exactly():
    topology = y_topology()
    initial = {p.id: FractionField(p.id, p.length_m, np.linspace(0.0, 1.0, 20)) for p in topology.pipes}
    scenario = make_scenario(topology, 0.0, {'sig_a': ((0.0,), (0.9,)), 'sig_b': ((0.0,), (1.0,))},
                             initial, horizon=100.0, dt=1.0, stride=7)
    result = simulate_network(scenario)
    for pipe_id, field in initial.items():
        assert result.final[pipe_id].equals(field)


def test_zero_flow_junction_holds_mean_of_upstream_ends():
    topology = y_topology()
    velocity = {'pa': ((0.0,), (0.0,)), 'pb': ((0.0,), (0.0,)), 'pc': ((0.0,), (1.0,))}
    scenario = make_scenario(topology, velocity, {'sig_a': ((0.0,), (0.0,)), 'sig_b': ((0.0,), (1.0,))},
                             {'pa': 0.2, 'pb': 0.6, 'pc': 0.0}, horizon=20.0, dt=1.0)
    result = simulate_network(scenario)
    assert result.node_outlet_fractions['j'] == pytest.approx(np.full(len(result.node_times), 0.4))


def test_y_network_flushes_to_half():
    topology = y_topology()
    scenario = make_scenario(topology, 1.0, {'sig_a': ((0.0,), (0.0,)), 'sig_b': ((0.0,), (1.0,))},
                             0.0, horizon=600.0, dt=2.5, stride=40)
    result = simulate_network(scenario)
    assert result.final['pc'].values == pytest.approx(np.full(20, 0.5), abs=1e-6)
    assert result.node_outlet_fractions['j'][-1] == pytest.approx(0.5, abs=1e-9)


def test_inline_injection_mixes_with_upstream_flow():
    topology = chain(['source', 'hydrogen-injection', 'load'])
    signals = {'sig0': ((0.0,), (0.0,)), 'sig1': ((0.0,), (1.0,), (1.0,))}
    scenario = make_scenario(topology, 1.0, signals, 0.0, horizon=10.0, dt=1.0)
    result = simulate_network(scenario)
    assert np.all(result.node_outlet_fractions['n1'] == 0.5)


def test_controlled_inline_node_without_rates_uses_signal():
    topology = chain(['source', 'hydrogen-injection', 'load'])
    signals = {'sig0': ((0.0,), (0.0,)), 'sig1': ((0.0, 5.0), (0.3, 0.8))}
    scenario = make_scenario(topology, 1.0, signals, 0.0, horizon=10.0, dt=1.0)
    result = simulate_network(scenario)
    outlets = result.node_outlet_fractions['n1']
    assert outlets[0] == 0.3
    assert outlets[-1] == 0.8


def test_horizon_not_multiple_of_dt():
    topology = chain(['source', 'load'])
    scenario = make_scenario(topology, 1.0, {'sig0': ((0.0,), (0.5,))}, 0.0, horizon=10.0, dt=3.0, stride=2)
    assert scenario.step_count == 4
    result = simulate_network(scenario)
    assert result.times.tolist() == [0.0, 6.0, 10.0]
    assert result.node_times[-1] == 10.0


def test_snapshot_lookup():
    topology = chain(['source', 'load'])
    scenario = make_scenario(topology, 1.0, {'sig0': ((0.0,), (1.0,))}, 0.0, horizon=20.0, dt=1.0, stride=5)
    result = simulate_network(scenario)
    assert list(result.times) == [0.0, 5.0, 10.0, 15.0, 20.0]
    assert result.field_at('p1', 10.0).cell_count == 20
    # after 10 s at 1 m/s the first 10 m (two cells of 5 m) carry hydrogen
    assert result.fraction_at('p1', 1.0, 10.0) > 0.5
    assert result.fraction_at('p1', 99.0, 10.0) == 0.0
    with pytest.raises(QueryError):
        result.field_at('p1', 7.0)
    with pytest.raises(QueryError):
        result.fraction_at('p1', 150.0, 10.0)
    with pytest.raises(QueryError):
        result.field_at('nope', 10.0)


def test_simulation_rejects_cfl_violation():
    topology = chain(['source', 'load'])
    scenario = make_scenario(topology, 1.0, {'sig0': ((0.0,), (0.5,))}, 0.0, horizon=100.0, dt=10.0)
    with pytest.raises(CflViolationError) as info:
        simulate_network(scenario)
    assert info.value.pipe_id == 'p1'


def test_simulation_rejects_directed_cycle():
    topology = NetworkTopology(
        nodes=(Node('s', NodeKind.SOURCE, 'sig'), Node('j1', NodeKind.JUNCTION), Node('j2', NodeKind.JUNCTION),
               Node('l', NodeKind.LOAD)),
        pipes=(Pipe('p1', 's', 'j1', 10.0, 1.0), Pipe('p2', 'j1', 'j2', 10.0, 1.0),
               Pipe('p3', 'j2', 'j1', 10.0, 1.0), Pipe('p4', 'j2', 'l', 10.0, 1.0)),
    )
    scenario = make_scenario(topology, 1.0, {'sig': ((0.0,), (0.5,))}, 0.0, horizon=5.0, dt=0.1, cells=10)
    with pytest.raises(CycleError):
        simulate_network(scenario)


def test_simulation_rejects_missing_coverage():
    topology = y_topology()
    scenario = make_scenario(topology, 1.0, {'sig_a': ((0.0,), (0.5,))}, 0.0, horizon=5.0, dt=1.0)
    with pytest.raises(ScenarioError):
        simulate_network(scenario)
    full = make_scenario(topology, 1.0, {'sig_a': ((0.0,), (0.5,)), 'sig_b': ((0.0,), (0.5,))}, 0.0,
                         horizon=5.0, dt=1.0)
    missing_velocity = replace(full, velocities={k: v for k, v in full.velocities.items() if k != 'pc'})
    with pytest.raises(ScenarioError):
        simulate_network(missing_velocity)


def test_exceedance_report():
    topology = chain(['source', 'load'])
    scenario = make_scenario(topology, 1.0, {'sig0': ((0.0,), (0.6,))}, 0.0, horizon=20.0, dt=1.0, stride=5)
    result = simulate_network(scenario)
    found = exceedance(result, 0.2)
    assert [e.pipe_id for e in found] == ['p1']
    assert found[0].first_time_s == 5.0
    assert found[0].max_fraction <= 0.6
    assert exceedance(result, 0.7) == []


def test_simulation_is_deterministic(tmp_path):
    topology = load_network(os.path.join(ROOT, 'networks', 'six_pipe.json'))
    config = SamplingConfig(scenario_count=1, horizon_s=600.0, cells=20, seed=3)
    scenario = sample_scenarios(topology, config)[0]
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    simulate_network(scenario).export_csv(str(first))
    simulate_network(scenario).export_csv(str(second))
    assert first.read_bytes() == second.read_bytes()
    header = first.read_text(encoding='utf-8').splitlines()[0]
    assert header == 'time_s,pipe_id,cell_index,x_m,fraction'


def _raised(scenario, delta):
    fields = {pid: f.with_values(np.clip(f.values + delta, 0.0, 1.0)) for pid, f in scenario.initial_fields.items()}
    signals = {sid: replace(s, values=tuple(min(v + delta, 1.0) for v in s.values))
               for sid, s in scenario.boundary_signals.items()}
    return replace(scenario, initial_fields=fields, boundary_signals=signals)


def test_boundedness_and_monotonicity_on_random_scenarios():
    topology = load_network(os.path.join(ROOT, 'networks', 'y_network.json'))
    config = SamplingConfig(scenario_count=100, horizon_s=1200.0, cells=10, snapshot_stride=5,
                            initial_family='step', seed=11)
    for scenario in sample_scenarios(topology, config):
        inputs = [f.values for f in scenario.initial_fields.values()] + \
                 [np.asarray(s.values) for s in scenario.boundary_signals.values()]
        lo = min(float(v.min()) for v in inputs)
        hi = max(float(v.max()) for v in inputs)
        result = simulate_network(scenario)
        raised = simulate_network(_raised(scenario, 0.05))
        for base, high in zip(result.snapshots, raised.snapshots):
            for pipe_id, field in base.items():
                assert np.all(field.values >= lo) and np.all(field.values <= hi)
                assert np.all(high[pipe_id].values >= field.values - 1e-12)
