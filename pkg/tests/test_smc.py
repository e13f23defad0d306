"""Reach-query solver: structure of the encoding, agreement with exhaustive
activation enumeration, threshold monotonicity, witness validity."""

import itertools

import numpy as np
import pytest

from relusafe import smc
from relusafe import scenario as sc
from relusafe.geometry import Polytope, augmented_set


def constant_controller(value, input_dim=2):
    """u identically ``value`` via a dead hidden layer."""
    m = len(value)
    layers = ((np.zeros((1, input_dim)), np.zeros(1)),
              (np.zeros((m, 1)), np.asarray(value, dtype=float)))
    return sc.ReluNetwork(layers=layers, input_dim=input_dim)


def plain_scenario(net, lo=(-5, -5), hi=(5, 5), sigma=(0.5, 0.5)):
    ws = sc.Workspace(domain=Polytope.box(lo, hi), obstacles=(),
                      position_projection=(0, 1))
    cell = sc.PartitionCell(id="c", region=Polytope.box(lo, hi),
                            C=np.eye(2), c=np.zeros(2))
    dyn = sc.SystemDynamics(A=np.eye(2), B=np.eye(2), sigma=np.array(sigma))
    return sc.Scenario(dynamics=dyn, controller=net, workspace=ws,
                       partition=(cell,)), cell


def random_instance(rng, max_neurons=8):
    n, m = 2, int(rng.integers(1, 3))
    total = int(rng.integers(2, max_neurons + 1))
    widths = []
    while total > 0:
        w = int(rng.integers(1, min(total, 4) + 1))
        widths.append(w)
        total -= w
    q_d = int(rng.integers(1, 4))
    layers = []
    prev = q_d
    for w in widths:
        layers.append((rng.normal(size=(w, prev)), rng.normal(size=w)))
        prev = w
    layers.append((rng.normal(size=(m, prev)), rng.normal(size=m)))
    net = sc.ReluNetwork(layers=tuple(layers), input_dim=q_d)
    dyn = sc.SystemDynamics(A=0.5 * rng.normal(size=(n, n)) + np.eye(n),
                            B=rng.normal(size=(n, m)),
                            sigma=rng.uniform(0.2, 1.0, size=n))
    lo = rng.uniform(-3, 0, size=n)
    hi = lo + rng.uniform(0.5, 3.0, size=n)
    cell = sc.PartitionCell(id="x", region=Polytope.box(lo, hi),
                            C=rng.normal(size=(q_d, n)), c=rng.normal(size=q_d))
    ws = sc.Workspace(domain=Polytope.box(lo - 5, hi + 5), obstacles=(),
                      position_projection=(0, 1))
    scenario = sc.Scenario(dynamics=dyn, controller=net, workspace=ws,
                           partition=(cell,))
    t_lo = rng.uniform(-4, 2, size=n)
    target = Polytope.box(t_lo, t_lo + rng.uniform(0.5, 4.0, size=n))
    q = float(rng.uniform(0.05, 0.95))
    return scenario, cell, augmented_set(target, q, dyn.sigma)


def exhaustive_verdict(problem):
    for bits in itertools.product([False, True], repeat=problem.num_neurons):
        if smc.check_pattern(problem, np.array(bits)):
            return True
    return False


def test_single_neuron_structure():
    net = sc.ReluNetwork(layers=((np.array([[1.0, 0.0]]), np.array([0.0])),
                                 (np.array([[1.0], [0.0]]), np.zeros(2))),
                         input_dim=2)
    scenario, cell = plain_scenario(net)
    problem = smc.build_encoding(scenario, cell, Polytope.box([-1, -1], [1, 1]))
    assert problem.num_neurons == 1
    active = problem.branch_rows(0, True)
    inactive = problem.branch_rows(0, False)
    assert [label for _, _, _, label in active] == [("act_eq", 0), ("act_ge", 0)]
    assert [label for _, _, _, label in inactive] == [("inact_eq", 0), ("inact_le", 0)]


def test_constraint_count_on_demo_pair(demo_scenario):
    """Rows: per-face source + target memberships, n dynamics equalities,
    one affine equality per hidden neuron, m output equalities."""
    cell_i, cell_j = demo_scenario.partition[6], demo_scenario.partition[7]
    problem = smc.build_encoding(demo_scenario, cell_i, cell_j.region)
    n = demo_scenario.dynamics.n
    m = demo_scenario.dynamics.m
    neurons = demo_scenario.controller.num_neurons
    expected = (cell_i.region.num_halfspaces + n + neurons + m)
    assert len(problem.base_rows) == expected
    assert len(problem.target_rows) == cell_j.region.num_halfspaces
    equalities = [r for r in problem.base_rows if r[1] == "="]
    assert len(equalities) == n + neurons + m  # expand to 2 rows each in <=-form


def test_contradictory_target_unsat():
    scenario, cell = plain_scenario(constant_controller([0.0, 0.0]))
    empty = Polytope([[1.0, 0.0], [-1.0, 0.0]], [0.0, -1.0])  # x<=0 and x>=1
    out = smc.solve(smc.build_encoding(scenario, cell, empty))
    assert out.status == "unsat"


def test_constant_controller_sat_and_unsat():
    scenario, cell = plain_scenario(constant_controller([1.0, 0.0]))
    reachable = Polytope.box([0.5, -1.0], [2.5, 1.0])   # contains x+(1,0) picks
    out = smc.solve(smc.build_encoding(scenario, cell, reachable))
    assert out.status == "sat"
    shifted = Polytope.box([20.0, -1.0], [22.0, 1.0])   # beyond reach
    out = smc.solve(smc.build_encoding(scenario, cell, shifted))
    assert out.status == "unsat"


@pytest.mark.parametrize("seed", range(6))
def test_agreement_with_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(5):
        scenario, cell, aug = random_instance(rng)
        problem = smc.build_encoding(scenario, cell, aug)
        verdict = smc.solve(problem)
        assert verdict.status in ("sat", "unsat")
        assert (verdict.status == "sat") == exhaustive_verdict(problem)
        bare = smc.solve(problem, presolve=False)
        assert bare.status == verdict.status


def test_witness_validity(rng):
    found = 0
    while found < 10:
        scenario, cell, aug = random_instance(rng)
        problem = smc.build_encoding(scenario, cell, aug)
        out = smc.solve(problem)
        if out.status != "sat":
            continue
        found += 1
        assert cell.region.contains(out.witness_x, tol=1e-6)
        stepped = sc.closed_loop_mean_step(scenario, out.witness_x, cell, tol=1e-6)
        norms = np.linalg.norm(aug.A, axis=1)
        assert np.max((aug.A @ stepped - aug.b) / norms) <= smc.WITNESS_TOL
        assert np.allclose(stepped, out.witness_x_next)
        _, pattern = sc.nn_forward(scenario.controller, cell.measure(out.witness_x))
        t_vals = smc._preactivations(scenario.controller, cell.measure(out.witness_x))
        for j in range(problem.num_neurons):
            if abs(t_vals[j]) > smc.TIE_TOL:
                assert bool(pattern[j]) == bool(out.pattern[j])


def test_check_pattern_replays_witness(rng):
    while True:
        scenario, cell, aug = random_instance(rng)
        problem = smc.build_encoding(scenario, cell, aug)
        out = smc.solve(problem)
        if out.status == "sat":
            assert smc.check_pattern(problem, out.pattern)
            return


def test_check_pattern_rejects_forced_active_neurons():
    """A first layer biased far positive can never be all-inactive."""
    layers = ((np.zeros((2, 2)), np.array([3.0, 4.0])),
              (np.eye(2), np.zeros(2)))
    net = sc.ReluNetwork(layers=layers, input_dim=2)
    scenario, cell = plain_scenario(net)
    problem = smc.build_encoding(scenario, cell, Polytope.box([-9, -9], [9, 9]))
    assert not smc.check_pattern(problem, np.array([False, False]))
    assert smc.check_pattern(problem, np.array([True, True]))


def test_check_pattern_enumeration_consistency(rng):
    """Every pattern the solver could have used is LP-checkable; the solver
    verdict matches the disjunction over patterns."""
    scenario, cell, aug = random_instance(rng, max_neurons=5)
    problem = smc.build_encoding(scenario, cell, aug)
    verdict = smc.solve(problem).status == "sat"
    any_pattern = any(
        smc.check_pattern(problem, np.array(bits))
        for bits in itertools.product([False, True], repeat=problem.num_neurons))
    assert verdict == any_pattern


def test_unsat_monotone_in_threshold(rng):
    """Unsat at q stays unsat at any larger threshold."""
    checked = 0
    while checked < 8:
        scenario, cell, _ = random_instance(rng)
        target = Polytope.box([-1.5, -1.5], [1.5, 1.5])
        sigma = scenario.dynamics.sigma
        q = float(rng.uniform(0.2, 0.7))
        problem = smc.build_encoding(scenario, cell,
                                     augmented_set(target, q, sigma))
        if smc.solve(problem).status != "unsat":
            continue
        checked += 1
        for q_hi in (q + 0.1, q + 0.2):
            if q_hi >= 1.0:
                continue
            out = smc.solve(problem.with_target(augmented_set(target, q_hi, sigma)))
            assert out.status == "unsat"


def test_budget_exhaustion_reports_unknown():
    rng = np.random.default_rng(3)
    scenario, cell, aug = random_instance(rng)
    problem = smc.build_encoding(scenario, cell, aug)
    out = smc.solve(problem, node_budget=1, presolve=False)
    if out.status == "unknown":
        assert out.is_sat  # treated as satisfiable downstream
    else:
        assert out.nodes <= 1


def test_dump_names_all_neurons(demo_scenario):
    cell = demo_scenario.partition[0]
    problem = smc.build_encoding(demo_scenario, cell,
                                 demo_scenario.partition[1].region)
    text = problem.dump()
    assert "neuron 15" in text
    assert "tgt" in text and "dyn" in text
