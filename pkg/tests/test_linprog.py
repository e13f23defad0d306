"""LP oracle: verdicts against a vertex-enumeration oracle, certificates,
determinism, and irreducible infeasible subsets."""

import itertools

import numpy as np
import pytest

from relusafe import linprog


def lp_from_rows(A, b, rels=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    lp = linprog.LinearProgram(A.shape[1])
    for i in range(A.shape[0]):
        rel = rels[i] if rels else "<="
        lp.add(A[i], rel, b[i], f"r{i}")
    return lp


def brute_force_feasible(A, b, tol=1e-7):
    """Vertex enumeration for small <=-systems: feasible iff some basic
    solution (intersection of n rows) satisfies everything."""
    m, n = A.shape
    if np.all(b >= 0):
        return True  # origin
    for idx in itertools.combinations(range(m), n):
        M = A[list(idx)]
        try:
            x = np.linalg.solve(M, b[list(idx)])
        except np.linalg.LinAlgError:
            continue
        if np.all(A @ x - b <= tol):
            return True
    return False


def test_one_dimensional_contradiction():
    lp = linprog.LinearProgram(1)
    lp.add([1.0], ">=", 1.0, "ge")
    lp.add([1.0], "<=", 0.0, "le")
    res = linprog.solve(lp)
    assert isinstance(res, linprog.Infeasible)
    labels = {e.label for e in res.certificate}
    assert labels == {"ge", "le"}
    assert linprog.check_certificate(lp, res.certificate)
    # The combination collapses to 0 <= -c with c > 0: canonical rows are
    # (-1)x <= -1 and (1)x <= 0.
    weights = {e.label: e.weight for e in res.certificate}
    assert weights["ge"] == pytest.approx(weights["le"], rel=1e-9)
    rhs = -weights["ge"] * 1.0 + weights["le"] * 0.0
    assert rhs < 0


def test_simple_minimum():
    lp = linprog.LinearProgram(1)
    lp.add([1.0], ">=", 0.0, "lo")
    lp.add([1.0], "<=", 1.0, "hi")
    lp.set_objective("min", [1.0])
    res = linprog.solve(lp)
    assert isinstance(res, linprog.Feasible)
    assert res.objective_value == pytest.approx(0.0, abs=1e-9)
    assert res.point[0] == pytest.approx(0.0, abs=1e-9)


def test_unbounded_objective_is_distinct_outcome():
    lp = linprog.LinearProgram(2)
    lp.add([1.0, 0.0], "<=", 1.0, "only")
    lp.set_objective("max", [0.0, 1.0])
    assert isinstance(linprog.solve(lp), linprog.Unbounded)


@pytest.mark.parametrize("seed", range(8))
def test_random_systems_agree_with_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    for _ in range(30):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(n + 1, 21))
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        lp = lp_from_rows(A, b)
        res = linprog.solve(lp)
        mine = not isinstance(res, linprog.Infeasible)
        assert mine == brute_force_feasible(A, b)
        if isinstance(res, linprog.Infeasible):
            assert linprog.check_certificate(lp, res.certificate)
        else:
            assert np.max(A @ res.point - b) <= 1e-6


def test_certificates_on_mixed_relations(rng):
    for _ in range(40):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(2, 12))
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m) - 1.0
        rels = [("<=", "=", ">=")[int(rng.integers(0, 3))] for _ in range(m)]
        lp = lp_from_rows(A, b, rels)
        res = linprog.solve(lp)
        if isinstance(res, linprog.Infeasible):
            assert linprog.check_certificate(lp, res.certificate)
        else:
            x = res.point
            for i, rel in enumerate(rels):
                v = A[i] @ x - b[i]
                if rel == "<=":
                    assert v <= 1e-6
                elif rel == ">=":
                    assert v >= -1e-6
                else:
                    assert abs(v) <= 1e-6


def test_determinism():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(12, 3))
    b = rng.normal(size=12)
    first = linprog.solve(lp_from_rows(A, b))
    second = linprog.solve(lp_from_rows(A, b))
    assert type(first) is type(second)
    if isinstance(first, linprog.Feasible):
        assert np.array_equal(first.point, second.point)
    else:
        assert first.certificate == second.certificate


def test_adding_satisfied_constraint_keeps_feasibility(rng):
    for _ in range(20):
        n = int(rng.integers(1, 5))
        A = rng.normal(size=(8, n))
        x0 = rng.normal(size=n)
        b = A @ x0 + rng.uniform(0.1, 1.0, size=8)
        lp = lp_from_rows(A, b)
        res = linprog.solve(lp)
        assert isinstance(res, linprog.Feasible)
        extra = rng.normal(size=n)
        lp.add(extra, "<=", extra @ res.point + 1.0, "extra")
        assert isinstance(linprog.solve(lp), linprog.Feasible)


def test_minimal_subset_drops_irrelevant_row():
    lp = linprog.LinearProgram(2)
    lp.add([1.0, 0.0], ">=", 1.0, "xe_ge")
    lp.add([1.0, 0.0], "<=", 0.0, "x_le")
    lp.add([0.0, 1.0], "<=", 5.0, "y_le")
    res = linprog.solve(lp)
    assert isinstance(res, linprog.Infeasible)
    core = linprog.minimal_infeasible_subset(lp, res.certificate)
    assert sorted(core) == ["x_le", "xe_ge"]


def test_minimal_subset_keeps_irreducible_pair():
    lp = linprog.LinearProgram(1)
    lp.add([1.0], ">=", 1.0, "a")
    lp.add([1.0], "<=", 0.0, "b")
    res = linprog.solve(lp)
    core = linprog.minimal_infeasible_subset(lp, res.certificate)
    assert sorted(core) == ["a", "b"]


def test_minimal_subset_is_irreducible(rng):
    """Removing any row of the reported subset must restore feasibility."""
    found = 0
    while found < 15:
        n = int(rng.integers(1, 4))
        m = int(rng.integers(4, 12))
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m) - 1.5
        lp = lp_from_rows(A, b)
        res = linprog.solve(lp)
        if not isinstance(res, linprog.Infeasible):
            continue
        found += 1
        core = linprog.minimal_infeasible_subset(lp, res.certificate)
        assert isinstance(linprog.solve(lp.restricted_to(core)), linprog.Infeasible)
        for dropped in core:
            rest = [c for c in core if c != dropped]
            if rest:
                sub = linprog.solve(lp.restricted_to(rest))
                assert isinstance(sub, linprog.Feasible)


def test_duplicate_label_rejected():
    lp = linprog.LinearProgram(1)
    lp.add([1.0], "<=", 1.0, "same")
    with pytest.raises(ValueError):
        lp.add([1.0], "<=", 2.0, "same")
