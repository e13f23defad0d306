"""Satisfiability of one-step reach queries through the ReLU closed loop.

A query asks: does some mean state in a source cell have its noise-free
closed-loop successor inside a chance-constrained target polytope?  The
encoding keeps the source membership, target membership, mean dynamics and
the per-layer affine links as linear rows over the variables
``(X, X', u, t, h)``, and one boolean per hidden neuron selecting its branch:

    active:    h = t  and  t >= 0
    inactive:  h = 0  and  t <= -EPS_STRICT

Strict inequalities are relaxed by ``EPS_STRICT``; the relaxation only
enlarges the feasible set, so unsatisfiable verdicts remain sound for the
upper bounds computed downstream.  The measurement vector is affine in the
state on each cell and is substituted away rather than kept as variables.

The decision procedure is DPLL over the neuron booleans.  Unassigned neurons
are relaxed to ``h >= 0, h >= t`` (which both branches imply, so pruning
never removes a satisfiable completion); an infeasible LP prunes the subtree
and learns a conflict clause from the rows of its Farkas certificate that
are linked to branch literals.  Interval propagation over the cell's
bounding box pre-forces neurons whose branch the LP could never accept,
which the search would otherwise discover one failed LP at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import linprog
from .scenario import nn_forward

# Strict-inequality relaxation for the inactive branch.
EPS_STRICT = 1e-9
# Residual accepted on LP-reported quantities (normalized rows).
EPS_LP = 1e-7
# |pre-activation| below this counts as a tie when comparing patterns.
TIE_TOL = 1e-6
# Membership tolerance for the recomputed witness successor; wider than
# EPS_LP because re-evaluating the network can flip tie neurons.
WITNESS_TOL = 1e-5

DEFAULT_NODE_BUDGET = 1 << 20


class SmcError(Exception):
    pass


class SmcNumericalError(SmcError):
    """A satisfying witness failed its replay check."""


@dataclass(frozen=True)
class SmcOutcome:
    """Verdict of a query.

    ``status`` is "sat", "unsat" or "unknown" (node budget exhausted).
    Budget exhaustion is treated as satisfiable by every caller so that
    downstream probability bounds stay on the safe side; ``is_sat`` folds
    that in.  For "sat", the witness state, its recomputed successor mean
    and the neuron activation pattern are attached.
    """

    status: str
    witness_x: np.ndarray | None = None
    witness_x_next: np.ndarray | None = None
    pattern: np.ndarray | None = None
    lp_calls: int = 0
    nodes: int = 0

    @property
    def is_sat(self):
        return self.status != "unsat"


def interval_affine(W, w, lo, hi):
    """Interval image of ``W x + w`` for ``x`` in the box [lo, hi]."""
    Wp = np.maximum(W, 0.0)
    Wm = np.minimum(W, 0.0)
    return Wp @ lo + Wm @ hi + w, Wp @ hi + Wm @ lo + w


def network_interval_bounds(net, d_lo, d_hi):
    """Pre-activation intervals per hidden neuron plus output interval.

    Plain interval propagation: sound but not tight; used for branch
    pre-forcing and for the transition-graph reach-box filter.
    """
    t_los, t_his = [], []
    lo, hi = np.asarray(d_lo, dtype=float), np.asarray(d_hi, dtype=float)
    for W, w in net.layers[:-1]:
        t_lo, t_hi = interval_affine(W, w, lo, hi)
        t_los.append(t_lo)
        t_his.append(t_hi)
        lo, hi = np.maximum(t_lo, 0.0), np.maximum(t_hi, 0.0)
    u_lo, u_hi = interval_affine(net.layers[-1][0], net.layers[-1][1], lo, hi)
    return np.concatenate(t_los), np.concatenate(t_his), (u_lo, u_hi)


@dataclass(frozen=True, eq=False)
class SmcProblem:
    """One source cell versus one target polytope, ready to branch on."""

    scenario: object
    cell: object
    target: object
    num_vars: int
    n: int
    m: int
    num_neurons: int
    layer_of: np.ndarray        # hidden-layer index per neuron, layer-major
    base_rows: tuple            # rows independent of target and branches
    target_rows: tuple
    t_lo: np.ndarray            # interval pre-activation bounds per neuron
    t_hi: np.ndarray

    @property
    def xt(self):
        return slice(0, self.n)

    @property
    def xnext(self):
        return slice(self.n, 2 * self.n)

    def t_var(self, j):
        return 2 * self.n + self.m + j

    def h_var(self, j):
        return 2 * self.n + self.m + self.num_neurons + j

    def with_target(self, target):
        """Same encoding against a different target polytope."""
        return replace(self, target=target, target_rows=tuple(_target_rows(self, target)))

    def branch_rows(self, j, active):
        nv = self.num_vars
        if active:
            eq = np.zeros(nv)
            eq[self.h_var(j)] = 1.0
            eq[self.t_var(j)] = -1.0
            ge = np.zeros(nv)
            ge[self.t_var(j)] = -1.0
            return [(eq, "=", 0.0, ("act_eq", j)), (ge, "<=", 0.0, ("act_ge", j))]
        eq = np.zeros(nv)
        eq[self.h_var(j)] = 1.0
        le = np.zeros(nv)
        le[self.t_var(j)] = 1.0
        return [(eq, "=", 0.0, ("inact_eq", j)), (le, "<=", -EPS_STRICT, ("inact_le", j))]

    def relax_rows(self, j):
        nv = self.num_vars
        pos = np.zeros(nv)
        pos[self.h_var(j)] = -1.0
        ub = np.zeros(nv)
        ub[self.t_var(j)] = 1.0
        ub[self.h_var(j)] = -1.0
        return [(pos, "<=", 0.0, ("rlx_pos", j)), (ub, "<=", 0.0, ("rlx_ub", j))]

    def lp_for_assignment(self, assignment):
        """LP with assigned branches active and the rest relaxed."""
        rows = list(self.base_rows) + list(self.target_rows)
        for j in range(self.num_neurons):
            if j in assignment:
                rows.extend(self.branch_rows(j, assignment[j]))
            else:
                rows.extend(self.relax_rows(j))
        lp = linprog.LinearProgram.__new__(linprog.LinearProgram)
        lp.num_vars = self.num_vars
        lp.rows = rows
        lp.objective = None
        lp._labels = {r[3] for r in rows}
        return lp

    def dump(self):
        """Human-readable listing of the constraint system, for audit."""
        names = (
            [f"X{d}" for d in range(self.n)]
            + [f"X'{d}" for d in range(self.n)]
            + [f"u{d}" for d in range(self.m)]
            + [f"t{j}" for j in range(self.num_neurons)]
            + [f"h{j}" for j in range(self.num_neurons)]
        )
        lines = []
        for a, rel, b, label in list(self.base_rows) + list(self.target_rows):
            terms = " + ".join(
                f"{a[k]:+g}*{names[k]}" for k in np.nonzero(a)[0]
            )
            lines.append(f"{label}: {terms} {rel} {b:g}")
        for j in range(self.num_neurons):
            lines.append(f"neuron {j} (layer {self.layer_of[j]}): "
                         f"b{j} -> h{j}=t{j}, t{j}>=0 ; !b{j} -> h{j}=0, t{j}<=-{EPS_STRICT:g}")
        return "\n".join(lines)


def _target_rows(problem, target):
    rows = []
    nv = problem.num_vars
    for i in range(target.num_halfspaces):
        row = np.zeros(nv)
        row[problem.xnext] = target.A[i]
        rows.append((row, "<=", float(target.b[i]), ("tgt", i)))
    return rows


def build_encoding(scenario, cell, target_aug):
    """Assemble the query for one (source cell, target polytope) pair."""
    dyn = scenario.dynamics
    net = scenario.controller
    n, m = dyn.n, dyn.m
    if target_aug.dim != n:
        raise SmcError("target dimension != state dimension")
    if cell.C.shape[0] != net.input_dim:
        raise SmcError("cell measurement dimension != controller input")
    widths = net.hidden_widths
    N = sum(widths)
    nv = 2 * n + m + 2 * N
    layer_of = np.repeat(np.arange(len(widths)), widths)
    offsets = np.concatenate([[0], np.cumsum(widths)])

    rows = []
    region = cell.region
    for i in range(region.num_halfspaces):
        row = np.zeros(nv)
        row[0:n] = region.A[i]
        rows.append((row, "<=", float(region.b[i]), ("src", i)))
    for d in range(n):
        row = np.zeros(nv)
        row[n + d] = 1.0
        row[0:n] -= dyn.A[d]
        row[2 * n:2 * n + m] -= dyn.B[d]
        rows.append((row, "=", 0.0, ("dyn", d)))

    t_base = 2 * n + m
    h_base = t_base + N
    W0, w0 = net.layers[0]
    W0C = W0 @ cell.C
    bias0 = W0 @ cell.c + w0
    for i in range(widths[0]):
        row = np.zeros(nv)
        row[t_base + i] = 1.0
        row[0:n] = -W0C[i]
        rows.append((row, "=", float(bias0[i]), ("aff", i)))
    for k in range(1, len(widths)):
        Wk, wk = net.layers[k]
        for i in range(widths[k]):
            j = offsets[k] + i
            row = np.zeros(nv)
            row[t_base + j] = 1.0
            row[h_base + offsets[k - 1]:h_base + offsets[k]] = -Wk[i]
            rows.append((row, "=", float(wk[i]), ("aff", j)))
    WL, wL = net.layers[-1]
    for d in range(m):
        row = np.zeros(nv)
        row[2 * n + d] = 1.0
        row[h_base + offsets[-2]:h_base + offsets[-1]] = -WL[d]
        rows.append((row, "=", float(wL[d]), ("out", d)))

    lo, hi = region.bounding_box()
    d_lo, d_hi = interval_affine(cell.C, cell.c, lo, hi)
    t_lo, t_hi, _ = network_interval_bounds(net, d_lo, d_hi)

    problem = SmcProblem(
        scenario=scenario, cell=cell, target=target_aug,
        num_vars=nv, n=n, m=m, num_neurons=N, layer_of=layer_of,
        base_rows=tuple(rows), target_rows=(),
        t_lo=t_lo, t_hi=t_hi,
    )
    return problem.with_target(target_aug)


_BRANCH_TAGS = {"act_eq": True, "act_ge": True, "inact_eq": False, "inact_le": False}


def _literals_of_certificate(cert):
    lits = set()
    for entry in cert:
        if entry.weight <= 1e-12:
            continue
        label = entry.label
        if isinstance(label, tuple) and label[0] in _BRANCH_TAGS:
            lits.add((label[1], _BRANCH_TAGS[label[0]]))
    return lits


class _BudgetExceeded(Exception):
    pass


def solve(problem, node_budget=DEFAULT_NODE_BUDGET, presolve=True, phase_hint=None):
    """Decide the query; see :class:`SmcOutcome`.

    Search order is layer-major over neurons; branch values follow the sign
    of the relaxation LP's pre-activation (or ``phase_hint``, e.g. a witness
    pattern from a neighboring query).  Exceeding ``node_budget`` returns
    status "unknown", which callers must treat as satisfiable.
    """
    N = problem.num_neurons
    clauses = []
    stats = {"lp": 0, "nodes": 0}

    forced = {}
    if presolve:
        for j in range(N):
            can_inactive = problem.t_lo[j] <= -EPS_STRICT
            can_active = problem.t_hi[j] >= 0.0
            if can_active and not can_inactive:
                forced[j] = True
            elif can_inactive and not can_active:
                forced[j] = False
            elif not can_active and not can_inactive:
                return SmcOutcome("unsat", lp_calls=0, nodes=0)

    def propagate(assign):
        changed = True
        while changed:
            changed = False
            for clause in clauses:
                unassigned = None
                satisfied = False
                count = 0
                for (j, val) in clause:
                    got = assign.get(j)
                    if got is None:
                        unassigned = (j, val)
                        count += 1
                    elif got == val:
                        satisfied = True
                        break
                if satisfied:
                    continue
                if count == 0:
                    return False
                if count == 1:
                    assign[unassigned[0]] = unassigned[1]
                    changed = True
        return True

    def search(assign):
        stats["nodes"] += 1
        if stats["nodes"] > node_budget:
            raise _BudgetExceeded
        if not propagate(assign):
            return None
        lp = problem.lp_for_assignment(assign)
        stats["lp"] += 1
        res = linprog.solve(lp)
        if isinstance(res, linprog.Infeasible):
            lits = _literals_of_certificate(res.certificate)
            if len(lits) > 8:
                core = linprog.minimal_infeasible_subset(lp, res.certificate)
                lits = {(lab[1], _BRANCH_TAGS[lab[0]]) for lab in core
                        if isinstance(lab, tuple) and lab[0] in _BRANCH_TAGS}
            clause = frozenset((j, not val) for (j, val) in lits)
            clauses.append(clause)
            return None
        if len(assign) == N:
            point = _center_witness(problem, assign, res.point, stats)
            return _make_witness(problem, point, assign, stats)
        j = next(k for k in range(N) if k not in assign)
        if phase_hint is not None and j < len(phase_hint):
            first = bool(phase_hint[j])
        else:
            first = bool(res.point[problem.t_var(j)] > 0.0)
        for val in (first, not first):
            child = dict(assign)
            child[j] = val
            out = search(child)
            if out is not None:
                return out
        return None

    try:
        out = search(dict(forced))
    except _BudgetExceeded:
        return SmcOutcome("unknown", lp_calls=stats["lp"], nodes=stats["nodes"])
    if out is None:
        return SmcOutcome("unsat", lp_calls=stats["lp"], nodes=stats["nodes"])
    return out


def _center_witness(problem, assign, fallback, stats):
    """Push the witness successor toward the middle of the target set.

    Re-solves the satisfied leaf LP maximizing the minimum noise-scaled
    slack of the target rows.  The leaf point is already feasible, so this
    can only move the witness deeper into the chance set, which makes it a
    better stand-in for the worst-case transition state that the refinement
    step splits around.  Capped so halfspace targets stay bounded.
    """
    sigma = problem.scenario.dynamics.sigma
    nv = problem.num_vars
    rows = []
    for a, rel, b, label in (list(problem.base_rows) + list(problem.target_rows)):
        if isinstance(label, tuple) and label[0] == "tgt":
            spread = max(float(np.sqrt((a[problem.xnext] ** 2) @ (sigma ** 2))), 1e-12)
            a = np.append(a, spread)
        else:
            a = np.append(a, 0.0)
        rows.append((a, rel, b, label))
    for j in range(problem.num_neurons):
        for a, rel, b, label in problem.branch_rows(j, assign[j]):
            rows.append((np.append(a, 0.0), rel, b, label))
    cap = np.zeros(nv + 1)
    cap[nv] = 1.0
    rows.append((cap, "<=", 100.0, ("slack_cap",)))
    rows.append((-cap, "<=", 0.0, ("slack_pos",)))
    lp = linprog.LinearProgram.__new__(linprog.LinearProgram)
    lp.num_vars = nv + 1
    lp.rows = rows
    lp.objective = ("max", cap.copy())
    lp._labels = {r[3] for r in rows}
    stats["lp"] += 1
    res = linprog.solve(lp)
    if isinstance(res, linprog.Feasible):
        return res.point[:nv]
    return fallback


def _make_witness(problem, point, assign, stats):
    """Replay the LP witness through the real network and audit it."""
    x = np.array(point[problem.xt])
    cell = problem.cell
    region = cell.region
    norms = np.linalg.norm(region.A, axis=1)
    if np.max((region.A @ x - region.b) / norms) > TIE_TOL:
        raise SmcNumericalError("witness state fell outside its source cell")

    u, pattern = nn_forward(problem.scenario.controller, cell.measure(x))
    dyn = problem.scenario.dynamics
    x_next = dyn.A @ x + dyn.B @ u

    # Pattern must match the branch assignment except at ties.
    t_vals = _preactivations(problem.scenario.controller, cell.measure(x))
    for j in range(problem.num_neurons):
        if bool(pattern[j]) != assign[j] and abs(t_vals[j]) > TIE_TOL:
            raise SmcNumericalError(f"witness pattern mismatch at neuron {j}")

    target = problem.target
    tnorms = np.linalg.norm(target.A, axis=1)
    lp_next = np.array(point[problem.xnext])
    if np.max((target.A @ lp_next - target.b) / tnorms) > EPS_LP * 10:
        raise SmcNumericalError("LP successor missed the target set")
    if np.max((target.A @ x_next - target.b) / tnorms) > WITNESS_TOL:
        raise SmcNumericalError("recomputed successor missed the target set")

    full_pattern = np.array([assign[j] for j in range(problem.num_neurons)], dtype=bool)
    return SmcOutcome("sat", witness_x=x, witness_x_next=x_next,
                      pattern=full_pattern, lp_calls=stats["lp"], nodes=stats["nodes"])


def _preactivations(net, d):
    vals = []
    h = np.asarray(d, dtype=float)
    for W, w in net.layers[:-1]:
        t = W @ h + w
        vals.append(t)
        h = np.maximum(t, 0.0)
    return np.concatenate(vals)


def check_pattern(problem, pattern):
    """True iff the LP with every branch fixed to ``pattern`` is feasible."""
    pattern = np.asarray(pattern).reshape(-1)
    if pattern.shape != (problem.num_neurons,):
        raise SmcError("pattern length != neuron count")
    assign = {j: bool(pattern[j]) for j in range(problem.num_neurons)}
    res = linprog.solve(problem.lp_for_assignment(assign))
    return not isinstance(res, linprog.Infeasible)
