"""Witness-driven cell splitting to tighten transition bounds.

A high transition bound is pinned to the worst-case states of the source
cell: the satisfying states of the reach query at the last satisfiable
threshold.  Splitting the cell by a hyperplane perpendicular to the witness
motion, translated away from the witness, isolates those states in one
sub-cell so the other's bound drops.  The split is exact, so the partition
stays valid; every edge touching the split cell is re-estimated, which keeps
the refined graph sound regardless of how well the hyperplane was chosen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (DegenerateSplitError, Hyperplane, augmented_set,
                       chebyshev_center, split)
from .graph import (UNSAFE, Edge, TransitionGraph, _bisect_region, _prune_against,
                    _unsafe_edge, cell_node, reach_box)
from .scenario import PartitionCell, Scenario, scenario_sha256
from .smc import build_encoding, solve


class RefinementError(Exception):
    pass


class StaleGraphError(RefinementError):
    """The graph no longer matches the scenario: the witness replay failed."""


class StationaryWitnessError(RefinementError):
    """Witness successor equals the witness; no motion direction to cut along."""


@dataclass
class RefinementPlan:
    cell: object
    edge_target: object
    witness_x: np.ndarray | None = None
    witness_x_next: np.ndarray | None = None
    hyperplane: Hyperplane | None = None
    translations: list = field(default_factory=list)  # (offset, resulting bound)
    chosen_offset: float | None = None
    committed: bool = False
    note: str = ""


@dataclass
class RefinementResult:
    scenario: Scenario
    graph: TransitionGraph
    plan: RefinementPlan


def _witness_query(scenario, cell, region, q):
    aug = augmented_set(region, q, scenario.dynamics.sigma)
    return solve(build_encoding(scenario, cell, aug))


def find_witness(scenario, graph, source, target):
    """Re-solve the edge's last satisfiable query and return (X, X_next).

    For sink edges the dominant unsafe piece is used.  Raises
    :class:`StaleGraphError` when the recorded threshold is no longer
    satisfiable (the graph predates a scenario change) and
    :class:`RefinementError` for edges at the precision floor, which never
    had a satisfiable query to replay.
    """
    edge = graph.edge(source, target)
    if edge is None:
        raise RefinementError(f"no edge {source} -> {target}")
    cell = scenario.partition[source.cells[0]]
    if target == UNSAFE:
        pieces = edge.pieces
        if not pieces:
            pieces = _unsafe_edge(scenario, cell, graph.dq).pieces
        region, bound, q_lo, _, _ = max(pieces, key=lambda rec: rec[1])
        q = q_lo if q_lo > 0.0 else bound - graph.dq
    else:
        region = scenario.partition[target.cells[0]].region
        q = edge.q_lo if edge.q_lo > 0.0 else edge.bound - graph.dq
    if q <= 0.0:
        raise RefinementError(f"edge {source} -> {target} sits at the precision floor")
    out = _witness_query(scenario, cell, region, q)
    if not out.is_sat or out.witness_x is None:
        raise StaleGraphError(f"edge {source} -> {target}: no witness at q={q}")
    return out.witness_x, out.witness_x_next


def propose_hyperplane(x, x_next):
    """Unit-normal hyperplane through ``x`` perpendicular to the motion."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x_next = np.asarray(x_next, dtype=float).reshape(-1)
    direction = x_next - x
    norm = float(np.linalg.norm(direction))
    if norm <= 1e-12:
        raise StationaryWitnessError("witness does not move")
    normal = direction / norm
    return Hyperplane(normal=normal, offset=float(normal @ x))


def _fallback_hyperplane(region):
    """Longest-axis bisector, for stationary witnesses."""
    lo, hi = region.bounding_box()
    axis = int(np.argmax(hi - lo))
    normal = np.zeros(region.dim)
    normal[axis] = 1.0
    return Hyperplane(normal=normal, offset=float(0.5 * (lo[axis] + hi[axis])))


def _edge_for_pair(scenario, cell, region, dq, box):
    if _prune_against(scenario, box, region, dq):
        return dq, 0.0, dq, "pruned"
    q_lo, q_hi = _bisect_region(scenario, cell, region, dq)
    return max(q_hi, dq), q_lo, q_hi, "smc"


def _sub_cell_bound(scenario, sub_cell, graph_dq, target_node, target_region):
    box = reach_box(scenario, sub_cell)
    if target_node == UNSAFE:
        return _unsafe_edge(scenario, sub_cell, graph_dq, box=box).bound
    bound, _, _, _ = _edge_for_pair(scenario, sub_cell, target_region, graph_dq, box)
    return bound


def refine_cell(scenario, graph, bounds, source, target, steps=4):
    """Split ``source`` to shrink its bound toward ``target``; returns the
    refined scenario and graph plus the plan that was executed.

    Tries ``steps`` equally spaced hyperplane translations from the witness
    toward the far side of the cell, keeps the one minimizing the bound of
    the sub-cell away from the witness, and re-estimates every edge touching
    the split cell, in both directions, plus the two new sink edges.  When
    every translation fails to cut the cell the call is a no-op carrying a
    report in the plan.
    """
    if steps < 1:
        raise RefinementError("steps must be >= 1")
    idx = source.cells[0]
    cell = scenario.partition[idx]
    plan = RefinementPlan(cell=source, edge_target=target)

    x, x_next = find_witness(scenario, graph, source, target)
    plan.witness_x, plan.witness_x_next = x, x_next
    try:
        hp = propose_hyperplane(x, x_next)
    except StationaryWitnessError:
        hp = _fallback_hyperplane(cell.region)
    plan.hyperplane = hp

    region = cell.region
    lo = region.extreme(hp.normal, "min")
    hi = region.extreme(hp.normal, "max")
    c0 = float(hp.normal @ x)
    downward = (c0 - lo) >= (hi - c0)  # cut on the roomier side, away from x
    far = lo if downward else hi
    margin = 1e-6 * max(1.0, hi - lo)

    target_region = None
    if target != UNSAFE:
        target_region = scenario.partition[target.cells[0]].region

    best = None
    for t in range(steps):
        offset = c0 + (far - c0) * (t / steps)
        if offset - lo <= margin or hi - offset <= margin:
            continue
        plane = Hyperplane(normal=hp.normal, offset=offset)
        try:
            lower, upper = split(region, plane)
        except DegenerateSplitError:
            continue
        away = lower if downward else upper
        probe = PartitionCell(id=f"{cell.id}b", region=away, C=cell.C, c=cell.c)
        value = _sub_cell_bound(scenario, probe, graph.dq, target, target_region)
        plan.translations.append((float(offset), float(value)))
        if best is None or value < best[0]:
            best = (value, offset)
    if best is None:
        plan.note = "all translations degenerate; partition unchanged"
        return RefinementResult(scenario=scenario, graph=graph, plan=plan)

    plan.chosen_offset = float(best[1])
    lower, upper = split(region, Hyperplane(normal=hp.normal, offset=best[1]))
    near, away = (upper, lower) if downward else (lower, upper)
    cell_near = PartitionCell(id=f"{cell.id}a", region=near, C=cell.C, c=cell.c)
    cell_away = PartitionCell(id=f"{cell.id}b", region=away, C=cell.C, c=cell.c)

    new_cells = (scenario.partition[:idx] + (cell_near, cell_away)
                 + scenario.partition[idx + 1:])
    new_scenario = Scenario(dynamics=scenario.dynamics, controller=scenario.controller,
                            workspace=scenario.workspace, partition=new_cells)
    new_graph = _rebuild_graph(scenario, new_scenario, graph, idx)
    plan.committed = True
    return RefinementResult(scenario=new_scenario, graph=new_graph, plan=plan)


def _remap(old_index, split_index):
    return old_index if old_index < split_index else old_index + 1


def _rebuild_graph(old_scenario, new_scenario, graph, split_index):
    """Copy untouched bounds, re-estimate everything touching the split cell."""
    dq = graph.dq
    n_new = new_scenario.num_cells
    new_nodes = [cell_node(i) for i in range(n_new)] + [UNSAFE]
    new_edges = {}
    fresh = {split_index, split_index + 1}

    boxes = {i: reach_box(new_scenario, new_scenario.partition[i]) for i in range(n_new)}

    for i_new in range(n_new):
        row = []
        if i_new in fresh:
            cell = new_scenario.partition[i_new]
            for j_new in range(n_new):
                b, q_lo, q_hi, method = _edge_for_pair(
                    new_scenario, cell, new_scenario.partition[j_new].region, dq,
                    boxes[i_new])
                row.append(Edge(cell_node(j_new), b, q_lo=q_lo, q_hi=q_hi, method=method))
            row.append(_unsafe_edge(new_scenario, cell, dq, box=boxes[i_new]))
        else:
            i_old = i_new if i_new < split_index else i_new - 1
            cell = new_scenario.partition[i_new]
            for edge in graph.edges[cell_node(i_old)]:
                if edge.target == UNSAFE or edge.target.cells[0] != split_index:
                    tgt = edge.target
                    if tgt.kind == "cell":
                        tgt = cell_node(_remap(tgt.cells[0], split_index))
                    row.append(Edge(tgt, edge.bound, q_lo=edge.q_lo, q_hi=edge.q_hi,
                                    method=edge.method, pieces=edge.pieces))
                else:
                    for j_new in fresh:
                        b, q_lo, q_hi, method = _edge_for_pair(
                            new_scenario, cell, new_scenario.partition[j_new].region,
                            dq, boxes[i_new])
                        row.append(Edge(cell_node(j_new), b, q_lo=q_lo, q_hi=q_hi,
                                        method=method))
        new_edges[cell_node(i_new)] = row
    new_edges[UNSAFE] = [Edge(UNSAFE, 1.0, q_lo=1.0, q_hi=1.0, method="fixed")]

    out = TransitionGraph(nodes=new_nodes, edges=new_edges, dq=dq,
                          q_threshold_floor=graph.q_threshold_floor,
                          scenario_sha256=scenario_sha256(new_scenario))
    return out.bind_scenario(new_scenario)


def select_target(graph, bounds, k):
    """Pick the (cell, edge) most worth refining at horizon ``k``.

    Score is edge bound times the target's k-step bound times the source's
    Chebyshev radius; edges without a replayable witness are skipped.
    Deterministic: ties resolve to the smallest source, then target.
    """
    best = None
    for source in graph.cell_nodes():
        _, radius = chebyshev_center(graph.regions[source])
        for edge in graph.edges[source]:
            if edge.target == source:
                continue
            if edge.target == UNSAFE:
                witnessable = (any(rec[2] > 0.0 for rec in edge.pieces)
                               if edge.pieces else edge.bound > graph.dq)
            elif edge.method == "pruned":
                witnessable = False
            else:
                witnessable = edge.q_lo > 0.0 or edge.bound > graph.dq
            if not witnessable:
                continue
            score = edge.bound * bounds.value(k, edge.target) * radius
            key = (-score, source, edge.target)
            if best is None or key < best[0]:
                best = (key, source, edge)
    if best is None:
        raise RefinementError("no refinable edge in the graph")
    return best[1], best[2]
