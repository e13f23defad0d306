"""Transition graph with per-edge upper bounds on one-step probabilities.

For an ordered cell pair the bound comes from a bisection over the
chance-constraint threshold q: unsatisfiability of the reach query against
the target's augmented set at threshold q proves that no state of the source
cell transitions with probability >= q, so the final unsatisfiable q is a
valid upper bound.  A cheap interval-arithmetic reach-box filter skips pairs
whose bound would bottom out anyway; filtered pairs keep an edge at the
precision floor rather than being dropped, since unsatisfiability proves
smallness, never impossibility.

Every cell also gets an edge to the absorbing unsafe sink, bounding the
one-step probability of entering an obstacle or leaving the domain; the sink
carries a self-loop of weight one, which makes downstream horizon bounds
cover "reach unsafe within k steps".
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import smc
from .geometry import Polytope, augmented_set, is_empty_intersection
from .scenario import scenario_sha256

GRAPH_FORMAT = "relusafe-graph-v1"
TOOL_VERSION = "0.1.0"


class GraphError(Exception):
    pass


class GraphChecksumError(GraphError):
    pass


class GraphVersionError(GraphError):
    pass


@dataclass(frozen=True, order=True)
class NodeId:
    """Graph node: a partition cell, a merged target group, or the unsafe sink."""

    kind: str
    cells: tuple = ()

    def __post_init__(self):
        if self.kind not in ("cell", "merged", "unsafe"):
            raise GraphError(f"bad node kind {self.kind!r}")
        if self.kind == "merged" and len(self.cells) < 2:
            raise GraphError("merged nodes need at least two members")

    def __str__(self):
        if self.kind == "cell":
            return f"cell:{self.cells[0]}"
        if self.kind == "merged":
            return "merged:" + "+".join(str(c) for c in self.cells)
        return "unsafe"


UNSAFE = NodeId("unsafe")


def cell_node(index):
    return NodeId("cell", (int(index),))


def merged_node(indices):
    return NodeId("merged", tuple(sorted(int(i) for i in indices)))


def parse_node(text):
    if text == "unsafe":
        return UNSAFE
    kind, _, rest = text.partition(":")
    if kind == "cell":
        return cell_node(int(rest))
    if kind == "merged":
        return merged_node(int(c) for c in rest.split("+"))
    raise GraphError(f"bad node literal {text!r}")


@dataclass(frozen=True)
class Edge:
    """One weighted edge.  ``bound`` upper-bounds the transition probability.

    ``q_lo``/``q_hi`` are the final bisection bracket (satisfiable /
    unsatisfiable thresholds); ``method`` is "smc" for bisection results,
    "pruned" for reach-box filtered pairs and "fixed" for the sink self-loop.
    ``pieces`` carries the per-piece records of a sink edge.
    """

    target: NodeId
    bound: float
    q_lo: float = 0.0
    q_hi: float = 1.0
    method: str = "smc"
    pieces: tuple = ()


@dataclass
class TransitionGraph:
    nodes: list
    edges: dict                      # NodeId -> list[Edge]
    dq: float
    q_threshold_floor: float
    scenario_sha256: str = ""
    regions: dict = field(default_factory=dict)   # NodeId -> Polytope (cell nodes)
    sigma: np.ndarray | None = None

    def neighbors(self, node):
        return self.edges.get(node, [])

    def edge(self, source, target):
        for e in self.edges.get(source, []):
            if e.target == target:
                return e
        return None

    def cell_nodes(self):
        return [v for v in self.nodes if v.kind == "cell"]

    def bind_scenario(self, scenario):
        """Attach regions and noise data from the owning scenario."""
        digest = scenario_sha256(scenario)
        if self.scenario_sha256 and digest != self.scenario_sha256:
            raise GraphError("graph was built for a different scenario (hash mismatch)")
        for node in self.cell_nodes():
            self.regions[node] = scenario.partition[node.cells[0]].region
        self.sigma = scenario.dynamics.sigma
        return self


def bisection_floor(dq):
    """Smallest value the threshold bisection can return: 2^-ceil(log2(1/dq))."""
    if not (0.0 < dq < 1.0):
        raise ValueError("dq must lie in (0,1)")
    return 2.0 ** (-math.ceil(math.log2(1.0 / dq)))


def _bisect_region(scenario, cell, region, dq):
    """Threshold bisection of the reach query from ``cell`` into ``region``.

    Returns (q_lo, q_hi): q_hi unsatisfiable (or 1.0 untested), q_lo
    satisfiable (or 0.0), with q_hi - q_lo <= dq.  Budget-exhausted queries
    count as satisfiable.
    """
    problem = smc.build_encoding(scenario, cell, region)
    sigma = scenario.dynamics.sigma
    q_lo, q_hi = 0.0, 1.0
    hint = None
    while q_hi - q_lo > dq:
        q = 0.5 * (q_lo + q_hi)
        out = smc.solve(problem.with_target(augmented_set(region, q, sigma)),
                        phase_hint=hint)
        if out.is_sat:
            q_lo = q
            hint = out.pattern
        else:
            q_hi = q
    return q_lo, q_hi


def estimate_bound(scenario, cell_i, cell_j, dq):
    """Upper bound on the worst-case one-step probability from cell_i to cell_j."""
    _, q_hi = _bisect_region(scenario, cell_i, cell_j.region, dq)
    return q_hi


def reach_box(scenario, cell, inflate=1e-9):
    """Interval overapproximation of the noise-free successor means of a cell."""
    lo, hi = cell.region.bounding_box()
    d_lo, d_hi = smc.interval_affine(cell.C, cell.c, lo, hi)
    _, _, (u_lo, u_hi) = smc.network_interval_bounds(scenario.controller, d_lo, d_hi)
    dyn = scenario.dynamics
    ax_lo, ax_hi = smc.interval_affine(dyn.A, np.zeros(dyn.n), lo, hi)
    bu_lo, bu_hi = smc.interval_affine(dyn.B, np.zeros(dyn.n), u_lo, u_hi)
    return Polytope.box(ax_lo + bu_lo - inflate, ax_hi + bu_hi + inflate)


def _prune_against(scenario, box, region, dq):
    floor = bisection_floor(dq)
    aug = augmented_set(region, floor, scenario.dynamics.sigma)
    return is_empty_intersection(box, aug)


def prune_test(scenario, cell_i, cell_j, dq):
    """True only when the pair's bound is guaranteed to bottom out.

    The interval reach box of cell_i is tested for emptiness against the
    target's augmented set at the bisection floor; emptiness makes every
    bisection query unsatisfiable, so the transition probability of every
    source state is below dq and the bisection would have returned its
    minimum grid value.
    """
    return _prune_against(scenario, reach_box(scenario, cell_i), cell_j.region, dq)


def unsafe_pieces(workspace):
    """Convex decomposition of the unsafe set, in state space.

    One piece per obstacle (lifted through the position projection) and one
    per reversed domain halfspace.
    """
    pieces = list(workspace.lifted_obstacles())
    dom = workspace.domain
    for i in range(dom.num_halfspaces):
        pieces.append(Polytope(-dom.A[i][None, :], np.array([-dom.b[i]])))
    return pieces


def _unsafe_edge(scenario, cell, dq, box=None):
    if box is None:
        box = reach_box(scenario, cell)
    floor = bisection_floor(dq)
    records = []
    total = 0.0
    for piece in unsafe_pieces(scenario.workspace):
        if _prune_against(scenario, box, piece, dq):
            rec = (piece, dq, 0.0, dq, "pruned")
        else:
            q_lo, q_hi = _bisect_region(scenario, cell, piece, dq)
            rec = (piece, max(q_hi, dq), q_lo, q_hi, "smc")
        records.append(rec)
        total += rec[1]
    return Edge(target=UNSAFE, bound=min(1.0, total), method="unsafe",
                pieces=tuple(records))


def unsafe_bound(scenario, cell_i, dq):
    """Bound on entering any obstacle or leaving the domain in one step."""
    return _unsafe_edge(scenario, cell_i, dq).bound


def _source_row(scenario, i, dq):
    """All outgoing edges of one source cell (worker task)."""
    cell = scenario.partition[i]
    box = reach_box(scenario, cell)
    edges = []
    for j, target_cell in enumerate(scenario.partition):
        if _prune_against(scenario, box, target_cell.region, dq):
            edges.append(Edge(cell_node(j), dq, q_lo=0.0, q_hi=dq, method="pruned"))
        else:
            q_lo, q_hi = _bisect_region(scenario, cell, target_cell.region, dq)
            edges.append(Edge(cell_node(j), max(q_hi, dq), q_lo=q_lo, q_hi=q_hi,
                              method="smc"))
    edges.append(_unsafe_edge(scenario, cell, dq, box=box))
    return i, edges


def build_graph(scenario, dq, jobs=1):
    """Estimate bounds for every ordered cell pair plus the sink edges.

    Pair estimation is independent per source cell; with ``jobs > 1`` the
    source rows fan out to worker processes.  Assembly is deterministic
    regardless of completion order.  Any worker failure aborts the build;
    partial graphs are never returned.
    """
    indices = list(range(scenario.num_cells))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_source_row, [scenario] * len(indices),
                                    indices, [dq] * len(indices)))
    else:
        results = [_source_row(scenario, i, dq) for i in indices]
    results.sort(key=lambda item: item[0])

    nodes = [cell_node(i) for i in indices] + [UNSAFE]
    edges = {cell_node(i): row for i, row in results}
    edges[UNSAFE] = [Edge(UNSAFE, 1.0, q_lo=1.0, q_hi=1.0, method="fixed")]
    graph = TransitionGraph(
        nodes=nodes, edges=edges, dq=dq,
        q_threshold_floor=bisection_floor(dq),
        scenario_sha256=scenario_sha256(scenario),
    )
    for node, row in graph.edges.items():
        for e in row:
            if not (dq - 1e-15 <= e.bound <= 1.0 + 1e-15):
                raise GraphError(f"edge {node}->{e.target} bound {e.bound} outside [dq, 1]")
    return graph.bind_scenario(scenario)


# --------------------------------------------------------------------------
# Persistence: a one-line JSON header with a checksum over the payload bytes,
# then the payload.  Bounds round-trip bit-exactly through repr-style floats.


def save_graph(graph):
    payload = json.dumps({
        "nodes": [str(v) for v in graph.nodes],
        "edges": [
            [str(source), str(e.target), e.bound]
            for source in sorted(graph.edges)
            for e in graph.edges[source]
        ],
    }, indent=0)
    header = {
        "format": GRAPH_FORMAT,
        "tool_version": TOOL_VERSION,
        "dq": graph.dq,
        "q_threshold_floor": graph.q_threshold_floor,
        "scenario_sha256": graph.scenario_sha256,
        "payload_sha256": hashlib.sha256(payload.encode()).hexdigest(),
    }
    return json.dumps(header) + "\n" + payload


def load_graph(text, scenario=None):
    """Parse a graph document, verifying version and checksum.

    Loaded edges carry only (source, target, bound); bisection metadata is
    not persisted.  Passing the owning scenario re-binds cell regions and
    validates the scenario hash.
    """
    head, sep, payload = text.partition("\n")
    if not sep:
        raise GraphChecksumError("document truncated before payload")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise GraphError(f"unparseable graph header: {exc}") from exc
    if header.get("format") != GRAPH_FORMAT:
        raise GraphVersionError(f"unsupported graph format {header.get('format')!r}")
    digest = hashlib.sha256(payload.encode()).hexdigest()
    if digest != header.get("payload_sha256"):
        raise GraphChecksumError("payload checksum mismatch (truncated or edited document)")
    body = json.loads(payload)
    edges = {}
    for src_text, tgt_text, bound in body["edges"]:
        src, tgt = parse_node(src_text), parse_node(tgt_text)
        method = "fixed" if src == UNSAFE else ("smc" if tgt != UNSAFE else "unsafe")
        edges.setdefault(src, []).append(Edge(tgt, float(bound), method=method))
    graph = TransitionGraph(
        nodes=[parse_node(v) for v in body["nodes"]],
        edges=edges,
        dq=float(header["dq"]),
        q_threshold_floor=float(header["q_threshold_floor"]),
        scenario_sha256=header.get("scenario_sha256", ""),
    )
    if scenario is not None:
        graph.bind_scenario(scenario)
    return graph
