"""Horizon propagation of safety-probability upper bounds.

Starting from the indicator of immediate unsafety, each horizon step bounds
the probability of reaching the unsafe sink within k+1 steps from the k-step
bounds of the neighbors.  Two tightenings are available on top of the plain
weighted sum:

* merging: two targets of an owner whose grown chance-constraint sets are
  disjoint can be replaced by a single virtual union target; no source state
  can transition to both with high probability, so the union edge carries
  ``max(max(b_i, b_j) + p, 2p)`` instead of ``b_i + b_j``.  A merge is
  applied only when it strictly lowers the owner's propagated sum, so the
  result is never worse than the plain recursion.
* normalization: true outgoing probabilities sum to one, so when edge
  bounds over-approximate (mass above one) the sum is truncated to the
  worst-ranked targets of total mass one, greedily filling the highest
  safety bounds first.

Merged nodes are per-step scratch: every horizon step restarts from the
original graph, and merged nodes carry no outgoing edges; only their bound,
the max over members, enters the recursion.
"""

from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass, field

from .geometry import augmented_set, cell_unsafe_overlap, is_empty_intersection
from .graph import UNSAFE, Edge, NodeId, cell_node, merged_node

MODES = ("naive", "merge", "tpn", "merge+tpn")


class VerifierError(Exception):
    pass


@dataclass(frozen=True)
class MergeRecord:
    owner: NodeId
    members: tuple        # the two replaced target nodes
    merged: NodeId
    new_bound: float
    horizon: int


@dataclass
class SafetyBounds:
    """Per-horizon upper bounds: ``per_k[k][node]`` bounds reach-unsafe within k."""

    horizon: int
    merge_p: float | None
    mode: str
    per_k: list
    merges: list = field(default_factory=list)

    def value(self, k, node):
        if node.kind == "unsafe":
            return 1.0
        if node.kind == "merged":
            return max(self.per_k[k][cell_node(c)] for c in node.cells)
        return self.per_k[k][node]

    def cell_nodes(self):
        return sorted(v for v in self.per_k[0] if v.kind == "cell")


def node_bound(bounds_k, node):
    """Bound of a node under the max-over-members rule for merged nodes."""
    if node.kind == "unsafe":
        return 1.0
    if node.kind == "merged":
        return max(bounds_k[cell_node(c)] for c in node.cells)
    return bounds_k[node]


def init_p0(scenario):
    """Horizon-zero bounds: one on cells that can touch the unsafe set."""
    bounds = {}
    for i, cell in enumerate(scenario.partition):
        unsafe = cell_unsafe_overlap(cell.region, scenario.workspace)
        bounds[cell_node(i)] = 1.0 if unsafe else 0.0
    bounds[UNSAFE] = 1.0
    return bounds


def _naive_value(row, bounds_k):
    total = sum(e.bound * node_bound(bounds_k, e.target) for e in row)
    return min(1.0, max(0.0, total))


def _tpn_value(row, bounds_k):
    mass = sum(e.bound for e in row)
    if mass <= 1.0:
        return _naive_value(row, bounds_k)
    ranked = sorted(
        ((node_bound(bounds_k, e.target), e.target, e.bound) for e in row),
        key=lambda item: (item[0], item[1]),
    )
    n = len(ranked)
    # Largest suffix of worst-ranked targets whose edge mass still fits in 1.
    suffix = 0.0
    m_hat = n  # 1-indexed position whose bound absorbs the leftover mass
    for i in range(n - 1, 0, -1):
        if suffix + ranked[i][2] > 1.0:
            break
        suffix += ranked[i][2]
        m_hat = i
    m_hat -= 1  # index of kappa(m_hat) in 0-based terms
    value = sum(pk * w for pk, _, w in ranked[m_hat + 1:])
    value += (1.0 - suffix) * ranked[m_hat][0]
    return min(1.0, max(0.0, value))


def naive_step(graph, bounds_k):
    """Plain weighted-sum propagation, clamped to [0, 1]."""
    out = {v: _naive_value(graph.edges[v], bounds_k) for v in graph.cell_nodes()}
    out[UNSAFE] = 1.0
    return out


def tpn_step(graph, bounds_k):
    """Normalized propagation; falls back to the plain sum at mass <= 1."""
    out = {v: _tpn_value(graph.edges[v], bounds_k) for v in graph.cell_nodes()}
    out[UNSAFE] = 1.0
    return out


def _node_cells(node):
    return node.cells


def _groups_separated(regions, sigma, node_a, node_b, p, cache):
    """Pairwise emptiness of the grown chance sets of two target groups."""
    for a in _node_cells(node_a):
        for b in _node_cells(node_b):
            key = (min(a, b), max(a, b))
            hit = cache.get(key)
            if hit is None:
                aug_a = augmented_set(regions[cell_node(a)], p, sigma)
                aug_b = augmented_set(regions[cell_node(b)], p, sigma)
                hit = is_empty_intersection(aug_a, aug_b)
                cache[key] = hit
            if not hit:
                return False
    return True


def _merge_owner(row, owner, p, bounds_k, regions, sigma, cache, horizon):
    """Greedy merging of one owner's targets to a local fixpoint.

    ``row`` is mutated in place.  Candidate pairs must pass both gates:
    geometric separation of the grown sets and a strict improvement of the
    owner's propagated sum; among passing pairs the largest improvement is
    applied first.  Returns the merge records.
    """
    records = []
    while True:
        best = None
        for xi in range(len(row)):
            for yi in range(xi + 1, len(row)):
                ex, ey = row[xi], row[yi]
                if ex.target.kind == "unsafe" or ey.target.kind == "unsafe":
                    continue
                pk_x = node_bound(bounds_k, ex.target)
                pk_y = node_bound(bounds_k, ey.target)
                new_bound = min(1.0, max(max(ex.bound, ey.bound) + p, 2.0 * p))
                lhs = new_bound * max(pk_x, pk_y)
                rhs = ex.bound * pk_x + ey.bound * pk_y
                slack = rhs - lhs
                if slack <= 0.0:
                    continue
                if not _groups_separated(regions, sigma, ex.target, ey.target, p, cache):
                    continue
                key = (slack, ex.target, ey.target)
                if best is None or key > best[0]:
                    best = (key, xi, yi, new_bound)
        if best is None:
            return records
        (_, xi, yi, new_bound) = best
        ex, ey = row[xi], row[yi]
        node = merged_node(_node_cells(ex.target) + _node_cells(ey.target))
        del row[yi], row[xi]
        row.append(Edge(target=node, bound=new_bound, method="merged"))
        records.append(MergeRecord(owner=owner, members=(ex.target, ey.target),
                                   merged=node, new_bound=new_bound, horizon=horizon))


def merge_pass(graph, owner, p, bounds_k):
    """Functional single-owner merge: returns (new_graph, records).

    The graph must carry cell regions and the noise vector (see
    ``TransitionGraph.bind_scenario``).  Merged target nodes get no outgoing
    edges; their safety bound is the max over members.
    """
    if not (0.0 < p < 0.5):
        raise VerifierError("merge threshold p must lie in (0, 0.5)")
    if graph.sigma is None or not graph.regions:
        raise VerifierError("graph lacks scenario bindings; call bind_scenario first")
    new_graph = copy.copy(graph)
    new_graph.edges = {v: list(r) for v, r in graph.edges.items()}
    row = new_graph.edges[owner]
    records = _merge_owner(row, owner, p, bounds_k, new_graph.regions,
                           new_graph.sigma, {}, horizon=0)
    for rec in records:
        if rec.merged not in new_graph.nodes:
            new_graph.nodes = list(new_graph.nodes) + [rec.merged]
    return new_graph, records


def verify(graph, scenario, horizon, p=0.01, mode="merge+tpn"):
    """Propagate bounds to the given horizon under the chosen mode.

    Modes: "naive" (plain sum), "merge" (merging + plain sum), "tpn"
    (normalized sum), "merge+tpn" (both).  Each horizon step copies the
    original graph, merges to a fixpoint where enabled, then propagates for
    every original cell.
    """
    if mode not in MODES:
        raise VerifierError(f"unknown mode {mode!r}; expected one of {MODES}")
    if horizon < 0:
        raise VerifierError("horizon must be >= 0")
    if graph.sigma is None or not graph.regions:
        graph.bind_scenario(scenario)
    do_merge = mode in ("merge", "merge+tpn")
    value_fn = _tpn_value if mode in ("tpn", "merge+tpn") else _naive_value

    per_k = [init_p0(scenario)]
    merges = []
    empt_cache = {}
    cells = graph.cell_nodes()
    for k in range(1, horizon + 1):
        prev = per_k[-1]
        work = {v: list(graph.edges[v]) for v in cells}
        if do_merge:
            changed = True
            while changed:
                changed = False
                for owner in cells:
                    recs = _merge_owner(work[owner], owner, p, prev, graph.regions,
                                        graph.sigma, empt_cache, horizon=k)
                    if recs:
                        changed = True
                        merges.extend(recs)
        # A cell that can already be unsafe at step zero stays at one: some
        # of its states have hit the unsafe set before any transition, and
        # the within-horizon event only accumulates.
        new = {v: 1.0 if per_k[0][v] >= 1.0 else value_fn(work[v], prev)
               for v in cells}
        new[UNSAFE] = 1.0
        per_k.append(new)
    return SafetyBounds(horizon=horizon, merge_p=p if do_merge else None,
                        mode=mode, per_k=per_k, merges=merges)


# --------------------------------------------------------------------------
# CSV form: rows (cell_id, k, bound) with the partition's cell ids.


def bounds_to_csv(bounds, scenario):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["cell_id", "k", "bound"])
    for node in bounds.cell_nodes():
        cid = scenario.partition[node.cells[0]].id
        for k in range(bounds.horizon + 1):
            writer.writerow([cid, k, repr(bounds.per_k[k][node])])
    return buf.getvalue()


def bounds_from_csv(text, scenario, mode="unknown", merge_p=None):
    index = {cell.id: i for i, cell in enumerate(scenario.partition)}
    per_k = {}
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        if row["cell_id"] not in index:
            raise VerifierError(f"unknown cell id {row['cell_id']!r} in bounds file")
        k = int(row["k"])
        per_k.setdefault(k, {})[cell_node(index[row["cell_id"]])] = float(row["bound"])
    if not per_k or sorted(per_k) != list(range(max(per_k) + 1)):
        raise VerifierError("bounds file has missing horizons")
    horizon = max(per_k)
    out = []
    for k in range(horizon + 1):
        level = per_k[k]
        if len(level) != scenario.num_cells:
            raise VerifierError(f"bounds file incomplete at horizon {k}")
        level[UNSAFE] = 1.0
        out.append(level)
    return SafetyBounds(horizon=horizon, merge_p=merge_p, mode=mode, per_k=out)
