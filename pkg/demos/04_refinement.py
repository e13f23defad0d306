"""
Witness-driven refinement
=========================

The transition bound of a cell is pinned to its worst-case states.  This
script lets the selector pick the most promising (cell, edge) pair, splits
the cell by a hyperplane perpendicular to the witness motion, and shows the
line search over translations plus the effect on the six-step bounds.
"""

from relusafe import build_graph, make_demo_scenario, refine_cell, select_target, verify
from relusafe.graph import cell_node

scenario = make_demo_scenario(5, [8, 8], seed=0,
                              obstacles=[((6.5, 2.5), (7.5, 3.5))])
graph = build_graph(scenario, dq=0.01)
bounds = verify(graph, scenario, horizon=6, p=0.01, mode="merge+tpn")

source, edge = select_target(graph, bounds, k=6)
print(f"selected {source} -> {edge.target} (bound {edge.bound:.3f})")

result = refine_cell(scenario, graph, bounds, source, edge.target, steps=4)
plan = result.plan
print(f"witness at {plan.witness_x.round(3)} moving to "
      f"{plan.witness_x_next.round(3)}")
print("translation line search (offset, sub-cell bound):")
for offset, value in plan.translations:
    print(f"  {offset:+8.3f}  {value:.4f}")
print(f"chosen offset: {plan.chosen_offset:+.3f}")

after = verify(result.graph, result.scenario, horizon=6, p=0.01, mode="merge+tpn")
idx = source.cells[0]
print(f"\nrefined cell 6-step bound before: {bounds.per_k[6][cell_node(idx)]:.4f}")
print(f"after split:  near half {after.per_k[6][cell_node(idx)]:.4f}, "
      f"far half {after.per_k[6][cell_node(idx + 1)]:.4f}")
