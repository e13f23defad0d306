"""
Monte-Carlo falsification and heatmaps
======================================

The exact stochastic closed loop is the ground truth for every bound the
package computes.  This script estimates per-cell reach-unsafe
probabilities from simulated trajectories, confirms they sit below the
verified bounds, and rasterizes the bound heatmap at three horizons.
"""

from relusafe import build_graph, estimate_true_pk, make_demo_scenario, verify
from relusafe.graph import cell_node
from relusafe.render import render_heatmap

scenario = make_demo_scenario(3, [8, 8], seed=0,
                              obstacles=[((7.2, 1.2), (8.8, 2.8))])
graph = build_graph(scenario, dq=0.05)
bounds = verify(graph, scenario, horizon=9, p=0.05, mode="merge+tpn")

print("cell   true P6 (MC)   bound P6   gap")
for i in range(scenario.num_cells):
    est = estimate_true_pk(scenario, i, k=6, n=4000, seed=17)
    bound = bounds.per_k[6][cell_node(i)]
    flag = "" if est.hit_fraction <= bound + 4 * est.stddev else "  VIOLATION"
    print(f"{scenario.partition[i].id:>4}   {est.hit_fraction:10.4f}   "
          f"{bound:8.4f}   {bound - est.hit_fraction:6.4f}{flag}")
    assert est.hit_fraction <= bound + 4 * max(est.stddev, 1e-4)

for k in (3, 6, 9):
    path = f"heatmap_k{k}.ppm"
    render_heatmap(bounds, k, scenario, path)
    print(f"wrote {path}")
