"""Monte-Carlo ground truth for the closed-loop stochastic system.

Simulates the exact dynamics ``x' = A x + B f(d(x)) + w`` with the per-cell
measurement maps, records first unsafe hits, and estimates per-cell
reach-unsafe probabilities from uniformly sampled initial states.  These
estimates are the falsifier for every bound the rest of the package
computes: an estimate significantly above a bound is a soundness bug.

Randomness comes from counter-based Philox streams keyed ``(seed, index)``:
index 0 drives the initial-state sampler, index ``1 + i`` drives trajectory
``i``.  Streams are independent across trajectories and reproducible from
the seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import STRICT_MARGIN, chebyshev_center
from .scenario import closed_loop_mean_step, nn_forward_batch

_MASK64 = (1 << 64) - 1


class MonteCarloError(Exception):
    pass


@dataclass(frozen=True)
class Trajectory:
    """One simulated rollout; ``states`` has k+1 rows.

    ``unsafe_hit`` is the first index whose position lies in an obstacle,
    whose state violates the domain, or that no cell contains (sink
    semantics); None if the rollout stays safe.  After a state escapes every
    cell the rollout holds position, since no measurement map applies.
    """

    states: np.ndarray
    unsafe_hit: int | None
    seed: int
    index: int = 0


@dataclass(frozen=True)
class McEstimate:
    cell: object
    horizon: int
    n_samples: int
    hit_fraction: float
    stddev: float


def stream(seed, index):
    """Generator for the Philox stream keyed (seed, index)."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _cell_index_many(scenario, points):
    """First containing cell per point, -1 if none (first match wins)."""
    idx = np.full(len(points), -1, dtype=int)
    for k, cell in enumerate(scenario.partition):
        mask = (idx < 0) & cell.region.contains_many(points)
        idx[mask] = k
    return idx


def _unsafe_mask(scenario, points, cell_idx):
    ws = scenario.workspace
    pos = ws.project(points)
    bad = cell_idx < 0
    dom = ws.domain
    bad |= np.any(points @ dom.A.T - dom.b > STRICT_MARGIN, axis=1)
    for obs in ws.obstacles:
        bad |= np.all(pos @ obs.A.T - obs.b <= 0.0, axis=1)
    return bad


def simulate_batch(scenario, x0s, k, seed, base_index=1):
    """Roll out many trajectories at once; returns (states, first_hit).

    ``states`` is (N, k+1, n); ``first_hit`` holds the first unsafe step per
    trajectory (k+1 when never unsafe).  Trajectory ``i`` consumes exactly
    the stream ``(seed, base_index + i)`` that :func:`simulate` uses, drawn
    as one (k, n) block, so batched and single runs agree bit-for-bit.
    """
    x0s = np.asarray(x0s, dtype=float)
    N, n = x0s.shape
    dyn = scenario.dynamics
    noise = np.empty((N, k, n))
    for i in range(N):
        noise[i] = stream(seed, base_index + i).normal(size=(k, n)) * dyn.sigma

    states = np.empty((N, k + 1, n))
    states[:, 0] = x0s
    first_hit = np.full(N, k + 1, dtype=int)
    x = x0s.copy()
    cell_idx = _cell_index_many(scenario, x)
    hit0 = _unsafe_mask(scenario, x, cell_idx)
    first_hit[hit0] = 0
    for t in range(k):
        u = np.zeros((N, dyn.m))
        d = np.zeros((N, scenario.controller.input_dim))
        live = cell_idx >= 0
        for c in np.unique(cell_idx[live]):
            mask = cell_idx == c
            cell = scenario.partition[c]
            d[mask] = x[mask] @ cell.C.T + cell.c
        if np.any(live):
            u[live] = nn_forward_batch(scenario.controller, d[live])
        x_next = x @ dyn.A.T + u @ dyn.B.T + noise[:, t]
        x_next[~live] = x[~live]  # no measurement map: hold position
        x = x_next
        states[:, t + 1] = x
        cell_idx = _cell_index_many(scenario, x)
        unsafe = _unsafe_mask(scenario, x, cell_idx)
        fresh = unsafe & (first_hit > t + 1)
        first_hit[fresh] = t + 1
    return states, first_hit


def simulate(scenario, x0, k, seed, index=0):
    """One exact stochastic rollout from ``x0`` over ``k`` steps."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if not scenario.workspace.domain.contains(x0[0]):
        raise MonteCarloError(f"initial state {x0[0]} outside the domain")
    states, first_hit = simulate_batch(scenario, x0, k, seed, base_index=1 + index)
    hit = int(first_hit[0])
    return Trajectory(states=states[0], unsafe_hit=hit if hit <= k else None,
                      seed=seed, index=index)


def sample_in_polytope(poly, n, rng, burn_in=50):
    """Approximately uniform points via hit-and-run from the Chebyshev center."""
    center, radius = chebyshev_center(poly)
    if radius <= 0.0:
        raise MonteCarloError("cannot sample a degenerate polytope")
    out = np.empty((n, poly.dim))
    x = center.copy()
    total = burn_in + n
    for step in range(total):
        direction = rng.normal(size=poly.dim)
        direction /= np.linalg.norm(direction)
        denom = poly.A @ direction
        slack = poly.b - poly.A @ x
        t_hi = np.inf
        t_lo = -np.inf
        pos = denom > 1e-12
        neg = denom < -1e-12
        if np.any(pos):
            t_hi = np.min(slack[pos] / denom[pos])
        if np.any(neg):
            t_lo = np.max(slack[neg] / denom[neg])
        if not np.isfinite(t_hi) or not np.isfinite(t_lo) or t_hi < t_lo:
            t_lo, t_hi = 0.0, 0.0
        x = x + rng.uniform(t_lo, t_hi) * direction
        if step >= burn_in:
            out[step - burn_in] = x
    return out


def estimate_true_pk(scenario, cell, k, n, seed):
    """MC estimate of reach-unsafe-within-k from uniform starts in a cell.

    ``cell`` may be a PartitionCell or a cell index.  10^4 samples put the
    binomial standard deviation at or below half a percent.
    """
    if n < 1:
        raise MonteCarloError("need at least one sample")
    if isinstance(cell, (int, np.integer)):
        cell = scenario.partition[int(cell)]
    starts = sample_in_polytope(cell.region, n, stream(seed, 0))
    _, first_hit = simulate_batch(scenario, starts, k, seed, base_index=1)
    frac = float(np.mean(first_hit <= k))
    return McEstimate(cell=cell.id, horizon=k, n_samples=n, hit_fraction=frac,
                      stddev=float(np.sqrt(frac * (1.0 - frac) / n)))


def estimate_transition(scenario, x, target_region, n, seed, index=0):
    """MC estimate of one-step ``P(x' in target | x)`` at a fixed state.

    Uses the true closed loop (mean step plus noise); the draw stream is
    ``(seed, index)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    cell_idx = _cell_index_many(scenario, x[None, :])[0]
    if cell_idx < 0:
        raise MonteCarloError("state lies in no cell")
    cell = scenario.partition[cell_idx]
    mean = closed_loop_mean_step(scenario, x, cell, tol=1e-6)
    dyn = scenario.dynamics
    draws = stream(seed, index).normal(size=(n, dyn.n)) * dyn.sigma
    pts = mean + draws
    frac = float(np.mean(target_region.contains_many(pts, tol=0.0)))
    return McEstimate(cell=cell.id, horizon=1, n_samples=n, hit_fraction=frac,
                      stddev=float(np.sqrt(frac * (1.0 - frac) / n)))
