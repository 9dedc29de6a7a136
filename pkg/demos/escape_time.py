"""Free energy and Kramers escape time on a small network, with a direct check.

Drift and diffusion come from one-step bursts of manifold-lifted ensembles
around the metastable active state; integrating u / D gives the free energy
whose barrier sets the Kramers time.  Direct simulation then counts how long
single realizations actually stay before dropping past the barrier.

Run: python demos/escape_time.py
"""

import warnings

from neurocoarse.coarse import CoarseMap, EnsembleConfig, LiftWarning
from neurocoarse.graph import generate_regular_graph
from neurocoarse.numerics import newton_solve
from neurocoarse.rare_events import (
    default_psi_grid,
    direct_mfpt,
    estimate_drift_diffusion,
    free_energy,
    kramers_escape_time,
    nested_mfpt,
)

warnings.simplefilter("ignore", LiftWarning)

EPS = 0.162
net = generate_regular_graph(2000, 4, seed=0)
phi = CoarseMap(net, EnsembleConfig(copies=1000, horizon_T=1))
node = newton_solve(0.8, EPS, phi, seed=1).p_star
saddle = newton_solve(0.62, EPS, phi, seed=2).p_star
print(f"metastable state {node:.4f}, unstable state {saddle:.4f}")

prof = free_energy(estimate_drift_diffusion(node, default_psi_grid(node, saddle), EPS, net, 1, 1000, seed=3))
prof.to_csv("profile.csv")
kr = kramers_escape_time(prof)
print(f"barrier {kr.barrier:.2f}: Kramers tau = {kr.tau:.4g}, 1-D first passage = {nested_mfpt(prof).tau:.4g}")

direct = direct_mfpt(node, EPS, net, node + kr.psi_unstable, escapes=30, max_steps=1_000_000, seed=4)
print(f"direct simulation: tau = {direct.tau:.4g} +- {direct.std_error:.2g} ({direct.times.size} escapes)")
