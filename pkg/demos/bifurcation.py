"""Pseudo-arc-length continuation of the active branch around its fold.

A reduced network (N = 2000) keeps this to a few minutes on one core; the
fold moves slightly with N.  The branch is written to ``branch_upper.csv``.

Run: python demos/bifurcation.py
"""

import warnings

from neurocoarse.coarse import CoarseMap, EnsembleConfig, LiftWarning
from neurocoarse.graph import generate_regular_graph
from neurocoarse.numerics import (
    ContinuationConfig,
    NoisyDerivativeWarning,
    arclength_trace,
    locate_critical_points,
    start_branch,
)

warnings.simplefilter("ignore", (LiftWarning, NoisyDerivativeWarning))

net = generate_regular_graph(2000, 4, seed=1)
phi = CoarseMap(net, EnsembleConfig(copies=500, horizon_T=5))
cfg = ContinuationConfig(delta_s=0.02, epsilon_range=(0.13, 0.2), max_points=16)

a, b = start_branch(0.8, 0.15, phi, cfg, seed=5)
branch = arclength_trace(a, b, phi, cfg, seed=6)
print(" epsilon      p*   lambda")
for pt in branch:
    print(f"{pt.epsilon:8.4f}  {pt.p_star:.4f}  {pt.lam:6.3f}")
for c in locate_critical_points(branch):
    print(f"{c.kind} at epsilon = {c.epsilon:.4f}")
branch.to_csv("branch_upper.csv")
