"""Direct simulation of single realizations at a few noise levels.

At low noise the network keeps whichever state it started near: a low
initial density dies out while a high one settles on an active plateau.
Above the fold only the quiescent state survives, and at high noise a single
active level is reached from any start.

Run: python demos/bistability.py
"""

import numpy as np

from neurocoarse.graph import generate_regular_graph
from neurocoarse.lifting import random_lift
from neurocoarse.micro import evolve

N, STEPS = 20000, 1500

net = generate_regular_graph(N, 4, seed=1)
print(f"N = {N}, d = 4, {STEPS} steps; long-run mean over the last third\n")
print("epsilon   p0=0.1   p0=0.7")
for eps in (0.15, 0.20, 0.25, 0.40):
    row = []
    for j, p0 in enumerate((0.1, 0.7)):
        rng = np.random.default_rng([0, j])
        _, traj = evolve(random_lift(p0, net, rng), net, eps, STEPS, rng, record=True)
        row.append(np.mean(traj.p[-STEPS // 3:]))
    print(f"{eps:7.2f}   {row[0]:.4f}   {row[1]:.4f}")
