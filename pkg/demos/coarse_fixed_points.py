"""Coarse fixed points of the T-step map and their eigenvalues.

The coarse map lifts a density onto the slow manifold, runs an ensemble for
T steps and restricts back to the mean density.  Newton on p - Phi_T(p)
finds both the stable active state and the unstable state that separates it
from the quiescent one; the slope of Phi_T at each root tells them apart.

Run: python demos/coarse_fixed_points.py
"""

import warnings

from neurocoarse.coarse import CoarseMap, EnsembleConfig, LiftWarning
from neurocoarse.graph import generate_regular_graph
from neurocoarse.numerics import newton_solve

warnings.simplefilter("ignore", LiftWarning)

net = generate_regular_graph(2000, 4, seed=1)
phi = CoarseMap(net, EnsembleConfig(copies=500, horizon_T=5))

for guess in (0.85, 0.6):
    b = newton_solve(guess, 0.14, phi, seed=1)
    kind = "stable" if b.stable else "unstable"
    print(f"guess {guess:.2f}: p* = {b.p_star:.4f} +- {b.std_error:.4f}, "
          f"lambda = {b.lam:.3f} ({kind}), {b.iterations} Newton steps")
