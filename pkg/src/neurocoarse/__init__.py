"""Equation-free coarse analysis of a stochastic binary-neuron network.

Modules
-------
graph        connected random d-regular graphs
micro        synchronous microscopic simulator and spatial moments
lifting      uniform and annealed lifts, slow-manifold conditioning
coarse       the coarse timestepper and phase portraits
numerics     fixed points, continuation, stability, critical points
rare_events  drift/diffusion, free energy, Kramers and direct escape times
oracle       exact Markov chain for tiny networks, mean-field map
cli          command-line front end
"""

__version__ = "0.1.0"
