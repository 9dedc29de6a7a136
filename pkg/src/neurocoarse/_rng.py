"""Deterministic random streams keyed by integer tuples."""

import numpy as np

# Phase tags used in stream keys. Separate phases get separate streams so that
# perturbed evaluations (p +/- delta) share the random numbers of later phases.
LIFT = 0
BURST = 1
ANNEAL = 2
EVOLVE = 3
PILOT = 4
GRAPH = 5


def stream(seed, *key):
    """Return a Generator determined by ``seed`` and an integer ``key`` path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def subseed(seed, *key):
    """Derive a 63-bit integer seed from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
