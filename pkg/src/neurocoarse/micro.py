"""Microscopic simulator and spatial moments of the binary-neuron network.

A microscopic state is a length-N ``uint8`` array (1 = activated).  All
neurons update synchronously from the previous state: an inactive neuron with
``k >= 1`` active neighbors fires with probability ``epsilon`` while
``k < (d+1)/2`` and ``1 - epsilon`` otherwise; an inactive neuron with no
active neighbor never fires, so the all-off state is absorbing.  An active
neuron counts itself, ``c = k + 1``, and switches off with probability
``1 - epsilon`` if ``c < (d+1)/2`` and ``epsilon`` otherwise.
"""

from __future__ import annotations

import csv
from functools import lru_cache
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "CoarseObservables",
    "Trajectory",
    "TRIPLE_CLASSES",
    "flip_probability",
    "flip_table",
    "synchronous_step",
    "evolve",
    "density",
    "pair_densities",
    "triple_densities",
    "observables",
]

# Order of the six classes of ordered length-2 paths (a, b, c); 001 stands
# for 001 and 100, 011 for 011 and 110.
TRIPLE_CLASSES = ("000", "001", "010", "011", "101", "111")

_BLOCK_VARIATES = 1 << 20


def _check_epsilon(epsilon):
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must lie in (0, 0.5), got {epsilon}")


def flip_probability(current, active_neighbors, d, epsilon):
    """Probability that a neuron changes state in one step.

    Parameters
    ----------
    current : int
        Present state of the neuron (0 or 1).
    active_neighbors : int
        Number of active neighbors, ``0 <= k <= d``.
    d : int
        Degree of the graph.
    epsilon : float
        Noise level in (0, 0.5).
    """
    if current not in (0, 1):
        raise ValueError(f"state must be 0 or 1, got {current}")
    if not 0 <= active_neighbors <= d:
        raise ValueError(f"active_neighbors must lie in [0, {d}], got {active_neighbors}")
    _check_epsilon(epsilon)
    c = active_neighbors + current
    below = 2 * c < d + 1  # c < (d+1)/2 without rounding
    if current == 0:
        if active_neighbors == 0:
            return 0.0
        return epsilon if below else 1.0 - epsilon
    return 1.0 - epsilon if below else epsilon


def flip_table(d, epsilon):
    """``(2, d+1)`` table of flip probabilities indexed by (state, active neighbors)."""
    return _cached_table(int(d), float(epsilon)).copy()


@lru_cache(maxsize=256)
def _cached_table(d, epsilon):
    table = np.empty((2, d + 1))
    for s in (0, 1):
        for k in range(d + 1):
            table[s, k] = flip_probability(s, k, d, epsilon)
    table.setflags(write=False)
    return table


def _as_state(state, net):
    state = np.asarray(state)
    if state.shape != (net.n_neurons,):
        raise ValueError(f"state has shape {state.shape}, network has {net.n_neurons} neurons")
    return np.ascontiguousarray(state, dtype=np.uint8)


def synchronous_step(state, net, epsilon, rng, table=None):
    """Advance ``state`` by one synchronous step; the input is not modified.

    One single-precision uniform variate is drawn per neuron, in
    neuron-index order, from ``rng``.
    """
    state = _as_state(state, net)
    if table is None:
        table = _cached_table(net.degree, float(epsilon))
    out = np.empty_like(state)
    _kernels.step(state, net.adjacency, table, rng.random(net.n_neurons, dtype=np.float32), out)
    return out


@dataclass
class CoarseObservables:
    """Activation density and directed pair (optionally triple) densities."""

    p: float
    rho11: float
    rho10: float
    rho01: float
    rho00: float
    triples: np.ndarray | None = None

    def fast_vector(self):
        """Pair densities followed by the triple classes when present."""
        v = [self.rho11, self.rho10, self.rho01, self.rho00]
        if self.triples is not None:
            v.extend(self.triples.tolist())
        return np.array(v)


@dataclass
class Trajectory:
    """Observables recorded at ``t = 0, 1, ..., steps``."""

    t: np.ndarray
    p: np.ndarray
    rho11: np.ndarray
    rho10: np.ndarray
    rho01: np.ndarray
    rho00: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "p", "rho11", "rho10", "rho00"])
            for row in zip(self.t, self.p, self.rho11, self.rho10, self.rho00):
                w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def evolve(state, net, epsilon, steps, rng, record=False):
    """Apply :func:`synchronous_step` ``steps`` times.

    Returns the final state, or ``(state, Trajectory)`` when ``record`` is
    true.  With the same ``rng`` this draws exactly the variates of ``steps``
    consecutive :func:`synchronous_step` calls.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    cur = _as_state(state, net).copy()
    if steps and not np.any(cur):
        # absorbing; still consume the variates so the stream stays aligned
        for _ in range(steps):
            rng.random(net.n_neurons, dtype=np.float32)
        return (cur, _flat_trajectory(cur, net, steps)) if record else cur
    table = _cached_table(net.degree, float(epsilon))
    if not record:
        # variates drawn in blocks of whole steps, same order as per-step draws
        rows = max(1, _BLOCK_VARIATES // net.n_neurons)
        buf = np.empty_like(cur)
        done = 0
        while done < steps:
            u = rng.random((min(rows, steps - done), net.n_neurons), dtype=np.float32)
            res = _kernels.run(cur, net.adjacency, table, u, buf)
            if res is buf:
                cur, buf = buf, cur
            done += u.shape[0]
        return cur
    nxt = np.empty_like(cur)
    rows = [_pair_row(cur, net)]
    for _ in range(steps):
        _kernels.step(cur, net.adjacency, table, rng.random(net.n_neurons, dtype=np.float32), nxt)
        cur, nxt = nxt, cur
        rows.append(_pair_row(cur, net))
    arr = np.array(rows)
    traj = Trajectory(np.arange(steps + 1), *arr.T)
    return cur, traj


def _flat_trajectory(state, net, steps):
    row = np.array(_pair_row(state, net))
    arr = np.tile(row, (steps + 1, 1))
    return Trajectory(np.arange(steps + 1), *arr.T)


def _pair_row(state, net):
    p = density(state)
    return (p, *pair_densities(state, net))


def density(state):
    """Fraction of active neurons."""
    state = np.asarray(state)
    if state.size == 0:
        raise ValueError("empty state")
    return int(np.count_nonzero(state)) / state.size


def pair_densities(state, net):
    """Directed-link densities ``(rho11, rho10, rho01, rho00)`` over all N*d links."""
    state = _as_state(state, net)
    counts = _kernels.pair_counts(state, net.adjacency)
    total = net.n_neurons * net.degree
    return tuple(c / total for c in counts)


def triple_densities(state, net):
    """Densities of ordered length-2 paths, classes in :data:`TRIPLE_CLASSES` order."""
    state = _as_state(state, net)
    d = net.degree
    counts = _kernels.triple_counts(state, net.adjacency)
    return counts / (net.n_neurons * d * (d - 1))


def observables(state, net, triples=False):
    """:class:`CoarseObservables` of a single state."""
    rho = pair_densities(state, net)
    tri = triple_densities(state, net) if triples else None
    return CoarseObservables(density(state), *rho, triples=tri)
