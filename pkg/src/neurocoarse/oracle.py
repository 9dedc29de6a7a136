"""Exact references for tiny networks and the binomial mean-field map.

For ``N <= 12`` the synchronous dynamics is a Markov chain on ``2^N``
states whose transition matrix can be written down directly: given the old
state every neuron flips independently, so each row is a product
distribution over flip patterns.  State ``s`` is encoded as the integer
``sum_i s_i 2^i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from . import _rng
from .graph import generate_regular_graph, ring_network
from .lifting import active_count, random_lift
from .micro import flip_table, synchronous_step

__all__ = [
    "MAX_EXACT_NEURONS",
    "ExactChain",
    "exact_transition_matrix",
    "exact_density_evolution",
    "lift_distribution",
    "state_index",
    "state_bits",
    "mean_field_map",
    "mean_field_fixed_points",
    "one_step_chi_square",
    "mc_density_evolution",
    "CheckResult",
    "equivalence_suite",
]

MAX_EXACT_NEURONS = 12


def state_index(state):
    """Integer code of a 0/1 state vector (neuron ``i`` is bit ``i``)."""
    state = np.asarray(state, dtype=np.int64)
    return int(np.sum(state << np.arange(state.size)))


def state_bits(index, n):
    return ((int(index) >> np.arange(n)) & 1).astype(np.uint8)


def _all_states(n):
    return ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.int64)


@dataclass(frozen=True)
class ExactChain:
    """Row-stochastic ``2^n x 2^n`` transition matrix of one synchronous step."""

    n: int
    epsilon: float
    matrix: np.ndarray

    @property
    def densities(self):
        """Density of every state, indexed by state code."""
        return _all_states(self.n).sum(axis=1) / self.n

    def row(self, state):
        return self.matrix[state_index(state)]


def exact_transition_matrix(net, epsilon):
    """Exact one-step transition matrix of ``net`` at noise ``epsilon``.

    Raises
    ------
    ValueError
        If ``net`` has more than ``MAX_EXACT_NEURONS`` neurons.
    """
    n = net.n_neurons
    if n > MAX_EXACT_NEURONS:
        raise ValueError(f"exact chain limited to N <= {MAX_EXACT_NEURONS}, got N = {n}")
    bits = _all_states(n)
    s = bits.shape[0]
    k = bits[:, net.adjacency].sum(axis=2)
    flip = flip_table(net.degree, epsilon)[bits, k]
    # flip-pattern distribution: kron over neurons, neuron 0 least significant
    pattern = np.ones((s, 1))
    for i in range(n - 1, -1, -1):
        f = flip[:, i]
        pattern = (pattern[:, :, None] * np.stack([1 - f, f], axis=1)[:, None, :]).reshape(s, -1)
    codes = np.arange(s)
    matrix = pattern[codes[:, None], codes[:, None] ^ codes[None, :]]
    matrix.setflags(write=False)
    return ExactChain(n, float(epsilon), matrix)


def lift_distribution(n, p):
    """Uniform distribution over states with ``active_count(p, n)`` active neurons."""
    m = active_count(p, n)
    dist = (_all_states(n).sum(axis=1) == m).astype(float)
    return dist / dist.sum()


def exact_density_evolution(chain, initial, t):
    """Expected density ``E[p](k)`` for ``k = 0..t``.

    ``initial`` is a distribution over the ``2^n`` state codes, or a single
    0/1 state of length ``n`` (point mass).
    """
    initial = np.asarray(initial, dtype=float)
    if initial.shape == (chain.n,):
        dist = np.zeros(2 ** chain.n)
        dist[state_index(initial.astype(np.int64))] = 1.0
    else:
        dist = initial
        if abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError("initial distribution must sum to 1")
    rho = chain.densities
    out = [dist @ rho]
    for _ in range(t):
        dist = dist @ chain.matrix
        out.append(dist @ rho)
    return np.array(out)


def mean_field_map(p, epsilon, d):
    """One step of the density under independent (binomial) neighborhoods."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    table = flip_table(d, epsilon)
    weights = stats.binom.pmf(np.arange(d + 1), d, p)
    return float((1 - p) * weights @ table[0] + p * weights @ (1 - table[1]))


def mean_field_fixed_points(epsilon, d, grid=2001):
    """All roots of ``mean_field_map(p) = p`` on [0, 1], located by sign changes."""
    ps = np.linspace(0.0, 1.0, grid)
    g = np.array([mean_field_map(p, epsilon, d) - p for p in ps])
    roots = [0.0] if g[0] == 0 else []
    for a, b, ga, gb in zip(ps[:-1], ps[1:], g[:-1], g[1:]):
        if ga == 0 or ga * gb >= 0:
            continue
        roots.append(optimize.brentq(lambda x: mean_field_map(x, epsilon, d) - x, a, b, xtol=1e-14))
    return np.array(roots)


def one_step_chi_square(net, epsilon, state, samples, seed=0, step=synchronous_step, chain=None):
    """Chi-square test of Monte Carlo one-step outcomes against the exact row.

    ``step(state, net, epsilon, rng)`` is called ``samples`` times with one
    generator.  Bins with expected count below 5 are pooled.  An outcome of
    exact probability zero gives a p-value of 0.

    Returns
    -------
    (statistic, p_value, dof)
    """
    chain = chain or exact_transition_matrix(net, epsilon)
    row = chain.row(state)
    rng = _rng.stream(seed)
    counts = np.zeros(row.size)
    for _ in range(samples):
        counts[state_index(step(state, net, epsilon, rng))] += 1
    if np.any(counts[row == 0] > 0):
        return float("inf"), 0.0, 0
    expected = samples * row
    big = expected >= 5
    obs = list(counts[big])
    exp = list(expected[big])
    if (~big).any() and expected[~big].sum() > 0:
        obs.append(counts[~big].sum())
        exp.append(expected[~big].sum())
    if len(obs) < 2:
        return 0.0, 1.0, 0
    obs, exp = np.array(obs), np.array(exp)
    exp *= obs.sum() / exp.sum()
    res = stats.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue), len(obs) - 1


def mc_density_evolution(net, epsilon, p0, steps, samples, seed=0):
    """Mean and standard error of ``p(t)``, ``t = 0..steps``, from uniform lifts at ``p0``."""
    traj = np.empty((samples, steps + 1))
    for r in range(samples):
        rng = _rng.stream(seed, r)
        s = random_lift(p0, net, rng)
        traj[r, 0] = s.mean()
        for t in range(steps):
            s = synchronous_step(s, net, epsilon, rng)
            traj[r, t + 1] = s.mean()
    return traj.mean(axis=0), traj.std(axis=0, ddof=1) / np.sqrt(samples)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def equivalence_suite(samples=100_000, density_samples=20_000, epsilons=(0.1, 0.3), alpha=0.01,
                      seed=0, step=synchronous_step):
    """Compare the simulator with the exact chain on rings (N = 4, 8) and an N = 8, d = 3 graph.

    For every network and epsilon: a chi-square test of one-step outcomes
    from a fixed mixed state, and ``E[p](t)``, ``t <= 5``, from uniform lifts
    at ``p = 0.5`` against the exact evolution (3 standard errors).
    """
    nets = [("ring4", ring_network(4)), ("ring8", ring_network(8)),
            ("cubic8", generate_regular_graph(8, 3, seed=seed))]
    results = []
    combo = 0
    for name, net in nets:
        state = np.zeros(net.n_neurons, dtype=np.uint8)
        state[::2] = 1
        state[1] = 1
        for eps in epsilons:
            combo += 1
            chain = exact_transition_matrix(net, eps)
            stat, pval, dof = one_step_chi_square(net, eps, state, samples, _rng.subseed(seed, combo, 1),
                                                  step, chain)
            results.append(CheckResult(f"chi2 {name} eps={eps}", pval > alpha,
                                       f"chi2={stat:.1f} dof={dof} p={pval:.3g}"))
            exact = exact_density_evolution(chain, lift_distribution(net.n_neurons, 0.5), 5)
            mean, se = mc_density_evolution(net, eps, 0.5, 5, density_samples, _rng.subseed(seed, combo, 2))
            z = np.abs(mean - exact) / np.where(se > 0, se, np.inf)
            results.append(CheckResult(f"E[p](t) {name} eps={eps}", bool(np.all(z <= 3)),
                                       f"max |z| = {z.max():.2f}"))
    return results
