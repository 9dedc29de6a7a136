"""Lifting: microscopic states consistent with prescribed coarse variables.

``random_lift`` places the active neurons uniformly.  ``anneal_to_moments``
then rearranges them by simulated annealing so that the pair (and optionally
triple) densities hit a target, swapping one active with one inactive neuron
per move so the density never changes.  ``converge_to_manifold`` alternates
short bursts of the microscopic simulator with annealing back to the
prescribed density, which drives the ensemble onto the slow manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, _rng
from .micro import CoarseObservables, evolve, observables, _check_epsilon

__all__ = [
    "AnnealSchedule",
    "ManifoldLiftConfig",
    "ManifoldLift",
    "active_count",
    "random_lift",
    "anneal_to_moments",
    "converge_to_manifold",
    "replay_lift",
    "fast_target",
]

_BLOCK = 4096


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling schedule for the moment-matching anneal.

    ``initial_temp=None`` starts at one tenth of the initial pseudoenergy.
    Annealing stops as soon as the pseudoenergy drops to ``tolerance``.
    """

    initial_temp: float | None = None
    cooling_factor: float = 0.95
    sweeps: int = 20000
    swaps_per_sweep: int = 20
    tolerance: float = 1e-3

    def __post_init__(self):
        if self.initial_temp is not None and not self.initial_temp > 0:
            raise ValueError("initial_temp must be positive")
        if not 0.0 < self.cooling_factor < 1.0:
            raise ValueError("cooling_factor must lie in (0, 1)")
        if self.sweeps < 1 or self.swaps_per_sweep < 1:
            raise ValueError("sweeps and swaps_per_sweep must be positive")


@dataclass(frozen=True)
class ManifoldLiftConfig:
    """Settings of the burst-and-restrict loop."""

    dT: int = 1
    k_max: int = 8
    moment_tol: float = 2e-3
    use_triples: bool = False
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)

    def __post_init__(self):
        if self.dT < 1 or self.k_max < 1:
            raise ValueError("dT and k_max must be at least 1")
        if not self.moment_tol > 0:
            raise ValueError("moment_tol must be positive")


@dataclass
class ManifoldLift:
    """Ensemble returned by :func:`converge_to_manifold`.

    Attributes
    ----------
    states : np.ndarray
        ``(copies, N)`` uint8 array; every row has exactly
        ``active_count(p_target, N)`` active neurons.
    fast_variables : np.ndarray
        Ensemble-mean fast vector of ``states``: ``(rho11, rho10, rho01,
        rho00)`` followed by the triple classes when ``use_triples``.
    iterations : int
    converged : bool
    history : list of np.ndarray
        Ensemble-mean fast vector of the initial lift and after every burst.
    residuals : np.ndarray
        Final pseudoenergy of each copy's last anneal.
    target : np.ndarray
        Anneal target of the last iteration (``fast_target`` layout).
    targets : list of np.ndarray
        Anneal target of every iteration; :func:`replay_lift` uses them to
        bring further copies through the same sequence of bursts.
    """

    states: np.ndarray
    fast_variables: np.ndarray
    iterations: int
    converged: bool
    history: list
    residuals: np.ndarray
    target: np.ndarray
    targets: list = field(default_factory=list)


def active_count(p, n):
    """Number of active neurons used to represent density ``p`` on ``n`` neurons."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {p}")
    return int(np.floor(p * n + 0.5))


def random_lift(p_target, net, rng):
    """State with ``active_count(p_target, N)`` active neurons placed uniformly.

    The neurons with the ``m`` smallest of ``N`` uniform keys are activated,
    so lifts at different densities from identically seeded generators are
    nested.
    """
    n = net.n_neurons
    m = active_count(p_target, n)
    keys = rng.random(n)
    state = np.zeros(n, dtype=np.uint8)
    if m == n:
        state[:] = 1
    elif m > 0:
        state[np.argpartition(keys, m - 1)[:m]] = 1
    return state


def _independent_moments(p):
    """Pair ``rho11`` and the six triple classes for independently placed states."""
    q = 1.0 - p
    return np.array([p * p, q ** 3, 2 * p * q * q, p * q * q, 2 * p * p * q, p * p * q, p ** 3])


def fast_target(obs, p, use_triples):
    """Annealing target at density ``p`` from observables measured at ``obs.p``.

    A burst moves the density as well as the fast variables, so the measured
    moments are transferred to ``p`` by keeping their ratio to the
    independent-placement value fixed.  Only ``rho11`` is needed at pair
    level: with the density fixed, ``rho11 + rho10 = p`` and
    ``rho10 = rho01`` fix the rest.  ``rho11`` is clipped to the feasible
    range ``[max(0, 2p-1), p]``.
    """
    measured = np.concatenate([[obs.rho11], obs.triples if use_triples else np.zeros(6)])
    here = _independent_moments(p)
    there = _independent_moments(obs.p)
    ratio = np.divide(measured, there, out=np.ones(7), where=there > 0)
    target = ratio * here
    target[0] = min(max(target[0], max(0.0, 2 * p - 1)), p)
    return target if use_triples else target[:1]


def _fast_vector(state, net, use_triples):
    return observables(state, net, triples=use_triples).fast_vector()


def anneal_to_moments(state, net, target, schedule=None, rng=None):
    """Rearrange ``state`` at fixed density toward target fast variables.

    Parameters
    ----------
    state : np.ndarray
        Starting microscopic state (not modified).
    net : Network
    target : array_like
        ``[rho11]`` or ``[rho11, *triples]`` (seven entries, triple classes in
        ``TRIPLE_CLASSES`` order).
    schedule : AnnealSchedule, optional
    rng : np.random.Generator

    Returns
    -------
    (np.ndarray, float)
        The annealed state and its pseudoenergy, the Euclidean distance
        between its fast variables and ``target``.  A residual above
        ``schedule.tolerance`` means the budget ran out; the caller decides
        whether that is acceptable.
    """
    if schedule is None:
        schedule = AnnealSchedule()
    if rng is None:
        raise ValueError("rng is required")
    target = np.asarray(target, dtype=np.float64).ravel()
    if target.size == 1:
        use_triples = False
    elif target.size == 7:
        use_triples = True
    else:
        raise ValueError("target must hold rho11 or rho11 plus six triple classes")
    state = np.ascontiguousarray(state, dtype=np.uint8).copy()
    n, d = net.n_neurons, net.degree
    adj = net.adjacency
    k, on_list, off_list, pos, n11 = _kernels.anneal_setup(state, adj)
    counts = np.zeros(7, dtype=np.int64)
    counts[0] = n11
    if use_triples:
        counts[1:] = _kernels.triple_counts(state, adj)
    e0 = _residual(counts, target, n, d, use_triples)
    if on_list.size == 0 or off_list.size == 0 or e0 <= schedule.tolerance:
        return state, e0
    temp0 = schedule.initial_temp if schedule.initial_temp is not None else 0.1 * e0
    budget = schedule.sweeps * schedule.swaps_per_sweep
    done = 0
    e = e0
    while done < budget and e > schedule.tolerance:
        size = min(budget - done, _BLOCK)
        pick_on = rng.integers(0, on_list.size, size=size)
        pick_off = rng.integers(0, off_list.size, size=size)
        u = rng.random(size)
        e, used, _ = _kernels.anneal_block(
            state, adj, k, on_list, off_list, pos, counts, target, use_triples,
            temp0, schedule.cooling_factor, schedule.swaps_per_sweep, done,
            pick_on, pick_off, u, schedule.tolerance,
        )
        done += size
    return state, float(e)


def _residual(counts, target, n, d, use_triples):
    e = (counts[0] / (n * d) - target[0]) ** 2
    if use_triples:
        e += np.sum((counts[1:] / (n * d * (d - 1)) - target[1:]) ** 2)
    return float(np.sqrt(e))


def _restore_density(state, m, rng, before=None):
    """Flip randomly chosen neurons until exactly ``m`` are active.

    With ``before`` (the state the burst started from) the flips are taken
    first among the neurons the burst itself switched the same way, which
    undoes part of the burst instead of planting isolated defects.
    """
    state = state.copy()
    cur = int(np.count_nonzero(state))
    if cur == m:
        return state
    value = 1 if cur > m else 0
    excess = abs(cur - m)
    pool = np.flatnonzero(state == value)
    if before is not None:
        moved = np.flatnonzero((state == value) & (before != value))
        if moved.size >= excess:
            pool = moved
    state[rng.choice(pool, excess, replace=False)] = 1 - value
    return state


def _per_copy(nets, copies):
    if isinstance(nets, (list, tuple)):
        if len(nets) != copies:
            raise ValueError("need one network per copy")
        return list(nets)
    return [nets] * copies


def converge_to_manifold(p_target, epsilon, net, copies, cfg=None, seed=0,
                         copy_offset=0, initial_rho11=None):
    """Lift ``p_target`` onto the slow manifold by bursts and annealing.

    Each copy is lifted uniformly (then annealed to ``initial_rho11`` if
    given).  Every outer iteration evolves all copies ``cfg.dT`` steps,
    averages their fast variables over the ensemble, resets every copy to the
    prescribed number of active neurons and anneals it toward that average.
    The loop stops once the ensemble averages of two successive bursts agree
    to ``cfg.moment_tol`` in the sup norm, or after ``cfg.k_max`` iterations.

    Parameters
    ----------
    net : Network or sequence of Network
        Shared network, or one network per copy.
    seed : int
        Master seed.  Copy ``i`` draws from streams keyed by
        ``(seed, copy_offset + i, phase, iteration)``.
    copy_offset : int
        Global index of the first copy, for processing large ensembles in
        chunks.
    """
    if copies < 1:
        raise ValueError("copies must be at least 1")
    _check_epsilon(epsilon)
    cfg = cfg or ManifoldLiftConfig()
    nets = _per_copy(net, copies)
    n = nets[0].n_neurons
    m = active_count(p_target, n)
    tri = cfg.use_triples
    idx = [copy_offset + i for i in range(copies)]

    states = np.empty((copies, n), dtype=np.uint8)
    residuals = np.zeros(copies)
    for i in range(copies):
        states[i], residuals[i] = _initial_state(p_target, nets[i], cfg, seed, idx[i], initial_rho11)
    obs0 = [observables(s, g, triples=tri) for s, g in zip(states, nets)]
    prev = np.mean([o.fast_vector() for o in obs0], axis=0)
    target = fast_target(_mean_observables(obs0), p_target, tri)
    history = [prev]
    if m in (0, n):
        return ManifoldLift(states, prev, 1, True, history, residuals, target)

    converged = False
    targets = []
    k = 0
    for k in range(1, cfg.k_max + 1):
        bursts = []
        obs = []
        for i in range(copies):
            b = evolve(states[i], nets[i], epsilon, cfg.dT, _rng.stream(seed, idx[i], _rng.BURST, k))
            bursts.append(b)
            obs.append(observables(b, nets[i], triples=tri))
        cur = np.mean([o.fast_vector() for o in obs], axis=0)
        target = fast_target(_mean_observables(obs), p_target, tri)
        targets.append(target)
        for i in range(copies):
            states[i], residuals[i] = _settle(states[i], bursts[i], nets[i], m, target, cfg, seed, idx[i], k)
        history.append(cur)
        if np.max(np.abs(cur - prev)) < cfg.moment_tol:
            converged = True
            break
        prev = cur
    fast = np.mean([_fast_vector(s, g, tri) for s, g in zip(states, nets)], axis=0)
    return ManifoldLift(states, fast, k, converged, history, residuals, target, targets)


def _initial_state(p_target, net, cfg, seed, index, initial_rho11):
    state = random_lift(p_target, net, _rng.stream(seed, index, _rng.LIFT))
    m = int(np.count_nonzero(state))
    if initial_rho11 is None or m in (0, net.n_neurons):
        return state, 0.0
    return anneal_to_moments(state, net, [initial_rho11], cfg.schedule, _rng.stream(seed, index, _rng.ANNEAL, 0))


def _settle(before, burst, net, m, target, cfg, seed, index, k):
    """Reset a burst to ``m`` active neurons and anneal it to ``target``."""
    rng = _rng.stream(seed, index, _rng.ANNEAL, k)
    return anneal_to_moments(_restore_density(burst, m, rng, before), net, target, cfg.schedule, rng)


def replay_lift(p_target, epsilon, net, targets, cfg=None, seed=0, index=0, initial_rho11=None):
    """Lift one further copy through a recorded sequence of anneal targets.

    Copy ``index`` goes through exactly the operations it would have seen
    inside :func:`converge_to_manifold`: initial lift, then for every entry of
    ``targets`` a burst, a density reset and an anneal.  Only the targets come
    from elsewhere (typically ``ManifoldLift.targets`` of a smaller pilot
    ensemble), so large ensembles never need to be held in memory at once.

    Returns
    -------
    (np.ndarray, float)
        The state and the residual of its last anneal.
    """
    _check_epsilon(epsilon)
    cfg = cfg or ManifoldLiftConfig()
    state, res = _initial_state(p_target, net, cfg, seed, index, initial_rho11)
    m = int(np.count_nonzero(state))
    if m in (0, net.n_neurons):
        return state, res
    for k, target in enumerate(targets, start=1):
        b = evolve(state, net, epsilon, cfg.dT, _rng.stream(seed, index, _rng.BURST, k))
        state, res = _settle(state, b, net, m, target, cfg, seed, index, k)
    return state, res


def _mean_observables(obs):
    arr = np.array([[o.p, o.rho11, o.rho10, o.rho01, o.rho00] for o in obs]).mean(axis=0)
    tri = None
    if obs[0].triples is not None:
        tri = np.mean([o.triples for o in obs], axis=0)
    return CoarseObservables(*arr, triples=tri)
