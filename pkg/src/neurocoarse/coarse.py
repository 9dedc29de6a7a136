"""Coarse timestepper: lift, evolve for T steps, restrict by ensemble averaging."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _rng
from .graph import generate_regular_graph
from .lifting import (
    AnnealSchedule,
    ManifoldLiftConfig,
    active_count,
    anneal_to_moments,
    converge_to_manifold,
    random_lift,
    replay_lift,
)
from .micro import CoarseObservables, _check_epsilon, evolve, observables

__all__ = [
    "EnsembleConfig",
    "CoarseResult",
    "CoarseMap",
    "LiftWarning",
    "coarse_timestep",
    "PortraitSeries",
    "phase_portrait",
    "write_portrait_csv",
]


class LiftWarning(UserWarning):
    """The manifold lift stopped before its convergence criterion was met."""


@dataclass(frozen=True)
class EnsembleConfig:
    """How an ensemble of realizations is built and evolved.

    Attributes
    ----------
    copies : int
        Number of realizations M.
    horizon_T : int
        Steps evolved after lifting.
    master_seed : int
        Copy ``i`` uses streams keyed by ``(master_seed, i, ...)``.
    lift_mode : {"manifold", "uniform"}
    manifold : ManifoldLiftConfig
        Used when ``lift_mode == "manifold"``.
    graph_policy : {"shared", "fresh"}
        ``"fresh"`` draws a new graph for every copy (same N and d).
    pilot_copies : int or None
        Copies whose ensemble averages set the anneal targets of the
        burst-and-anneal loop.  The remaining copies go through the same
        bursts and anneals with the pilot's targets (see
        :func:`~neurocoarse.lifting.replay_lift`).  ``None`` averages over
        the whole ensemble.
    """

    copies: int = 10000
    horizon_T: int = 5
    master_seed: int = 0
    lift_mode: str = "manifold"
    manifold: ManifoldLiftConfig = field(default_factory=ManifoldLiftConfig)
    graph_policy: str = "shared"
    pilot_copies: int | None = 200

    def __post_init__(self):
        if self.copies < 1 or self.horizon_T < 1:
            raise ValueError("copies and horizon_T must be at least 1")
        if self.lift_mode not in ("manifold", "uniform"):
            raise ValueError(f"unknown lift_mode {self.lift_mode!r}")
        if self.graph_policy not in ("shared", "fresh"):
            raise ValueError(f"unknown graph_policy {self.graph_policy!r}")
        if self.pilot_copies is not None and self.pilot_copies < 1:
            raise ValueError("pilot_copies must be at least 1")


@dataclass
class CoarseResult:
    """Restriction of an evolved ensemble.

    ``std_error`` is the sample standard deviation of ``per_copy_p`` over
    ``sqrt(copies)``.
    """

    mean_p: float
    std_error: float
    per_copy_p: np.ndarray
    observables_T: CoarseObservables
    p0: float
    epsilon: float
    horizon_T: int
    copies: int
    seed: int
    lift_converged: bool = True

    def __float__(self):
        return float(self.mean_p)

    def to_record(self):
        return {
            "p0": self.p0,
            "epsilon": self.epsilon,
            "T": self.horizon_T,
            "copies": self.copies,
            "mean_p": self.mean_p,
            "std_error": self.std_error,
            "seed": self.seed,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_record(), fh, indent=2)


def _networks(net, cfg):
    if cfg.graph_policy == "shared":
        return [net] * cfg.copies
    return [
        generate_regular_graph(net.n_neurons, net.degree, _rng.subseed(cfg.master_seed, _rng.GRAPH, i))
        for i in range(cfg.copies)
    ]


def _lifted(p0, epsilon, nets, cfg):
    """Yield ``(copy_index, state)`` for every copy, plus a convergence flag.

    The first item is the flag; states follow in copy order so that large
    ensembles never sit in memory at once.
    """
    seed = cfg.master_seed
    if cfg.lift_mode == "uniform":
        yield True
        for i, g in enumerate(nets):
            yield i, random_lift(p0, g, _rng.stream(seed, i, _rng.LIFT))
        return
    n_pilot = cfg.copies if cfg.pilot_copies is None else min(cfg.pilot_copies, cfg.copies)
    pilot_nets = nets[:n_pilot]
    shared = pilot_nets[0] if all(g is pilot_nets[0] for g in pilot_nets) else pilot_nets
    lift = converge_to_manifold(p0, epsilon, shared, n_pilot, cfg.manifold, seed)
    yield lift.converged
    for i in range(n_pilot):
        yield i, lift.states[i]
    del lift.states
    for i in range(n_pilot, cfg.copies):
        state, _ = replay_lift(p0, epsilon, nets[i], lift.targets, cfg.manifold, seed, i)
        yield i, state


def coarse_timestep(p0, epsilon, net, cfg=None):
    """Estimate ``Phi_T(p0, epsilon)`` from an ensemble of realizations.

    Deterministic given the inputs and ``cfg.master_seed``.  Evaluations at
    nearby ``p0`` or ``epsilon`` with the same seed share their random
    numbers phase by phase, which keeps finite differences smooth.
    """
    cfg = cfg or EnsembleConfig()
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"p0 must lie in [0, 1], got {p0}")
    _check_epsilon(epsilon)
    if active_count(p0, net.n_neurons) == 0:
        zeros = np.zeros(cfg.copies)
        return CoarseResult(0.0, 0.0, zeros, CoarseObservables(0.0, 0.0, 0.0, 0.0, 1.0),
                            p0, epsilon, cfg.horizon_T, cfg.copies, cfg.master_seed)
    nets = _networks(net, cfg)
    final_p = np.empty(cfg.copies)
    obs_sum = np.zeros(5)
    lifted = _lifted(p0, epsilon, nets, cfg)
    converged = next(lifted)
    for i, state in lifted:
        out = evolve(state, nets[i], epsilon, cfg.horizon_T, _rng.stream(cfg.master_seed, i, _rng.EVOLVE))
        o = observables(out, nets[i])
        final_p[i] = o.p
        obs_sum += (o.p, o.rho11, o.rho10, o.rho01, o.rho00)
    if not converged:
        warnings.warn(f"manifold lift did not converge at p0={p0}, epsilon={epsilon}", LiftWarning, stacklevel=2)
    se = float(np.std(final_p, ddof=1) / np.sqrt(cfg.copies)) if cfg.copies > 1 else 0.0
    mean_obs = CoarseObservables(*(obs_sum / cfg.copies))
    return CoarseResult(float(final_p.mean()), se, final_p, mean_obs, p0, epsilon,
                        cfg.horizon_T, cfg.copies, cfg.master_seed, converged)


class CoarseMap:
    """``Phi_T`` as a callable ``phi(p, epsilon, seed) -> CoarseResult``.

    Used by the fixed-point and continuation routines; ``seed`` replaces the
    configured master seed so callers control common random numbers.
    """

    def __init__(self, net, cfg=None):
        self.net = net
        self.cfg = cfg or EnsembleConfig()
        self.evaluations = 0

    def __call__(self, p, epsilon, seed=None):
        cfg = self.cfg if seed is None else replace(self.cfg, master_seed=int(seed))
        self.evaluations += 1
        return coarse_timestep(p, epsilon, self.net, cfg)


@dataclass
class PortraitSeries:
    """Ensemble-averaged trajectory from one initial pair density."""

    series_id: int
    rho11_target: float
    t: np.ndarray
    p: np.ndarray
    rho10: np.ndarray


def phase_portrait(p0, initial_rho11_targets, epsilon, net, steps, copies=500, seed=0, schedule=None):
    """Trajectories in the (p, rho10) plane from annealed initial conditions.

    Every series starts at the same density ``p0``; copy ``i`` of every series
    shares the lift and evolution streams, only the annealing differs.

    Raises
    ------
    ValueError
        If a target violates ``max(0, 2 p0 - 1) <= rho11 <= p0``.
    """
    _check_epsilon(epsilon)
    schedule = schedule or AnnealSchedule()
    m = active_count(p0, net.n_neurons)
    p_lift = m / net.n_neurons
    for r in initial_rho11_targets:
        if r > p_lift + 1e-12:
            raise ValueError(f"infeasible rho11 target {r}: rho11 <= p = {p_lift} must hold")
        if r < max(0.0, 2 * p_lift - 1) - 1e-12:
            raise ValueError(f"infeasible rho11 target {r}: rho00 = 1 - 2p + rho11 would be negative")
    base = [random_lift(p0, net, _rng.stream(seed, i, _rng.LIFT)) for i in range(copies)]
    series = []
    for sid, target in enumerate(initial_rho11_targets):
        p_sum = np.zeros(steps + 1)
        r_sum = np.zeros(steps + 1)
        worst = 0.0
        for i in range(copies):
            state, res = anneal_to_moments(base[i], net, [target], schedule,
                                           _rng.stream(seed, i, _rng.ANNEAL, sid))
            worst = max(worst, res)
            _, traj = evolve(state, net, epsilon, steps, _rng.stream(seed, i, _rng.EVOLVE), record=True)
            p_sum += traj.p
            r_sum += traj.rho10
        if worst > schedule.tolerance:
            warnings.warn(f"series {sid}: anneal residual {worst:.2e} above tolerance", LiftWarning, stacklevel=2)
        series.append(PortraitSeries(sid, float(target), np.arange(steps + 1), p_sum / copies, r_sum / copies))
    return series


def write_portrait_csv(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "t", "p", "rho10"])
        for s in series:
            for t, p, r in zip(s.t, s.p, s.rho10):
                w.writerow([s.series_id, int(t), repr(float(p)), repr(float(r))])
