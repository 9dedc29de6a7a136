"""Rare-event statistics along the coarse reaction coordinate.

Short bursts started on the slow manifold at ``p = p_node + psi`` give the
drift ``u(psi)`` and diffusion ``D(psi)`` of an effective one-dimensional
Fokker-Planck description.  From these,

    beta G(psi) = -int_0^psi u / D dpsi' + ln D(psi) + const

and the mean escape time from the metastable well is estimated by the
Kramers-type product

    tau ~ int_{well}^{barrier} exp(beta G) dpsi * int_{far side}^{barrier} exp(-beta G) / D dpsi'.

In the network model the all-off state is absorbing, so escape runs toward
smaller ``p`` and the barrier sits at ``psi < 0``; the orientation is read
off the profile rather than assumed.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import _kernels, _rng
from .coarse import EnsembleConfig, coarse_timestep
from .lifting import ManifoldLiftConfig, active_count, random_lift
from .micro import _cached_table, _check_epsilon

__all__ = [
    "DriftDiffusionProfile",
    "EscapeEstimate",
    "BarrierWarning",
    "NoEscapeError",
    "model_stepper",
    "default_psi_grid",
    "estimate_drift_diffusion",
    "free_energy",
    "kramers_escape_time",
    "nested_mfpt",
    "direct_mfpt",
    "SyntheticDiffusion",
    "ou_surrogate",
    "double_well_surrogate",
    "simulate_first_passage",
]


class BarrierWarning(UserWarning):
    """Barrier below 2 (in units of beta G); the Kramers estimate is unreliable."""


class NoEscapeError(RuntimeError):
    """Every direct run hit ``max_steps`` without escaping."""


@dataclass
class DriftDiffusionProfile:
    """Drift and diffusion on a grid of ``psi = p - p_node``.

    ``free_energy`` is ``None`` until :func:`free_energy` fills it.
    ``floored`` marks grid points whose sample variance was zero.
    """

    p_node: float
    psi_grid: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray
    copies: int
    delta_T: int
    drift_se: np.ndarray | None = None
    floored: np.ndarray | None = None
    free_energy: np.ndarray | None = None
    epsilon: float | None = None

    def __post_init__(self):
        self.psi_grid = np.asarray(self.psi_grid, dtype=float)
        if self.psi_grid.ndim != 1 or self.psi_grid.size < 3:
            raise ValueError("psi_grid must be a vector of at least 3 points")
        if np.any(np.diff(self.psi_grid) <= 0):
            raise ValueError("psi_grid must be strictly increasing")
        if np.any(np.asarray(self.diffusion) <= 0):
            raise ValueError("diffusion must be strictly positive")

    @property
    def p(self):
        return self.p_node + self.psi_grid

    def to_csv(self, path):
        fe = self.free_energy if self.free_energy is not None else np.full(self.psi_grid.size, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["psi", "p", "drift", "diffusion", "free_energy"])
            for row in zip(self.psi_grid, self.p, self.drift, self.diffusion, fe):
                w.writerow([repr(float(x)) for x in row])


@dataclass
class EscapeEstimate:
    """Mean escape time in time steps.

    For ``method == "direct"`` ``times`` holds the escape step of every
    uncensored run and ``censored`` counts the runs that hit ``max_steps``.
    """

    tau: float
    method: str
    psi_stable: float | None = None
    psi_unstable: float | None = None
    epsilon: float | None = None
    censored: int = 0
    times: np.ndarray | None = None
    std_error: float | None = None
    barrier: float | None = None

    def to_record(self):
        return {
            "epsilon": self.epsilon,
            "tau": self.tau,
            "method": self.method,
            "psi_stable": self.psi_stable,
            "psi_unstable": self.psi_unstable,
            "censored": self.censored,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_record(), fh, indent=2)


def model_stepper(net, epsilon, ens=None):
    """Burst generator for the network model.

    Returns ``stepper(p, copies, delta_T, seed) -> (p_start, p_end)`` running
    :func:`~neurocoarse.coarse.coarse_timestep` with ``horizon_T = delta_T``;
    ``p_start`` is the density actually lifted, ``round(p N) / N``.
    """
    _check_epsilon(epsilon)
    ens = ens or EnsembleConfig()

    def stepper(p, copies, delta_T, seed):
        cfg = replace(ens, copies=copies, horizon_T=delta_T, master_seed=seed)
        res = coarse_timestep(p, epsilon, net, cfg)
        return active_count(p, net.n_neurons) / net.n_neurons, res.per_copy_p

    return stepper


def default_psi_grid(p_node, p_unstable, points=41, below=0.3, above=0.6, p_min=0.01):
    """Equally spaced grid from past the barrier to beyond the well.

    With ``w = |p_unstable - p_node|`` the grid spans ``w * below`` beyond
    the barrier and ``w * above`` on the far side of the well, clipped so
    that ``p`` stays in ``[p_min, 1]``.  Zero is always a grid point.
    """
    w = p_unstable - p_node
    if w == 0:
        raise ValueError("p_unstable must differ from p_node")
    lo, hi = sorted([w * (1 + below), -w * above])
    lo = max(lo, p_min - p_node)
    hi = min(hi, 1.0 - p_node)
    grid = np.linspace(lo, hi, points)
    return np.union1d(grid, [0.0])


def estimate_drift_diffusion(p_node, psi_grid, epsilon=None, net=None, delta_T=1, copies=1000,
                             lift=None, seed=0, stepper=None):
    """Drift and diffusion from bursts of ``delta_T`` steps at every grid point.

    ``u = mean(dpsi) / delta_T`` and ``D = var(dpsi) / (2 delta_T)``.  Without
    an explicit ``stepper`` the network model is used, lifted onto the slow
    manifold with ``lift``.  Every grid point uses the same ``seed``.
    """
    if delta_T < 1 or copies < 2:
        raise ValueError("need delta_T >= 1 and copies >= 2")
    psi_grid = np.asarray(psi_grid, dtype=float)
    p = p_node + psi_grid
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p_node + psi must lie in [0, 1] on the whole grid")
    if stepper is None:
        if net is None or epsilon is None:
            raise ValueError("either stepper or (net, epsilon) is required")
        stepper = model_stepper(net, epsilon, EnsembleConfig(manifold=lift or ManifoldLiftConfig()))
    drift = np.empty(psi_grid.size)
    diff = np.empty(psi_grid.size)
    se = np.empty(psi_grid.size)
    floored = np.zeros(psi_grid.size, dtype=bool)
    for j, pj in enumerate(p):
        start, end = stepper(float(pj), copies, delta_T, seed)
        dpsi = np.asarray(end, dtype=float) - start
        drift[j] = dpsi.mean() / delta_T
        var = dpsi.var(ddof=1)
        se[j] = math.sqrt(var / copies) / delta_T
        if var <= 0:
            floored[j] = True
            var = 2 * delta_T * np.finfo(float).tiny
        diff[j] = var / (2 * delta_T)
    if floored.any():
        warnings.warn(f"zero variance at {int(floored.sum())} grid point(s); diffusion floored",
                      RuntimeWarning, stacklevel=2)
    return DriftDiffusionProfile(p_node, psi_grid, drift, diff, copies, delta_T, se, floored,
                                 epsilon=epsilon)


def _local_extrema(g):
    inner = np.arange(1, g.size - 1)
    minima = inner[(g[inner] < g[inner - 1]) & (g[inner] <= g[inner + 1])]
    maxima = inner[(g[inner] > g[inner - 1]) & (g[inner] >= g[inner + 1])]
    return minima, maxima


def _well_index(g):
    minima, _ = _local_extrema(g)
    if minima.size:
        return int(minima[np.argmin(g[minima])])
    return int(np.argmin(g))


def free_energy(profile):
    """Return a copy of ``profile`` with ``free_energy`` filled in.

    ``psi = 0`` is inserted by linear interpolation if the grid lacks it.
    The constant makes ``beta G`` vanish at the well (the lowest interior
    minimum, or the global minimum if there is none).
    """
    psi, u, d = profile.psi_grid, np.asarray(profile.drift, float), np.asarray(profile.diffusion, float)
    se, fl = profile.drift_se, profile.floored
    if not np.any(psi == 0.0):
        if not psi[0] < 0.0 < psi[-1]:
            raise ValueError("psi_grid must bracket 0")
        k = int(np.searchsorted(psi, 0.0))
        u = np.insert(u, k, np.interp(0.0, psi, u))
        d = np.insert(d, k, np.interp(0.0, psi, d))
        if se is not None:
            se = np.insert(se, k, np.interp(0.0, psi, se))
        if fl is not None:
            fl = np.insert(fl, k, False)
        psi = np.insert(psi, k, 0.0)
    integral = cumulative_trapezoid(u / d, psi, initial=0.0)
    integral -= integral[np.flatnonzero(psi == 0.0)[0]]
    g = -integral + np.log(d)
    g -= g[_well_index(g)]
    return replace(profile, psi_grid=psi, drift=u, diffusion=d, drift_se=se, floored=fl, free_energy=g)


def _well_and_barrier(psi, g):
    minima, maxima = _local_extrema(g)
    if minima.size == 0:
        raise ValueError("beta G has no interior minimum on the grid (no metastable well)")
    if maxima.size == 0:
        raise ValueError("beta G has no interior maximum on the grid (no barrier); extend the grid")
    i_s = int(minima[np.argmin(g[minima])])
    i_u = int(maxima[np.argmax(g[maxima])])
    return i_s, i_u


def _log_trapezoid(log_f, x):
    """``log(trapezoid(exp(log_f), x))`` without overflow."""
    m = np.max(log_f)
    return m + math.log(trapezoid(np.exp(log_f - m), x))


def kramers_escape_time(profile):
    """Kramers estimate of the mean escape time from the well.

    The outer integral of ``exp(beta G)`` runs from the well to the barrier;
    the inner integral of ``exp(-beta G) / D`` runs from the grid end on the
    far side of the well up to the barrier.  Both are trapezoidal and
    evaluated in log space.
    """
    if profile.free_energy is None:
        profile = free_energy(profile)
    psi, g, d = profile.psi_grid, profile.free_energy, profile.diffusion
    i_s, i_u = _well_and_barrier(psi, g)
    barrier = float(g[i_u] - g[i_s])
    if barrier < 2:
        warnings.warn(f"barrier {barrier:.2f} < 2: Kramers estimate unreliable", BarrierWarning, stacklevel=2)
    a, b = sorted((i_s, i_u))
    outer = _log_trapezoid(g[a:b + 1], psi[a:b + 1])
    well_side = slice(0, i_u + 1) if i_u > i_s else slice(i_u, psi.size)
    inner = _log_trapezoid(-g[well_side] - np.log(d[well_side]), psi[well_side])
    return EscapeEstimate(math.exp(outer + inner), "kramers", float(psi[i_s]), float(psi[i_u]),
                          profile.epsilon, barrier=barrier)


def nested_mfpt(profile):
    """Mean first-passage time from the well to the barrier of the 1-D diffusion.

    Uses the nested form ``int exp(beta G(y)) / D(y) int exp(-beta G)`` with a
    reflecting boundary at the far grid end; a cross-check on the product
    estimate of :func:`kramers_escape_time`.
    """
    if profile.free_energy is None:
        profile = free_energy(profile)
    psi, g, d = profile.psi_grid, profile.free_energy, profile.diffusion
    i_s, i_u = _well_and_barrier(psi, g)
    shift = np.max(-g)
    w = np.exp(-g - shift)
    if i_u < i_s:
        # mass beyond y on the far side (larger psi)
        tail = -cumulative_trapezoid(w[::-1], psi[::-1], initial=0.0)[::-1]
        seg = slice(i_u, i_s + 1)
    else:
        tail = cumulative_trapezoid(w, psi, initial=0.0)
        seg = slice(i_s, i_u + 1)
    integrand = np.exp(g[seg] + shift) / d[seg] * tail[seg]
    return EscapeEstimate(float(trapezoid(integrand, psi[seg])), "nested", float(psi[i_s]),
                          float(psi[i_u]), profile.epsilon, barrier=float(g[i_u] - g[i_s]))


def direct_mfpt(p_start, epsilon, net, exit_threshold, escapes, max_steps, seed=0, block=64):
    """Mean first step at which the density drops below ``exit_threshold``.

    Run ``r`` starts from a uniform lift at ``p_start`` (stream ``(seed, r)``)
    and stops at escape or after ``max_steps``.  Censored runs are counted
    but excluded from the mean.

    Raises
    ------
    NoEscapeError
        If no run escaped.
    """
    _check_epsilon(epsilon)
    if escapes < 1 or max_steps < 1:
        raise ValueError("escapes and max_steps must be positive")
    n = net.n_neurons
    threshold = int(math.ceil(exit_threshold * n - 1e-9))
    table = _cached_table(net.degree, float(epsilon))
    times = []
    censored = 0
    for r in range(escapes):
        state = random_lift(p_start, net, _rng.stream(seed, r, _rng.LIFT))
        if np.count_nonzero(state) < threshold:
            times.append(0)
            continue
        rng = _rng.stream(seed, r, _rng.EVOLVE)
        buf = np.empty_like(state)
        done = 0
        hit = -1
        while done < max_steps:
            rows = min(block, max_steps - done)
            u = rng.random((rows, n), dtype=np.float32)
            hit = _kernels.run_until_below(state, net.adjacency, table, u, buf, threshold)
            if hit >= 0:
                times.append(done + hit)
                break
            done += rows
        if hit < 0:
            censored += 1
    if not times:
        raise NoEscapeError(f"no escape in {escapes} runs of {max_steps} steps at epsilon={epsilon}")
    t = np.array(times, dtype=float)
    se = float(t.std(ddof=1) / math.sqrt(t.size)) if t.size > 1 else float("nan")
    return EscapeEstimate(float(t.mean()), "direct", epsilon=epsilon, censored=censored, times=t, std_error=se)


@dataclass(frozen=True)
class SyntheticDiffusion:
    """Known one-dimensional diffusion ``dpsi = u(psi) dt + sqrt(2 D) dW``.

    ``stepper`` matches the interface of :func:`model_stepper`, so the whole
    estimation pipeline can run against exact coefficients.  One burst of
    ``delta_T`` is a single Euler-Maruyama step, which reproduces ``u`` and
    ``D`` exactly in distribution.
    """

    drift: object
    diffusion: float
    center: float = 0.5

    def stepper(self, p, copies, delta_T, seed):
        rng = _rng.stream(seed, _rng.PILOT)
        psi = p - self.center
        noise = rng.standard_normal(copies)
        return p, p + self.drift(psi) * delta_T + math.sqrt(2 * self.diffusion * delta_T) * noise


def ou_surrogate(kappa=0.1, diffusion=1e-5, center=0.5):
    """Ornstein-Uhlenbeck process ``u = -kappa psi`` with constant ``D``."""
    return SyntheticDiffusion(lambda psi: -kappa * np.asarray(psi), diffusion, center)


def double_well_surrogate(kappa=0.05, width=0.1, barrier=4.0, center=0.5):
    """Well at ``psi = 0`` and barrier at ``psi = -width``, constant ``D``.

    ``u = -kappa psi (1 + psi / width)``; ``D`` is set so that the free-energy
    barrier equals ``barrier`` (``kappa width^2 / (6 D)``).
    """
    d = kappa * width * width / (6 * barrier)
    return SyntheticDiffusion(lambda psi: -kappa * np.asarray(psi) * (1 + np.asarray(psi) / width), d, center)


def simulate_first_passage(process, psi0, exit_psi, runs, seed=0, substeps=4, max_steps=10**7):
    """First-passage times of ``process`` from ``psi0`` across ``exit_psi``.

    Euler-Maruyama with ``substeps`` sub-steps per unit time; times are in
    units of one step (``delta_T = 1``).  Runs are advanced together.
    Returns the array of times; runs still going at ``max_steps`` are dropped.
    """
    rng = _rng.stream(seed, _rng.EVOLVE)
    h = 1.0 / substeps
    amp = math.sqrt(2 * process.diffusion * h)
    sign = 1.0 if exit_psi > psi0 else -1.0
    x = np.full(runs, float(psi0))
    t = np.full(runs, -1, dtype=np.int64)
    alive = np.arange(runs)
    step = 0
    while alive.size and step < max_steps:
        step += 1
        for _ in range(substeps):
            x[alive] += process.drift(x[alive]) * h + amp * rng.standard_normal(alive.size)
        out = sign * (x[alive] - exit_psi) > 0
        t[alive[out]] = step
        alive = alive[~out]
    return t[t >= 0].astype(float)
