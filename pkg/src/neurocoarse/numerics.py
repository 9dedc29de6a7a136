"""Fixed points, continuation and stability of a scalar coarse timestepper.

Everything here works on a black-box map ``phi(p, epsilon, seed)`` that
returns either a float or an object with ``mean_p`` and ``std_error``
attributes (such as :class:`~neurocoarse.coarse.CoarseResult`).
:class:`~neurocoarse.coarse.CoarseMap` wraps the microscopic simulator in
this form; plain functions serve as exact surrogates in tests.

Derivatives are finite differences taken with one seed for every evaluation
they involve (common random numbers).  A Newton solve keeps its seed across
iterations; each continuation step draws a fresh one.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _rng

__all__ = [
    "BranchPoint",
    "Branch",
    "ContinuationConfig",
    "CriticalPoint",
    "ConvergenceError",
    "SingularDerivativeError",
    "NoisyDerivativeWarning",
    "PartialBranchWarning",
    "evaluate",
    "dphi_dp",
    "dphi_deps",
    "newton_solve",
    "start_branch",
    "arclength_trace",
    "locate_critical_points",
    "recheck_residuals",
    "write_critical_points",
]


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach the residual tolerance."""


class SingularDerivativeError(ConvergenceError):
    """``1 - dPhi/dp`` vanished; a fold is near and arc-length is needed."""


class NoisyDerivativeWarning(UserWarning):
    """A finite difference is smaller than its Monte Carlo noise."""


class PartialBranchWarning(UserWarning):
    """Continuation stopped early because the corrector kept failing."""


@dataclass(frozen=True)
class ContinuationConfig:
    """Newton and pseudo-arc-length settings.

    ``fd_delta`` perturbs both ``p`` (central difference, one-sided at the
    ends of [0, 1]) and ``epsilon`` (forward difference).
    """

    delta_s: float = 0.02
    fd_delta: float = 1e-2
    newton_tol: float = 5e-4
    max_newton_iters: int = 10
    epsilon_range: tuple = (0.01, 0.49)
    max_points: int = 60
    max_halvings: int = 4

    def __post_init__(self):
        if not (self.delta_s > 0 and self.fd_delta > 0 and self.newton_tol > 0):
            raise ValueError("delta_s, fd_delta and newton_tol must be positive")
        lo, hi = self.epsilon_range
        if not 0.0 < lo < hi < 0.5:
            raise ValueError(f"epsilon_range must satisfy 0 < lo < hi < 0.5, got {self.epsilon_range}")
        if self.max_newton_iters < 1 or self.max_points < 2:
            raise ValueError("max_newton_iters >= 1 and max_points >= 2 required")


@dataclass
class BranchPoint:
    """A solution of ``p = Phi_T(p, epsilon)`` with its coarse eigenvalue ``lam``."""

    epsilon: float
    p_star: float
    lam: float
    residual: float
    iterations: int = 0
    std_error: float = 0.0

    @property
    def stable(self):
        return abs(self.lam) < 1.0


@dataclass
class Branch:
    """Ordered continuation points; ``aborted`` marks a truncated trace."""

    points: list = field(default_factory=list)
    aborted: bool = False

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def epsilon(self):
        return np.array([b.epsilon for b in self.points])

    @property
    def p_star(self):
        return np.array([b.p_star for b in self.points])

    @property
    def lam(self):
        return np.array([b.lam for b in self.points])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arc_index", "epsilon", "p_star", "lambda", "stable", "residual"])
            for i, b in enumerate(self.points):
                w.writerow([i, repr(b.epsilon), repr(b.p_star), repr(b.lam), int(b.stable), repr(b.residual)])


@dataclass(frozen=True)
class CriticalPoint:
    kind: str
    epsilon: float
    index: int


def evaluate(phi, p, epsilon, seed):
    """``(mean, std_error)`` of one timestepper call."""
    r = phi(p, epsilon, seed)
    if hasattr(r, "mean_p"):
        return float(r.mean_p), float(r.std_error)
    return float(r), 0.0


def _noisy(diff, se_a, se_b, what):
    combined = math.hypot(se_a, se_b)
    if combined > 0 and abs(diff) < 4 * combined:
        warnings.warn(f"{what}: difference {diff:.3e} below 4 standard errors ({combined:.3e})",
                      NoisyDerivativeWarning, stacklevel=3)


def dphi_dp(p, epsilon, phi, cfg=None, seed=0, at=None):
    """Coarse eigenvalue ``dPhi/dp`` by a common-random-number difference.

    Central over ``[p - fd_delta, p + fd_delta]``; forward when ``p - fd_delta < 0``
    and backward when ``p + fd_delta > 1``.  ``at`` may supply an already
    computed ``(mean, std_error)`` at ``p`` for the one-sided cases.
    """
    cfg = cfg or ContinuationConfig()
    h = cfg.fd_delta
    if p - h < 0.0 or p + h > 1.0:
        sign = 1.0 if p - h < 0.0 else -1.0
        base = at if at is not None else evaluate(phi, p, epsilon, seed)
        moved = evaluate(phi, p + sign * h, epsilon, seed)
        diff = moved[0] - base[0]
        _noisy(diff, moved[1], base[1], "dPhi/dp")
        return sign * diff / h
    hi = evaluate(phi, p + h, epsilon, seed)
    lo = evaluate(phi, p - h, epsilon, seed)
    diff = hi[0] - lo[0]
    _noisy(diff, hi[1], lo[1], "dPhi/dp")
    return diff / (2 * h)


def dphi_deps(p, epsilon, phi, cfg=None, seed=0, at=None):
    """``dPhi/depsilon`` by a forward common-random-number difference."""
    cfg = cfg or ContinuationConfig()
    h = cfg.fd_delta
    if epsilon + h >= 0.5:
        h = -h
    base = at if at is not None else evaluate(phi, p, epsilon, seed)
    moved = evaluate(phi, p, epsilon + h, seed)
    return (moved[0] - base[0]) / h


def _damp_into_unit(p, step):
    while not 0.0 <= p + step <= 1.0 and abs(step) > 1e-12:
        step *= 0.5
    return min(max(p + step, 0.0), 1.0)


def newton_solve(p_guess, epsilon, phi, cfg=None, seed=0):
    """Solve ``G(p) = p - Phi_T(p, epsilon) = 0`` by damped Newton.

    Every evaluation uses ``seed``.  Steps that would leave [0, 1] are halved
    until they fit.

    Raises
    ------
    SingularDerivativeError
        If ``|1 - lambda| < 1e-3``.
    ConvergenceError
        If the residual is above ``newton_tol`` after ``max_newton_iters``.
    """
    cfg = cfg or ContinuationConfig()
    if not 0.0 <= p_guess <= 1.0:
        raise ValueError(f"p_guess must lie in [0, 1], got {p_guess}")
    p = float(p_guess)
    for it in range(cfg.max_newton_iters + 1):
        val = evaluate(phi, p, epsilon, seed)
        g = p - val[0]
        lam = dphi_dp(p, epsilon, phi, cfg, seed, at=val)
        if abs(g) <= cfg.newton_tol:
            return BranchPoint(epsilon, p, lam, abs(g), it, val[1])
        if it == cfg.max_newton_iters:
            break
        slope = 1.0 - lam
        if abs(slope) < 1e-3:
            raise SingularDerivativeError(
                f"1 - dPhi/dp = {slope:.2e} at p={p:.4f}, epsilon={epsilon}; use arc-length continuation"
            )
        p = _damp_into_unit(p, -g / slope)
    raise ConvergenceError(
        f"no convergence at epsilon={epsilon} after {cfg.max_newton_iters} iterations (|G|={abs(g):.2e})"
    )


def start_branch(p_guess, epsilon, phi, cfg=None, seed=0, direction=1.0):
    """Two nearby solutions, ``delta_s`` apart in epsilon, to seed a trace."""
    cfg = cfg or ContinuationConfig()
    a = newton_solve(p_guess, epsilon, phi, cfg, _rng.subseed(seed, 0))
    b = newton_solve(a.p_star, epsilon + math.copysign(cfg.delta_s, direction) / 2, phi, cfg,
                     _rng.subseed(seed, 1))
    return a, b


def _unit(v):
    return v / np.hypot(v[0], v[1])


def _correct(x_pred, tangent, phi, cfg, seed):
    """Newton on the bordered system; returns the solution point or ``None``."""
    x = x_pred.copy()
    for it in range(cfg.max_newton_iters + 1):
        p, eps = x
        if not 0.0 < eps < 0.5:
            return None
        val = evaluate(phi, p, eps, seed)
        g = p - val[0]
        if abs(g) <= cfg.newton_tol:
            lam = dphi_dp(p, eps, phi, cfg, seed, at=val)
            return BranchPoint(float(eps), float(p), lam, abs(g), it, val[1])
        if it == cfg.max_newton_iters:
            return None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoisyDerivativeWarning)
            phi_p = dphi_dp(p, eps, phi, cfg, seed, at=val)
            phi_e = dphi_deps(p, eps, phi, cfg, seed, at=val)
        # [[1 - phi_p, -phi_e], [t_p, t_e]] dx = -[g, t . (x - x_pred)]
        a, b = 1.0 - phi_p, -phi_e
        c, d = tangent
        r1 = -g
        r2 = -float(np.dot(tangent, x - x_pred))
        det = a * d - b * c
        if abs(det) < 1e-12:
            return None
        dx = np.array([(r1 * d - b * r2) / det, (a * r2 - c * r1) / det])
        x = x + dx
        x[0] = min(max(x[0], 0.0), 1.0)
    return None


def arclength_trace(seed_a, seed_b, phi, cfg=None, seed=0):
    """Follow a branch of fixed points by pseudo-arc-length continuation.

    The predictor steps ``delta_s`` along the normalized secant through the
    last two solutions; the corrector solves ``G = 0`` together with
    ``tangent . (x - x_pred) = 0``.  A failed corrector halves the step (at
    most ``max_halvings`` times) before the trace is abandoned.

    Returns
    -------
    Branch
        Starts with ``seed_a`` and ``seed_b``; ends when epsilon leaves
        ``epsilon_range``, after ``max_points`` points, or on abort
        (``aborted`` set, :class:`PartialBranchWarning` issued).
    """
    cfg = cfg or ContinuationConfig()
    branch = Branch([seed_a, seed_b])
    lo, hi = cfg.epsilon_range
    step = cfg.delta_s
    j = 0
    while len(branch) < cfg.max_points:
        xa = np.array([branch[-2].p_star, branch[-2].epsilon])
        xb = np.array([branch[-1].p_star, branch[-1].epsilon])
        sec = xb - xa
        if sec[1] == 0.0:
            # tie-break: give the tangent a component along epsilon
            sec[1] = cfg.delta_s / 10
        tangent = _unit(sec)
        point = None
        halvings = 0
        while point is None:
            point = _correct(xb + step * tangent, tangent, phi, cfg, _rng.subseed(seed, j, halvings))
            if point is None:
                if halvings == cfg.max_halvings:
                    warnings.warn(
                        f"corrector failed at epsilon={xb[1]:.4f}, p={xb[0]:.4f} with step "
                        f"{step:.2e}; returning partial branch", PartialBranchWarning, stacklevel=2)
                    branch.aborted = True
                    return branch
                halvings += 1
                step /= 2
        j += 1
        branch.points.append(point)
        if not lo <= point.epsilon <= hi:
            break
        step = min(2 * step, cfg.delta_s)
    return branch


def locate_critical_points(branch):
    """Folds and transcritical crossings along a branch.

    A fold is flagged where ``d epsilon / ds`` changes sign; its epsilon is
    the extremum of a quadratic through the three surrounding points as a
    function of arc length.  On the ``p = 0`` part of a branch a sign change
    of ``1 - lambda`` is a transcritical point, located by linear
    interpolation of ``lambda`` through 1.
    """
    pts = list(branch)
    if len(pts) < 3:
        raise ValueError("need at least 3 branch points")
    eps = np.array([b.epsilon for b in pts])
    p = np.array([b.p_star for b in pts])
    lam = np.array([b.lam for b in pts])
    s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(p), np.diff(eps)))])
    found = []
    de = np.diff(eps)
    for i in range(1, len(de)):
        if de[i - 1] * de[i] < 0:
            c2, c1, c0 = np.polyfit(s[i - 1:i + 2] - s[i], eps[i - 1:i + 2], 2)
            e_star = c0 - c1 * c1 / (4 * c2) if c2 != 0 else eps[i]
            found.append(CriticalPoint("fold", float(e_star), i))
    for i in range(len(pts) - 1):
        if p[i] == 0.0 and p[i + 1] == 0.0 and (1 - lam[i]) * (1 - lam[i + 1]) < 0:
            e_star = eps[i] + (1 - lam[i]) * (eps[i + 1] - eps[i]) / (lam[i + 1] - lam[i])
            found.append(CriticalPoint("transcritical", float(e_star), i))
    return sorted(found, key=lambda c: c.index)


def recheck_residuals(branch, phi, seed):
    """``|p* - Phi_T(p*)|`` of every point re-evaluated with fresh seeds."""
    return np.array([
        abs(b.p_star - evaluate(phi, b.p_star, b.epsilon, _rng.subseed(seed, i))[0])
        for i, b in enumerate(branch)
    ])


def write_critical_points(points, path):
    with open(path, "w") as fh:
        json.dump([{"kind": c.kind, "epsilon": c.epsilon} for c in points], fh, indent=2)
