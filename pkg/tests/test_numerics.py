import json
import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from neurocoarse import _rng
from neurocoarse.coarse import CoarseMap, EnsembleConfig
from neurocoarse.graph import generate_regular_graph
from neurocoarse.lifting import random_lift
from neurocoarse.micro import density, evolve
from neurocoarse.numerics import (
    Branch,
    BranchPoint,
    ContinuationConfig,
    ConvergenceError,
    NoisyDerivativeWarning,
    PartialBranchWarning,
    SingularDerivativeError,
    arclength_trace,
    dphi_deps,
    dphi_dp,
    locate_critical_points,
    newton_solve,
    recheck_residuals,
    start_branch,
    write_critical_points,
)

NET = generate_regular_graph(2000, 4, 1)
PHI = CoarseMap(NET, EnsembleConfig(copies=500))


def linear(p, eps, seed=0):
    return eps + 0.5 * p


def fold(p, eps, seed=0):
    # fixed points (p - 0.5)^2 = 0.2 - eps, fold at eps = 0.2, p = 0.5
    return p - (p - 0.5) ** 2 + (0.2 - eps)


def transcritical(p, eps, seed=0):
    # p = 0 loses stability at eps = 0.22
    return p * (1 + 3 * (eps - 0.22)) - p * p


def _direct_average(p0, eps, steps, seed):
    """Long-run time average of one realization with a batch-means standard error."""
    rng = _rng.stream(seed)
    s = evolve(random_lift(p0, NET, rng), NET, eps, 100, rng)
    ps = np.empty(steps)
    for k in range(steps):
        s = evolve(s, NET, eps, 1, rng)
        ps[k] = density(s)
    batches = ps.reshape(50, -1).mean(axis=1)
    return ps.mean(), batches.std(ddof=1) / np.sqrt(50)


def test_linear_eigenvalue_is_exact():
    lam = dphi_dp(0.4, 0.1, lambda p, e, s: 0.5 * p)
    assert abs(lam - 0.5) <= 1e-12
    assert abs(dphi_dp(0.0, 0.1, lambda p, e, s: 0.5 * p) - 0.5) <= 1e-12
    assert abs(dphi_dp(1.0, 0.1, lambda p, e, s: 0.5 * p) - 0.5) <= 1e-12
    assert dphi_deps(0.3, 0.1, linear) == pytest.approx(1.0)
    assert dphi_deps(0.3, 0.495, linear) == pytest.approx(1.0)


def test_noisy_difference_warns():
    noisy = lambda p, e, s: SimpleNamespace(mean_p=0.5 * p, std_error=0.1)
    with pytest.warns(NoisyDerivativeWarning):
        dphi_dp(0.5, 0.1, noisy)


def test_newton_on_surrogates():
    b = newton_solve(0.9, 0.1, fold, ContinuationConfig(newton_tol=1e-12))
    assert b.p_star == pytest.approx(0.5 + np.sqrt(0.1), abs=1e-9)
    assert b.lam == pytest.approx(1 - 2 * np.sqrt(0.1), abs=1e-4)
    assert b.stable
    assert newton_solve(0.0, 0.1, linear).p_star == pytest.approx(0.2)


def test_newton_singular_and_divergent():
    with pytest.raises(SingularDerivativeError):
        newton_solve(0.5, 0.1, lambda p, e, s: p + 0.01)
    with pytest.raises(ConvergenceError):
        newton_solve(0.9, 0.1, fold, ContinuationConfig(max_newton_iters=1, newton_tol=1e-14))
    with pytest.raises(ValueError):
        newton_solve(1.5, 0.1, linear)


def test_newton_zero_is_exact_for_model():
    b = newton_solve(0.0, 0.2, PHI)
    assert b.p_star == 0.0 and b.iterations == 0 and b.residual == 0.0


def test_newton_unique_nonzero_state_matches_direct_simulation():
    b = newton_solve(0.5, 0.3, PHI, seed=1)
    assert 0.3 < b.p_star < 0.5 and b.stable
    mean, se = _direct_average(b.p_star, 0.3, 10_000, 3)
    se_star = b.std_error / abs(1 - b.lam)
    assert abs(b.p_star - mean) <= 3 * np.hypot(se, se_star)


def test_newton_high_branch():
    b = newton_solve(0.8, 0.14, PHI, seed=1)
    assert b.stable
    mean, _ = _direct_average(0.85, 0.14, 10_000, 3)
    # pair-level lifting leaves a small upward bias of a few 1e-3
    assert abs(b.p_star - mean) <= 5e-3
    # self-consistency of the coarse map at its own fixed point
    r = PHI(b.p_star, 0.14, seed=7)
    assert abs(r.mean_p - b.p_star) <= 3 * r.std_error


def test_newton_from_middle_guess_finds_a_root():
    # 0.6 sits next to the unstable middle state of this model, so plain
    # Newton converges onto it; 500 copies give a residual noise near 1e-3
    b = newton_solve(0.6, 0.14, PHI, ContinuationConfig(newton_tol=2e-3), seed=1)
    assert b.residual <= 2e-3
    assert 0.55 < b.p_star < 0.65 and not b.stable


def test_trace_of_linear_surrogate_is_exact_line():
    cfg = ContinuationConfig(epsilon_range=(0.05, 0.3), newton_tol=1e-12)
    a, b = start_branch(0.2, 0.1, linear, cfg)
    br = arclength_trace(a, b, linear, cfg)
    assert len(br) > 5 and not br.aborted
    assert np.allclose(br.p_star, 2 * br.epsilon, atol=1e-10)
    steps = np.diff(np.column_stack([br.p_star, br.epsilon]), axis=0)[1:]
    directions = steps / np.linalg.norm(steps, axis=1)[:, None]
    assert np.allclose(directions, directions[0], atol=1e-8)
    assert locate_critical_points(br) == []


def test_trace_rounds_a_fold():
    cfg = ContinuationConfig(epsilon_range=(0.05, 0.3), newton_tol=1e-10, max_points=40)
    a, b = start_branch(0.8, 0.1, fold, cfg)
    br = arclength_trace(a, b, fold, cfg)
    crit = locate_critical_points(br)
    assert [c.kind for c in crit] == ["fold"]
    assert crit[0].epsilon == pytest.approx(0.2, abs=1e-4)
    # stability changes at the fold and lambda passes through 1 there
    assert abs(br[crit[0].index].lam - 1.0) <= 0.05
    assert abs(np.interp(0.5, br.p_star[::-1], br.lam[::-1]) - 1.0) <= 0.05
    assert br[0].stable and not br[-1].stable


def test_trace_along_zero_finds_transcritical():
    cfg = ContinuationConfig(epsilon_range=(0.05, 0.35), newton_tol=1e-10, fd_delta=1e-7)
    a, b = start_branch(0.0, 0.1, transcritical, cfg)
    br = arclength_trace(a, b, transcritical, cfg)
    assert np.all(br.p_star == 0.0)
    crit = locate_critical_points(br)
    assert [c.kind for c in crit] == ["transcritical"]
    assert crit[0].epsilon == pytest.approx(0.22, abs=1e-4)


def test_trace_aborts_with_partial_branch():
    def gap(p, eps, seed=0):
        return p + 1.0 if eps > 0.14 else linear(p, eps)

    cfg = ContinuationConfig(epsilon_range=(0.05, 0.3), newton_tol=1e-10)
    a, b = start_branch(0.2, 0.1, gap, cfg)
    with pytest.warns(PartialBranchWarning):
        br = arclength_trace(a, b, gap, cfg)
    assert br.aborted
    assert br.epsilon.max() <= 0.14


def test_critical_points_need_three_points():
    with pytest.raises(ValueError):
        locate_critical_points(Branch([BranchPoint(0.1, 0.2, 0.5, 0.0)] * 2))


def test_config_validation():
    with pytest.raises(ValueError):
        ContinuationConfig(delta_s=0.0)
    with pytest.raises(ValueError):
        ContinuationConfig(epsilon_range=(0.3, 0.2))


def test_outputs(tmp_path):
    cfg = ContinuationConfig(epsilon_range=(0.05, 0.3), newton_tol=1e-10, max_points=40)
    a, b = start_branch(0.8, 0.1, fold, cfg)
    br = arclength_trace(a, b, fold, cfg)
    br.to_csv(tmp_path / "b.csv")
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header == "arc_index,epsilon,p_star,lambda,stable,residual"
    write_critical_points(locate_critical_points(br), tmp_path / "c.json")
    data = json.loads((tmp_path / "c.json").read_text())
    assert data[0]["kind"] == "fold"
    assert np.all(recheck_residuals(br, fold, 0) <= 1e-9)


def test_model_derivative_with_common_numbers_is_quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("error", NoisyDerivativeWarning)
        lam = dphi_dp(0.82, 0.14, PHI, seed=2)
    assert 0.0 < lam < 1.0
