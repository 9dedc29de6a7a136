import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order

from neurocoarse import _kernels, _rng
from neurocoarse.graph import generate_regular_graph
from neurocoarse.lifting import (
    AnnealSchedule,
    ManifoldLiftConfig,
    active_count,
    anneal_to_moments,
    converge_to_manifold,
    fast_target,
    random_lift,
    replay_lift,
)
from neurocoarse.lifting import _restore_density
from neurocoarse.micro import CoarseObservables, observables, pair_densities

BIG = generate_regular_graph(20000, 4, 1)
SMALL = generate_regular_graph(2000, 4, 1)


def test_lift_extremes():
    assert not random_lift(0.0, SMALL, _rng.stream(0)).any()
    assert random_lift(1.0, SMALL, _rng.stream(0)).all()


def test_uniform_lift_pairs_are_independent():
    rho11 = []
    for r in range(200):
        s = random_lift(0.3, BIG, _rng.stream(5, r))
        assert int(s.sum()) == 6000
        rho11.append(pair_densities(s, BIG)[0])
    rho11 = np.array(rho11)
    se = rho11.std(ddof=1) / np.sqrt(rho11.size)
    assert abs(rho11.mean() - 0.09) <= 3 * se


def test_lifts_are_nested_across_densities():
    low = random_lift(0.2, SMALL, _rng.stream(3))
    high = random_lift(0.6, SMALL, _rng.stream(3))
    assert np.all(high[low == 1] == 1)


def test_active_count_rounds_to_nearest():
    assert active_count(0.3, 20000) == 6000
    assert active_count(0.00024, 10000) == 2
    with pytest.raises(ValueError):
        active_count(1.2, 10)


def test_identity_target_is_untouched():
    s = random_lift(0.4, SMALL, _rng.stream(1))
    rho11 = pair_densities(s, SMALL)[0]
    out, res = anneal_to_moments(s, SMALL, [rho11], rng=_rng.stream(2))
    assert res == 0.0
    assert np.array_equal(out, s)


def test_clustered_target_is_reached():
    s = random_lift(0.5, BIG, _rng.stream(1))
    out, res = anneal_to_moments(s, BIG, [0.40], rng=_rng.stream(2))
    assert res <= 1e-3
    assert abs(pair_densities(out, BIG)[0] - 0.40) <= 1e-3
    assert out.sum() == s.sum()


def test_infeasible_target_exhausts_budget():
    s = random_lift(0.5, BIG, _rng.stream(1))
    _, res = anneal_to_moments(s, BIG, [0.6], AnnealSchedule(sweeps=200), _rng.stream(2))
    assert res >= 0.1


def test_anneal_needs_rng_and_valid_target():
    s = random_lift(0.5, SMALL, _rng.stream(1))
    with pytest.raises(ValueError):
        anneal_to_moments(s, SMALL, [0.3])
    with pytest.raises(ValueError):
        anneal_to_moments(s, SMALL, [0.3, 0.1], rng=_rng.stream(0))


@pytest.mark.parametrize("kwargs", [
    {"initial_temp": 0.0}, {"cooling_factor": 1.0}, {"cooling_factor": 0.0}, {"sweeps": 0},
])
def test_schedule_validation(kwargs):
    with pytest.raises(ValueError):
        AnnealSchedule(**kwargs)


def test_lift_config_validation():
    with pytest.raises(ValueError):
        ManifoldLiftConfig(dT=0)
    with pytest.raises(ValueError):
        ManifoldLiftConfig(moment_tol=0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0.05, 0.95), target=st.floats(0.0, 0.9),
       triples=st.booleans())
def test_anneal_preserves_density(seed, p, target, triples):
    s = random_lift(p, SMALL, _rng.stream(seed))
    tgt = [target] + ([0.2] * 6 if triples else [])
    out, res = anneal_to_moments(s, SMALL, tgt, AnnealSchedule(sweeps=50), _rng.stream(seed, 1))
    assert int(out.sum()) == int(s.sum())
    assert res >= 0.0


def _anneal_trace(state, net, target, triples, temp, proposals, rng):
    """Energies after each single proposal of the kernel."""
    state = state.copy()
    k, on, off, pos, n11 = _kernels.anneal_setup(state, net.adjacency)
    counts = np.zeros(7, dtype=np.int64)
    counts[0] = n11
    counts[1:] = _kernels.triple_counts(state, net.adjacency)
    out = []
    for m in range(proposals):
        e, _, _ = _kernels.anneal_block(
            state, net.adjacency, k, on, off, pos, counts, target, triples, temp, 0.95, 10, m,
            rng.integers(0, on.size, 1), rng.integers(0, off.size, 1), rng.random(1), 0.0)
        out.append(e)
    return state, counts, np.array(out)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), triples=st.booleans())
def test_zero_temperature_is_strict_descent(seed, triples):
    net = generate_regular_graph(200, 4, 3)
    s = random_lift(0.4, net, _rng.stream(seed))
    target = np.array([0.3, 0.3, 0.2, 0.1, 0.2, 0.1, 0.1])
    state, counts, e = _anneal_trace(s, net, target, triples, 1e-300, 400, _rng.stream(seed, 1))
    assert np.all(np.diff(e) <= 1e-15)
    # incremental bookkeeping agrees with a recount
    assert counts[0] == _kernels.pair_counts(state, net.adjacency)[0]
    if triples:
        assert np.array_equal(counts[1:], _kernels.triple_counts(state, net.adjacency))


def test_hot_anneal_accepts_uphill_moves():
    net = generate_regular_graph(200, 4, 3)
    s = random_lift(0.4, net, _rng.stream(0))
    target = np.array([0.3, 0, 0, 0, 0, 0, 0])
    _, _, e = _anneal_trace(s, net, target, False, 10.0, 400, _rng.stream(1))
    assert np.any(np.diff(e) > 0)


def _bfs_witness(net, m, clustered, seed):
    n = net.n_neurons
    rows = np.repeat(np.arange(n), net.degree)
    g = coo_matrix((np.ones(rows.size), (rows, net.adjacency.ravel())), shape=(n, n)).tocsr()
    order = breadth_first_order(g, 0, directed=False, return_predecessors=False)
    w = np.zeros(n, dtype=np.uint8)
    w[order[:clustered]] = 1
    rest = np.random.default_rng(seed).permutation(np.flatnonzero(w == 0))[: m - clustered]
    w[rest] = 1
    return w


@pytest.mark.parametrize("clustered", [200, 400, 800])
def test_hand_built_witness_is_reachable(clustered):
    witness = _bfs_witness(SMALL, 800, clustered, 0)
    rho11 = pair_densities(witness, SMALL)[0]
    s = random_lift(0.4, SMALL, _rng.stream(2))
    _, res = anneal_to_moments(s, SMALL, [rho11], rng=_rng.stream(3))
    assert res <= 1e-3


def test_fast_target_same_density_is_identity():
    obs = CoarseObservables(0.6, 0.45, 0.15, 0.15, 0.25, np.full(6, 1 / 6))
    assert fast_target(obs, 0.6, False) == pytest.approx([0.45])
    assert fast_target(obs, 0.6, True) == pytest.approx([0.45] + [1 / 6] * 6)


def test_fast_target_transfers_ratio_and_clips():
    obs = CoarseObservables(0.5, 0.3, 0.2, 0.2, 0.3)
    assert fast_target(obs, 0.6, False)[0] == pytest.approx(0.3 / 0.25 * 0.36)
    # clipped to rho11 <= p
    obs = CoarseObservables(0.5, 0.5, 0.0, 0.0, 0.5)
    assert fast_target(obs, 0.9, False)[0] == pytest.approx(0.9)


def test_manifold_zero_density():
    lift = converge_to_manifold(0.0, 0.2, SMALL, 5)
    assert not lift.states.any()
    assert lift.iterations == 1 and lift.converged
    assert np.array_equal(lift.fast_variables, [0, 0, 0, 1])


def test_manifold_full_density():
    lift = converge_to_manifold(1.0, 0.2, SMALL, 3)
    assert lift.history[0][0] == 1.0
    assert lift.states.all()


def test_manifold_lift_properties():
    lift = converge_to_manifold(0.75, 0.16, BIG, 100, seed=1)
    assert lift.converged
    assert np.all(lift.states.sum(axis=1) == active_count(0.75, 20000))
    assert np.all(lift.residuals <= 1e-3)
    assert len(lift.history) == lift.iterations + 1
    # a relaxed pair lift is more clustered than an independent one
    assert lift.fast_variables[0] > 0.75 ** 2 + 0.01
    again = converge_to_manifold(0.75, 0.16, BIG, 100, seed=2, initial_rho11=lift.fast_variables[0])
    assert np.max(np.abs(again.fast_variables - lift.fast_variables)) < 2 * 2e-3


def test_manifold_deterministic_and_chunkable():
    a = converge_to_manifold(0.6, 0.16, SMALL, 6, seed=4)
    b = converge_to_manifold(0.6, 0.16, SMALL, 6, seed=4)
    assert np.array_equal(a.states, b.states)
    nets = [SMALL] * 6
    c = converge_to_manifold(0.6, 0.16, nets, 6, seed=4)
    assert np.array_equal(a.states, c.states)
    with pytest.raises(ValueError):
        converge_to_manifold(0.6, 0.16, nets, 5)


def test_manifold_with_triples():
    lift = converge_to_manifold(0.75, 0.16, SMALL, 20, ManifoldLiftConfig(use_triples=True), seed=0)
    assert lift.fast_variables.size == 10
    assert lift.target.size == 7
    assert lift.fast_variables[4:].sum() == pytest.approx(1.0)
    obs = observables(lift.states[0], SMALL, triples=True)
    assert obs.p == active_count(0.75, 2000) / 2000


def test_replay_reproduces_loop_copies():
    lift = converge_to_manifold(0.7, 0.16, SMALL, 8, seed=6)
    assert len(lift.targets) == lift.iterations
    for i in (0, 5):
        state, res = replay_lift(0.7, 0.16, SMALL, lift.targets, seed=6, index=i)
        assert np.array_equal(state, lift.states[i])
        assert res == lift.residuals[i]
    extra, _ = replay_lift(0.7, 0.16, SMALL, lift.targets, seed=6, index=50)
    assert extra.sum() == lift.states[0].sum()


def test_density_reset_undoes_burst_flips():
    rng = np.random.default_rng(0)
    before = random_lift(0.5, SMALL, _rng.stream(1))
    after = before.copy()
    off = np.flatnonzero(before == 0)[:30]
    after[off] = 1
    out = _restore_density(after, int(before.sum()) + 10, rng, before)
    assert out.sum() == before.sum() + 10
    changed = np.flatnonzero(out != after)
    assert set(changed) <= set(off)
    # without a reference state any active neuron may be switched off
    plain = _restore_density(after, int(before.sum()), rng)
    assert plain.sum() == before.sum()
