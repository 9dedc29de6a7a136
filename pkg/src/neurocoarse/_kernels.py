"""Compiled inner loops.  All randomness is passed in pre-drawn."""

import numpy as np
from numba import njit


@njit(cache=True)
def step(state, adj, table, u, out):
    """One synchronous update: ``out[i] = state[i] xor (u[i] < table[state[i], k_i])``."""
    n, d = adj.shape
    for i in range(n):
        k = 0
        for j in range(d):
            k += state[adj[i, j]]
        s = state[i]
        if u[i] < table[s, k]:
            out[i] = 1 - s
        else:
            out[i] = s


@njit(cache=True)
def run(state, adj, table, u, buf):
    """``u.shape[0]`` synchronous steps; row ``t`` of ``u`` drives step ``t``.

    ``state`` and ``buf`` are overwritten; returns whichever holds the result.
    """
    cur = state
    nxt = buf
    for t in range(u.shape[0]):
        step(cur, adj, table, u[t], nxt)
        cur, nxt = nxt, cur
    return cur


@njit(cache=True)
def run_until_below(state, adj, table, u, buf, threshold):
    """Step until fewer than ``threshold`` neurons are active.

    Returns the number of steps taken when that happens, or -1 if all
    ``u.shape[0]`` steps ran.  The final state is left in ``state``.
    """
    n = state.size
    cur = state
    nxt = buf
    for t in range(u.shape[0]):
        step(cur, adj, table, u[t], nxt)
        cur, nxt = nxt, cur
        active = 0
        for i in range(n):
            active += cur[i]
        if active < threshold:
            if cur is not state:
                state[:] = cur
            return t + 1
    if cur is not state:
        state[:] = cur
    return -1


@njit(cache=True)
def neighbor_counts(state, adj):
    n, d = adj.shape
    k = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(d):
            c += state[adj[i, j]]
        k[i] = c
    return k


@njit(cache=True)
def anneal_setup(state, adj):
    """Neighbor counts, active/inactive index lists, list positions and ``n11``."""
    n, d = adj.shape
    k = np.empty(n, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    n_on = 0
    for i in range(n):
        n_on += state[i]
    on_list = np.empty(n_on, dtype=np.int64)
    off_list = np.empty(n - n_on, dtype=np.int64)
    a = 0
    b = 0
    n11 = 0
    for i in range(n):
        c = 0
        for j in range(d):
            c += state[adj[i, j]]
        k[i] = c
        if state[i]:
            n11 += c
            on_list[a] = i
            pos[i] = a
            a += 1
        else:
            off_list[b] = i
            pos[i] = b
            b += 1
    return k, on_list, off_list, pos, n11


@njit(cache=True)
def pair_counts(state, adj):
    """Directed link counts ``(n11, n10, n01, n00)``; first index is the tail."""
    n, d = adj.shape
    n11 = 0
    n10 = 0
    n01 = 0
    n00 = 0
    for i in range(n):
        k = 0
        for j in range(d):
            k += state[adj[i, j]]
        if state[i]:
            n11 += k
            n10 += d - k
        else:
            n01 += k
            n00 += d - k
    return n11, n10, n01, n00


@njit(cache=True)
def _center_classes(s, k, d, acc, sign):
    # ordered length-2 paths through a center with state s and k active neighbors
    both_on = k * (k - 1)
    mixed = 2 * k * (d - k)
    both_off = (d - k) * (d - k - 1)
    if s:
        acc[5] += sign * both_on   # 111
        acc[3] += sign * mixed     # 011 / 110
        acc[2] += sign * both_off  # 010
    else:
        acc[4] += sign * both_on   # 101
        acc[1] += sign * mixed     # 001 / 100
        acc[0] += sign * both_off  # 000


@njit(cache=True)
def triple_counts(state, adj):
    n, d = adj.shape
    acc = np.zeros(6, dtype=np.int64)
    for i in range(n):
        k = 0
        for j in range(d):
            k += state[adj[i, j]]
        _center_classes(state[i], k, d, acc, 1)
    return acc


@njit(cache=True)
def _energy(n11, tri, target, pair_norm, tri_norm, use_triples):
    e = (n11 / pair_norm - target[0]) ** 2
    if use_triples:
        for c in range(6):
            e += (tri[c] / tri_norm - target[1 + c]) ** 2
    return np.sqrt(e)


@njit(cache=True)
def anneal_block(state, adj, k, on_list, off_list, pos, counts, target, use_triples,
                 temp0, cooling, swaps_per_sweep, start, pick_on, pick_off, u, tol):
    """Metropolis swaps between an active and an inactive neuron.

    Proposal number ``start + m`` runs at temperature
    ``temp0 * cooling ** ((start + m) // swaps_per_sweep)``.  ``k``
    (active-neighbor counts), ``on_list``/``off_list`` (index lists), ``pos``
    (position of each neuron in its list) and ``counts`` (``n11`` followed by
    the six triple counts) are updated in place.  Returns
    ``(energy, proposals_used, accepted)``; stops early once energy <= tol.
    """
    n, d = adj.shape
    pair_norm = n * d
    tri_norm = n * d * (d - 1)
    tri = counts[1:].copy()
    e = _energy(counts[0], tri, target, pair_norm, tri_norm, use_triples)
    centers = np.empty(2 * d + 2, dtype=np.int64)
    delta_tri = np.zeros(6, dtype=np.int64)
    accepted = 0
    used = 0
    sweep = start // swaps_per_sweep
    temp = temp0 * cooling ** sweep
    for m in range(pick_on.size):
        if e <= tol:
            break
        if (start + m) // swaps_per_sweep != sweep:
            sweep = (start + m) // swaps_per_sweep
            temp = temp0 * cooling ** sweep
        used += 1
        a = on_list[pick_on[m]]
        b = off_list[pick_off[m]]
        adjacent = 0
        for j in range(d):
            if adj[b, j] == a:
                adjacent = 1
        # n11 counts directed links: each undirected 11 edge contributes 2
        dn11 = 2 * (k[b] - adjacent - k[a])
        if use_triples:
            nc = 0
            centers[nc] = a
            nc += 1
            centers[nc] = b
            nc += 1
            for j in range(d):
                for src in (adj[a, j], adj[b, j]):
                    dup = False
                    for q in range(nc):
                        if centers[q] == src:
                            dup = True
                    if not dup:
                        centers[nc] = src
                        nc += 1
            delta_tri[:] = 0
            for q in range(nc):
                c = centers[q]
                _center_classes(state[c], k[c], d, delta_tri, -1)
            # tentative swap to evaluate the new contributions
            state[a] = 0
            state[b] = 1
            for j in range(d):
                k[adj[a, j]] -= 1
                k[adj[b, j]] += 1
            for q in range(nc):
                c = centers[q]
                _center_classes(state[c], k[c], d, delta_tri, 1)
            state[a] = 1
            state[b] = 0
            for j in range(d):
                k[adj[a, j]] += 1
                k[adj[b, j]] -= 1
            for c in range(6):
                tri[c] = counts[1 + c] + delta_tri[c]
        e_new = _energy(counts[0] + dn11, tri, target, pair_norm, tri_norm, use_triples)
        if e_new <= e:
            accept = True
        elif temp > 0.0:
            accept = u[m] < np.exp(-(e_new - e) / temp)
        else:
            accept = False
        if accept:
            state[a] = 0
            state[b] = 1
            for j in range(d):
                k[adj[a, j]] -= 1
                k[adj[b, j]] += 1
            ia = pos[a]
            ib = pos[b]
            on_list[ia] = b
            off_list[ib] = a
            pos[b] = ia
            pos[a] = ib
            counts[0] += dn11
            if use_triples:
                for c in range(6):
                    counts[1 + c] = tri[c]
            e = e_new
            accepted += 1
    return e, used, accepted
