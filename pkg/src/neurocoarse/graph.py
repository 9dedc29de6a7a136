"""Connected random d-regular graphs.

Graphs are sampled with the Steger-Wormald pairing procedure: the ``n*d``
half-edges ("points") are repeatedly shuffled and paired, and only pairs that
join two distinct, not yet linked vertices are kept.  Leftover points are
re-paired until every vertex has degree ``d``; an attempt that gets stuck, or
that yields a disconnected graph, is discarded and retried with a derived
sub-seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _rng

__all__ = [
    "Network",
    "InvalidParametersError",
    "RetryBudgetExhausted",
    "generate_regular_graph",
    "ring_network",
    "component_count",
    "save_edgelist",
    "load_edgelist",
]


class InvalidParametersError(ValueError):
    """Raised when (n, d) admit no simple d-regular graph."""


class RetryBudgetExhausted(RuntimeError):
    """Raised when no valid graph was produced within the attempt budget."""


@dataclass(frozen=True, eq=False)
class Network:
    """Fixed undirected graph stored as per-neuron neighbor lists.

    Attributes
    ----------
    n_neurons : int
        Number of vertices N.
    degree : int
        Common degree d.
    adjacency : np.ndarray
        ``(N, d)`` int32 array; row ``i`` lists the neighbors of ``i`` in
        ascending order.  The array is read-only.
    seed : int or None
        Seed used by :func:`generate_regular_graph`, ``None`` for graphs built
        by hand.
    """

    n_neurons: int
    degree: int
    adjacency: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        adj = np.ascontiguousarray(self.adjacency, dtype=np.int32)
        if adj.shape != (self.n_neurons, self.degree):
            raise ValueError(
                f"adjacency shape {adj.shape} does not match (N, d) = "
                f"({self.n_neurons}, {self.degree})"
            )
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_edges(cls, n, edges, seed=None):
        """Build a network from an undirected edge list; all degrees must agree."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        deg = np.bincount(edges.ravel(), minlength=n)
        if deg.size and not np.all(deg == deg[0]):
            raise ValueError("edge list is not regular")
        d = int(deg[0]) if n else 0
        heads = np.concatenate([edges[:, 0], edges[:, 1]])
        tails = np.concatenate([edges[:, 1], edges[:, 0]])
        order = np.lexsort((tails, heads))
        adjacency = tails[order].reshape(n, d)
        return cls(n, d, adjacency, seed)

    def edges(self):
        """Undirected edges as an ``(N*d/2, 2)`` array with ``i < j``."""
        rows = np.repeat(np.arange(self.n_neurons), self.degree)
        cols = self.adjacency.ravel()
        keep = rows < cols
        return np.column_stack([rows[keep], cols[keep]])

    def validate(self):
        """Raise ``ValueError`` if any structural invariant is violated."""
        adj = self.adjacency
        idx = np.arange(self.n_neurons)[:, None]
        if np.any(adj == idx):
            raise ValueError("self-loop present")
        if np.any((adj < 0) | (adj >= self.n_neurons)):
            raise ValueError("neighbor index out of range")
        srt = np.sort(adj, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise ValueError("duplicate neighbor entry")
        # symmetry: the directed link multiset equals its transpose
        fwd = np.sort(idx.repeat(self.degree, 1).ravel().astype(np.int64) * self.n_neurons + adj.ravel())
        bwd = np.sort(adj.ravel().astype(np.int64) * self.n_neurons + idx.repeat(self.degree, 1).ravel())
        if not np.array_equal(fwd, bwd):
            raise ValueError("adjacency is not symmetric")


def _pair_attempt(n, d, rng):
    """One Steger-Wormald pairing pass; returns an edge array or ``None``."""
    edges = set()
    points = np.repeat(np.arange(n, dtype=np.int64), d)
    while points.size:
        rng.shuffle(points)
        a, b = points[0::2], points[1::2]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = lo * n + hi
        leftover = []
        for u, v, key in zip(lo.tolist(), hi.tolist(), keys.tolist()):
            if u != v and key not in edges:
                edges.add(key)
            else:
                leftover.append(u)
                leftover.append(v)
        if leftover and not _has_suitable_pair(leftover, edges, n):
            return None
        points = np.array(leftover, dtype=np.int64)
    keys = np.fromiter(edges, dtype=np.int64, count=len(edges))
    return np.column_stack([keys // n, keys % n])


def _has_suitable_pair(points, edges, n):
    verts = sorted(set(points))
    for i, u in enumerate(verts):
        for v in verts[i + 1:]:
            if u * n + v not in edges:
                return True
    return False


def generate_regular_graph(n, d, seed, max_attempts=1000):
    """Sample a connected simple ``d``-regular graph on ``n`` vertices.

    Deterministic in ``(n, d, seed)``: attempt ``k`` draws from the stream
    keyed by ``(seed, k)``.

    Raises
    ------
    InvalidParametersError
        If ``n*d`` is odd, ``d < 2`` or ``d >= n``.
    RetryBudgetExhausted
        If ``max_attempts`` consecutive attempts fail.
    """
    if (n * d) % 2 != 0:
        raise InvalidParametersError(f"n*d must be even (n={n}, d={d})")
    if d < 2 or d >= n:
        raise InvalidParametersError(f"need 2 <= d < n (n={n}, d={d})")
    for attempt in range(max_attempts):
        rng = _rng.stream(seed, _rng.GRAPH, attempt)
        edges = _pair_attempt(n, d, rng)
        if edges is None:
            continue
        net = Network.from_edges(n, edges, seed=seed)
        if component_count(net) == 1:
            return net
    raise RetryBudgetExhausted(
        f"no connected {d}-regular graph on {n} vertices after {max_attempts} attempts"
    )


def ring_network(n):
    """Cycle on ``n >= 3`` vertices (the 2-regular connected graph)."""
    if n < 3:
        raise InvalidParametersError(f"a ring needs at least 3 vertices, got {n}")
    i = np.arange(n)
    return Network.from_edges(n, np.column_stack([i, (i + 1) % n]))


def component_count(net):
    """Number of connected components of ``net``."""
    n = net.n_neurons
    rows = np.repeat(np.arange(n), net.degree)
    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, net.adjacency.ravel())), shape=(n, n))
    ncomp, _ = connected_components(graph, directed=False)
    return int(ncomp)


def save_edgelist(net, path):
    """Write ``net`` as a 0-based edge list with a ``# n= d= seed=`` header."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# n={net.n_neurons} d={net.degree} seed={net.seed}\n")
        for i, j in net.edges():
            fh.write(f"{i} {j}\n")


def load_edgelist(path):
    """Read a network written by :func:`save_edgelist`."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# n=<N> d=<d> seed=<seed>' header")
        fields = dict(tok.split("=", 1) for tok in header[1:].split())
        edges = np.loadtxt(fh, dtype=np.int64, ndmin=2)
    n, d = int(fields["n"]), int(fields["d"])
    seed = None if fields.get("seed", "None") == "None" else int(fields["seed"])
    net = Network.from_edges(n, edges.reshape(-1, 2), seed=seed)
    if net.degree != d:
        raise ValueError(f"{path}: header says d={d}, edges give d={net.degree}")
    net.validate()
    return net
