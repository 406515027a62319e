"""Client communication topologies and the averaging matrices built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
from scipy import integrate, optimize

from .errors import GenerationError, InvalidParameterError

MAX_RESAMPLES = 100


@dataclass(frozen=True)
class Topology:
    """Undirected connected graph over ``n_clients`` clients.

    ``edges`` holds unordered pairs ``(i, j)`` with ``i < j``; self-inclusion
    lives only in :attr:`augmented_adjacency`.
    """

    n_clients: int
    edges: frozenset
    positions: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.n_clients < 1:
            raise InvalidParameterError("n_clients must be positive")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise InvalidParameterError(f"self-loop on client {i}")
            if not (0 <= i < self.n_clients and 0 <= j < self.n_clients):
                raise InvalidParameterError(f"edge ({i}, {j}) out of range")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))
        nbrs = [[] for _ in range(self.n_clients)]
        for i, j in clean:
            nbrs[i].append(j)
            nbrs[j].append(i)
        object.__setattr__(self, "_neighbors", tuple(tuple(sorted(n)) for n in nbrs))

    @classmethod
    def from_edges(cls, n_clients: int, edges: Iterable[Sequence[int]]) -> "Topology":
        return cls(n_clients, frozenset(tuple(e) for e in edges))

    def neighbors(self, i: int) -> tuple:
        return self._neighbors[i]

    def closed_neighborhood(self, i: int) -> tuple:
        return tuple(sorted(self._neighbors[i] + (i,)))

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self._neighbors])

    @property
    def mean_degree(self) -> float:
        return 2.0 * len(self.edges) / self.n_clients

    @property
    def augmented_adjacency(self) -> np.ndarray:
        A = np.eye(self.n_clients, dtype=np.int8)
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1
        return A

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self._neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_clients

    def to_edgelist(self) -> str:
        lines = [f"n={self.n_clients}"]
        lines += [f"{i} {j}" for i, j in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> "Topology":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("n="):
            raise InvalidParameterError("edge list must start with a 'n=<N>' header")
        n = int(lines[0][2:])
        edges = []
        for ln in lines[1:]:
            a, b = ln.split()
            edges.append((int(a), int(b)))
        return cls.from_edges(n, edges)

    def save(self, path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.from_edgelist(Path(path).read_text())


def path_graph(n: int) -> Topology:
    return Topology.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> Topology:
    return Topology.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def _from_nx(g: nx.Graph, positions=None) -> Topology:
    return Topology(g.number_of_nodes(), frozenset((min(a, b), max(a, b)) for a, b in g.edges()), positions)


def _attempt_seeds(seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESAMPLES):
        yield int(rng.integers(2**32))


def _check_degree(n: int, avg_degree: float) -> None:
    if n < 2:
        raise InvalidParameterError("need at least 2 clients")
    if not avg_degree > 0:
        raise InvalidParameterError("avg_degree must be positive")
    # n=2 has a single possible edge; a target of 1 is that graph.
    if avg_degree >= n - 1 and not (n == 2 and avg_degree == 1):
        raise InvalidParameterError(f"avg_degree {avg_degree} must be < n-1 = {n - 1}")


def generate_er(n: int, avg_degree: float, seed: int) -> Topology:
    """Connected Erdos-Renyi graph with edge probability ``avg_degree/(n-1)``.

    Resamples up to ``MAX_RESAMPLES`` times until the draw is connected.
    """
    _check_degree(n, avg_degree)
    p = min(avg_degree / (n - 1), 1.0)
    for s in _attempt_seeds(seed):
        topo = _from_nx(nx.gnp_random_graph(n, p, seed=s))
        if topo.is_connected():
            return topo
    raise GenerationError(f"no connected ER graph after {MAX_RESAMPLES} draws (n={n}, d={avg_degree})")


def generate_ba(n: int, attach_m: int, seed: int) -> Topology:
    """Barabasi-Albert preferential attachment graph; ``m(n-m)`` edges, always connected."""
    if not (1 <= attach_m < n):
        raise InvalidParameterError(f"attach_m must satisfy 1 <= m < n (got m={attach_m}, n={n})")
    s = next(_attempt_seeds(seed))
    return _from_nx(nx.barabasi_albert_graph(n, attach_m, seed=s))


def _unit_square_link_probability(r: float) -> float:
    # P(|U - V| < r) for U, V uniform on the unit square; per-axis gaps have density 2(1-t).
    if r <= 0:
        return 0.0
    if r >= math.sqrt(2):
        return 1.0
    if r <= 1:
        return math.pi * r * r - 8.0 / 3.0 * r**3 + 0.5 * r**4

    def inner(a):
        c = min(math.sqrt(max(r * r - a * a, 0.0)), 1.0)
        return 2 * (1 - a) * (1 - (1 - c) ** 2)

    return integrate.quad(inner, 0.0, 1.0, limit=200)[0]


def rgg_radius(n: int, avg_degree: float) -> float:
    """Radius whose expected degree in the unit square equals ``avg_degree``."""
    target = avg_degree / (n - 1)
    if target >= 1:
        return math.sqrt(2)
    return optimize.brentq(lambda r: _unit_square_link_probability(r) - target, 0.0, math.sqrt(2), xtol=1e-12)


def _components(topo: Topology) -> list:
    g = nx.Graph()
    g.add_nodes_from(range(topo.n_clients))
    g.add_edges_from(topo.edges)
    return [sorted(c) for c in nx.connected_components(g)]


def _repair_geometric(topo: Topology) -> Topology:
    """Join components by repeatedly adding the shortest inter-component edge."""
    pos = topo.positions
    edges = set(topo.edges)
    comps = _components(topo)
    while len(comps) > 1:
        comp_of = np.empty(topo.n_clients, dtype=int)
        for k, c in enumerate(comps):
            comp_of[c] = k
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        d[comp_of[:, None] == comp_of[None, :]] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        edges.add((min(i, j), max(i, j)))
        topo = Topology(topo.n_clients, frozenset(edges), pos)
        comps = _components(topo)
    return topo


def generate_rgg(n: int, avg_degree: float, seed: int) -> Topology:
    """Random geometric graph in the unit square.

    The radius is calibrated to the expected degree with boundary effects
    included. Disconnected draws are resampled; the last draw is repaired
    by shortest-edge joining if every resample failed.
    """
    _check_degree(n, avg_degree)
    r = rgg_radius(n, avg_degree)
    topo = None
    for s in _attempt_seeds(seed):
        g = nx.random_geometric_graph(n, r, seed=s)
        pos = np.array([g.nodes[k]["pos"] for k in range(n)])
        topo = _from_nx(g, pos)
        if topo.is_connected():
            return topo
    return _repair_geometric(topo)


def generate(kind: str, n: int, degree: float, seed: int) -> Topology:
    """Dispatch on topology kind; BA maps the degree knob to ``attach_m = round(d/2)``."""
    kind = kind.lower()
    if kind == "er":
        return generate_er(n, degree, seed)
    if kind == "ba":
        return generate_ba(n, max(1, int(round(degree / 2))), seed)
    if kind == "rgg":
        return generate_rgg(n, degree, seed)
    if kind == "complete":
        return complete_graph(n)
    if kind == "path":
        return path_graph(n)
    raise InvalidParameterError(f"unknown topology kind {kind!r}")


@dataclass(frozen=True)
class WeightMatrix:
    entries: np.ndarray
    cluster: int = 0
    round: int = 0

    def __matmul__(self, other):
        return self.entries @ other


def build_weight_matrix(topology: Topology, selections, cluster: int, n_clusters: int | None = None,
                        round: int = 0) -> WeightMatrix:
    """Averaging matrix for one cluster in one round.

    Row ``i`` puts weight ``1/k`` on each of the ``k`` members of the closed
    neighbourhood of ``i`` that selected ``cluster``; if there are none the
    row is the identity row. ``W @ C`` is the per-cluster update.
    """
    sel = np.asarray(selections, dtype=int)
    n = topology.n_clients
    if sel.shape != (n,):
        raise InvalidParameterError(f"need one selection per client ({n}), got shape {sel.shape}")
    upper = n_clusters if n_clusters is not None else max(int(sel.max()) + 1, cluster + 1)
    if sel.min() < 0 or sel.max() >= upper or not (0 <= cluster < upper):
        raise InvalidParameterError("selection or cluster index out of range")
    W = np.zeros((n, n))
    for i in range(n):
        members = [j for j in topology.closed_neighborhood(i) if sel[j] == cluster]
        if members:
            W[i, members] = 1.0 / len(members)
        else:
            W[i, i] = 1.0
    return WeightMatrix(W, cluster, round)


def build_uniform_matrix(topology: Topology) -> WeightMatrix:
    """Closed-neighbourhood uniform averaging (every client selected the same cluster)."""
    return build_weight_matrix(topology, np.zeros(topology.n_clients, dtype=int), 0, 1)


def build_metropolis_matrix(topology: Topology) -> WeightMatrix:
    """Symmetric doubly-stochastic Metropolis-Hastings weights."""
    n = topology.n_clients
    deg = topology.degrees
    W = np.zeros((n, n))
    for i, j in topology.edges:
        W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return WeightMatrix(W)
