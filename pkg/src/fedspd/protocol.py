"""FedSPD rounds: cluster selection, local SGD, neighbourhood averaging, reclustering.

Cluster indices are 0-based throughout. Every client keeps an estimate of
every cluster center (``bank.centers[i, s]``) but trains and broadcasts only
the one cluster it selects each round.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Federation
from .errors import DivergenceError, InvalidParameterError, ProtocolError
from .graph import Topology
from .model import Objective, cosine_similarity, epoch_steps, sgd_steps
from .rng import Streams

log = logging.getLogger(__name__)


@dataclass
class ClusterBank:
    centers: np.ndarray  # (N, S, X)
    round: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        if self.centers.ndim != 3:
            raise InvalidParameterError("centers must have shape (clients, clusters, params)")

    @property
    def n_clients(self) -> int:
        return self.centers.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[1]

    @property
    def param_dim(self) -> int:
        return self.centers.shape[2]

    def column(self, s: int) -> np.ndarray:
        """All clients' estimates of cluster ``s`` as an (N, X) matrix."""
        return self.centers[:, s, :]

    def copy(self) -> "ClusterBank":
        return ClusterBank(self.centers.copy(), self.round)


@dataclass
class ProtocolConfig:
    n_clusters: int = 2
    rounds: int = 150
    tau: int = 5
    lr: float = 5e-2
    lr_decay: float = 0.80
    lr_decay_every: int = 1
    batch_size: int | None = 10
    double_first_round: bool = True
    align: bool = False
    fine_tune_epochs: int = 0
    lr_ft: float = 1e-2
    init_scale: float = 1.0
    init_perturb: float = 0.0
    init_permute: bool = False
    workers: int = 1

    def lr_at(self, rnd: int) -> float:
        """Step size for 1-based round ``rnd``: decays by ``lr_decay`` every ``lr_decay_every`` rounds."""
        return self.lr * self.lr_decay ** ((rnd - 1) // self.lr_decay_every)

    def steps_at(self, rnd: int) -> int:
        return self.tau * (2 if self.double_first_round and rnd == 1 else 1)


@dataclass
class FedSPDState:
    bank: ClusterBank
    mixture: np.ndarray          # (N, S), rows sum to 1
    assignments: list            # per-client int arrays
    round: int = 0


@dataclass
class RoundInfo:
    round: int
    selections: np.ndarray
    skipped: list = field(default_factory=list)
    messages_sent: int = 0
    payload_params_sent: int = 0


def mixture_from_assignments(assignments, n_clusters: int) -> np.ndarray:
    return np.stack([np.bincount(a, minlength=n_clusters) / len(a) for a in assignments])


def init_state(federation: Federation, objective: Objective, config: ProtocolConfig, streams: Streams) -> FedSPDState:
    """Shared per-cluster initialization and uniform random data assignments."""
    S, N = config.n_clusters, federation.n_clients
    base = np.stack([objective.init_params(streams("init", s), config.init_scale) for s in range(S)])
    centers = np.broadcast_to(base, (N, S, objective.param_dim)).copy()
    for i in range(N):
        if config.init_perturb > 0:
            centers[i] += config.init_perturb * streams("perturb", i).standard_normal(centers[i].shape)
        if config.init_permute:
            centers[i] = centers[i][streams("permute", i).permutation(S)]
    assignments = [streams("assign", i).integers(0, S, size=len(c)) for i, c in enumerate(federation.clients)]
    return FedSPDState(ClusterBank(centers, 0), mixture_from_assignments(assignments, S), assignments, 0)


def select_clusters(mixture, streams: Streams, rnd: int) -> np.ndarray:
    """One categorical draw per client with probabilities given by its mixture row."""
    mixture = np.asarray(mixture, dtype=float)
    sel = np.empty(len(mixture), dtype=int)
    for i, row in enumerate(mixture):
        if not row.sum() > 0:
            raise ProtocolError(f"client {i} has an all-zero mixture row")
        cdf = np.cumsum(row / row.sum())
        r = streams("select", i, rnd).random()
        sel[i] = min(int(np.searchsorted(cdf, r, side="right")), len(row) - 1)
    return sel


def local_update(bank: ClusterBank, federation: Federation, selections, tau: int, lr: float,
                 batch_size: int | None, objective: Objective, streams: Streams, rnd: int,
                 workers: int = 1):
    """Advance each client's selected center by ``tau`` SGD steps on its data assigned to that cluster.

    Returns ``(bank, skipped)`` where ``skipped`` lists clients whose selected
    cluster had no assigned points; their centers are left untouched.
    """
    new = bank.centers.copy()
    skipped = []

    def work(i):
        c = federation.clients[i]
        s = int(selections[i])
        mask = c.assigned == s
        if not mask.any():
            return i, None
        try:
            w = sgd_steps(objective, bank.centers[i, s], c.features[mask], c.labels[mask], tau, lr,
                          batch_size, streams("local", i, rnd))
        except DivergenceError as e:
            raise DivergenceError(f"client {i}: {e}", step=e.step, client=i) from e
        return i, w

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, range(bank.n_clients)))
    else:
        results = [work(i) for i in range(bank.n_clients)]
    for i, w in results:
        if w is None:
            skipped.append(i)
            log.info("round %d: client %d selected an empty cluster, skipping local update", rnd, i)
        else:
            new[i, selections[i]] = w
    return ClusterBank(new, bank.round), skipped


def align_clusters(incoming_center, incoming_index: int, own_centers) -> int:
    """Index of the own center most cosine-similar to ``incoming_center`` (lowest index on ties)."""
    sims = [cosine_similarity(incoming_center, c) for c in own_centers]
    return int(np.argmax(sims))


def consensus_mean(stack) -> np.ndarray:
    """Mean over axis 0, computed as ``x_0 + mean(x - x_0)`` so identical inputs average exactly."""
    stack = np.asarray(stack, dtype=float)
    ref = stack[0]
    return ref + np.mean(stack - ref, axis=0)


def exchange_and_update(bank: ClusterBank, topology: Topology, selections, align: bool = False) -> ClusterBank:
    """Each client averages, per cluster, the centers received from its closed neighbourhood.

    Client ``j`` sends ``(s_j, c_{j, s_j})``. Receiver ``i`` replaces ``c_{i, s}``
    with the mean of everything it received for ``s`` and keeps its old value
    for clusters nobody in its neighbourhood trained. With ``align`` the
    receiver relabels neighbours' messages by cosine similarity to its own
    pre-exchange centers.
    """
    old = bank.centers
    new = old.copy()
    S = bank.n_clusters
    for i in range(bank.n_clients):
        buckets = [[] for _ in range(S)]
        for j in topology.closed_neighborhood(i):
            sj = int(selections[j])
            label = align_clusters(old[j, sj], sj, old[i]) if (align and j != i) else sj
            buckets[label].append(old[j, sj])
        for s, msgs in enumerate(buckets):
            if msgs:
                new[i, s] = consensus_mean(np.stack(msgs))
    return ClusterBank(new, bank.round + 1)


def recluster_data(bank: ClusterBank, federation: Federation, objective: Objective):
    """Assign every point to its lowest-loss cluster under its own client's centers.

    Returns ``(federation, mixture)`` with updated assignments and mixture rows.
    """
    assignments = []
    for i, c in enumerate(federation.clients):
        with np.errstate(over="ignore"):
            losses = np.stack([objective.pointwise_loss(bank.centers[i, s], c.features, c.labels)
                               for s in range(bank.n_clusters)])
        assignments.append(np.argmin(losses, axis=0))
    return federation.with_assignments(assignments), mixture_from_assignments(assignments, bank.n_clusters)


def communication_cost(topology: Topology, param_dim: int, centers_per_message: int = 1):
    messages = 2 * len(topology.edges)
    return messages, messages * centers_per_message * param_dim


def run_round(state: FedSPDState, topology: Topology, federation: Federation, objective: Objective,
              config: ProtocolConfig, streams: Streams):
    """One synchronous round. Returns ``(state', RoundInfo)``."""
    rnd = state.round + 1
    fed = federation.with_assignments(state.assignments)
    sel = select_clusters(state.mixture, streams, rnd)
    bank, skipped = local_update(state.bank, fed, sel, config.steps_at(rnd), config.lr_at(rnd),
                                 config.batch_size, objective, streams, rnd, config.workers)
    bank = exchange_and_update(bank, topology, sel, config.align)
    fed, mixture = recluster_data(bank, fed, objective)
    messages, payload = communication_cost(topology, bank.param_dim)
    info = RoundInfo(rnd, sel, skipped, messages, payload)
    return FedSPDState(bank, mixture, fed.assignments(), rnd), info


def mixture_models(bank: ClusterBank, mixture) -> np.ndarray:
    """Per-client weighted sum of cluster centers, ``x_i = sum_s u_is c_is``."""
    mixture = np.asarray(mixture, dtype=float)
    out = np.zeros((bank.n_clients, bank.param_dim))
    for s in range(bank.n_clusters):
        out += mixture[:, s, None] * bank.centers[:, s, :]
    return out


def finalize(bank: ClusterBank, mixture, federation: Federation, objective: Objective, fine_tune_epochs: int,
             lr_ft: float, batch_size: int | None = None, streams: Streams | None = None) -> np.ndarray:
    """Personalized models: mixture-weighted centers, then local fine-tuning on all client data."""
    models = mixture_models(bank, mixture)
    if fine_tune_epochs <= 0:
        return models
    for i, c in enumerate(federation.clients):
        steps = fine_tune_epochs * epoch_steps(len(c), batch_size)
        rng = streams("finetune", i) if streams is not None else None
        try:
            models[i] = sgd_steps(objective, models[i], c.features, c.labels, steps, lr_ft, batch_size, rng)
        except DivergenceError as e:
            raise DivergenceError(f"fine-tuning client {i}: {e}", step=e.step, client=i) from e
    return models
