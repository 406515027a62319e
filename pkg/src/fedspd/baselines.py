"""Comparison algorithms run on the same topology, data, model and metrics surfaces.

State is a center bank of shape (N, K, X): K=1 for FedAvg variants and
local training, K=S for IFCA and the FedEM-style stand-in. ``weights`` holds
each client's per-model mixing weights for building its evaluation model.

The FedEM-style baseline is a simplified stand-in: responsibilities are
loss posteriors ``r_ks ~ pi_is exp(-loss_s(d_k))`` rather than a learned EM
likelihood. It keeps what the comparison is about: every client trains and
transmits all S models each round.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .data import Federation
from .errors import DivergenceError, InvalidParameterError
from .graph import Topology
from .model import Objective, sgd_steps
from .protocol import ClusterBank, ProtocolConfig, RoundInfo, consensus_mean, exchange_and_update
from .rng import Streams

BASELINES = ("dfl-fedavg", "dfl-ifca", "dfl-fedem-style", "local-only", "cfl-fedavg")
MULTI_MODEL = ("dfl-ifca", "dfl-fedem-style")


@dataclass
class BaselineState:
    bank: ClusterBank
    weights: np.ndarray  # (N, K)
    round: int = 0

    def models(self) -> np.ndarray:
        """Per-client evaluation models ``sum_k weights_ik c_ik``."""
        out = np.zeros((self.bank.n_clients, self.bank.param_dim))
        for k in range(self.bank.n_clusters):
            out += self.weights[:, k, None] * self.bank.centers[:, k, :]
        return out


def n_models(kind: str, n_clusters: int) -> int:
    if kind not in BASELINES:
        raise InvalidParameterError(f"unknown baseline {kind!r}")
    return n_clusters if kind in MULTI_MODEL else 1


def init_baseline_state(kind: str, federation: Federation, objective: Objective, config: ProtocolConfig,
                        streams: Streams) -> BaselineState:
    K = n_models(kind, config.n_clusters)
    base = np.stack([objective.init_params(streams("init", s), config.init_scale) for s in range(K)])
    centers = np.broadcast_to(base, (federation.n_clients, K, objective.param_dim)).copy()
    weights = np.full((federation.n_clients, K), 1.0 / K)
    if kind == "dfl-ifca":
        weights = _ifca_weights(centers, federation, objective)
    return BaselineState(ClusterBank(centers, 0), weights, 0)


def neighborhood_average(models: np.ndarray, topology: Topology) -> np.ndarray:
    """Uniform mean over each client's closed neighbourhood."""
    out = np.empty_like(models)
    for i in range(topology.n_clients):
        out[i] = consensus_mean(models[list(topology.closed_neighborhood(i))])
    return out


def _train(objective, params, client, steps, lr, batch_size, rng, weights=None):
    try:
        return sgd_steps(objective, params, client.features, client.labels, steps, lr, batch_size, rng, weights)
    except DivergenceError as e:
        raise DivergenceError(f"client {client.client_id}: {e}", step=e.step, client=client.client_id) from e


def _local_all_data(state, federation, objective, config, streams, rnd):
    models = state.bank.centers[:, 0, :].copy()
    steps, lr = config.steps_at(rnd), config.lr_at(rnd)
    for i, c in enumerate(federation.clients):
        models[i] = _train(objective, models[i], c, steps, lr, config.batch_size, streams("local", i, rnd))
    return models


def _single(models, state, rnd):
    return BaselineState(ClusterBank(models[:, None, :].copy(), rnd), state.weights, rnd)


def run_dfl_fedavg_round(state: BaselineState, topology: Topology, federation: Federation, objective: Objective,
                         config: ProtocolConfig, streams: Streams):
    """Local SGD on all local data, then closed-neighbourhood averaging of the single model."""
    rnd = state.round + 1
    models = neighborhood_average(_local_all_data(state, federation, objective, config, streams, rnd), topology)
    messages = 2 * len(topology.edges)
    info = RoundInfo(rnd, np.zeros(topology.n_clients, dtype=int), [], messages, messages * objective.param_dim)
    return _single(models, state, rnd), info


def run_cfl_fedavg_round(state: BaselineState, federation: Federation, objective: Objective,
                         config: ProtocolConfig, streams: Streams):
    """Server-side exact mean over all clients."""
    rnd = state.round + 1
    models = _local_all_data(state, federation, objective, config, streams, rnd)
    models[:] = consensus_mean(models)
    n = federation.n_clients
    info = RoundInfo(rnd, np.zeros(n, dtype=int), [], 2 * n, 2 * n * objective.param_dim)
    return _single(models, state, rnd), info


def run_local_round(state: BaselineState, federation: Federation, objective: Objective, config: ProtocolConfig,
                    streams: Streams):
    rnd = state.round + 1
    models = _local_all_data(state, federation, objective, config, streams, rnd)
    return _single(models, state, rnd), RoundInfo(rnd, np.zeros(federation.n_clients, dtype=int), [], 0, 0)


def run_local_only(federation: Federation, objective: Objective, config: ProtocolConfig,
                   streams: Streams) -> np.ndarray:
    """Per-client SGD for ``config.rounds`` rounds with no communication; returns final models."""
    state = init_baseline_state("local-only", federation, objective, config, streams)
    for _ in range(config.rounds):
        state, _ = run_local_round(state, federation, objective, config, streams)
    return state.models()


def _total_losses(centers, federation, objective):
    return np.array([[np.sum(objective.pointwise_loss(centers[i, k], c.features, c.labels))
                      for k in range(centers.shape[1])] for i, c in enumerate(federation.clients)])


def _ifca_weights(centers, federation, objective):
    choice = np.argmin(_total_losses(centers, federation, objective), axis=1)
    return np.eye(centers.shape[1])[choice]


def run_dfl_ifca_round(state: BaselineState, topology: Topology, federation: Federation, objective: Objective,
                       config: ProtocolConfig, streams: Streams):
    """Hard clustering: each client trains the model with lowest total local loss, then per-cluster averaging."""
    rnd = state.round + 1
    centers = state.bank.centers.copy()
    sel = np.argmin(_total_losses(centers, federation, objective), axis=1)
    steps, lr = config.steps_at(rnd), config.lr_at(rnd)
    for i, c in enumerate(federation.clients):
        centers[i, sel[i]] = _train(objective, centers[i, sel[i]], c, steps, lr, config.batch_size,
                                    streams("local", i, rnd))
    bank = exchange_and_update(ClusterBank(centers, state.round), topology, sel)
    messages = 2 * len(topology.edges)
    info = RoundInfo(rnd, sel, [], messages, messages * objective.param_dim)
    return BaselineState(ClusterBank(bank.centers, rnd), _ifca_weights(bank.centers, federation, objective), rnd), info


def responsibilities(centers_i, prior_i, client, objective):
    """Per-point posterior over models from the loss: ``r_ks ~ prior_s * exp(-loss_s(d_k))``."""
    losses = np.stack([objective.pointwise_loss(centers_i[k], client.features, client.labels)
                       for k in range(len(centers_i))], axis=1)
    with np.errstate(divide="ignore"):
        return softmax(np.log(prior_i)[None, :] - losses, axis=1)


def run_dfl_fedem_style_round(state: BaselineState, topology: Topology, federation: Federation,
                              objective: Objective, config: ProtocolConfig, streams: Streams):
    """Every client trains all K models on responsibility-weighted data and exchanges all of them."""
    rnd = state.round + 1
    K = state.bank.n_clusters
    centers = state.bank.centers.copy()
    weights = state.weights.copy()
    steps, lr = config.steps_at(rnd), config.lr_at(rnd)
    for i, c in enumerate(federation.clients):
        r = responsibilities(centers[i], weights[i], c, objective)
        weights[i] = r.mean(axis=0)
        rng = streams("local", i, rnd)
        for k in range(K):
            centers[i, k] = _train(objective, centers[i, k], c, steps, lr, config.batch_size, rng, r[:, k])
    for k in range(K):
        centers[:, k, :] = neighborhood_average(centers[:, k, :], topology)
    messages = 2 * len(topology.edges)
    info = RoundInfo(rnd, np.zeros(topology.n_clients, dtype=int), [], messages, messages * K * objective.param_dim)
    return BaselineState(ClusterBank(centers, rnd), weights, rnd), info
