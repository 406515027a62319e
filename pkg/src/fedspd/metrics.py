"""Diagnostics computed from snapshots of a run.

All functions are read-only. Vector metrics are indexed by cluster; entries
for clusters an algorithm does not model are NaN.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Federation
from .errors import InvalidParameterError, NotApplicableError, UndefinedRateError
from .model import Objective


@dataclass(frozen=True)
class ClientStats:
    mean: float
    min: float
    max: float
    std: float
    metric: str = "accuracy"

    def as_tuple(self):
        return (self.mean, self.min, self.max, self.std)


NAN_STATS = ClientStats(math.nan, math.nan, math.nan, math.nan, "none")


def summary_stats(values, metric="accuracy") -> ClientStats:
    """Mean, min, max and population standard deviation across clients."""
    v = np.asarray(values, dtype=float)
    return ClientStats(float(v.mean()), float(v.min()), float(v.max()), float(v.std()), metric)


def consensus_distance(bank, cluster: int) -> float:
    """``(1/N) sum_i ||c_is - mean_i c_is||^2``."""
    C = bank.centers[:, cluster, :] if hasattr(bank, "centers") else np.asarray(bank)[:, cluster, :]
    dev = C - C.mean(axis=0)
    return float(np.sum(dev * dev) / len(C))


def matrix_consensus_distance(C) -> float:
    C = np.asarray(C, dtype=float).reshape(len(C), -1)
    dev = C - C.mean(axis=0)
    return float(np.sum(dev * dev) / len(C))


def matrix_contraction(W, C) -> float:
    """Empirical one-step contraction ``||WC - mean||_F^2 / ||C - mean||_F^2``."""
    W = getattr(W, "entries", W)
    before = matrix_consensus_distance(C)
    if before == 0:
        return 0.0
    return matrix_consensus_distance(W @ np.asarray(C, dtype=float)) / before


@dataclass(frozen=True)
class ConsensusRateEstimate:
    p_hat: float
    beta: int
    n_windows: int
    contraction_observed: bool


def estimate_consensus_rate(distance_series, beta: int, floor: float = 1e-6) -> ConsensusRateEstimate:
    """Worst-window contraction estimate.

    ``p_hat = 1 - max_l E[(l+1)beta] / E[l beta]`` over windows whose starting
    distance is positive, clipped to ``[floor, 1]``.
    """
    if beta < 1:
        raise InvalidParameterError("beta must be >= 1")
    E = np.asarray(distance_series, dtype=float)
    if len(E) and np.all(E == 0):
        raise UndefinedRateError("distance series is identically zero: already at consensus")
    if len(E) < 2 * beta:
        raise InvalidParameterError(f"need at least {2 * beta} rounds, got {len(E)}")
    marks = E[::beta]
    ratios = [marks[l + 1] / marks[l] for l in range(len(marks) - 1) if marks[l] > 0]
    if not ratios:
        raise UndefinedRateError("no window starts away from consensus")
    p = 1.0 - max(ratios)
    observed = p > floor
    return ConsensusRateEstimate(float(min(max(p, floor), 1.0)), beta, len(ratios), bool(observed))


def cluster_error(bank, true_centers, mu: float, L: float, delta: float, alpha0: float) -> np.ndarray:
    """Per-(client, cluster) flags for ``||c_is - c_s*|| <= (0.5 - alpha0) sqrt(mu/L) delta``."""
    if true_centers is None:
        raise NotApplicableError("true cluster centers are unknown for this federation")
    if not 0 < alpha0 <= 0.5:
        raise InvalidParameterError("alpha0 must be in (0, 0.5]")
    centers = bank.centers if hasattr(bank, "centers") else np.asarray(bank)
    bound = (0.5 - alpha0) * math.sqrt(mu / L) * delta
    dist = np.linalg.norm(centers - np.asarray(true_centers)[None, :, :], axis=-1)
    return dist <= bound


def hessian_spectrum(federation: Federation, cluster: int | None = None):
    """``(mu_emp, L_emp)``: extreme eigenvalues of the squared-loss Hessian ``X^T X / n``."""
    X, _ = federation.pooled(cluster)
    ev = np.linalg.eigvalsh(X.T @ X / len(X))
    return float(ev[0]), float(ev[-1])


def gradient_moments(objective: Objective, params, X, y, batch_size: int, rng, n_draws: int = 200):
    """Monte-Carlo ``(E||g||^2, E||g - grad F||^2)`` for minibatch gradients."""
    full = objective.gradient(params, X, y)
    sq, var = 0.0, 0.0
    for _ in range(n_draws):
        idx = rng.integers(0, len(y), size=batch_size)
        g = objective.gradient(params, X[idx], y[idx])
        sq += g @ g
        var += (g - full) @ (g - full)
    return sq / n_draws, var / n_draws


def client_accuracies(objective: Objective, models, federation: Federation) -> np.ndarray:
    return np.array([np.mean(objective.predict(models[i], c.features) == c.labels)
                     for i, c in enumerate(federation.clients)])


def client_risks(objective: Objective, models, federation: Federation) -> np.ndarray:
    return np.array([objective.loss(models[i], c.features, c.labels) for i, c in enumerate(federation.clients)])


def accuracy_stats(objective: Objective, models, federation: Federation) -> ClientStats:
    """Per-client accuracy summary; regression objectives report mean risk instead (``metric='risk'``)."""
    if not objective.is_classifier:
        return summary_stats(client_risks(objective, models, federation), "risk")
    return summary_stats(client_accuracies(objective, models, federation), "accuracy")


def risk_stats(objective: Objective, models, federation: Federation) -> ClientStats:
    return summary_stats(client_risks(objective, models, federation), "risk")


def _perms(S):
    return list(itertools.permutations(range(S)))


def mixture_abs_error(mixture, federation: Federation, permute: bool = False) -> float:
    """Mean over clients of ``sum_s |u_is - u*_is|`` against each client's realized true mixture.

    With ``permute`` the best global relabeling of the estimated clusters is used.
    """
    mixture = np.asarray(mixture, dtype=float)
    S = federation.n_clusters
    if mixture.shape[1] != S:
        raise InvalidParameterError("mixture has the wrong number of clusters")
    truth = np.stack([c.realized_mixture(S) for c in federation.clients])
    perms = _perms(S) if permute else [tuple(range(S))]
    # perm[s] = true cluster matched to estimated cluster s
    return float(min(np.abs(mixture[:, list(np.argsort(p))] - truth).sum(axis=1).mean() for p in perms))


def assignment_accuracy(federation: Federation, assignments, n_clusters: int) -> float:
    """Fraction of points whose assignment equals their true cluster, best relabeling."""
    a = np.concatenate([np.asarray(x) for x in assignments])
    t = np.concatenate([c.true_cluster for c in federation.clients])
    best = 0.0
    for p in _perms(n_clusters):
        best = max(best, float(np.mean(np.asarray(p)[a] == t)))
    return best


def match_clusters(avg_centers, federation: Federation, objective: Objective):
    """Permutation ``perm`` with ``perm[s]`` the true cluster best matching estimate ``s``.

    Uses Euclidean distance to known optimal centers, falling back to pooled
    per-cluster risk when they are unknown.
    """
    K = len(avg_centers)
    S = federation.n_clusters
    truth = federation.true_centers
    if truth is not None:
        cost = np.array([[np.sum((avg_centers[k] - truth[s]) ** 2) for s in range(S)] for k in range(K)])
    else:
        pools = [federation.pooled(s) for s in range(S)]
        cost = np.array([[objective.loss(avg_centers[k], *pools[s]) for s in range(S)] for k in range(K)])
    best, best_cost = None, math.inf
    for p in itertools.permutations(range(S), K):
        c = sum(cost[k, p[k]] for k in range(K))
        if best is None or c < best_cost:
            best, best_cost = p, c
    return best


@dataclass
class RoundMetrics:
    round: int
    consensus_distance: np.ndarray
    avg_center_risk_gap: np.ndarray
    center_distance: np.ndarray
    mixture_abs_error: float
    mixture_abs_error_perm: float
    assignment_accuracy: float
    train_accuracy_stats: ClientStats
    test_accuracy_stats: ClientStats
    train_risk_stats: ClientStats
    test_risk_stats: ClientStats
    messages_sent: int
    payload_params_sent: int
    extras: dict = field(default_factory=dict)


def compute_round_metrics(rnd: int, centers, models, mixture, assignments, train: Federation, test: Federation,
                          objective: Objective, n_clusters: int, messages_sent: int = 0,
                          payload_params_sent: int = 0) -> RoundMetrics:
    """Assemble every per-round diagnostic.

    ``centers`` is the (N, K, X) center bank (K may be below ``n_clusters`` for
    single-model algorithms), ``models`` the per-client evaluation models,
    ``mixture`` the (N, S) estimated mixture or ``None``, ``assignments`` the
    per-point cluster assignments or ``None``.
    """
    # a run on its way to divergence may report inf diagnostics; that is not an error here
    with np.errstate(over="ignore", invalid="ignore"):
        return _round_metrics(rnd, centers, models, mixture, assignments, train, test, objective, n_clusters,
                              messages_sent, payload_params_sent)


def _round_metrics(rnd, centers, models, mixture, assignments, train, test, objective, n_clusters,
                   messages_sent, payload_params_sent):
    centers = np.asarray(centers, dtype=float)
    K = centers.shape[1]
    S = n_clusters
    cd = np.full(S, np.nan)
    gap = np.full(S, np.nan)
    dist = np.full(S, np.nan)
    avg = centers.mean(axis=0)
    for k in range(min(K, S)):
        cd[k] = matrix_consensus_distance(centers[:, k, :])
    if train.n_clusters == S and K == S:
        perm = match_clusters(avg, train, objective)
        truth = train.true_centers
        for k in range(K):
            Xs, ys = train.pooled(perm[k])
            ref = objective.loss(truth[perm[k]], Xs, ys) if truth is not None else 0.0
            gap[k] = objective.loss(avg[k], Xs, ys) - ref
            if truth is not None:
                dist[k] = float(np.linalg.norm(avg[k] - truth[perm[k]]))
    mix_raw = mix_perm = acc_assign = math.nan
    if mixture is not None and np.asarray(mixture).shape[1] == train.n_clusters:
        mix_raw = mixture_abs_error(mixture, train)
        mix_perm = mixture_abs_error(mixture, train, permute=True)
    if assignments is not None:
        acc_assign = assignment_accuracy(train, assignments, train.n_clusters)
    if objective.is_classifier:
        tr_acc = summary_stats(client_accuracies(objective, models, train))
        te_acc = summary_stats(client_accuracies(objective, models, test))
    else:
        tr_acc = te_acc = NAN_STATS
    return RoundMetrics(rnd, cd, gap, dist, mix_raw, mix_perm, acc_assign, tr_acc, te_acc,
                        risk_stats(objective, models, train), risk_stats(objective, models, test),
                        int(messages_sent), int(payload_params_sent))


def metrics_columns(n_clusters: int) -> list:
    cols = ["round", "algorithm"]
    for name in ("consensus_distance", "avg_center_risk_gap", "center_distance"):
        cols += [f"{name}_s{s + 1}" for s in range(n_clusters)]
    cols += ["mixture_abs_error", "mixture_abs_error_perm", "assignment_accuracy"]
    for name in ("train_acc", "test_acc", "train_risk", "test_risk"):
        cols += [f"{name}_{st}" for st in ("mean", "min", "max", "std")]
    cols += ["messages_sent", "payload_params_sent"]
    return cols


def metrics_row(m: RoundMetrics, algorithm: str) -> list:
    row = [m.round, algorithm]
    row += list(m.consensus_distance) + list(m.avg_center_risk_gap) + list(m.center_distance)
    row += [m.mixture_abs_error, m.mixture_abs_error_perm, m.assignment_accuracy]
    for st in (m.train_accuracy_stats, m.test_accuracy_stats, m.train_risk_stats, m.test_risk_stats):
        row += list(st.as_tuple())
    row += [m.messages_sent, m.payload_params_sent]
    return row
