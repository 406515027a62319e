"""Per-client datasets drawn as mixtures of cluster distributions.

Features, labels and ground-truth cluster origin are stored as arrays per
client. ``true_cluster`` is only read by oracles and metrics; the protocol
sees ``assigned``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import InvalidParameterError

MIN_FRACTION, MAX_FRACTION = 0.1, 0.9


@dataclass(frozen=True)
class DataPoint:
    features: np.ndarray
    label: Any
    true_cluster: int
    assigned_cluster: int


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    features: np.ndarray      # (n, dim)
    labels: np.ndarray        # (n,) int classes or float targets
    true_cluster: np.ndarray  # (n,) int in [0, S)
    assigned: np.ndarray      # (n,) int in [0, S)
    true_mixture: np.ndarray  # (S,) generating fractions

    def __len__(self):
        return len(self.labels)

    @property
    def points(self) -> list:
        return [DataPoint(self.features[k], self.labels[k], int(self.true_cluster[k]), int(self.assigned[k]))
                for k in range(len(self))]

    def realized_mixture(self, n_clusters: int) -> np.ndarray:
        """Fraction of this client's points whose true origin is each cluster."""
        return np.bincount(self.true_cluster, minlength=n_clusters) / len(self)

    def subset(self, idx) -> "ClientDataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       true_cluster=self.true_cluster[idx], assigned=self.assigned[idx])


@dataclass(frozen=True)
class Federation:
    clients: tuple
    n_clusters: int
    generator_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {c.features.shape[1] for c in self.clients}
        if len(dims) > 1:
            raise InvalidParameterError("clients disagree on feature dimensionality")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].features.shape[1]

    @property
    def true_centers(self):
        """Known optimal per-cluster parameters, or ``None``."""
        return self.generator_spec.get("true_centers")

    @property
    def task(self) -> str:
        return self.generator_spec.get("task", "regression")

    def with_assignments(self, assignments) -> "Federation":
        clients = tuple(replace(c, assigned=np.asarray(a, dtype=int)) for c, a in zip(self.clients, assignments))
        return replace(self, clients=clients)

    def assignments(self) -> list:
        return [c.assigned.copy() for c in self.clients]

    def pooled(self, cluster: int | None = None):
        """Concatenate all clients' points, optionally those of one true cluster."""
        X = np.concatenate([c.features for c in self.clients])
        y = np.concatenate([c.labels for c in self.clients])
        if cluster is None:
            return X, y
        tc = np.concatenate([c.true_cluster for c in self.clients])
        return X[tc == cluster], y[tc == cluster]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["client_id", "point_id"] + [f"feature_{k}" for k in range(self.dim)]
                   + ["label", "true_cluster"])
        for c in self.clients:
            for k in range(len(c)):
                w.writerow([c.client_id, k] + [repr(float(v)) for v in c.features[k]]
                           + [_fmt_label(c.labels[k]), int(c.true_cluster[k])])
        return buf.getvalue()


def _fmt_label(v):
    return int(v) if np.issubdtype(type(v), np.integer) else repr(float(v))


def read_federation_csv(text: str, n_clusters: int, task: str = "regression") -> Federation:
    """Inverse of :meth:`Federation.to_csv`. Assignments start equal to ``true_cluster``."""
    rows = list(csv.reader(io.StringIO(text)))
    header, rows = rows[0], rows[1:]
    n_feat = sum(1 for h in header if h.startswith("feature_"))
    by_client: dict = {}
    for r in rows:
        by_client.setdefault(int(r[0]), []).append(r)
    clients = []
    for cid in sorted(by_client):
        rs = sorted(by_client[cid], key=lambda r: int(r[1]))
        X = np.array([[float(v) for v in r[2:2 + n_feat]] for r in rs])
        lab = [r[2 + n_feat] for r in rs]
        y = np.array([int(v) for v in lab]) if task == "classification" else np.array([float(v) for v in lab])
        tc = np.array([int(r[3 + n_feat]) for r in rs])
        mix = np.bincount(tc, minlength=n_clusters) / len(tc)
        clients.append(ClientDataset(cid, X, y, tc, tc.copy(), mix))
    return Federation(tuple(clients), n_clusters, {"task": task})


def _draw_fractions(rng, n_clients, mixture):
    if mixture is None:
        f = rng.uniform(MIN_FRACTION, MAX_FRACTION, size=n_clients)
    else:
        f = np.clip(np.broadcast_to(np.asarray(mixture, dtype=float), (n_clients,)), MIN_FRACTION, MAX_FRACTION)
    return np.stack([f, 1.0 - f], axis=1)


def _draw_origins(rng, frac, n, exact_counts):
    """Cluster origin per point: i.i.d. by ``frac`` or exact rounded counts in shuffled order."""
    if exact_counts:
        n0 = int(round(frac[0] * n))
        origin = np.array([0] * n0 + [1] * (n - n0))
        return rng.permutation(origin)
    return (rng.random(n) >= frac[0]).astype(int)


def generate_linear_mixture(n_clients: int, points_per_client: int, dim: int, separation: float,
                            noise_std: float, seed: int, *, mixture=None, exact_counts: bool = False) -> Federation:
    """Two-cluster least-squares federation with known optimal weight vectors.

    ``w_1*`` is standard normal and ``w_2* = w_1* + separation * u`` for a random
    unit vector ``u``. Each target is ``<w_s*, x> + noise`` with ``x ~ N(0, I)``.
    ``mixture`` overrides the per-client cluster-1 fraction (clamped to [0.1, 0.9]).
    """
    n_clusters = 2
    if points_per_client < n_clusters:
        raise InvalidParameterError("points_per_client must be at least the number of clusters")
    if dim < 1:
        raise InvalidParameterError("dim must be >= 1")
    if separation < 0 or noise_std < 0:
        raise InvalidParameterError("separation and noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal(dim)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    centers = np.stack([w1, w1 + separation * u])
    fracs = _draw_fractions(rng, n_clients, mixture)
    clients = []
    for i in range(n_clients):
        origin = _draw_origins(rng, fracs[i], points_per_client, exact_counts)
        X = rng.standard_normal((points_per_client, dim))
        y = np.einsum("nd,nd->n", X, centers[origin]) + noise_std * rng.standard_normal(points_per_client)
        assigned = rng.integers(0, n_clusters, size=points_per_client)
        clients.append(ClientDataset(i, X, y, origin, assigned, fracs[i]))
    spec = {"generator": "linear_mixture", "task": "regression", "true_centers": centers,
            "separation": separation, "noise_std": noise_std, "seed": seed}
    return Federation(tuple(clients), n_clusters, spec)


def rotate90(X: np.ndarray) -> np.ndarray:
    """Rotate the first two feature coordinates by 90 degrees: (a, b) -> (-b, a)."""
    out = np.array(X, dtype=float, copy=True)
    out[..., 0], out[..., 1] = -X[..., 1], X[..., 0]
    return out


def generate_rotation_classification(n_clients: int, points_per_client: int, dim: int, n_classes: int, seed: int,
                                     *, class_sep: float = 3.0, shared_sep: float = 0.5, mixture=None,
                                     exact_counts: bool = False) -> Federation:
    """Gaussian-blob classification where cluster 2 is cluster 1 rotated by 90 degrees.

    Class means sit on a circle of radius ``class_sep`` in the first two
    coordinates (the part the rotation scrambles) plus a weaker random
    component of scale ``shared_sep`` in the remaining coordinates that both
    clusters share.
    """
    if dim < 2:
        raise InvalidParameterError("rotation needs dim >= 2")
    if n_classes < 2:
        raise InvalidParameterError("n_classes must be >= 2")
    if points_per_client < 2:
        raise InvalidParameterError("points_per_client must be at least the number of clusters")
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_classes) / n_classes + rng.uniform(0, 2 * np.pi)
    means = shared_sep * rng.standard_normal((n_classes, dim))
    means[:, 0] = class_sep * np.cos(angles)
    means[:, 1] = class_sep * np.sin(angles)
    fracs = _draw_fractions(rng, n_clients, mixture)
    clients = []
    for i in range(n_clients):
        origin = _draw_origins(rng, fracs[i], points_per_client, exact_counts)
        y = rng.integers(0, n_classes, size=points_per_client)
        X = means[y] + rng.standard_normal((points_per_client, dim))
        X[origin == 1] = rotate90(X[origin == 1])
        assigned = rng.integers(0, 2, size=points_per_client)
        clients.append(ClientDataset(i, X, y, origin, assigned, fracs[i]))
    spec = {"generator": "rotation_classification", "task": "classification", "n_classes": n_classes,
            "class_means": means, "seed": seed}
    return Federation(tuple(clients), 2, spec)


def split_train_test(federation: Federation, test_fraction: float, seed: int):
    """Per-client split, stratified by true cluster. Returns ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise InvalidParameterError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in federation.clients:
        counts = np.bincount(c.true_cluster, minlength=federation.n_clusters)
        n_test = _stratified_counts(counts, int(np.floor(test_fraction * len(c) + 0.5)))
        tr_idx, te_idx = [], []
        for s in range(federation.n_clusters):
            members = rng.permutation(np.flatnonzero(c.true_cluster == s))
            te_idx.extend(members[:n_test[s]])
            tr_idx.extend(members[n_test[s]:])
        if not tr_idx or not te_idx:
            raise InvalidParameterError(f"split leaves client {c.client_id} with an empty train or test set")
        train.append(c.subset(np.sort(tr_idx)))
        test.append(c.subset(np.sort(te_idx)))
    return replace(federation, clients=tuple(train)), replace(federation, clients=tuple(test))


def _stratified_counts(counts: np.ndarray, total: int) -> np.ndarray:
    # largest-remainder apportionment of `total` test points across clusters
    quota = counts * (total / counts.sum())
    base = np.floor(quota).astype(int)
    order = np.argsort(-(quota - base), kind="stable")
    base[order[: total - base.sum()]] += 1
    return np.minimum(base, counts)
