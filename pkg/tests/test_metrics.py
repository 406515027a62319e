import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedspd import data, graph, metrics, model, protocol
from fedspd.errors import NotApplicableError, UndefinedRateError


def _bank(values):
    return protocol.ClusterBank(np.asarray(values, dtype=float)[:, None, :])


def test_consensus_distance_examples():
    assert metrics.consensus_distance(_bank(np.ones((4, 3))), 0) == 0.0
    assert metrics.consensus_distance(_bank([[0.0], [2.0]]), 0) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-100, 100))
def test_consensus_translation_invariant(seed, shift):
    C = np.random.default_rng(seed).standard_normal((6, 3))
    a = metrics.consensus_distance(_bank(C), 0)
    b = metrics.consensus_distance(_bank(C + shift), 0)
    assert b == pytest.approx(a, rel=1e-6, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_metropolis_averaging_contracts(seed):
    rng = np.random.default_rng(seed)
    t = graph.generate_er(15, 4, seed=seed)
    C = rng.standard_normal((15, 3))
    W = graph.build_metropolis_matrix(t)
    assert metrics.matrix_consensus_distance(W @ C) < metrics.matrix_consensus_distance(C)


def test_rate_geometric_halving():
    E = [2.0 ** -(k // 3) for k in range(12)]
    est = metrics.estimate_consensus_rate(E, 3)
    assert est.p_hat == 0.5 and est.contraction_observed and est.n_windows == 3


def test_rate_constant_series_floor():
    est = metrics.estimate_consensus_rate([0.7] * 10, 2, floor=1e-4)
    assert est.p_hat == 1e-4 and not est.contraction_observed


def test_rate_complete_graph_one_step():
    t = graph.complete_graph(5)
    C = np.random.default_rng(0).standard_normal((5, 2))
    series = [metrics.matrix_consensus_distance(C)]
    C = graph.build_weight_matrix(t, [0] * 5, 0) @ C
    series.append(metrics.matrix_consensus_distance(C))
    assert series[1] < 1e-30
    series[1] = 0.0 if series[1] < 1e-30 else series[1]
    assert metrics.estimate_consensus_rate(series, 1).p_hat == 1.0


def test_rate_all_zero():
    with pytest.raises(UndefinedRateError):
        metrics.estimate_consensus_rate([0.0] * 6, 2)


def test_rate_too_short():
    with pytest.raises(Exception):
        metrics.estimate_consensus_rate([1.0, 0.5, 0.2], 2)


def test_cluster_error_cases():
    truth = np.array([[1.0, 2.0], [-1.0, 0.5]])
    exact = protocol.ClusterBank(np.broadcast_to(truth, (3, 2, 2)).copy())
    assert metrics.cluster_error(exact, truth, 1.0, 4.0, 1e-9, 0.25).all()
    assert metrics.cluster_error(exact, truth, 1.0, 4.0, 3.0, 0.5).all()
    off = exact.centers.copy()
    off[0, 0, 0] += 1e-12
    assert not metrics.cluster_error(off, truth, 1.0, 4.0, 3.0, 0.5)[0, 0]


def test_cluster_error_inclusive_boundary():
    bound = (0.5 - 0.25) * math.sqrt(1.0 / 4.0) * 2.0  # 0.25
    truth = np.zeros((1, 2))
    at = np.array([[[bound, 0.0]]])
    beyond = np.array([[[np.nextafter(bound, 1.0), 0.0]]])
    assert metrics.cluster_error(at, truth, 1.0, 4.0, 2.0, 0.25)[0, 0]
    assert not metrics.cluster_error(beyond, truth, 1.0, 4.0, 2.0, 0.25)[0, 0]


def test_cluster_error_unknown_truth():
    with pytest.raises(NotApplicableError):
        metrics.cluster_error(np.zeros((1, 1, 1)), None, 1, 1, 1, 0.1)


def test_hessian_spectrum_positive():
    fed = data.generate_linear_mixture(5, 50, 3, 2.0, 0.1, seed=0)
    mu, L = metrics.hessian_spectrum(fed, 0)
    assert 0 < mu <= L


def test_accuracy_stats_examples():
    obj = model.make_objective("logistic", 2, 2)
    X = np.array([[1.0, 0.0], [-1.0, 0.0]] * 5)
    y = np.array([1, 0] * 5)
    c = data.ClientDataset(0, X, y, np.zeros(10, int), np.zeros(10, int), np.array([1.0, 0.0]))
    fed = data.Federation((c, c), 2)
    w = np.zeros(obj.param_dim)
    w[0], w[1] = -5.0, 5.0  # class-1 logit follows x0
    st = metrics.accuracy_stats(obj, np.stack([w, w]), fed)
    assert st.as_tuple() == (1.0, 1.0, 1.0, 0.0)
    s = metrics.summary_stats([0.8, 1.0])
    assert s.mean == pytest.approx(0.9) and s.std == pytest.approx(0.1)


def test_accuracy_stats_regression_reports_risk():
    fed = data.generate_linear_mixture(2, 10, 2, 1.0, 0.0, seed=0)
    st = metrics.accuracy_stats(model.make_objective("linear", 2), np.zeros((2, 2)), fed)
    assert st.metric == "risk" and st.mean > 0


def test_mixture_error_zero_under_label_switch():
    fed = data.generate_linear_mixture(6, 20, 2, 1.0, 0.0, seed=1)
    truth = np.stack([c.realized_mixture(2) for c in fed.clients])
    assert metrics.mixture_abs_error(truth, fed) == 0.0
    swapped = truth[:, ::-1]
    assert metrics.mixture_abs_error(swapped, fed, permute=True) == 0.0
    assert metrics.mixture_abs_error(swapped, fed) > 0
    flipped = [1 - c.true_cluster for c in fed.clients]
    assert metrics.assignment_accuracy(fed, flipped, 2) == 1.0


def test_round_metrics_schema_and_ranges():
    fed = data.generate_rotation_classification(6, 20, 3, 3, seed=2)
    tr, te = data.split_train_test(fed, 0.25, seed=2)
    obj = model.make_objective("logistic", 3, 3)
    centers = np.random.default_rng(0).standard_normal((6, 2, obj.param_dim))
    models = centers.mean(axis=1)
    mix = np.full((6, 2), 0.5)
    m = metrics.compute_round_metrics(3, centers, models, mix, tr.assignments(), tr, te, obj, 2, 10, 40)
    row = metrics.metrics_row(m, "fedspd")
    cols = metrics.metrics_columns(2)
    assert len(row) == len(cols) and cols[:3] == ["round", "algorithm", "consensus_distance_s1"]
    assert np.all(m.consensus_distance >= 0)
    for st in (m.train_accuracy_stats, m.test_accuracy_stats):
        assert 0 <= st.min <= st.mean <= st.max <= 1 and st.std >= 0
    assert np.all(np.isnan(m.center_distance))  # no analytic optimum for classification


def test_single_model_pads_cluster_columns_with_nan():
    fed = data.generate_linear_mixture(4, 10, 2, 1.0, 0.1, seed=0)
    tr, te = data.split_train_test(fed, 0.3, seed=0)
    obj = model.make_objective("linear", 2)
    m = metrics.compute_round_metrics(1, np.zeros((4, 1, 2)), np.zeros((4, 2)), None, None, tr, te, obj, 2)
    assert m.consensus_distance[0] == 0.0 and math.isnan(m.consensus_distance[1])
    assert math.isnan(m.mixture_abs_error)


def test_gradient_moments_nonnegative():
    rng = np.random.default_rng(0)
    obj = model.make_objective("linear", 3)
    X, y = rng.standard_normal((50, 3)), rng.standard_normal(50)
    g2, var = metrics.gradient_moments(obj, np.zeros(3), X, y, 5, rng, 50)
    assert g2 >= var >= 0 or g2 >= 0
