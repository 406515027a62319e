import numpy as np
import pytest

from fedspd import baselines as bl
from fedspd import data, graph, metrics, model, protocol
from fedspd.rng import Streams


def _setup(n=10, seed=0, S=2, **cfg):
    fed = data.generate_linear_mixture(n, 30, 3, 3.0, 0.1, seed=seed)
    topo = graph.generate_er(n, min(4, n - 2), seed=seed) if n > 3 else graph.path_graph(n)
    obj = model.make_objective("linear", 3)
    return fed, topo, obj, protocol.ProtocolConfig(n_clusters=S, **cfg), Streams(seed)


def _rounds(kind, fed, topo, obj, cfg, st, T):
    s = bl.init_baseline_state(kind, fed, obj, cfg, st)
    for _ in range(T):
        if kind == "dfl-fedavg":
            s, info = bl.run_dfl_fedavg_round(s, topo, fed, obj, cfg, st)
        elif kind == "dfl-ifca":
            s, info = bl.run_dfl_ifca_round(s, topo, fed, obj, cfg, st)
        elif kind == "dfl-fedem-style":
            s, info = bl.run_dfl_fedem_style_round(s, topo, fed, obj, cfg, st)
        elif kind == "cfl-fedavg":
            s, info = bl.run_cfl_fedavg_round(s, fed, obj, cfg, st)
        else:
            s, info = bl.run_local_round(s, fed, obj, cfg, st)
    return s, info


def _state(values):
    c = np.asarray(values, dtype=float)[:, None, None]
    return bl.BaselineState(protocol.ClusterBank(c), np.ones((len(values), 1)))


def test_fedavg_fixed_point():
    fed, topo, obj, cfg, st = _setup(lr=0.0)
    s = bl.BaselineState(protocol.ClusterBank(np.ones((10, 1, 3))), np.ones((10, 1)))
    new, _ = bl.run_dfl_fedavg_round(s, topo, fed, obj, cfg, st)
    np.testing.assert_array_equal(new.bank.centers, s.bank.centers)


def test_fedavg_hand_average():
    fed = data.generate_linear_mixture(2, 4, 1, 1.0, 0.0, seed=0)
    cfg = protocol.ProtocolConfig(lr=0.0)
    new, info = bl.run_dfl_fedavg_round(_state([0.0, 4.0]), graph.path_graph(2), fed,
                                        model.make_objective("linear", 1), cfg, Streams(0))
    np.testing.assert_array_equal(new.models()[:, 0], [2.0, 2.0])
    assert info.messages_sent == 2 and info.payload_params_sent == 2


@pytest.mark.parametrize("kind", ["dfl-ifca", "dfl-fedem-style"])
def test_single_cluster_reduces_to_fedavg(kind):
    fed, topo, obj, cfg, st = _setup(S=1, lr_decay_every=5)
    ref, _ = _rounds("dfl-fedavg", fed, topo, obj, cfg, st, 6)
    got, _ = _rounds(kind, fed, topo, obj, cfg, st, 6)
    np.testing.assert_array_equal(got.models(), ref.models())


def test_ifca_selects_own_cluster():
    fed = data.generate_linear_mixture(1, 40, 3, 5.0, 0.0, seed=2, mixture=1.0, exact_counts=True)
    # drop the 10% of cluster-2 points: client is then pure cluster 1
    c = fed.clients[0].subset(np.flatnonzero(fed.clients[0].true_cluster == 0))
    fed = data.Federation((c,), 2, fed.generator_spec)
    bank = protocol.ClusterBank(np.asarray(fed.true_centers)[None].copy())
    w = bl._ifca_weights(bank.centers, fed, model.make_objective("linear", 3))
    np.testing.assert_array_equal(w, [[1.0, 0.0]])


def test_ifca_tie_lowest_index():
    fed = data.generate_linear_mixture(1, 5, 2, 1.0, 0.0, seed=0)
    centers = np.zeros((1, 2, 2))
    np.testing.assert_array_equal(bl._ifca_weights(centers, fed, model.make_objective("linear", 2)), [[1, 0]])


def test_fedem_payload_is_s_times_fedspd():
    fed, topo, obj, cfg, st = _setup(S=2)
    _, info_em = _rounds("dfl-fedem-style", fed, topo, obj, cfg, st, 1)
    s = protocol.init_state(fed, obj, cfg, st)
    _, info_spd = protocol.run_round(s, topo, fed, obj, cfg, st)
    assert info_em.payload_params_sent == 2 * info_spd.payload_params_sent
    assert info_spd.payload_params_sent == sum(topo.degrees) * obj.param_dim


def test_fedem_lr_zero_keeps_centers():
    fed, topo, obj, cfg, st = _setup(S=2, lr=0.0)
    s0 = bl.init_baseline_state("dfl-fedem-style", fed, obj, cfg, st)
    s1, _ = bl.run_dfl_fedem_style_round(s0, topo, fed, obj, cfg, st)
    np.testing.assert_array_equal(s1.bank.centers, s0.bank.centers)
    np.testing.assert_allclose(s1.weights.sum(axis=1), 1.0)


def test_local_only_single_client_is_centralized_training():
    fed, _, obj, cfg, st = _setup(n=1, S=1, rounds=4)
    got = bl.run_local_only(fed, obj, cfg, st)
    c = fed.clients[0]
    w = obj.init_params(st("init", 0), cfg.init_scale)
    for r in range(1, 5):
        w = model.sgd_steps(obj, w, c.features, c.labels, cfg.steps_at(r), cfg.lr_at(r), cfg.batch_size,
                            st("local", 0, r))
    np.testing.assert_array_equal(got[0], w)


def test_local_only_zero_rounds_is_init():
    fed, _, obj, cfg, st = _setup(n=3, S=1, rounds=0)
    got = bl.run_local_only(fed, obj, cfg, st)
    np.testing.assert_array_equal(got, np.tile(obj.init_params(st("init", 0), cfg.init_scale), (3, 1)))


def test_local_only_worse_than_fedspd_on_convex_suite():
    fed = data.generate_linear_mixture(20, 40, 8, 3.0, 0.3, seed=5)
    train, test = data.split_train_test(fed, 0.25, seed=5)
    topo = graph.generate_er(20, 5, seed=5)
    obj = model.make_objective("linear", 8)
    cfg = protocol.ProtocolConfig(rounds=60, lr=0.05, lr_decay_every=10)
    st = Streams(5)
    s = protocol.init_state(train, obj, cfg, st)
    for _ in range(60):
        s, _ = protocol.run_round(s, topo, train, obj, cfg, st)
    spd = protocol.finalize(s.bank, s.mixture, train, obj, 0, 0.0)
    local = bl.run_local_only(train, obj, cfg, st)
    assert metrics.risk_stats(obj, local, test).mean >= metrics.risk_stats(obj, spd, test).mean


def test_complete_graph_fedavg_equals_cfl():
    fed, _, obj, cfg, st = _setup(n=8, S=1)
    topo = graph.complete_graph(8)
    a, _ = _rounds("dfl-fedavg", fed, topo, obj, cfg, st, 5)
    b, _ = _rounds("cfl-fedavg", fed, topo, obj, cfg, st, 5)
    np.testing.assert_array_equal(a.models(), b.models())


def test_cfl_one_client_equals_local():
    fed, topo, obj, cfg, st = _setup(n=1, S=1)
    a, _ = _rounds("cfl-fedavg", fed, topo, obj, cfg, st, 3)
    b, _ = _rounds("local-only", fed, topo, obj, cfg, st, 3)
    np.testing.assert_array_equal(a.models(), b.models())


@pytest.mark.parametrize("kind", ["cfl-fedavg", "local-only", "dfl-ifca"])
def test_lr_zero_unchanged(kind):
    fed, topo, obj, cfg, st = _setup(S=2, lr=0.0)
    s0 = bl.init_baseline_state(kind, fed, obj, cfg, st)
    s1, _ = _rounds(kind, fed, topo, obj, cfg, st, 1)
    np.testing.assert_array_equal(s1.bank.centers, s0.bank.centers)


def test_footprints():
    assert bl.n_models("dfl-fedavg", 3) == 1 and bl.n_models("local-only", 3) == 1
    assert bl.n_models("dfl-ifca", 3) == 3 and bl.n_models("dfl-fedem-style", 3) == 3
    with pytest.raises(Exception):
        bl.n_models("pfedme", 2)


def test_payload_accounting_per_kind():
    fed, topo, obj, cfg, st = _setup(S=3)
    per_model = sum(topo.degrees) * obj.param_dim
    for kind, expect in [("dfl-fedavg", per_model), ("dfl-ifca", per_model), ("dfl-fedem-style", 3 * per_model)]:
        _, info = _rounds(kind, fed, topo, obj, cfg, st, 1)
        assert info.payload_params_sent == expect
