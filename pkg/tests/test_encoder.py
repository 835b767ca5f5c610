import numpy as np
import pytest

from tkgforecast.encoder import (
    EncoderConfig,
    TemporalEncoder,
    group_rare_edge_types,
    plan_edges,
    time_encode,
)
from tkgforecast.errors import ContractError
from tkgforecast.numcore import Tensor, check_gradients, leaky_relu, ops, parameter
from tkgforecast.tkg import Dataset, HistorySpec, add_reverse_relations, build_snapshot_graph

SMALL = EncoderConfig(dim=6, out_dim=8, heads=2, time_dim=4)


def toy_setup(seed=0, n_ent=10, n_rel=2, n_events=60, n_time=12, config=SMALL):
    rng = np.random.default_rng(seed)
    ev = np.stack([rng.integers(0, n_ent, n_events), rng.integers(0, n_rel, n_events),
                   rng.integers(0, n_ent, n_events), rng.integers(0, n_time, n_events)], axis=1)
    ds = add_reverse_relations(Dataset(ev, [], [], n_ent, n_rel))
    grouping = group_rare_edge_types(ds.train, ds.num_relations, 0)
    enc = TemporalEncoder(n_ent, grouping, config, np.random.default_rng(seed + 1))
    # non-trivial phase so the time encoding is not symmetric around zero
    enc.params["phi"].data[:] = rng.uniform(-1, 1, size=config.time_dim)
    return ds, enc


class TestTimeEncode:
    def test_zero_lag(self):
        phi = Tensor([0.3, -1.2])
        np.testing.assert_allclose(time_encode(0, Tensor([2.0, 5.0]), phi).data, np.cos(phi.data))

    def test_cos_pi(self):
        np.testing.assert_allclose(time_encode(1, Tensor([np.pi]), Tensor([0.0])).data, [-1.0])

    def test_range(self):
        rng = np.random.default_rng(0)
        lags = rng.uniform(0, 100, 1000)
        out = time_encode(lags, Tensor(rng.normal(size=8) * 10), Tensor(rng.normal(size=8) * 10)).data
        assert out.shape == (1000, 8)
        assert np.all(np.abs(out) <= 1.0)


class TestGrouping:
    def test_threshold_zero(self):
        g = group_rare_edge_types(np.array([[0, 0, 1, 0], [0, 2, 1, 0]]), 4, 0)
        assert g.group_of.tolist() == [0, 1, 2, 3]
        assert g.shared_group is None

    def test_rare_shared(self):
        ev = np.array([[0, 0, 1, 0]] * 100 + [[0, 1, 1, 0]])
        g = group_rare_edge_types(ev, 2, 10)
        assert g.group_of[0] != g.group_of[1]
        assert g.group_of[1] == g.shared_group

    def test_group_count(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            R = int(rng.integers(1, 12))
            ev = np.zeros((int(rng.integers(1, 200)), 4), dtype=np.int64)
            ev[:, 1] = rng.integers(0, R, len(ev))
            thr = int(rng.integers(0, 30))
            counts = np.bincount(ev[:, 1], minlength=R)
            g = group_rare_edge_types(ev, R, thr)
            expected = int((counts >= thr).sum()) + int((counts < thr).any())
            assert g.num_groups == expected
            assert len(np.unique(g.group_of)) == expected
            assert g.self_loop_group not in g.group_of and g.self_connection_group not in g.group_of


class TestAttentionAggregate:
    def test_single_neighbor(self):
        _, enc = toy_setup()
        rng = np.random.default_rng(2)
        hv, hu = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=(1, 6)))
        out, alpha = enc.attention_aggregate(hv, hu, [3.0], 5.0, group=0)
        np.testing.assert_array_equal(alpha.data, 1.0)
        te = np.cos(enc.params["omega"].data * 2.0 + enc.params["phi"].data)
        v = np.concatenate([hu.data[0], te]) @ enc.params["l0.wv.0"].data
        expected = leaky_relu(Tensor(v), 0.2).data @ enc.params["l0.wo"].data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_neighbors(self):
        _, enc = toy_setup()
        rng = np.random.default_rng(3)
        hu = rng.normal(size=6)
        _, alpha = enc.attention_aggregate(Tensor(rng.normal(size=6)), Tensor(np.stack([hu, hu])), [1.0, 1.0], 4.0, 1)
        np.testing.assert_allclose(alpha.data, 0.5, atol=1e-12)

    def test_empty_neighbors(self):
        _, enc = toy_setup()
        with pytest.raises(ContractError):
            enc.attention_aggregate(Tensor(np.zeros(6)), Tensor(np.zeros((0, 6))), [], 1.0, 0)

    def test_gradients(self):
        _, enc = toy_setup()
        rng = np.random.default_rng(4)
        hv, hu = parameter(rng.normal(size=6), "hv"), parameter(rng.normal(size=(3, 6)), "hu")
        params = {"hv": hv, "hu": hu, "omega": enc.params["omega"], "phi": enc.params["phi"],
                  **{k: enc.params[k] for k in ("l0.wq.1", "l0.wk.1", "l0.wv.1", "l0.wo")}}
        w = Tensor(rng.normal(size=8))

        def loss():
            out, _ = enc.attention_aggregate(hv, hu, [0.0, 2.0, 3.0], 3.0, 1)
            return (out * w).sum()

        report = check_gradients(loss, params, rtol=1e-3)
        assert report.passed, report.summary()


class TestEncode:
    def test_attention_normalized(self):
        for seed in range(5):
            ds, enc = toy_setup(seed)
            g = build_snapshot_graph(ds, 11, 2, HistorySpec((5, 1, 0)))
            _, attention = enc.encode_copies(g, return_attention=True)
            for _, plan, alpha in attention:
                assert np.all(alpha.data >= 0)
                sums = np.zeros((plan.num_segments, SMALL.heads))
                np.add.at(sums, plan.seg, alpha.data)
                np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_deterministic(self):
        ds, enc = toy_setup()
        g = build_snapshot_graph(ds, 11, 2, HistorySpec((5, 1, 0)))
        np.testing.assert_array_equal(enc.encode_copies(g).data, enc.encode_copies(g).data)

    def test_isolated_entity(self):
        ds, enc = toy_setup(n_ent=10)
        hx = HistorySpec((5, 3, 1, 0))
        lonely = 9
        keep = (ds.train[:, 0] != lonely) & (ds.train[:, 2] != lonely)
        ds = Dataset(ds.train[keep], [], [], 10, ds.num_base_relations, augmented=True)
        g = build_snapshot_graph(ds, 11, 2, hx)
        seq = enc.encode(g, hx, [lonely]).data[0]
        np.testing.assert_array_equal(seq[2], seq[3])  # offsets 1 and 0 share a snapshot
        empty = build_snapshot_graph(ds, 11, 2, hx, events=np.zeros((0, 4), dtype=np.int64))
        np.testing.assert_allclose(seq, enc.encode(empty, hx, [lonely]).data[0], atol=1e-12)

    def test_neighbor_permutation_invariance(self):
        ds, enc = toy_setup(seed=5)
        hx = HistorySpec((5, 1, 0))
        g = build_snapshot_graph(ds, 11, 2, hx)
        perm = np.random.default_rng(0).permutation(len(ds.train))
        g2 = build_snapshot_graph(ds, 11, 2, hx, events=ds.train[perm])
        np.testing.assert_allclose(enc.encode_copies(g).data, enc.encode_copies(g2).data, atol=1e-10)

    @pytest.mark.parametrize("layers", [1, 2])
    def test_causality(self, layers):
        cfg = EncoderConfig(dim=6, out_dim=8, heads=2, time_dim=4, layers=layers)
        ds, enc = toy_setup(seed=6, config=cfg)
        hx = HistorySpec((7, 3, 1, 0))
        t_a, T = 11, 2
        base = build_snapshot_graph(ds, t_a, T, hx)
        ref = enc.encode_copies(base).data.reshape(base.num_snapshots, 10, -1)
        in_window = np.flatnonzero(ds.train[:, 3] > t_a - base.num_snapshots * T)
        for i in in_window[:25]:
            k = (t_a - ds.train[i, 3]) // T
            g = build_snapshot_graph(ds, t_a, T, hx, events=np.delete(ds.train, i, axis=0))
            out = enc.encode_copies(g).data.reshape(base.num_snapshots, 10, -1)
            np.testing.assert_array_equal(out[k + 1:], ref[k + 1:])
            if layers == 1:
                np.testing.assert_array_equal(out[:k], ref[:k])

    def test_neighbor_cap(self):
        ds = add_reverse_relations(Dataset([[i, 0, 0, i] for i in range(1, 9)], [], [], 9, 1))
        grouping = group_rare_edge_types(ds.train, 2, 0)
        g = build_snapshot_graph(ds, 8, 10, HistorySpec((0,)))
        plans = plan_edges(g, grouping, neighbor_cap=3)
        into_zero = [p for p in plans if p.group == 0][0]
        assert sorted(into_zero.time.tolist()) == [6, 7, 8]

    def test_gradients(self):
        ds, enc = toy_setup(seed=7, n_ent=5, n_events=25, n_time=6)
        hx = HistorySpec((3, 1, 0))
        g = build_snapshot_graph(ds, 5, 2, hx)
        w = Tensor(np.random.default_rng(8).normal(size=(5, 3, 8)))
        report = check_gradients(lambda: (enc.encode(g, hx, np.arange(5)) * w).sum(), enc.params,
                                 rtol=1e-3, max_entries=12)
        assert report.passed, report.summary()
