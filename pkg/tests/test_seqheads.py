import numpy as np
import pytest

from tkgforecast.errors import DimensionError
from tkgforecast.numcore import Tensor, check_gradients, parameter
from tkgforecast.numcore.ops import _sigmoid
from tkgforecast.seqheads import SeqHeadConfig, SeqHeadKind, SequenceHead, predict_future, satt_encode

SMALL = SeqHeadConfig(satt_layers=2, satt_heads=2, conv_channels=3, mlp_hidden=10)
KINDS = list(SeqHeadKind)


def zero_all(head):
    for p in head.params.values():
        p.data[:] = 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_shape_contract(kind):
    head = SequenceHead(kind, 7, 200, rng=np.random.default_rng(0))
    seq = Tensor(np.random.default_rng(1).normal(size=(7, 200)))
    out = predict_future(seq, head)
    assert out.shape == (200,)
    assert np.all(np.isfinite(out.data))
    assert predict_future(Tensor(np.zeros((3, 7, 200))), head).shape == (3, 200)


@pytest.mark.parametrize("kind", KINDS)
def test_wrong_shape(kind):
    head = SequenceHead(kind, 4, 8, SMALL)
    with pytest.raises(DimensionError):
        head(Tensor(np.zeros((3, 8))))


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    head = SequenceHead(kind, 4, 8, SMALL, np.random.default_rng(2))
    seq = Tensor(np.random.default_rng(3).normal(size=(2, 4, 8)))
    np.testing.assert_array_equal(head(seq).data, head(seq).data)


@pytest.mark.parametrize("kind", KINDS)
def test_gradients(kind):
    rng = np.random.default_rng(4)
    head = SequenceHead(kind, 4, 8, SMALL, rng)
    seq = parameter(rng.uniform(-1, 1, size=(2, 4, 8)), "seq")
    w = Tensor(rng.normal(size=(2, 8)))
    report = check_gradients(lambda: (head(seq) * w).sum(), {"seq": seq, **head.params}, rtol=1e-3,
                             max_entries=40)
    assert report.passed, report.summary()


class TestMLP:
    def test_zero_map_gives_bias(self):
        head = SequenceHead("mlp", 4, 8, SMALL)
        zero_all(head)
        b = np.arange(8.0)
        head.params["b.1"].data[:] = b
        out = head(Tensor(np.random.default_rng(0).normal(size=(4, 8))))
        np.testing.assert_array_equal(out.data, b)

    def test_identity_copy_of_last(self):
        head = SequenceHead("mlp", 4, 8, SeqHeadConfig(mlp_layers=1))
        w = np.zeros((32, 8))
        w[24:32] = np.eye(8)
        head.params["w.0"].data[:] = w
        head.params["b.0"].data[:] = 0.0
        seq = np.random.default_rng(1).normal(size=(4, 8))
        np.testing.assert_array_equal(head(Tensor(seq)).data, seq[-1])

    def test_row_major_flatten(self):
        head = SequenceHead("mlp", 3, 4, SeqHeadConfig(mlp_layers=1))
        seq = np.zeros((3, 4))
        seq[1, 2] = 1.0
        w = np.zeros((12, 4))
        w[1 * 4 + 2, 0] = 5.0
        head.params["w.0"].data[:] = w
        head.params["b.0"].data[:] = 0.0
        assert head(Tensor(seq)).data[0] == 5.0


class TestConv:
    def test_zero_kernels_give_bias(self):
        head = SequenceHead("conv", 4, 8, SMALL, np.random.default_rng(0))
        head.params["kernels"].data[:] = 0.0
        head.params["conv_bias"].data[:] = 0.0
        out = head(Tensor(np.random.default_rng(1).normal(size=(4, 8))))
        np.testing.assert_array_equal(out.data, head.params["b_out"].data)

    @pytest.mark.parametrize("channels", [1, 5])
    def test_shape_independent_of_channels(self, channels):
        head = SequenceHead("conv", 4, 6, SeqHeadConfig(conv_channels=channels))
        assert head(Tensor(np.ones((4, 6)))).shape == (6,)


class TestLSTM:
    def test_zero_weights(self):
        head = SequenceHead("lstm", 4, 8, SMALL)
        zero_all(head)
        np.testing.assert_array_equal(head(Tensor(np.ones((4, 8)))).data, 0.0)

    def test_hand_unroll(self):
        rng = np.random.default_rng(5)
        head = SequenceHead("lstm", 2, 2, SMALL, rng)
        p = {k: v.data for k, v in head.params.items()}
        seq = rng.normal(size=(2, 2))
        h = c = np.zeros(2)
        for x in seq:
            z = x @ p["w_x"] + h @ p["w_h"] + p["b"]
            i, f, g, o = _sigmoid(z[:2]), _sigmoid(z[2:4]), np.tanh(z[4:6]), _sigmoid(z[6:])
            c = f * c + i * g
            h = o * np.tanh(c)
        expected = h @ p["w_out"] + p["b_out"]
        np.testing.assert_allclose(head(Tensor(seq)).data, expected, atol=1e-12)

    def test_single_step(self):
        rng = np.random.default_rng(6)
        head = SequenceHead("lstm", 1, 3, SMALL, rng)
        p = {k: v.data for k, v in head.params.items()}
        x = rng.normal(size=3)
        z = x @ p["w_x"] + p["b"]
        c = _sigmoid(z[:3]) * np.tanh(z[6:9])
        h = _sigmoid(z[9:]) * np.tanh(c)
        np.testing.assert_allclose(head(Tensor(x[None])).data, h @ p["w_out"] + p["b_out"], atol=1e-12)


class TestSATT:
    def test_attention_rows(self):
        rng = np.random.default_rng(7)
        head = SequenceHead("satt", 4, 8, SMALL, rng)
        _, maps = satt_encode(Tensor(rng.normal(size=(3, 4, 8))), head.params, 2, return_attention=True)
        for att in maps:
            np.testing.assert_allclose(att.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_uniform_for_identical_elements(self):
        rng = np.random.default_rng(8)
        head = SequenceHead("satt", 5, 8, SMALL, rng)
        head.params["pos"].data[:] = 0.0
        seq = np.tile(rng.normal(size=8), (1, 5, 1))
        _, maps = satt_encode(Tensor(seq), head.params, 2, return_attention=True)
        for att in maps:
            np.testing.assert_allclose(att.data, 1 / 5, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        head = SequenceHead("satt", 5, 8, SMALL, rng)
        seq = rng.normal(size=(1, 5, 8))
        base = satt_encode(Tensor(seq), head.params, 2).data[0]
        perm = rng.permutation(5)
        params = dict(head.params)
        params["pos"] = Tensor(head.params["pos"].data[perm])
        permuted = satt_encode(Tensor(seq[:, perm]), params, 2).data[0]
        np.testing.assert_allclose(permuted, base[perm], atol=1e-10)
        tracked = int(np.flatnonzero(perm == 4)[0])
        np.testing.assert_allclose(permuted[tracked], base[4], atol=1e-10)
