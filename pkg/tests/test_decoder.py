import math

import numpy as np
import pytest

from tkgforecast.decoder import DecoderConfig, EntityDecoder, HistoryIndex, combine_scores, historical_mask
from tkgforecast.numcore import Tape, Tensor, check_gradients, cross_entropy_logits, parameter, softmax_rows

SMALL = DecoderConfig(rel_dim=6, blocks=2, hidden=16)


def make(copy=True, n=7, seed=0):
    cfg = DecoderConfig(rel_dim=6, blocks=2, hidden=16, copy_head=copy)
    return EntityDecoder(n, 4, 10, cfg, np.random.default_rng(seed))


class TestScore:
    def test_zero_final_layer(self):
        dec = make()
        dec.params["out.w"].data[:] = 0.0
        dec.params["out.b"].data[:] = 0.3
        emb = Tensor(np.random.default_rng(1).normal(size=(2, 10)))
        logits = dec.score_entities(emb, [0, 3])
        np.testing.assert_array_equal(logits.data, 0.3)
        np.testing.assert_allclose(softmax_rows(logits).data, 1 / 7)
        assert cross_entropy_logits(logits, [2, 5]).item() == pytest.approx(math.log(7), abs=1e-12)

    def test_residual_identity(self):
        dec = make()
        for i in range(2):
            dec.params[f"block{i}.w2"].data[:] = 0.0
        x = Tensor(np.random.default_rng(2).normal(size=(3, 16)))
        np.testing.assert_allclose(dec.residual_trunk(x).data, x.data, atol=1e-12)

    def test_relation_out_of_range(self):
        with pytest.raises(IndexError):
            make().score_entities(Tensor(np.zeros(10)), [4])

    def test_gradients(self):
        rng = np.random.default_rng(3)
        dec = make(copy=False)
        emb = parameter(rng.uniform(-1, 1, size=(3, 10)), "emb")
        report = check_gradients(lambda: dec.loss(emb, None, [0, 1, 3], [2, 6, 0]),
                                 {"emb": emb, **dec.params}, rtol=1e-3, max_entries=30)
        assert report.passed, report.summary()

    def test_gradients_with_copy(self):
        rng = np.random.default_rng(4)
        dec = make(copy=True)
        emb = parameter(rng.uniform(-1, 1, size=(3, 10)), "emb")
        cur = parameter(rng.uniform(-1, 1, size=(3, 10)), "cur")
        mask = rng.random((3, 7)) < 0.5
        mask[:, 2] = True
        rels, targets = [0, 1, 3], [2, 6, 0]
        frozen_gen = Tensor(dec.score_entities(emb, rels).data.copy())

        def oracle():
            ce = cross_entropy_logits(dec.score_entities(emb, rels), targets)
            return ce + dec.blended_nll(frozen_gen, cur, rels, targets, mask)

        params = {"emb": emb, **dec.params}
        report = check_gradients(oracle, params, rtol=1e-3, max_entries=30)
        assert report.passed, report.summary()
        grads = []
        for fn in (lambda: dec.loss(emb, cur, rels, targets, mask), oracle):
            for p in params.values():
                p.zero_grad()
            with Tape() as tape:
                loss = fn()
            tape.backward(loss)
            grads.append({k: v.grad.copy() for k, v in params.items()})
        for k in params:
            np.testing.assert_array_equal(grads[0][k], grads[1][k])

    def test_blended_term_leaves_generator_alone(self):
        rng = np.random.default_rng(8)
        dec = make(copy=True)
        emb = parameter(rng.uniform(-1, 1, size=(3, 10)), "emb")
        cur = Tensor(rng.uniform(-1, 1, size=(3, 10)))
        mask = np.ones((3, 7), dtype=bool)
        rels, targets = [0, 1, 3], [2, 6, 0]
        grads = []
        for fn in (lambda: dec.loss(emb, cur, rels, targets, mask),
                   lambda: cross_entropy_logits(dec.score_entities(emb, rels), targets)):
            emb.zero_grad()
            for p in dec.params.values():
                p.zero_grad()
            with Tape() as tape:
                loss = fn()
            tape.backward(loss)
            grads.append(emb.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])


class TestCombine:
    def test_alpha_to_zero(self):
        rng = np.random.default_rng(5)
        gen, cp = Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(2, 6)))
        mask = np.ones((2, 6), dtype=bool)
        from tkgforecast.numcore.ops import sigmoid
        p = combine_scores(gen, cp, mask, sigmoid(Tensor([-50.0])))
        np.testing.assert_allclose(p.data, softmax_rows(gen).data, atol=1e-9)

    def test_empty_mask_drops_copy(self):
        rng = np.random.default_rng(6)
        gen, cp = Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(2, 6)))
        p = combine_scores(gen, cp, np.zeros((2, 6), dtype=bool), Tensor([0.7]))
        np.testing.assert_array_equal(p.data, softmax_rows(gen).data)

    def test_normalized(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            gen, cp = Tensor(rng.normal(size=(3, 9)) * 5), Tensor(rng.normal(size=(3, 9)) * 5)
            p = combine_scores(gen, cp, rng.random((3, 9)) < 0.3, Tensor([rng.random()])).data
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


class TestHistoryMask:
    def test_no_history(self):
        assert not historical_mask((0, 1), np.array([[1, 1, 2, 0]]), 4, 10).any()

    def test_single_event(self):
        m = historical_mask((0, 1), np.array([[0, 1, 2, 3]]), 4, 10)
        assert m.tolist() == [False, False, True, False]
        assert not historical_mask((0, 1), np.array([[0, 1, 2, 3]]), 4, 2).any()

    def test_brute_force(self):
        rng = np.random.default_rng(8)
        ev = np.stack([rng.integers(0, 6, 300), rng.integers(0, 3, 300),
                       rng.integers(0, 6, 300), rng.integers(0, 40, 300)], axis=1)
        index = HistoryIndex(ev, 6)
        for _ in range(1000):
            e, r, t_a = int(rng.integers(0, 6)), int(rng.integers(0, 3)), int(rng.integers(0, 45))
            expected = np.zeros(6, dtype=bool)
            for s_, r_, o_, t_ in ev:
                if s_ == e and r_ == r and t_ <= t_a:
                    expected[o_] = True
            np.testing.assert_array_equal(index.mask([e], [r], t_a)[0], expected)


def test_copy_branch_isolated():
    rng = np.random.default_rng(9)
    dec = make(copy=True)
    upstream = parameter(rng.normal(size=(10, 10)), "upstream")
    x = Tensor(rng.normal(size=(3, 10)))
    with Tape() as tape:
        current = x @ upstream
        copy_only = dec.copy_logits(current, [0, 1, 3]).sum()
    tape.backward(copy_only)
    assert np.array_equal(upstream.grad, np.zeros_like(upstream.grad))
    assert np.any(dec.params["copy.w"].grad != 0)
