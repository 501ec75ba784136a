"""Optimizer behavior against a straight-line reference implementation."""

import numpy as np
import pytest

from gs4d.adam import AdamW, exponential_decay


def reference_adamw(p, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.0):
    """Textbook update sequence, scalar-by-scalar."""
    p = np.array(p, dtype=np.float64)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p = p * (1 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


class TestAdamW:
    def test_matches_reference_trajectory(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(4, 3))
        grads = [rng.normal(size=(4, 3)) for _ in range(12)]
        opt = AdamW({"p": p.copy()}, {"p": 0.01})
        target = opt.params["p"]
        for g in grads:
            opt.step({"p": g})
        np.testing.assert_allclose(target, reference_adamw(p, grads, 0.01), rtol=1e-12)

    def test_weight_decay_is_decoupled(self):
        rng = np.random.default_rng(1)
        p = rng.normal(size=6)
        grads = [rng.normal(size=6) for _ in range(5)]
        opt = AdamW({"p": p.copy()}, {"p": 0.02}, weight_decay=0.1)
        for g in grads:
            opt.step({"p": g})
        expected = reference_adamw(p, grads, 0.02, wd=0.1)
        np.testing.assert_allclose(opt.params["p"], expected, rtol=1e-12)

    def test_first_step_moves_by_roughly_lr(self):
        p = np.array([1.0])
        opt = AdamW({"p": p}, {"p": 0.1})
        opt.step({"p": np.array([123.4])})
        assert p[0] == pytest.approx(1.0 - 0.1, rel=1e-6)

    def test_updates_in_place(self):
        p = np.zeros(3)
        opt = AdamW({"p": p}, {"p": 0.1})
        opt.step({"p": np.ones(3)})
        assert opt.params["p"] is p
        assert p[0] != 0.0

    def test_per_name_step_counts(self):
        opt = AdamW({"a": np.zeros(2), "b": np.zeros(2)}, {"a": 0.1, "b": 0.1})
        opt.step({"a": np.ones(2)})
        opt.step({"a": np.ones(2), "b": np.ones(2)})
        assert opt.steps == {"a": 2, "b": 1}

    def test_sparse_group_matches_dense_history(self):
        # a group stepped every other iteration behaves as if its own history
        # were contiguous
        rng = np.random.default_rng(2)
        grads = [rng.normal(size=3) for _ in range(6)]
        sparse = AdamW({"a": np.zeros(3), "b": np.zeros(3)}, {"a": 0.05, "b": 0.05})
        for i, g in enumerate(grads):
            step = {"a": g} if i % 2 else {"a": g, "b": g}
            sparse.step(step)
        dense_b = reference_adamw(np.zeros(3), grads[::2], 0.05)
        np.testing.assert_allclose(sparse.params["b"], dense_b, rtol=1e-12)

    def test_rejects_unknown_name_and_bad_shape(self):
        opt = AdamW({"p": np.zeros(3)}, {"p": 0.1})
        with pytest.raises(KeyError):
            opt.step({"q": np.zeros(3)})
        with pytest.raises(ValueError):
            opt.step({"p": np.zeros(4)})
        with pytest.raises(ValueError):
            AdamW({"p": np.zeros(3)}, {})

    def test_replace_carries_and_zeroes_moments(self):
        p = np.arange(4.0).reshape(4, 1)
        opt = AdamW({"p": p}, {"p": 0.1})
        opt.step({"p": np.ones((4, 1))})
        keep = np.array([True, False, True, True])
        new_p = np.concatenate([opt.params["p"][keep], np.zeros((2, 1))])
        opt.replace("p", new_p, keep=keep, extra=2)
        assert opt.params["p"] is new_p
        assert opt.m["p"].shape == (5, 1)
        assert np.all(opt.m["p"][3:] == 0.0)
        assert np.all(opt.m["p"][:3] != 0.0)
        with pytest.raises(ValueError):
            opt.replace("p", np.zeros((7, 1)))


class TestExponentialDecay:
    def test_hits_both_endpoints(self):
        assert exponential_decay(1e-3, 2e-5, 0, 100) == pytest.approx(1e-3)
        assert exponential_decay(1e-3, 2e-5, 99, 100) == pytest.approx(2e-5)

    def test_geometric_midpoint(self):
        mid = exponential_decay(1e-2, 1e-4, 50, 101)
        assert mid == pytest.approx(1e-3, rel=1e-9)

    def test_monotone_decreasing(self):
        lrs = [exponential_decay(1e-3, 2e-5, i, 50) for i in range(50)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))

    def test_single_step_stage(self):
        assert exponential_decay(1e-3, 2e-5, 0, 1) == 1e-3
