"""Anchor-count objective, trend controller, and the prior it derives from."""

import math

import numpy as np
import pytest

from antemb.model import AntModel, Regularizer, seed_transform
from antemb.nbant import (
    IbpSample,
    NbAntController,
    SvaObjective,
    adapt,
    log_ibp_prior,
    online_train,
    sva_limit,
    sva_limit_check,
    sva_objective,
    trend,
)


def make_model(rng, n_objects=6, k=4, d=3):
    t = seed_transform(n_objects, k, rng, nonneg=True)
    a = rng.normal(size=(k, d))
    return AntModel(anchors=a, transform=t, reg=Regularizer(nonneg=True))


def snapshot(model):
    return model.anchors.copy(), model.transform.copy()


class TestObjective:
    def test_zero_case(self):
        obj = SvaObjective(lambda1=0.1, lambda2=1e-4)
        assert sva_objective(0.0, 0, 0, obj) == 0.0

    def test_arithmetic(self):
        obj = SvaObjective(lambda1=0.1, lambda2=1e-4)
        got = sva_objective(2.0, 100, 10, obj)
        assert got == pytest.approx(2.0 + 0.01 + 0.999, abs=1e-12)

    def test_equal_lambdas_drop_anchor_term(self):
        obj = SvaObjective(lambda1=1e-3, lambda2=1e-3)
        assert sva_objective(1.0, 50, 7, obj) == sva_objective(1.0, 50, 99, obj)

    def test_strictly_increasing_in_each_argument(self):
        obj = SvaObjective(lambda1=0.1, lambda2=1e-4)
        base = sva_objective(1.0, 10, 3, obj)
        assert sva_objective(1.1, 10, 3, obj) > base
        assert sva_objective(1.0, 11, 3, obj) > base
        assert sva_objective(1.0, 10, 4, obj) > base

    def test_invalid_lambdas(self):
        with pytest.raises(ValueError):
            SvaObjective(lambda1=1e-4, lambda2=0.1)
        with pytest.raises(ValueError):
            SvaObjective(lambda1=0.1, lambda2=0.0)


class TestTrend:
    def test_decreasing(self):
        assert trend([10.0, 9.0], tol=1e-4) == "decreasing"

    def test_increasing(self):
        assert trend([8.0, 9.0], tol=1e-4) == "increasing"

    def test_flat_within_tolerance(self):
        assert trend([9.0, 9.0000001], tol=1e-4) == "flat"

    def test_short_history_is_flat(self):
        assert trend([], tol=1e-4) == "flat"
        assert trend([5.0], tol=1e-4) == "flat"


class TestAdapt:
    def test_grow_on_decreasing(self):
        rng = np.random.default_rng(0)
        m = make_model(rng, k=10)
        c = NbAntController(k=10, delta_k=1)
        adapt(m, c, 10.0)
        action = adapt(m, c, 9.0)
        assert action.trend == "decreasing"
        assert c.k == 11 and m.n_anchors == 11
        assert m.transform.cols == 11

    def test_flat_leaves_model_bit_identical(self):
        rng = np.random.default_rng(1)
        m = make_model(rng)
        a0, t0 = snapshot(m)
        c = NbAntController(k=m.n_anchors)
        adapt(m, c, 5.0)
        adapt(m, c, 5.0)
        np.testing.assert_array_equal(m.anchors, a0)
        assert m.transform == t0

    def test_shrink_then_grow_restores_exact_values(self):
        rng = np.random.default_rng(2)
        m = make_model(rng)
        a0, t0 = snapshot(m)
        c = NbAntController(k=m.n_anchors)
        adapt(m, c, 8.0)  # flat (first observation)
        adapt(m, c, 9.0)  # increasing -> shrink
        assert m.n_anchors == 3
        adapt(m, c, 8.5)  # decreasing -> grow from buffer
        assert m.n_anchors == 4
        np.testing.assert_array_equal(m.anchors, a0)
        assert m.transform == t0

    def test_shrink_never_below_one(self):
        rng = np.random.default_rng(3)
        m = make_model(rng, k=2)
        c = NbAntController(k=2, delta_k=5)
        adapt(m, c, 1.0)
        adapt(m, c, 2.0)  # increasing, but only one anchor may go
        assert c.k == 1 and m.n_anchors == 1

    def test_untouched_entries_unchanged_by_shrink(self):
        rng = np.random.default_rng(4)
        m = make_model(rng, n_objects=8, k=5)
        kept = {
            (r, c): v for r, c, v in m.transform.iter_entries() if c < 4
        }
        ctrl = NbAntController(k=5)
        adapt(m, ctrl, 1.0)
        adapt(m, ctrl, 2.0)  # shrink last column
        after = {(r, c): v for r, c, v in m.transform.iter_entries()}
        assert after == kept

    def test_tied_models_move_together(self):
        rng = np.random.default_rng(5)
        m1 = make_model(rng, n_objects=5, k=4)
        m2 = make_model(rng, n_objects=7, k=4)
        c = NbAntController(k=4, delta_k=2)
        adapt([m1, m2], c, 10.0)
        adapt([m1, m2], c, 5.0)
        assert m1.n_anchors == m2.n_anchors == 6
        snap1, snap2 = snapshot(m1), snapshot(m2)
        adapt([m1, m2], c, 9.0)  # increasing -> both shrink
        adapt([m1, m2], c, 4.0)  # decreasing -> both restore
        np.testing.assert_array_equal(m1.anchors, snap1[0])
        np.testing.assert_array_equal(m2.anchors, snap2[0])
        assert m1.transform == snap1[1]
        assert m2.transform == snap2[1]

    def test_mismatched_k_rejected(self):
        rng = np.random.default_rng(6)
        m = make_model(rng, k=4)
        c = NbAntController(k=7)
        with pytest.raises(ValueError):
            adapt(m, c, 1.0)


class TestOnlineTrain:
    def test_single_batch_equals_converge_then_adapt(self):
        rng = np.random.default_rng(7)
        m = make_model(rng, k=3)
        losses = iter([5.0, 4.0, 3.9995, 3.9995])
        calls = []

        def train_pass(batch):
            calls.append(batch)
            return next(losses)

        report = online_train(
            m,
            NbAntController(k=3),
            ["only"],
            train_pass,
            val_objective=lambda b: 1.0,
            tol=1e-3,
        )
        # converged when improvement fell below tol, then one adapt
        assert report.passes == [3]
        assert report.k_trajectory == [3]  # first observation: flat

    def test_trajectory_one_entry_per_batch(self):
        rng = np.random.default_rng(8)
        m = make_model(rng, k=2)
        vals = iter([10.0, 9.0, 8.0])

        report = online_train(
            m,
            NbAntController(k=2),
            ["b1", "b2", "b3"],
            train_pass=lambda b: 1.0,
            val_objective=lambda b: next(vals),
        )
        assert len(report.k_trajectory) == 3
        assert report.k_trajectory == [2, 3, 4]  # flat, then two grows

    def test_empty_stream_raises(self):
        rng = np.random.default_rng(9)
        m = make_model(rng)
        with pytest.raises(ValueError):
            online_train(
                m, NbAntController(k=4), [], lambda b: 0.0, lambda b: 0.0
            )


class TestIbpPrior:
    def test_all_zero_matrix(self):
        # K=0: log p = -a*b*H_2 with H_2 = 1/(b) + 1/(b+1) = 1.5 at a=b=1
        s = IbpSample(z=np.zeros((2, 3), dtype=int), a=1.0, b=1.0)
        assert log_ibp_prior(s) == pytest.approx(-1.5, abs=1e-12)

    def test_single_one(self):
        s = IbpSample(z=np.array([[1]]), a=1.0, b=1.0)
        assert log_ibp_prior(s) == pytest.approx(-1.0, abs=1e-12)

    def test_single_one_a2(self):
        s = IbpSample(z=np.array([[1]]), a=2.0, b=1.0)
        assert log_ibp_prior(s) == pytest.approx(math.log(2) - 2.0, abs=1e-12)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            IbpSample(z=np.array([[0.5]]), a=1.0, b=1.0)

    def test_duplicate_columns_counted_in_multiplicity(self):
        # two identical non-empty columns contribute a log 2! term
        z = np.array([[1, 1], [0, 0]])
        one = IbpSample(z=np.array([[1], [0]]), a=1.0, b=1.0)
        two = IbpSample(z=z, a=1.0, b=1.0)
        base = log_ibp_prior(one)
        got = log_ibp_prior(two)
        # second column repeats all per-column factors and divides by 2!;
        # the shared -a*b*H_2 term (H_2 = 1/b + 1/(b+1) = 1.5) appears once
        per_col = base + 1.5
        expected = 2 * per_col - 1.5 - math.log(2)
        assert got == pytest.approx(expected, abs=1e-12)


class TestSvaLimit:
    def test_all_zero_limit(self):
        z = np.zeros((3, 2), dtype=int)
        assert sva_limit(z, 0.1, 1e-3) == 0.0
        (beta, val), = sva_limit_check(z, 0.1, 1e-3, [1e4])
        assert abs(val) < 1e-3

    def test_full_column_limit(self):
        lam1, lam2 = 0.1, 1e-3
        z = np.ones((4, 1), dtype=int)
        expected = -lam2 * 4 - (lam1 - lam2) * 1
        assert sva_limit(z, lam1, lam2) == pytest.approx(expected)
        (_, val), = sva_limit_check(z, lam1, lam2, [1e4])
        assert val == pytest.approx(expected, abs=1e-2)

    def test_monotone_convergence_over_beta(self):
        rng = np.random.default_rng(13)
        betas = [10.0, 1e2, 1e3, 1e4]
        for _ in range(10):
            z = (rng.random((5, 3)) < 0.4).astype(int)
            lam1, lam2 = 0.1, 1e-3
            limit = sva_limit(z, lam1, lam2)
            errors = [
                abs(val - limit) for _, val in sva_limit_check(z, lam1, lam2, betas)
            ]
            assert all(e1 > e2 for e1, e2 in zip(errors, errors[1:]))

    def test_random_matrices_close_at_large_beta(self):
        rng = np.random.default_rng(17)
        for lam1 in (0.1, 0.01):
            for lam2 in (1e-3, 1e-4):
                for _ in range(5):
                    n = int(rng.integers(1, 9))
                    k = int(rng.integers(1, 5))
                    z = (rng.random((n, k)) < 0.5).astype(int)
                    (_, val), = sva_limit_check(z, lam1, lam2, [1e4])
                    assert abs(val - sva_limit(z, lam1, lam2)) <= 1e-2

    def test_requires_strict_lambda_order(self):
        with pytest.raises(ValueError):
            sva_limit_check(np.zeros((2, 2), dtype=int), 1e-4, 1e-3, [10.0])
