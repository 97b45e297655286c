import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from core.errors import ParameterError, ShapeError
from memory import MemoryBank
from objectives import procal
from theory import (
    build_external_signal,
    fixed_point,
    run_fixed_point_trials,
    soft_gradient,
    stationarity_residual,
    update_map,
)
from theory.oracles import (
    brute_force_ranking,
    gradcheck,
    gradient_cases,
    random_gradient_instance,
    run_all_oracles,
    run_fixed_point_suite,
    run_gradient_suite,
    run_knn_suite,
    run_soft_gradient_equivalence,
)


class TestExternalSignal(unittest.TestCase):
    def test_symmetric_inputs(self):
        bank = MemoryBank.initialize([[0.5, 0.5], [0.5, 0.5]], [[1.0, 0.0], [0.0, 1.0]], k=1)
        signal = build_external_signal(bank, 0, 1.0)
        assert_allclose(signal.q, [1.0, 1.0])
        self.assertEqual(signal.C, 2)

    def test_sum_is_k_plus_gamma(self):
        rng = np.random.default_rng(0)
        bank = MemoryBank.initialize(rng.dirichlet(np.ones(4), size=10), rng.normal(size=(10, 3)), k=3)
        for i in range(10):
            self.assertAlmostEqual(float(np.sum(build_external_signal(bank, i, 0.4).q)), 3.4, delta=1e-9)

    def test_gamma_must_be_positive(self):
        bank = MemoryBank.initialize([[0.5, 0.5], [0.5, 0.5]], [[1.0, 0.0], [0.0, 1.0]], k=1)
        with self.assertRaises(ParameterError):
            build_external_signal(bank, 0, 0.0)


class TestSoftGradientAndUpdate(unittest.TestCase):
    def test_gradient_reference(self):
        assert_allclose(soft_gradient([1.0, 0.0], 0.5, [0.5, 0.5]), [-1.5, -0.5])
        assert_allclose(soft_gradient([0.3, 0.7], 0.0, [0.5, 0.5]), [-0.3, -0.7])

    def test_update_reference(self):
        assert_allclose(update_map([0.5, 0.5], [1.0, 1.0], 0.5, 0.1), [0.65, 0.65], atol=1e-15)
        assert_array_equal(update_map([0.2, 0.8], [1.0, 0.0], 0.5, 0.0), [0.2, 0.8])

    def test_update_is_descent_on_soft_gradient(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p, q = rng.dirichlet(np.ones(4)), rng.uniform(0, 3, size=4)
            gamma, eta = rng.uniform(0.1, 2), rng.uniform(0, 1)
            assert_allclose(update_map(p, q, gamma, eta), p - eta * soft_gradient(q, gamma, p), atol=1e-12)

    def test_iterating_grows_without_projection(self):
        p = np.array([0.5, 0.5])
        for _ in range(20):
            p = update_map(p, [1.0, 1.0], 1.0, 0.1)
        self.assertGreater(np.linalg.norm(p), 10.0)

    def test_shape_and_step_checks(self):
        with self.assertRaises(ShapeError):
            soft_gradient([1.0, 0.0], 1.0, [1.0, 0.0, 0.0])
        with self.assertRaises(ParameterError):
            update_map([0.5, 0.5], [1.0, 1.0], 1.0, -0.1)


class TestFixedPoint(unittest.TestCase):
    def test_reference_points(self):
        fp = fixed_point([0.5, 0.5], 1.0, 2)
        assert_allclose(fp.p_star, [0.5, 0.5])
        self.assertAlmostEqual(fp.lam, 1.5, places=15)

        fp = fixed_point([1.0, 0.0], 0.5, 2)
        self.assertAlmostEqual(fp.lam, 1.0, places=15)
        assert_allclose(fp.p_star, [0.0, 1.0], atol=1e-15)
        self.assertTrue(fp.feasible)

    def test_negative_entries_reported(self):
        fp = fixed_point([3.0, 0.0, 0.0], 1.0, 3)
        self.assertAlmostEqual(fp.lam, 5 / 3, places=15)
        assert_allclose(fp.p_star, [-2 / 3, 5 / 6, 5 / 6], atol=1e-15)
        self.assertFalse(fp.feasible)

    def test_stationarity(self):
        q = np.array([1.2, 0.4, 2.0, 0.1])
        fp = fixed_point(q, 0.7, 4)
        lam_hat, residual = stationarity_residual(fp.p_star, q, 0.7)
        self.assertLessEqual(residual, 1e-10)
        self.assertAlmostEqual(lam_hat, fp.lam, delta=1e-12)
        _, uniform_residual = stationarity_residual(np.full(4, 0.25), q, 0.7)
        self.assertGreater(uniform_residual, 0.0)
        self.assertAlmostEqual(stationarity_residual(np.full(3, 1 / 3), [2.0, 2.0, 2.0], 0.7)[1], 0.0, delta=1e-15)

    def test_shift_moves_lambda_only(self):
        q = np.array([0.9, 0.3, 1.5])
        base, shifted = fixed_point(q, 1.3, 3), fixed_point(q + 2.0, 1.3, 3)
        self.assertAlmostEqual(shifted.lam, base.lam + 2.0, delta=1e-12)
        assert_allclose(shifted.p_star, base.p_star, atol=1e-12)

    def test_class_permutation(self):
        q = np.array([0.9, 0.3, 1.5, 0.2])
        perm = np.array([3, 1, 0, 2])
        assert_allclose(fixed_point(q[perm], 0.8, 4).p_star, fixed_point(q, 0.8, 4).p_star[perm], atol=1e-14)

    def test_invalid_arguments(self):
        with self.assertRaises(ParameterError):
            fixed_point([1.0, 0.0], 0.0, 2)
        with self.assertRaises(ShapeError):
            fixed_point([1.0, 0.0], 1.0, 3)

    def test_trial_rows(self):
        rows = run_fixed_point_trials(200, seed=3)
        self.assertEqual(len(rows), 200)
        self.assertEqual(
            list(rows[0]),
            ["trial", "C", "gamma", "simplex_residual", "stationarity_residual", "lambda_residual", "feasible"],
        )
        self.assertTrue(all(2 <= r["C"] <= 10 and 0.05 <= r["gamma"] <= 5.0 for r in rows))
        self.assertEqual(rows, run_fixed_point_trials(200, seed=3))


class TestOracles(unittest.TestCase):
    def test_gradient_suite_passes(self):
        results = run_gradient_suite(trials=3, seed=1)
        self.assertEqual(
            [r.name for r in results],
            [f"gradient/{name}" for name in ("procal", "soft_only", "div_only", "im", "aad", "cross_entropy")],
        )
        for r in results:
            self.assertTrue(r.passed, f"{r.name}: worst {r.worst}")

    def test_instances_are_small(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            inst = random_gradient_instance(rng)
            self.assertLessEqual(inst.params.num_params, 200)
            self.assertLessEqual(inst.params.C, 5)
            self.assertLessEqual(inst.indices.size, 8)

    def test_gradcheck_single_instance(self):
        inst = random_gradient_instance(np.random.default_rng(4))
        self.assertLessEqual(gradcheck(gradient_cases()["cross_entropy"], inst), 1e-4)

    def test_soft_gradient_equivalence(self):
        result = run_soft_gradient_equivalence(trials=200)
        self.assertTrue(result.passed)
        self.assertLessEqual(result.worst, 1e-12)

    def test_fixed_point_suite(self):
        self.assertTrue(run_fixed_point_suite(trials=1000).passed)

    def test_knn_suite(self):
        result = run_knn_suite(trials=6, seed=2)
        self.assertTrue(result.passed)
        self.assertEqual(result.worst, 0.0)

    def test_brute_force_tie_order(self):
        features = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        self.assertEqual(brute_force_ranking(features, 0), [3, 1, 2])

    def test_run_all_scales_trials(self):
        results = run_all_oracles(trials=100, seed=0)
        self.assertTrue(all(r.passed for r in results))
        counts = {r.name: r.trials for r in results}
        self.assertEqual(counts["fixed point"], 100)
        self.assertEqual(counts["soft-gradient closed form"], 10)
        self.assertEqual(counts["gradient/procal"], 1)


class TestMutationDetection(unittest.TestCase):
    """A sign error in the soft loss gradient must be caught."""

    def setUp(self):
        original = procal.soft_loss

        def flipped(target, probs, detach_self_term=False):
            loss, grads = original(target, probs, detach_self_term)
            return loss, -grads

        self.patcher = mock.patch("objectives.procal.soft_loss", flipped)
        self.patcher.start()

    def tearDown(self):
        self.patcher.stop()

    def test_closed_form_oracle_fails(self):
        self.assertFalse(run_soft_gradient_equivalence(trials=20).passed)

    def test_finite_difference_oracle_fails(self):
        cases = {"procal": gradient_cases()["procal"]}
        result = run_gradient_suite(trials=2, seed=0, cases=cases)[0]
        self.assertFalse(result.passed)


if __name__ == "__main__":
    unittest.main()
