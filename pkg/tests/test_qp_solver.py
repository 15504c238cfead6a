import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import Infeasible
from src.qp_solver import QProblem, QpSettings, solve_qp


class TestQProblem(unittest.TestCase):

    def test_defaults_to_unbounded_box(self):
        problem = QProblem.zeros(3)
        self.assertEqual(problem.n, 3)
        self.assertTrue(np.all(np.isinf(problem.lower)))
        self.assertTrue(np.all(np.isinf(problem.upper)))

    def test_rejects_negative_weights(self):
        with self.assertRaises(ValueError):
            QProblem(np.array([1.0, -1.0]), np.zeros(2))

    def test_rejects_inverted_rows(self):
        problem = QProblem.zeros(2)
        with self.assertRaises(ValueError):
            problem.add_row([1.0, 0.0], 1.0, 0.0)
        with self.assertRaises(ValueError):
            problem.add_soft_row([1.0, 0.0], 1.0, 0.0, 1.0)
        with self.assertRaises(ValueError):
            problem.add_soft_row([1.0, 0.0], 0.0, 1.0, 0.0)

    def test_rejects_wrong_row_length(self):
        with self.assertRaises(ValueError):
            QProblem.zeros(2).add_row([1.0, 0.0, 0.0], 0.0, 1.0)

    def test_objective(self):
        problem = QProblem(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        self.assertAlmostEqual(problem.objective(np.array([1.0, 1.0])), -1.5)


class TestSolveQp(unittest.TestCase):

    def test_unconstrained_minimum(self):
        problem = QProblem(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(solve_qp(problem), [1.0, 1.0], atol=1e-5)

    def test_active_box_bound(self):
        problem = QProblem(np.ones(2), np.array([2.0, 0.0]), np.array([-np.inf, -np.inf]), np.array([1.0, np.inf]))
        np.testing.assert_allclose(solve_qp(problem), [1.0, 0.0], atol=1e-5)

    def test_inequality_row(self):
        problem = QProblem(np.ones(2), np.ones(2))
        problem.add_row([1.0, 1.0], -np.inf, 1.0)
        np.testing.assert_allclose(solve_qp(problem), [0.5, 0.5], atol=1e-5)

    def test_equality_row(self):
        problem = QProblem(np.ones(2), np.zeros(2))
        problem.add_row([1.0, -1.0], 0.3, 0.3)
        np.testing.assert_allclose(solve_qp(problem), [0.15, -0.15], atol=1e-5)

    def test_soft_row_trades_off_against_weights(self):
        problem = QProblem(np.ones(1), np.zeros(1))
        problem.add_soft_row([1.0], 1.0, 1.0, 100.0)
        np.testing.assert_allclose(solve_qp(problem), [100.0 / 101.0], atol=1e-5)

    def test_soft_row_yields_to_hard_bound(self):
        problem = QProblem(np.ones(1), np.zeros(1), np.array([-1.0]), np.array([0.5]))
        problem.add_soft_row([1.0], 1.0, 1.0, 1e4)
        np.testing.assert_allclose(solve_qp(problem), [0.5], atol=1e-5)

    def test_linear_term_in_box(self):
        problem = QProblem(np.zeros(1), np.ones(1), np.array([-1.0]), np.array([2.0]))
        np.testing.assert_allclose(solve_qp(problem), [2.0], atol=1e-5)

    def test_empty_box_is_infeasible(self):
        problem = QProblem(np.ones(2), np.zeros(2), np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        with self.assertRaises(Infeasible):
            solve_qp(problem)

    def test_contradictory_rows_are_infeasible(self):
        problem = QProblem(np.ones(2), np.zeros(2))
        problem.add_row([1.0, 0.0], 1.0, np.inf)
        problem.add_row([1.0, 0.0], -np.inf, 0.0)
        with self.assertRaises(Infeasible):
            solve_qp(problem)

    def test_zero_dimensional(self):
        self.assertEqual(solve_qp(QProblem.zeros(0)).shape, (0,))

    def test_settings_validation(self):
        with self.assertRaises(ValueError):
            QpSettings(alpha=2.5)
        with self.assertRaises(ValueError):
            QpSettings(tolerance=0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.1, 10.0), st.floats(-10.0, 10.0), st.floats(-5.0, 0.0), st.floats(0.0, 5.0)),
                    min_size=1, max_size=6))
    def test_box_problem_is_clipped_unconstrained_minimum(self, entries):
        weights, linear, lower, upper = (np.array(column) for column in zip(*entries))
        x = solve_qp(QProblem(weights, linear, lower, upper))
        np.testing.assert_allclose(x, np.clip(linear / weights, lower, upper), atol=1e-5)


if __name__ == '__main__':
    unittest.main()
