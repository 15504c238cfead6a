import math
import unittest

import numpy as np

from src.errors import DimensionMismatch
from src.frames import (compose, origin_transform, position_of, rotation, rotation_of, softstep_lt,
                        transform_point, translation, unit_axis)
from src.symexpr import MatrixExpr, evaluate, variable

a = variable('a')
b = variable('b')


class TestFrames(unittest.TestCase):

    def test_rotation_about_x(self):
        r = evaluate(rotation((1, 0, 0), math.pi / 2), {})
        np.testing.assert_allclose(r[:3, :3] @ [0, 1, 0], [0, 0, 1], atol=1e-12)

    def test_rotation_is_right_handed(self):
        r = evaluate(rotation((0, 0, 1), a), {'a': 0.3})
        np.testing.assert_allclose(r[:2, :2], [[math.cos(0.3), -math.sin(0.3)], [math.sin(0.3), math.cos(0.3)]],
                                   atol=1e-12)

    def test_compose_with_identity(self):
        t = compose(rotation((0, 0, 1), a), translation(0, 0, b))
        self.assertEqual(compose(t, MatrixExpr.identity(4)), t)
        value = evaluate(t, {'a': math.pi, 'b': 2.0})
        np.testing.assert_allclose(value, [[-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 1, 2], [0, 0, 0, 1]], atol=1e-12)

    def test_blocks(self):
        t = compose(translation(1.0, 2.0, b), rotation((0, 1, 0), a))
        q = {'a': 0.4, 'b': -1.0}
        np.testing.assert_allclose(evaluate(position_of(t), q).ravel(), [1.0, 2.0, -1.0])
        self.assertEqual(rotation_of(t).shape, (3, 3))
        point = evaluate(transform_point(t, (0.0, 0.0, 1.0)), q).ravel()
        np.testing.assert_allclose(point, [1.0 + math.sin(0.4), 2.0, -1.0 + math.cos(0.4)], atol=1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            compose(MatrixExpr.identity(3), MatrixExpr.identity(4))
        with self.assertRaises(DimensionMismatch):
            rotation((0, 1), a)

    def test_origin_transform(self):
        value = evaluate(origin_transform((0.1, 0.0, 0.0), (0.0, 0.0, math.pi / 2)), {})
        np.testing.assert_allclose(value[:3, 0], [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(value[:3, 3], [0.1, 0, 0], atol=1e-12)

    def test_unit_axis(self):
        self.assertEqual(unit_axis((0, 0, 2)), (0.0, 0.0, 1.0))
        with self.assertRaises(ValueError):
            unit_axis((0, 0, 0))


class TestSoftstep(unittest.TestCase):

    def test_values(self):
        x = variable('x')
        self.assertEqual(evaluate(softstep_lt(x, 0.3), {'x': 0.3}), 0.5)
        self.assertGreaterEqual(evaluate(softstep_lt(x, 0.3, 100.0), {'x': 0.0}), 0.999)
        self.assertLessEqual(evaluate(softstep_lt(x, 0.3, 100.0), {'x': 0.6}), 0.001)

    def test_sharpness_must_be_positive(self):
        with self.assertRaises(ValueError):
            softstep_lt(a, 0.3, 0.0)


if __name__ == '__main__':
    unittest.main()
