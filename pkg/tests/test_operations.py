import math
import unittest

import numpy as np

from src.articulation_model import ModelBuilder, Operation, as_path
from src.errors import OperationContractError
from src.ext_expr import ExtExpr, evaluate_gradient, jacobian, nonanalytic_keys
from src.frames import position_of
from src.operations import (attach_diff_drive, attach_garage_door, connect_joint, create_body, drive_paths,
                            garage_paths, operation_kinds)
from src.symexpr import Variable, evaluate


class TestBodiesAndJoints(unittest.TestCase):

    def setUp(self):
        self.builder = ModelBuilder([('create world', create_body('world'))])

    def test_registered_kinds(self):
        self.assertEqual(operation_kinds(), ['add_constraint', 'attach_diff_drive', 'attach_garage_door',
                                             'attach_shape', 'connect_joint', 'create_body'])

    def test_body_relative_to_path(self):
        offset = np.eye(4)
        offset[0, 3] = 0.5
        self.builder.apply_operation('create shelf', create_body('shelf', 'world', offset))
        np.testing.assert_array_equal(evaluate(self.builder.model.get('shelf'), {}), offset)

    def test_continuous_joint_has_no_position_limit(self):
        self.builder.apply_operation('create wheel', create_body('wheel'))
        self.builder.apply_operation('connect world wheel',
                                     connect_joint('continuous', 'world', 'wheel', axis=(0, 1, 0), var_name='spin',
                                                   limits=(-1.0, 1.0), vel_limit=3.0))
        self.assertEqual(set(self.builder.model.constraints), {'spin_velocity'})

    def test_mimic_joint(self):
        for name in ('left', 'right'):
            self.builder.apply_operation(f'create {name}', create_body(name))
        self.builder.apply_operation('connect world left', connect_joint('revolute', 'world', 'left', axis=(0, 0, 1),
                                                                         var_name='g', limits=(0.0, 1.0)))
        self.builder.apply_operation('connect world right',
                                     connect_joint('mimic', 'world', 'right', axis=(0, 0, 1), mimic_kind='revolute',
                                                   mimic_of='g', multiplier=-2.0, offset=0.1))
        right = evaluate(self.builder.model.get('right'), {'g': 0.3})
        angle = -2.0 * 0.3 + 0.1
        np.testing.assert_allclose(right[:2, :2], [[math.cos(angle), -math.sin(angle)],
                                                   [math.sin(angle), math.cos(angle)]], atol=1e-12)
        self.assertEqual(set(self.builder.model.constraints), {'g_position'})

    def test_rejected_arguments(self):
        self.builder.apply_operation('create arm', create_body('arm'))
        with self.assertRaises(OperationContractError):
            self.builder.apply_operation('bad kind', connect_joint('ball', 'world', 'arm', var_name='q'))
        with self.assertRaises(OperationContractError):
            self.builder.apply_operation('no var', connect_joint('revolute', 'world', 'arm', limits=(0.0, 1.0)))
        with self.assertRaises(OperationContractError):
            self.builder.apply_operation('unknown arg', Operation('create_body', {'name': as_path('x'), 'colour': 1}))


class TestDiffDrive(unittest.TestCase):

    def setUp(self):
        self.builder = ModelBuilder([
            ('create base', create_body('base')),
            ('drive base', attach_diff_drive('base', 0.05, 0.2, wheel_vel_limit=4.0)),
        ])
        self.model = self.builder.model

    def test_outputs(self):
        x_path, y_path, theta_path = drive_paths(as_path('base'))
        self.assertEqual(str(x_path), 'base_drive.x')
        self.assertIsInstance(self.model.get(theta_path), ExtExpr)
        self.assertEqual(set(self.model.constraints), {'lw_velocity', 'rw_velocity'})

    def test_wheel_gradients(self):
        q = {'x': 0.0, 'y': 0.0, 'theta': 0.5}
        x, y, theta = (self.model.get(p) for p in drive_paths(as_path('base')))
        lw, rw = Variable('lw', 1), Variable('rw', 1)
        self.assertAlmostEqual(evaluate_gradient(x, q)[lw], 0.025 * math.cos(0.5))
        self.assertAlmostEqual(evaluate_gradient(y, q)[rw], 0.025 * math.sin(0.5))
        self.assertAlmostEqual(evaluate_gradient(theta, q)[lw], -0.125)
        self.assertAlmostEqual(evaluate_gradient(theta, q)[rw], 0.125)
        self.assertIn(lw, nonanalytic_keys(x))

    def test_position_jacobian_in_wheel_velocities(self):
        position = position_of(self.model.get('base'))
        j = evaluate(jacobian(position, ['lw', 'rw']), {'x': 0.1, 'y': 0.2, 'theta': 0.0})
        np.testing.assert_allclose(j[:2], [[0.025, 0.025], [0.0, 0.0]], atol=1e-12)

    def test_pose(self):
        pose = evaluate(self.model.get('base'), {'x': 1.0, 'y': 2.0, 'theta': math.pi / 2})
        np.testing.assert_allclose(pose[:3, 3], [1.0, 2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_invalid_geometry(self):
        builder = ModelBuilder()
        with self.assertRaises(OperationContractError):
            builder.apply_operation('drive', attach_diff_drive('cart', -0.05, 0.2))


class TestGarageDoor(unittest.TestCase):

    def setUp(self):
        self.model = ModelBuilder([
            ('create world', create_body('world')),
            ('attach garage', attach_garage_door('world', 'garage', 2.0)),
        ]).model
        self.hinge_a, self.hinge_b = garage_paths(as_path('garage'))

    def test_paths(self):
        self.assertEqual(str(self.hinge_a), 'garage_hinge_a')
        self.assertEqual(set(self.model.constraints), {'a_position', 'garage_lock'})

    def test_hinges_move_on_their_rails(self):
        for a in np.linspace(0.0, 2.0, 21):
            q = {'a': a}
            p_a = evaluate(self.model.get(self.hinge_a), q)[:3, 3]
            p_b = evaluate(self.model.get(self.hinge_b), q)[:3, 3]
            self.assertAlmostEqual(p_a[0], 0.0, delta=1e-12)
            self.assertAlmostEqual(p_b[2], 0.0, delta=1e-12)
            self.assertAlmostEqual(np.linalg.norm(p_a - p_b), 2.0, delta=1e-9)

    def test_closed_and_open(self):
        closed = evaluate(self.model.get(self.hinge_b), {'a': 2.0})[:3, 3]
        np.testing.assert_allclose(closed, [0.0, 0.0, 0.0], atol=1e-12)
        opened = evaluate(self.model.get(self.hinge_b), {'a': 0.0})[:3, 3]
        np.testing.assert_allclose(opened, [2.0, 0.0, 0.0], atol=1e-12)

    def test_lock(self):
        lock = self.model.constraints['garage_lock']
        self.assertLessEqual(evaluate(lock.ub, {'a': 2.0, 'b': 0.0}), 0.01)
        self.assertGreaterEqual(evaluate(lock.ub, {'a': 2.0, 'b': 1.0}), 0.99)
        self.assertGreaterEqual(evaluate(lock.ub, {'a': 1.0, 'b': 0.0}), 0.99)
        self.assertEqual(lock.bare_variable(), Variable('a', 1))


if __name__ == '__main__':
    unittest.main()
