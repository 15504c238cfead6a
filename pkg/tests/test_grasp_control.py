import math
import unittest

import numpy as np

from src.errors import EmptyInterval, NonRigidInput
from src.frames import rotation, translation
from src.grasp_control import pose_error, position_bounds, scale_to_bounds, velocity_bounds
from src.rollout import GOAL_REACHED, rollout
from src.scenes import build_scene
from src.symexpr import Variable, evaluate


def planar_pose(x, y, yaw):
    return evaluate(translation(x, y, 0.0) @ rotation((0.0, 0.0, 1.0), yaw), {})


class TestBounds(unittest.TestCase):

    def setUp(self):
        self.drawer = build_scene('drawer').scene.model

    def test_position_bounds(self):
        lower, upper = position_bounds(self.drawer, ['drawer', 'j1'], {'drawer': 0.2, 'j1': 0.0})
        np.testing.assert_allclose(lower, [0.0, -2.9])
        np.testing.assert_allclose(upper, [0.5, 2.9])

    def test_velocity_bounds_respect_position_limits(self):
        lower, upper = velocity_bounds(self.drawer, ['drawer'], {'drawer': 0.49}, 0.1)
        self.assertAlmostEqual(lower[0], -0.5)
        self.assertAlmostEqual(upper[0], 0.1)

    def test_velocity_bounds_reject_bad_time_step(self):
        with self.assertRaises(ValueError):
            velocity_bounds(self.drawer, ['drawer'], {'drawer': 0.2}, 0.0)

    def test_empty_interval(self):
        with self.assertRaises(EmptyInterval):
            velocity_bounds(self.drawer, ['drawer'], {'drawer': 0.7}, 0.1)

    def test_garage_lock(self):
        model = build_scene('garage').scene.model
        lower, upper = velocity_bounds(model, ['a'], {'a': 2.0, 'b': 0.0}, 0.02)
        self.assertLess(abs(lower[0]), 1e-6)
        self.assertLess(abs(upper[0]), 1e-6)
        lower, upper = velocity_bounds(model, ['a'], {'a': 2.0, 'b': 0.5}, 0.02)
        self.assertAlmostEqual(lower[0], -1.0, places=6)
        self.assertAlmostEqual(upper[0], 0.0, places=9)
        lower, upper = velocity_bounds(model, ['a'], {'a': 1.0, 'b': 0.0}, 0.02)
        np.testing.assert_allclose([lower[0], upper[0]], [-1.0, 1.0], atol=1e-6)


class TestPoseError(unittest.TestCase):

    def test_translation_and_rotation(self):
        a = planar_pose(1.0, 0.0, 0.0)
        b = planar_pose(1.0, 2.0, 0.3)
        t, r = pose_error(a, b)
        np.testing.assert_allclose(t, [0.0, 2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(r, [0.0, 0.0, 0.3], atol=1e-12)

    def test_rotation_in_first_frame(self):
        a = planar_pose(0.0, 0.0, math.pi / 2)
        b = planar_pose(0.0, 0.0, math.pi / 2 + 0.2)
        _, r = pose_error(a, b)
        np.testing.assert_allclose(r, [0.0, 0.0, 0.2], atol=1e-12)

    def test_identical_poses(self):
        t, r = pose_error(np.eye(4), np.eye(4))
        self.assertEqual(np.linalg.norm(t), 0.0)
        self.assertAlmostEqual(np.linalg.norm(r), 0.0)

    def test_rejects_non_rigid(self):
        scaled = np.diag([2.0, 1.0, 1.0, 1.0])
        with self.assertRaises(NonRigidInput):
            pose_error(np.eye(4), scaled)
        with self.assertRaises(NonRigidInput):
            pose_error(np.eye(3), np.eye(4))


class TestScaleToBounds(unittest.TestCase):

    def test_inside(self):
        self.assertEqual(scale_to_bounds(np.array([0.5, -0.5]), np.array([-1.0, -1.0]), np.array([1.0, 1.0])), 1.0)

    def test_limited_by_tightest(self):
        scale = scale_to_bounds(np.array([2.0, -4.0]), np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        self.assertAlmostEqual(scale, 0.25)


class TestGraspController(unittest.TestCase):

    def setUp(self):
        self.setup = build_scene('drawer')
        self.q0 = self.setup.initial_configuration('grasp')

    def test_initial_configuration_holds_the_handle(self):
        controller = self.setup.controller('grasp')
        t, r = controller.grasp_deviation(self.q0)
        self.assertLess(np.linalg.norm(t), 1e-3)
        self.assertLess(np.linalg.norm(r), 1e-2)

    def test_goal_shape(self):
        with self.assertRaises(ValueError):
            self.setup.controller('grasp', goal=[0.0, 1.0])

    def test_command_moves_object_towards_goal(self):
        command = self.setup.controller('grasp').command(self.q0)
        self.assertLess(command.object_velocity[0], 0.0)
        self.assertEqual(command.robot_velocity.shape, (3,))
        self.assertLessEqual(np.max(np.abs(command.robot_velocity)), 1.5 + 1e-9)

    def test_closes_drawer(self):
        controller = self.setup.controller('grasp')
        trace = rollout(self.setup.scene, controller, self.q0)
        self.assertEqual(trace.status, GOAL_REACHED)
        self.assertLessEqual(trace.final_q[self.setup.scene.object_vars[0]], 1e-2)
        t, _ = controller.grasp_deviation(trace.final_q)
        self.assertLess(np.linalg.norm(t), 1e-2)


class TestGraspedRollouts(unittest.TestCase):

    def check_rollout(self, base, start, goal):
        setup = build_scene('drawer', base)
        scene, dt = setup.scene, setup.scene.time_step
        controller = setup.controller('grasp', goal=goal)
        q = setup.initial_configuration('grasp', start)
        trace = rollout(scene, controller, q)
        self.assertEqual(trace.status, GOAL_REACHED)
        self.assertLessEqual(len(trace), 500)
        self.assertLessEqual(abs(trace.final_q[Variable('drawer')] - goal[0]), 1e-2)
        for entry in trace.entries:
            translation, turn = controller.grasp_deviation(entry.q)
            self.assertLessEqual(np.linalg.norm(translation), 5e-3)
            self.assertLessEqual(np.linalg.norm(turn), 5e-2)
            # the command respects the bounds at the state it was computed for and is integrated unchanged
            lower, upper = velocity_bounds(scene.model, scene.robot_vars, q, dt)
            velocity = entry.command.robot_velocity
            self.assertTrue(np.all(velocity >= lower - 1e-9))
            self.assertTrue(np.all(velocity <= upper + 1e-9))
            moved = np.array([entry.q[v] - q[v] for v in scene.robot_vars]) / dt
            np.testing.assert_allclose(moved, velocity, atol=1e-9)
            self.assertTrue(0.0 <= entry.command.diagnostics['scale'] <= 1.0)
            q = entry.q

    def test_fixed_base(self):
        for start, goal in (([0.4], [0.0]), ([0.0], [0.4])):
            with self.subTest(start=start, goal=goal):
                self.check_rollout('fixed', start, goal)

    def test_diff_drive_base(self):
        for start, goal in (([0.4], [0.0]), ([0.0], [0.4])):
            with self.subTest(start=start, goal=goal):
                self.check_rollout('diff_drive', start, goal)


if __name__ == '__main__':
    unittest.main()
