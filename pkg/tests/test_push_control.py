import unittest

import numpy as np

from src.geometry import ContactQueryResult, closest_points
from src.push_control import APPROACH, IDLE, PUSH, PushController
from src.rollout import GOAL_REACHED, STEP_LIMIT, rollout
from src.scenes import EE_PATH, build_scene
from src.symexpr import Variable


class TestPushController(unittest.TestCase):

    def setUp(self):
        self.setup = build_scene('door', step_limit=20)
        self.controller = self.setup.controller('push')

    def test_needs_shapes_on_both_parts(self):
        with self.assertRaises(ValueError):
            PushController(self.setup.scene, EE_PATH, 'door.frame', [0.0])

    def test_idle_at_goal(self):
        q = self.setup.push_configuration([0.0])
        command = self.controller.command(q)
        self.assertEqual(command.diagnostics['mode'], IDLE)
        np.testing.assert_array_equal(command.robot_velocity, np.zeros(3))
        np.testing.assert_array_equal(command.object_velocity, np.zeros(1))

    def test_approaches_when_far(self):
        command = self.controller.command(self.setup.push_configuration())
        self.assertEqual(command.diagnostics['mode'], APPROACH)
        self.assertGreater(command.diagnostics['contact_distance'], 0.1)
        np.testing.assert_array_equal(command.object_velocity, np.zeros(1))
        self.assertGreater(np.linalg.norm(command.robot_velocity), 0.0)

    def test_mode_selection(self):
        normal = np.array([1.0, 0.0, 0.0])
        touching = ContactQueryResult(np.zeros(3), np.zeros(3), normal, 0.001)
        far = ContactQueryResult(np.zeros(3), np.zeros(3), normal, 0.1)
        self.assertEqual(self.controller.mode(touching, -normal)[0], PUSH)
        self.assertEqual(self.controller.mode(touching, normal)[0], APPROACH)
        self.assertEqual(self.controller.mode(far, -normal)[0], APPROACH)
        self.assertAlmostEqual(self.controller.mode(touching, np.array([-1.0, 1.0, 0.0]))[1], np.sqrt(0.5))

    def test_approach_closes_the_gap(self):
        trace = rollout(self.setup.scene, self.controller, self.setup.push_configuration())
        self.assertEqual(len(trace), 20)
        self.assertLess(trace.entries[-1].contact_distance, trace.entries[0].contact_distance)


class TestPushRollouts(unittest.TestCase):

    def test_closes_drawer(self):
        setup = build_scene('drawer')
        trace = rollout(setup.scene, setup.controller('push'), setup.push_configuration())
        self.assertEqual(trace.status, GOAL_REACHED)
        self.assertLessEqual(trace.final_q[Variable('drawer')], 1e-2)
        pushing = [e for e in trace.entries if e.command.diagnostics.get('mode') == PUSH]
        self.assertTrue(pushing)
        for entry in pushing:
            self.assertLessEqual(entry.ppn, 1e-6)

    def test_closes_door(self):
        setup = build_scene('door')
        trace = rollout(setup.scene, setup.controller('push'), setup.push_configuration())
        self.assertEqual(trace.status, GOAL_REACHED)
        self.assertLessEqual(abs(trace.final_q[Variable('door')]), 0.02)
        for entry in trace.entries:
            if entry.command.diagnostics.get('mode') == PUSH:
                self.assertLessEqual(entry.ppn, 1e-6)

    def test_closes_folding_door_clear_of_the_outer_segment(self):
        setup = build_scene('folding_door')
        model = setup.scene.model
        fingertip, outer = model.shapes['robot.fingertip'], model.shapes['fold.outer_leaf']
        trace = rollout(setup.scene, setup.controller('push'), setup.push_configuration())
        self.assertEqual(trace.status, GOAL_REACHED)
        for entry in trace.entries:
            self.assertGreaterEqual(closest_points(fingertip, outer, entry.q, model).distance, 0.02 - 1e-4)
            if 'obstacle_distance' in entry.command.diagnostics:
                self.assertGreaterEqual(entry.command.diagnostics['obstacle_distance'], 0.02 - 1e-4)

    def test_garage_lock_is_respected(self):
        setup = build_scene('garage', step_limit=10)
        trace = rollout(setup.scene, setup.controller('push'), setup.push_configuration())
        self.assertEqual(trace.status, STEP_LIMIT)
        for entry in trace.entries:
            self.assertLessEqual(abs(entry.command.object_velocity[0]), 1e-6)
        self.assertAlmostEqual(trace.final_q[Variable('a')], 2.0, places=6)


if __name__ == '__main__':
    unittest.main()
