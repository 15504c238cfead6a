import csv
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.errors import IkStalled
from src.rollout import GOAL_REACHED, STEP_LIMIT, ControlCommand, RolloutScene, clamp_to_limits, rollout
from src.scenes import SCENE_NAMES, build_scene, planar_arm_configuration
from src.symexpr import Variable, evaluate


class ConstantController:
    """Commands fixed robot and object velocities; the goal is an object value threshold."""

    def __init__(self, robot_velocity, object_velocity, goal_below=-math.inf):
        self.robot_velocity = np.asarray(robot_velocity, dtype=float)
        self.object_velocity = np.asarray(object_velocity, dtype=float)
        self.goal_below = goal_below

    def command(self, q):
        return ControlCommand(self.robot_velocity, self.object_velocity, {'contact_distance': 0.5})

    def goal_reached(self, q):
        return q[Variable('drawer')] <= self.goal_below


class StallingController(ConstantController):

    def command(self, q):
        raise IkStalled('no progress')


class TestRolloutScene(unittest.TestCase):

    def test_overlapping_variables(self):
        model = build_scene('drawer').scene.model
        with self.assertRaises(ValueError):
            RolloutScene(model, ['j1', 'drawer'], ['drawer'])

    def test_time_step_must_be_positive(self):
        model = build_scene('drawer').scene.model
        with self.assertRaises(ValueError):
            RolloutScene(model, ['j1'], ['drawer'], time_step=0.0)


class TestRollout(unittest.TestCase):

    def setUp(self):
        self.setup = build_scene('drawer', step_limit=30)
        self.q0 = self.setup.push_configuration()

    def test_step_limit_and_clamping(self):
        trace = rollout(self.setup.scene, ConstantController(np.zeros(3), [1.0]), self.q0)
        self.assertEqual(trace.status, STEP_LIMIT)
        self.assertEqual(len(trace), 30)
        self.assertEqual(trace.entries[-1].status, STEP_LIMIT)
        self.assertEqual(trace.final_q[Variable('drawer')], 0.5)

    def test_goal_reached(self):
        trace = rollout(self.setup.scene, ConstantController(np.zeros(3), [-0.5], goal_below=0.205), self.q0)
        self.assertEqual(trace.status, GOAL_REACHED)
        # 0.4 - 0.01 per step
        self.assertEqual(len(trace), 20)
        self.assertAlmostEqual(trace.final_q[Variable('drawer')], 0.2)
        self.assertAlmostEqual(trace.entries[-1].time_s, 0.4)

    def test_robot_velocity_is_integrated(self):
        trace = rollout(self.setup.scene, ConstantController([0.1, 0.0, 0.0], [0.0]), self.q0)
        j1 = Variable('j1')
        self.assertAlmostEqual(trace.final_q[j1], self.q0[j1] + 30 * 0.02 * 0.1)

    def test_controller_error_becomes_status(self):
        trace = rollout(self.setup.scene, StallingController(np.zeros(3), [0.0]), self.q0)
        self.assertEqual(trace.status, 'IkStalled')
        self.assertEqual(len(trace), 1)
        self.assertEqual(trace.final_q, self.q0)

    def test_csv(self):
        trace = rollout(self.setup.scene, ConstantController(np.zeros(3), [-0.5], goal_below=0.3), self.q0)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'trace.csv'
            trace.write_csv(path)
            with open(path, newline='') as file:
                rows = list(csv.reader(file))
        self.assertEqual(rows[0][:2], ['step', 'time_s'])
        self.assertEqual(rows[0][-4:], ['contact_distance', 'ppn', 'iter_ms', 'status'])
        self.assertIn('drawer', rows[0])
        self.assertEqual(len(rows), len(trace) + 1)
        self.assertEqual(rows[-1][-1], GOAL_REACHED)

    def test_clamp_to_limits(self):
        clamped = clamp_to_limits(self.setup.scene.model, {Variable('drawer'): -0.1, Variable('j1'): 3.5})
        self.assertEqual(clamped[Variable('drawer')], 0.0)
        self.assertEqual(clamped[Variable('j1')], 2.9)


class TestScenes(unittest.TestCase):

    def test_all_scenes_build(self):
        for name in SCENE_NAMES:
            for base in ('fixed', 'diff_drive'):
                with self.subTest(scene=name, base=base):
                    setup = build_scene(name, base)
                    self.assertEqual(len(setup.object_start), len(setup.scene.object_vars))
                    self.assertEqual(len(setup.scene.robot_vars), 5 if base == 'diff_drive' else 3)

    def test_unknown_scene_and_base(self):
        with self.assertRaises(ValueError):
            build_scene('window')
        with self.assertRaises(ValueError):
            build_scene('drawer', base='legs')

    def test_planar_arm_configuration(self):
        setup = build_scene('drawer')
        q = setup.base_configuration(setup.object_start)
        q.update(planar_arm_configuration(0.5, 0.2, 0.3))
        pose = evaluate(setup.scene.model.get(setup.ee_path), q)
        np.testing.assert_allclose(pose[:2, 3], [0.5, 0.2], atol=1e-12)
        self.assertAlmostEqual(math.atan2(pose[1, 0], pose[0, 0]), 0.3)

    def test_out_of_reach(self):
        with self.assertRaises(ValueError):
            planar_arm_configuration(2.0, 0.0, 0.0)

    def test_folding_door_mimic(self):
        setup = build_scene('folding_door')
        q = setup.base_configuration([0.5])
        outer = evaluate(setup.scene.model.get('fold.outer'), q)
        # inner turned by 0.5, outer by -1.0 relative to it
        self.assertAlmostEqual(math.atan2(outer[1, 0], outer[0, 0]), -0.5)

    def test_garage_starts_closed_and_locked(self):
        setup = build_scene('garage')
        np.testing.assert_allclose(setup.object_start, [2.0, 0.0])
        self.assertEqual([str(v) for v in setup.scene.object_vars], ['a', 'b'])


if __name__ == '__main__':
    unittest.main()
