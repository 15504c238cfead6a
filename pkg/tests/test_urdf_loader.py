import math
import unittest

import numpy as np

from src.articulation_model import ModelBuilder, as_path, replay
from src.errors import CycleError, MimicCycle, ParseError, UnsupportedGeometry, UnsupportedJoint
from src.geometry import Box, Capsule, Sphere
from src.kmodel_io import load_kmodel, load_model_file, save_kmodel
from src.symexpr import Variable, evaluate
from src.urdf_loader import parse_urdf, sanitize_name


def rz(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)


def shift(x, y, z):
    t = np.eye(4)
    t[:3, 3] = (x, y, z)
    return t


def _robot(joints: str, links=('base', 'arm')) -> str:
    declared = ''.join(f'<link name="{name}"/>' for name in links)
    return f'<robot name="test">{declared}{joints}</robot>'


class TestSmallArm(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.history = load_model_file('tests/testdata/small_arm.urdf')
        cls.model = replay(cls.history)

    def test_forward_kinematics_matches_chain(self):
        rng = np.random.default_rng(1)
        for shoulder, elbow, finger in zip(rng.uniform(-2.5, 2.5, 100), rng.uniform(-2.5, 2.5, 100),
                                           rng.uniform(0.0, 0.04, 100)):
            q = {'shoulder': shoulder, 'elbow': elbow, 'finger_joint': finger}
            tool = shift(0, 0, 0.1) @ rz(shoulder) @ shift(0.4, 0, 0) @ rz(elbow) @ shift(0.3, 0, 0)
            np.testing.assert_allclose(evaluate(self.model.get('tool'), q), tool, rtol=0, atol=1e-12)
            left = tool @ shift(0, 0.01 + finger, 0)
            right = tool @ shift(0, -0.01 - finger, 0)
            np.testing.assert_allclose(evaluate(self.model.get('finger_left'), q), left, rtol=0, atol=1e-12)
            np.testing.assert_allclose(evaluate(self.model.get('finger_right'), q), right, rtol=0, atol=1e-12)

    def test_variables_and_constraints(self):
        self.assertEqual(self.model.variables(), {
            Variable('shoulder'), Variable('elbow'), Variable('finger_joint'),
            Variable('shoulder', 1), Variable('elbow', 1), Variable('finger_joint', 1)})
        self.assertNotIn('finger_mimic_position', self.model.constraints)
        limit = self.model.constraints['elbow_position']
        self.assertEqual((limit.lb.value, limit.ub.value), (-2.5, 2.5))
        self.assertEqual(self.model.constraints['finger_joint_velocity'].ub.value, 0.1)

    def test_shapes(self):
        shapes = self.model.shapes
        self.assertEqual(set(shapes), {'base#0', 'link1#0', 'tool#0'})
        self.assertIsInstance(shapes['base#0'].shape, Box)
        self.assertEqual(shapes['base#0'].shape.half_extents, (0.1, 0.1, 0.05))
        self.assertIsInstance(shapes['link1#0'].shape, Capsule)
        self.assertAlmostEqual(shapes['link1#0'].shape.half_length, 0.2)
        self.assertIsInstance(shapes['tool#0'].shape, Sphere)
        self.assertEqual(shapes['link1#0'].path, as_path('link1'))

    def test_tags(self):
        tags = [tag for tag, _ in self.history]
        self.assertEqual(tags[0], 'create base')
        self.assertIn('shape link1 0', tags)
        self.assertLess(tags.index('connect base link1'), tags.index('connect link1 link2'))
        self.assertLess(tags.index('connect tool finger_left'), tags.index('connect tool finger_right'))

    def test_kmodel_round_trip_preserves_kinematics(self):
        restored = replay(load_kmodel(save_kmodel(self.history)))
        q = {'shoulder': 0.3, 'elbow': -1.1, 'finger_joint': 0.02}
        for path in self.model.paths():
            np.testing.assert_allclose(evaluate(restored.get(path), q), evaluate(self.model.get(path), q),
                                       rtol=0, atol=1e-12)
        self.assertEqual(restored.constraints, self.model.constraints)


class TestFixtures(unittest.TestCase):

    def test_drawer(self):
        model = replay(load_model_file('tests/testdata/drawer.urdf'))
        handle = evaluate(model.get('handle'), {'drawer_joint': 0.25})
        np.testing.assert_allclose(handle[:3, 3], [0.57, 0.0, 0.6], atol=1e-12)

    def test_door_names_are_sanitized(self):
        model = replay(load_model_file('tests/testdata/door.urdf'))
        self.assertTrue(model.has('door_panel'))
        knob = evaluate(model.get('knob'), {'hinge': 0.0})
        np.testing.assert_allclose(knob[:3, 3], [0.03, 0.3 - 0.45, 0.5], atol=1e-12)

    def test_prefix(self):
        with open('tests/testdata/drawer.urdf') as file:
            history = parse_urdf(file.read(), prefix='kitchen')
        builder = ModelBuilder(history)
        self.assertTrue(builder.model.has('kitchen.handle'))
        self.assertIn('connect kitchen.cabinet kitchen.drawer', builder.tags)

    def test_mimic_cycle(self):
        with self.assertRaises(MimicCycle):
            load_model_file('tests/testdata/mimic_cycle.urdf')


class TestRejectedDocuments(unittest.TestCase):

    def test_malformed_xml(self):
        with self.assertRaises(ParseError):
            parse_urdf('<robot><link name="base"></robot>')

    def test_root_element(self):
        with self.assertRaises(ParseError):
            parse_urdf('<model name="x"/>')

    def test_planar_joint(self):
        joint = '<joint name="j" type="planar"><parent link="base"/><child link="arm"/></joint>'
        with self.assertRaises(UnsupportedJoint):
            parse_urdf(_robot(joint))

    def test_mesh(self):
        with self.assertRaises(UnsupportedGeometry):
            parse_urdf('<robot name="m"><link name="base"><collision><geometry>'
                       '<mesh filename="base.stl"/></geometry></collision></link></robot>')

    def test_undeclared_link(self):
        joint = '<joint name="j" type="fixed"><parent link="base"/><child link="ghost"/></joint>'
        with self.assertRaises(ParseError):
            parse_urdf(_robot(joint))

    def test_two_parents(self):
        joints = ('<joint name="j1" type="fixed"><parent link="base"/><child link="arm"/></joint>'
                  '<joint name="j2" type="fixed"><parent link="tip"/><child link="arm"/></joint>')
        with self.assertRaises(CycleError):
            parse_urdf(_robot(joints, links=('base', 'arm', 'tip')))

    def test_kinematic_loop(self):
        joints = ('<joint name="j1" type="fixed"><parent link="base"/><child link="arm"/></joint>'
                  '<joint name="j2" type="fixed"><parent link="arm"/><child link="base"/></joint>')
        with self.assertRaises(CycleError):
            parse_urdf(_robot(joints))

    def test_sanitize_name(self):
        self.assertEqual(sanitize_name('left wheel-1'), 'left_wheel_1')
        with self.assertRaises(ParseError):
            sanitize_name('')


if __name__ == '__main__':
    unittest.main()
