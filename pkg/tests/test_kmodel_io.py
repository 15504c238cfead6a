import json
import os
import tempfile
import unittest

import numpy as np

from src.articulation_model import replay
from src.errors import FormatError
from src.expr_io import expr_from_json, expr_to_json
from src.ext_expr import ext
from src.geometry import Sphere
from src.kmodel_io import load_kmodel, load_model_file, save_kmodel, write_kmodel_file
from src.operations import attach_diff_drive, attach_garage_door, attach_shape, create_body
from src.symexpr import MatrixExpr, constant, evaluate, sin, variable

a = variable('a')
b = variable('b')


def garage_history():
    return [
        ('create world', create_body('world')),
        ('attach garage', attach_garage_door('world', 'garage', 2.0)),
        ('create robot', create_body('robot')),
        ('drive robot', attach_diff_drive('robot', 0.05, 0.2, wheel_vel_limit=4.0)),
        ('shape robot', attach_shape('robot_hull', 'robot', Sphere(0.3))),
    ]


class TestExpressionJson(unittest.TestCase):

    def test_structure_is_preserved(self):
        expr = sin(a) * b + 2.5
        self.assertEqual(expr_from_json(expr_to_json(expr)), expr)

    def test_extended_expression(self):
        e = ext(sin(a) + b ** 2, overrides={"b'": 1.0}, extras={"c'": 4.0})
        decoded = expr_from_json(json.loads(json.dumps(expr_to_json(e))))
        self.assertEqual(decoded, e)

    def test_matrix(self):
        m = MatrixExpr.from_rows([[a, 1.0], [0.0, b]])
        self.assertEqual(expr_from_json(expr_to_json(m)), m)

    def test_variable_order(self):
        doc = expr_to_json(variable("a''"))
        self.assertEqual(doc['var'], "a''")

    def test_decode_errors_name_the_location(self):
        with self.assertRaises(FormatError) as caught:
            expr_from_json({'op': 'add', 'args': [{'c': 1.0}, {'op': 'frobnicate', 'args': []}]})
        self.assertIn('$.args[1].op', str(caught.exception))
        with self.assertRaises(FormatError):
            expr_from_json({'op': 'sin', 'args': []})
        with self.assertRaises(FormatError):
            expr_from_json({'c': 'one'})
        with self.assertRaises(FormatError):
            expr_from_json({'rows': 2, 'cols': 2, 'entries': [{'c': 1.0}]})

    def test_non_finite_constants(self):
        with self.assertRaises(ValueError):
            expr_to_json(constant(float('inf')))


class TestKmodel(unittest.TestCase):

    def test_round_trip_replays_to_equal_model(self):
        history = garage_history()
        restored = load_kmodel(save_kmodel(history))
        self.assertEqual([tag for tag, _ in restored], [tag for tag, _ in history])
        original, rebuilt = replay(history), replay(restored)
        q = {'a': 1.2, 'b': 0.5, 'x': 0.3, 'y': -0.2, 'theta': 0.4}
        for path in original.paths():
            np.testing.assert_allclose(evaluate(rebuilt.get(path), q), evaluate(original.get(path), q), atol=1e-12)
        self.assertEqual(set(rebuilt.constraints), set(original.constraints))
        self.assertEqual(rebuilt.shapes['robot_hull'].shape, Sphere(0.3))

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'garage.kmodel')
            write_kmodel_file(path, garage_history())
            self.assertFalse(os.path.exists(path + '.tmp'))
            self.assertEqual(len(load_model_file(path)), len(garage_history()))

    def test_version(self):
        with self.assertRaises(FormatError):
            load_kmodel(json.dumps({'version': 2, 'history': []}))

    def test_invalid_json(self):
        with self.assertRaises(FormatError):
            load_kmodel('{"version": 1,')

    def test_unknown_kind(self):
        doc = {'version': 1, 'history': [{'tag': 'x', 'kind': 'teleport', 'args': {}}]}
        with self.assertRaises(FormatError) as caught:
            load_kmodel(json.dumps(doc))
        self.assertEqual(caught.exception.json_path, '$.history[0].kind')

    def test_unknown_argument(self):
        doc = {'version': 1, 'history': [{'tag': 'x', 'kind': 'create_body', 'args': {'name': 'w', 'colour': 1}}]}
        with self.assertRaises(FormatError):
            load_kmodel(json.dumps(doc))

    def test_duplicate_tags(self):
        entry = {'tag': 'create world', 'kind': 'create_body', 'args': {'name': 'world'}}
        with self.assertRaises(FormatError):
            load_kmodel(json.dumps({'version': 1, 'history': [entry, entry]}))

    def test_pose_shape(self):
        doc = {'version': 1, 'history': [{'tag': 'x', 'kind': 'create_body',
                                          'args': {'name': 'w', 'offset': {'rows': 1, 'cols': 1,
                                                                          'entries': [{'c': 1.0}]}}}]}
        with self.assertRaises(FormatError):
            load_kmodel(json.dumps(doc))


if __name__ == '__main__':
    unittest.main()
