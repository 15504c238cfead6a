import tempfile
import unittest
from pathlib import Path

from src import ureg
from src.configuration_management import ConfigurationManagement
from src.controller_parameters import ControllerParameters, RolloutParameters
from src.estimation_parameters import EkfExperimentParameters
from src.quantities import si
from src.server_parameters import ServerParameters


class TestConfigurationManagement(unittest.TestCase):

    def test_load_experiment(self):
        parameters = EkfExperimentParameters()
        ConfigurationManagement.load_configuration('tests/testdata/ekf_desk.yaml', parameters)
        self.assertEqual(parameters.model_file, 'desk.kmodel')
        self.assertEqual(parameters.observed_frames, ['slider', 'lid', 'garage'])
        self.assertEqual(parameters.trials, 10)
        self.assertEqual(parameters.filter.noise_samples, 500)
        self.assertEqual(parameters.filter.time_step, ureg.Quantity('0.1 s'))
        # untouched nested fields keep their defaults
        self.assertAlmostEqual(si(parameters.filter.default_bound), 3.141592653589793)

    def test_nested_units_are_converted(self):
        parameters = RolloutParameters()
        ConfigurationManagement.load_configuration('tests/testdata/rollout_door_push.yaml', parameters)
        self.assertEqual(parameters.scene, 'door')
        self.assertEqual(parameters.controller, 'push')
        self.assertEqual(parameters.step_limit, 20)
        self.assertAlmostEqual(si(parameters.control.approach_speed), 0.5)
        self.assertAlmostEqual(si(parameters.control.contact_threshold), 0.005)
        self.assertAlmostEqual(si(parameters.control.time_step), 0.02)

    def test_plain_numbers_take_the_field_unit(self):
        parameters = ControllerParameters()
        ConfigurationManagement.update_parameters({'contact_threshold': 0.01, 'avoidance_margin': '3 cm'}, parameters)
        self.assertEqual(parameters.contact_threshold, ureg.Quantity('0.01 m'))
        self.assertAlmostEqual(si(parameters.avoidance_margin), 0.03)

    def test_invalid_values(self):
        parameters = ControllerParameters()
        with self.assertRaises(ValueError):
            ConfigurationManagement.update_parameters({'time_step': '-1 s'}, parameters)
        with self.assertRaises(ValueError):
            ConfigurationManagement.update_parameters({'alignment_threshold': 1.5}, parameters)
        with self.assertRaises(ValueError):
            RolloutParameters(controller='pull')

    def test_unknown_keys_are_ignored(self):
        parameters = ServerParameters(store=None)
        with self.assertLogs(level='WARNING'):
            ConfigurationManagement.update_parameters({'colour': 'red', 'port_number': 0}, parameters)
        self.assertEqual(parameters.port_number, 0)

    def test_section(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'config.yaml'
            path.write_text('server:\n  ip_address: 0.0.0.0\n  port_number: 7400\n')
            parameters = ServerParameters(store=None)
            ConfigurationManagement.load_configuration(path, parameters, section='server')
        self.assertEqual(parameters.ip_address, '0.0.0.0')
        self.assertEqual(parameters.port_number, 7400)

    def test_invalid_server_settings(self):
        with self.assertRaises(ValueError):
            ServerParameters(ip_address='localhost.invalid', store=None)
        with self.assertRaises(ValueError):
            ServerParameters(port_number=70000, store=None)

    def test_save_and_reload(self):
        original = RolloutParameters(scene='garage', controller='push', start=[2.0, 0.0], goal=[1.0, 0.0])
        original.control.proportional_gain = '2 / s'
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'rollout.yaml'
            ConfigurationManagement.save_configuration(path, original)
            loaded = RolloutParameters()
            ConfigurationManagement.load_configuration(path, loaded)
        self.assertEqual(loaded.scene, 'garage')
        self.assertEqual(loaded.start, [2.0, 0.0])
        self.assertAlmostEqual(si(loaded.control.proportional_gain), 2.0)
        self.assertEqual(loaded.control.time_step, original.control.time_step)


if __name__ == '__main__':
    unittest.main()
