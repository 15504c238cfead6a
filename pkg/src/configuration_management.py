import logging
from pathlib import Path
from typing import Any, Dict
import yaml
import attr
from . import ureg


class ConfigurationManagement:
    @staticmethod
    def load_configuration(config_file: Path, parameters: Any, section: str = None) -> None:
        """
        Load the configuration from a YAML (or JSON) file and update the parameters instance.

        :param config_file: Path to the YAML configuration file.
        :param parameters: attrs parameter instance to be updated.
        :param section: optional top-level key holding the configuration.
        """
        with open(config_file, 'r') as file:
            config = yaml.safe_load(file) or {}
        if section is not None:
            config = config.get(section, {})
        logging.debug(f'Loading {type(parameters).__name__} configuration: {config}')
        ConfigurationManagement.update_parameters(config, parameters)

    @staticmethod
    def update_parameters(config: Dict[str, Any], parameters: Any) -> None:
        """
        Sets the parameters based on the config dict; nested attrs instances are updated from nested dicts.
        Unknown keys are logged and ignored.
        """
        for key, value in config.items():
            if not hasattr(parameters, key):
                logging.warning(f'Ignoring unknown configuration key {key!r} for {type(parameters).__name__}')
                continue
            current = getattr(parameters, key)
            if attr.has(type(current)) and isinstance(value, dict):
                ConfigurationManagement.update_parameters(value, current)
            else:
                setattr(parameters, key, value)

    @staticmethod
    def as_dict(parameters: Any) -> Dict[str, Any]:
        """Plain-data view of the parameters; quantities are written as strings such as '0.02 s'."""
        def serialize(inst, field, value):
            if isinstance(value, ureg.Quantity):
                return str(value)
            return value
        return attr.asdict(parameters, value_serializer=serialize)

    @staticmethod
    def save_configuration(config_file: Path, parameters: Any) -> None:
        """
        Save the current state of the parameters to a YAML configuration file.

        :param config_file: Path to the YAML configuration file to be written.
        :param parameters: attrs parameter instance to be saved.
        """
        with open(config_file, 'w') as file:
            yaml.safe_dump(ConfigurationManagement.as_dict(parameters), file)
