import math
from typing import Union

from . import ureg


def validate_quantity(instance, attribute, value):
    if not isinstance(value, ureg.Quantity):
        raise TypeError(f"{attribute.name} must be a ureg.Quantity")


def quantity_converter(input_value: Union[str, float, int, ureg.Quantity], target_unit: Union[str, ureg.Unit] = None):
    """
    Convert input_value to a ureg.Quantity. Strings are parsed as quantities ("5 mm", "0.02 s"),
    plain numbers are taken in target_unit, quantities are returned unchanged.
    Parameters:
    input_value: value to convert
    target_unit: unit to use for conversion if input_value is a float or int
    """
    if isinstance(input_value, str):
        return ureg.Quantity(input_value)
    elif isinstance(input_value, ureg.Quantity):
        return input_value
    elif isinstance(input_value, (float, int)) and target_unit is not None:
        return ureg.Quantity(input_value, target_unit)
    else:
        raise TypeError('Value must be either: 1) a float or int with a target_unit specified, 2) a string that can be interpreted as a Quantity or 3) a Quantity already')


def unit_converter(target_unit: str):
    """Converter for attrs fields that accept strings, quantities or plain numbers in target_unit."""
    def convert(value):
        quantity = quantity_converter(value, target_unit)
        # unit-less inputs such as '0.5' are taken in the target unit
        if quantity.unitless:
            quantity = ureg.Quantity(quantity.magnitude, target_unit)
        return quantity.to(target_unit)
    return convert


def validate_positive_quantity(instance, attribute, value):
    validate_quantity(instance, attribute, value)
    if not value.magnitude > 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def validate_nonnegative_quantity(instance, attribute, value):
    validate_quantity(instance, attribute, value)
    if value.magnitude < 0 or math.isnan(value.magnitude):
        raise ValueError(f"{attribute.name} must not be negative, got {value}")


def si(value) -> float:
    """Magnitude in base SI units (m, rad, s)."""
    return float(value.to_base_units().magnitude)
