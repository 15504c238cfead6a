from typing import List, Optional

import attr

from . import ureg
from src.quantities import unit_converter, validate_nonnegative_quantity, validate_positive_quantity


def validate_positive_int(instance, attribute, value):
    if value < 1:
        raise ValueError(f"{attribute.name} must be at least 1, got {value}")


def validate_positive_float(instance, attribute, value):
    if not value > 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def validate_cosine(instance, attribute, value):
    if not -1.0 <= value <= 1.0:
        raise ValueError(f"{attribute.name} is a cosine and must lie in [-1, 1], got {value}")


def validate_controller_kind(instance, attribute, value):
    if value not in ('grasp', 'push'):
        raise ValueError(f"{attribute.name} must be 'grasp' or 'push', got {value!r}")


@attr.define
class ControllerParameters:
    """Tunables shared by the grasped-object and the pushing controller."""
    time_step: ureg.Quantity = attr.field(default='0.02 s', validator=validate_positive_quantity, converter=unit_converter('s'))
    # object-space proportional gain
    proportional_gain: ureg.Quantity = attr.field(default='1 / s', validator=validate_nonnegative_quantity, converter=unit_converter('1 / s'))
    # navigation blend: lambda_1 towards the contact point, lambda_2 along the tangent
    approach_speed: ureg.Quantity = attr.field(default='1 m/s', validator=validate_nonnegative_quantity, converter=unit_converter('m/s'))
    tangent_speed: ureg.Quantity = attr.field(default='0.5 m/s', validator=validate_nonnegative_quantity, converter=unit_converter('m/s'))
    alignment_threshold: float = attr.field(default=0.8, validator=validate_cosine, converter=float)
    contact_threshold: ureg.Quantity = attr.field(default='5 mm', validator=validate_nonnegative_quantity, converter=unit_converter('m'))
    avoidance_margin: ureg.Quantity = attr.field(default='2 cm', validator=validate_nonnegative_quantity, converter=unit_converter('m'))
    slack_weight: float = attr.field(default=1e4, validator=validate_positive_float, converter=float)
    damping: float = attr.field(default=1e-6, validator=validate_positive_float, converter=float)
    ik_translation_tolerance: ureg.Quantity = attr.field(default='1 mm', validator=validate_positive_quantity, converter=unit_converter('m'))
    ik_rotation_tolerance: ureg.Quantity = attr.field(default='0.01 rad', validator=validate_positive_quantity, converter=unit_converter('rad'))
    ik_max_iterations: int = attr.field(default=50, validator=validate_positive_int, converter=int)
    ik_stall_window: int = attr.field(default=5, validator=validate_positive_int, converter=int)
    ik_stall_reduction: float = attr.field(default=1e-8, validator=validate_positive_float, converter=float)


@attr.define
class RolloutParameters:
    """Configuration of one simulated rollout, as read from a YAML or JSON file."""
    scene: str = attr.field(default='drawer')
    controller: str = attr.field(default='grasp', validator=validate_controller_kind)
    base: str = attr.field(default='fixed')
    # object start and goal configuration, one value per object variable
    start: List[float] = attr.field(factory=list)
    goal: List[float] = attr.field(factory=list)
    goal_tolerance: float = attr.field(default=1e-2, validator=validate_positive_float, converter=float)
    step_limit: int = attr.field(default=500, validator=validate_positive_int, converter=int)
    output_file: Optional[str] = attr.field(default=None)
    control: ControllerParameters = attr.field(factory=ControllerParameters)
