import math
from typing import List, Optional

import attr

from . import ureg
from src.quantities import unit_converter, validate_nonnegative_quantity, validate_positive_quantity, validate_quantity


def validate_sample_count(instance, attribute, value):
    if value < 2:
        raise ValueError(f"{attribute.name} needs at least 2 samples, got {value}")


def validate_positive_int(instance, attribute, value):
    if value < 1:
        raise ValueError(f"{attribute.name} must be at least 1, got {value}")


@attr.define
class EkfParameters:
    # observation noise used to estimate R (and by the experiment harness to corrupt observations)
    translation_noise: ureg.Quantity = attr.field(default='0.01 m', validator=validate_nonnegative_quantity, converter=unit_converter('m'))
    rotation_noise: ureg.Quantity = attr.field(default='0.01 rad', validator=validate_nonnegative_quantity, converter=unit_converter('rad'))
    noise_samples: int = attr.field(default=1000, validator=validate_sample_count, converter=int)
    bootstrap_steps: int = attr.field(default=10, validator=validate_positive_int, converter=int)
    # relinearisations per measurement update (1 is the plain EKF update)
    update_iterations: int = attr.field(default=10, validator=validate_positive_int, converter=int)
    # bounds used for DoF without a position constraint
    default_bound: ureg.Quantity = attr.field(default=f'{math.pi} rad', validator=validate_quantity, converter=unit_converter('rad'))
    time_step: ureg.Quantity = attr.field(default='0.1 s', validator=validate_positive_quantity, converter=unit_converter('s'))


@attr.define
class EkfExperimentParameters:
    model_file: str = attr.field(default='')
    observed_frames: List[str] = attr.field(factory=list)
    filter: EkfParameters = attr.field(factory=EkfParameters)
    trials: int = attr.field(default=100, validator=validate_positive_int, converter=int)
    observations_per_trial: int = attr.field(default=25, validator=validate_positive_int, converter=int)
    seed: int = attr.field(default=0, converter=int)
    output_file: Optional[str] = attr.field(default=None)
