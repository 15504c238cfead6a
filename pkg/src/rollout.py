import csv
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import attr
import numpy as np

from src.articulation_model import ArticulationModel, direct_constraints
from src.errors import ArticulationError
from src.frame_kinematics import KinematicIntegrator
from src.symexpr import Variable, as_variable, normalize_assignment

GOAL_REACHED = 'GoalReached'
STEP_LIMIT = 'StepLimit'


def _variables(value) -> Tuple[Variable, ...]:
    return tuple(as_variable(v) for v in value)


def validate_disjoint(instance, attribute, value):
    shared = set(instance.robot_vars) & set(value)
    if shared:
        raise ValueError(f'robot and object variables overlap: {sorted(map(str, shared))}')


def validate_positive(instance, attribute, value):
    if not value > 0:
        raise ValueError(f'{attribute.name} must be positive, got {value}')


@attr.define(eq=False)
class RolloutScene:
    """
    A model with a robot and an object. ``robot_vars`` are the commanded decision variables
    (joint or wheel velocities), ``object_vars`` the object's degrees of freedom.
    """
    model: ArticulationModel
    robot_vars: Tuple[Variable, ...] = attr.field(converter=_variables)
    object_vars: Tuple[Variable, ...] = attr.field(converter=_variables, validator=validate_disjoint)
    shapes: Optional[Dict[str, Any]] = attr.field(default=None)
    time_step: float = attr.field(default=0.02, converter=float, validator=validate_positive)
    step_limit: int = attr.field(default=500, converter=int, validator=validate_positive)

    def __attrs_post_init__(self):
        if self.shapes is None:
            self.shapes = dict(self.model.shapes)

    def object_values(self, q: Mapping[Variable, float]) -> np.ndarray:
        return np.array([q[v] for v in self.object_vars], dtype=float)


@attr.define(eq=False)
class ControlCommand:
    robot_velocity: np.ndarray
    object_velocity: np.ndarray
    diagnostics: Dict[str, Any] = attr.field(factory=dict)


@attr.define(eq=False)
class TraceEntry:
    step: int
    time_s: float
    q: Dict[Variable, float]
    command: ControlCommand
    iter_ms: float
    status: str = ''

    @property
    def contact_distance(self) -> float:
        return self.command.diagnostics.get('contact_distance', math.nan)

    @property
    def ppn(self) -> float:
        return self.command.diagnostics.get('ppn', math.nan)


@attr.define(eq=False)
class RolloutTrace:
    variables: Tuple[Variable, ...]
    entries: List[TraceEntry] = attr.field(factory=list)
    status: str = ''

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def final_q(self) -> Dict[Variable, float]:
        return self.entries[-1].q if self.entries else {}

    def write_csv(self, path) -> None:
        """Columns: step, time_s, one column per variable, contact_distance, ppn, iter_ms, status."""
        names = [str(v) for v in self.variables]
        with open(Path(path), 'w', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(['step', 'time_s', *names, 'contact_distance', 'ppn', 'iter_ms', 'status'])
            for entry in self.entries:
                writer.writerow([entry.step, f'{entry.time_s:.6f}', *(repr(entry.q[v]) for v in self.variables),
                                 entry.contact_distance, entry.ppn, f'{entry.iter_ms:.4f}', entry.status])


def clamp_to_limits(model: ArticulationModel, q: Dict[Variable, float]) -> Dict[Variable, float]:
    """Clips variables into constant position limits; integration overshoot stays within float noise."""
    clamped = dict(q)
    for v, value in q.items():
        for constraint in direct_constraints(model, v):
            if constraint.lb.variables or constraint.ub.variables:
                continue
            clamped[v] = min(max(clamped[v], constraint.lb.value), constraint.ub.value)
    return clamped


def rollout(scene: RolloutScene, controller, q0: Mapping) -> RolloutTrace:
    """
    Kinematic simulation: per step the controller's command is integrated over the scene's
    time step. Robot decision variables (and variables driven through extended gradients)
    are integrated by a KinematicIntegrator, object variables by the commanded object
    velocity. Stops on goal, step limit or a controller error, whose code becomes the status.

    The controller provides ``command(q) -> ControlCommand`` and ``goal_reached(q) -> bool``.
    """
    q = normalize_assignment(q0)
    integrator = KinematicIntegrator(scene.model, scene.robot_vars)
    trace = RolloutTrace(tuple(sorted(q)))
    dt = scene.time_step
    for step in range(scene.step_limit):
        started = time.perf_counter()
        try:
            command = controller.command(q)
        except ArticulationError as exc:
            logging.error(f'rollout stopped at step {step}: {exc}')
            zero = ControlCommand(np.zeros(len(scene.robot_vars)), np.zeros(len(scene.object_vars)), {'error': str(exc)})
            trace.entries.append(TraceEntry(step, step * dt, dict(q), zero, 1000.0 * (time.perf_counter() - started), exc.code))
            trace.status = exc.code
            return trace
        iter_ms = 1000.0 * (time.perf_counter() - started)
        q = integrator.step(q, command.robot_velocity, dt)
        for v, velocity in zip(scene.object_vars, command.object_velocity):
            q[v] = q[v] + dt * float(velocity)
        q = clamp_to_limits(scene.model, q)
        entry = TraceEntry(step, (step + 1) * dt, dict(q), command, iter_ms)
        trace.entries.append(entry)
        logging.debug(f'step {step}: object {scene.object_values(q)}, {iter_ms:.2f} ms')
        if controller.goal_reached(q):
            entry.status = trace.status = GOAL_REACHED
            break
    else:
        trace.entries[-1].status = trace.status = STEP_LIMIT
    iteration_ms = [e.iter_ms for e in trace.entries]
    logging.info(f'rollout finished with {trace.status} after {len(trace)} steps '
                 f'(mean {np.mean(iteration_ms):.2f} ms per step)')
    return trace
