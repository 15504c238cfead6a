import logging
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.articulation_model import ArticulationModel, direct_constraints
from src.controller_parameters import ControllerParameters
from src.errors import EmptyInterval, IkStalled, NonRigidInput
from src.frame_kinematics import FrameKinematics, KinematicIntegrator
from src.qp_solver import QProblem, solve_qp
from src.quantities import si
from src.rollout import ControlCommand, RolloutScene
from src.symexpr import Variable, as_variable, evaluate, normalize_assignment

INTERVAL_TOLERANCE = 1e-9
RIGIDITY_TOLERANCE = 1e-6


def _bare_bounds(model: ArticulationModel, var: Variable, q: Mapping[Variable, float]) -> Tuple[float, float]:
    """Intersection of all constraints on exactly ``var``, bounds evaluated at q."""
    lower, upper = -np.inf, np.inf
    for constraint in direct_constraints(model, var):
        lower = max(lower, float(evaluate(constraint.lb, q)))
        upper = min(upper, float(evaluate(constraint.ub, q)))
    return lower, upper


def position_bounds(model: ArticulationModel, vars: Sequence, q: Mapping) -> Tuple[np.ndarray, np.ndarray]:
    q = normalize_assignment(q)
    bounds = [_bare_bounds(model, as_variable(v), q) for v in vars]
    return np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds])


def velocity_bounds(model: ArticulationModel, vars: Sequence, q: Mapping, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-variable velocity interval at q: the velocity constraints (lock bounds included)
    intersected with the velocities that keep the position inside its limits after dt.
    """
    if not dt > 0:
        raise ValueError(f'time step must be positive, got {dt}')
    q = normalize_assignment(q)
    vars = [as_variable(v) for v in vars]
    lower = np.full(len(vars), -np.inf)
    upper = np.full(len(vars), np.inf)
    for i, v in enumerate(vars):
        lower[i], upper[i] = _bare_bounds(model, v.derivative(), q)
        position_lower, position_upper = _bare_bounds(model, v, q)
        if np.isfinite(position_lower):
            lower[i] = max(lower[i], (position_lower - q[v]) / dt)
        if np.isfinite(position_upper):
            upper[i] = min(upper[i], (position_upper - q[v]) / dt)
        if lower[i] > upper[i] + INTERVAL_TOLERANCE:
            raise EmptyInterval(f'velocity interval of {v} is empty at the current state: [{lower[i]:.6g}, {upper[i]:.6g}]')
        if lower[i] > upper[i]:
            lower[i] = upper[i] = 0.5 * (lower[i] + upper[i])
    return lower, upper


def _check_rigid(transform: np.ndarray, name: str) -> None:
    transform = np.asarray(transform, dtype=float)
    if transform.shape != (4, 4):
        raise NonRigidInput(f'{name} is not a 4x4 transform')
    rotation = transform[:3, :3]
    if (np.max(np.abs(rotation.T @ rotation - np.eye(3))) > RIGIDITY_TOLERANCE
            or np.linalg.det(rotation) < 0
            or np.max(np.abs(transform[3] - [0.0, 0.0, 0.0, 1.0])) > RIGIDITY_TOLERANCE):
        raise NonRigidInput(f'{name} is not a rigid transform')


def pose_error(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Difference between two rigid transforms: world translation t_b - t_a and the
    rotation vector (angle in [0, pi]) of a^-1 b expressed in the frame of a.
    """
    _check_rigid(a, 'first pose')
    _check_rigid(b, 'second pose')
    translation = b[:3, 3] - a[:3, 3]
    rotation = Rotation.from_matrix(a[:3, :3].T @ b[:3, :3]).as_rotvec()
    return translation, rotation


def desired_object_velocity(scene: RolloutScene, goal: np.ndarray, q: Mapping[Variable, float], gain: float) -> np.ndarray:
    """Proportional object velocity towards the goal, restricted to the object's velocity bounds."""
    desired = gain * (np.asarray(goal, dtype=float) - scene.object_values(q))
    if not np.any(desired):
        return desired
    lower, upper = velocity_bounds(scene.model, scene.object_vars, q, scene.time_step)
    problem = QProblem(np.ones(len(desired)), desired, lower, upper)
    return np.clip(solve_qp(problem), lower, upper)


def scale_to_bounds(velocity: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """Largest s in [0, 1] with lower <= s velocity <= upper, assuming 0 lies in every interval."""
    scale = 1.0
    for v, lo, hi in zip(velocity, lower, upper):
        if v > hi:
            scale = min(scale, max(hi, 0.0) / v)
        elif v < lo:
            scale = min(scale, min(lo, 0.0) / v)
    return max(scale, 0.0)


class GraspController:
    """
    Controller for an object rigidly grasped by the robot.

    Each step first computes the desired object velocity (QP1), then iterates velocity-resolved
    IK (QP2) until the end effector reaches the grasp frame at the object's next
    configuration, and finally scales the resulting robot velocity into the velocity bounds.

    Parameters:
    scene: RolloutScene with the robot decision variables and the object variables
    ee_path: end effector frame of the robot
    grasp_path: grasp frame on the object
    goal: object goal configuration, one value per object variable
    parameters: ControllerParameters instance
    """

    def __init__(self, scene: RolloutScene, ee_path, grasp_path, goal: Sequence[float],
                 parameters: ControllerParameters = None, goal_tolerance: float = 1e-2) -> None:
        self.scene = scene
        self.parameters = ControllerParameters() if parameters is None else parameters
        self.goal = np.asarray(goal, dtype=float)
        if self.goal.shape != (len(scene.object_vars),):
            raise ValueError(f'goal needs one value per object variable {[str(v) for v in scene.object_vars]}')
        self.goal_tolerance = goal_tolerance
        self.ee = FrameKinematics(scene.model, ee_path, scene.robot_vars)
        self.grasp = FrameKinematics(scene.model, grasp_path, scene.object_vars)
        self.integrator = KinematicIntegrator(scene.model, scene.robot_vars)
        self.gain = si(self.parameters.proportional_gain)
        self.translation_tolerance = si(self.parameters.ik_translation_tolerance)
        self.rotation_tolerance = si(self.parameters.ik_rotation_tolerance)

    def goal_reached(self, q: Mapping) -> bool:
        q = normalize_assignment(q)
        return bool(np.max(np.abs(self.goal - self.scene.object_values(q))) <= self.goal_tolerance)

    def grasp_deviation(self, q: Mapping) -> Tuple[np.ndarray, np.ndarray]:
        q = normalize_assignment(q)
        return pose_error(self.ee.pose(q), self.grasp.pose(q))

    def _ik_problem(self, q: Dict[Variable, float], target: np.ndarray):
        pose, jacobian = self.ee.twist_jacobian(q)
        translation, rotation = pose_error(pose, target)
        error = np.concatenate([translation, pose[:3, :3] @ rotation])
        problem = QProblem(np.full(len(self.scene.robot_vars), self.parameters.damping),
                           np.zeros(len(self.scene.robot_vars)))
        lower, upper = position_bounds(self.scene.model, self.scene.robot_vars, q)
        current = np.array([q[v] for v in self.scene.robot_vars])
        problem.lower = np.minimum(lower - current, 0.0)
        problem.upper = np.maximum(upper - current, 0.0)
        for row, value in zip(jacobian, error):
            problem.add_soft_row(row, value, value, self.parameters.slack_weight)
        return problem, translation, rotation

    def reach(self, q: Mapping, target: np.ndarray) -> Tuple[Dict[Variable, float], int]:
        """
        Gauss-Newton iterations moving the robot decision variables until the end effector is
        within the IK tolerances of ``target``. Returns the reached configuration and the
        number of iterations; raises IkStalled when the error stops decreasing.
        """
        q = normalize_assignment(q)
        history = []
        window = self.parameters.ik_stall_window
        for iteration in range(self.parameters.ik_max_iterations):
            problem, translation, rotation = self._ik_problem(q, target)
            t_error, r_error = float(np.linalg.norm(translation)), float(np.linalg.norm(rotation))
            if t_error <= self.translation_tolerance and r_error <= self.rotation_tolerance:
                return q, iteration
            history.append(np.hypot(t_error, r_error))
            if len(history) > window and history[-window - 1] - history[-1] < self.parameters.ik_stall_reduction:
                raise IkStalled(f'IK error stalled at {history[-1]:.3g} after {iteration} iterations')
            q = self.integrator.step(q, solve_qp(problem), 1.0)
        logging.debug(f'IK stopped after {self.parameters.ik_max_iterations} iterations at error {history[-1]:.3g}')
        return q, self.parameters.ik_max_iterations

    def command(self, q: Mapping) -> ControlCommand:
        q = normalize_assignment(q)
        dt = self.scene.time_step
        n_robot, n_object = len(self.scene.robot_vars), len(self.scene.object_vars)
        translation, rotation = self.grasp_deviation(q)
        diagnostics = {'grasp_translation_error': float(np.linalg.norm(translation)),
                       'grasp_rotation_error': float(np.linalg.norm(rotation)), 'scale': 1.0, 'ik_iterations': 0}
        object_velocity = desired_object_velocity(self.scene, self.goal, q, self.gain)
        if not np.any(object_velocity):
            return ControlCommand(np.zeros(n_robot), np.zeros(n_object), diagnostics)

        next_q = dict(q)
        for v, velocity in zip(self.scene.object_vars, object_velocity):
            next_q[v] = q[v] + dt * velocity
        reached, iterations = self.reach(q, self.grasp.pose(next_q))
        robot_velocity = np.array([reached[v] - q[v] for v in self.scene.robot_vars]) / dt
        lower, upper = velocity_bounds(self.scene.model, self.scene.robot_vars, q, dt)
        scale = scale_to_bounds(robot_velocity, lower, upper)
        diagnostics.update(scale=scale, ik_iterations=iterations)
        logging.debug(f'grasp step: object velocity {object_velocity}, scale {scale:.3f}, {iterations} IK iterations')
        return ControlCommand(scale * robot_velocity, scale * object_velocity, diagnostics)


def grasped_step(scene: RolloutScene, ee_path, grasp_path, q_goal_obj: Sequence[float], q: Mapping,
                 parameters: ControllerParameters = None) -> np.ndarray:
    """Robot decision-variable velocities for one grasped manipulation step."""
    return GraspController(scene, ee_path, grasp_path, q_goal_obj, parameters).command(q).robot_velocity


def initial_grasp_configuration(scene: RolloutScene, ee_path, grasp_path, q: Mapping,
                                parameters: ControllerParameters = None) -> Dict[Variable, float]:
    """Moves the robot from the seed configuration q onto the grasp frame at the current object configuration."""
    q = normalize_assignment(q)
    controller = GraspController(scene, ee_path, grasp_path, scene.object_values(q), parameters)
    reached, iterations = controller.reach(q, controller.grasp.pose(q))
    logging.info(f'grasp configuration found after {iterations} IK iterations')
    return reached
