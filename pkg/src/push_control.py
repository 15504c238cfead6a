import logging
import math
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from src.articulation_model import ModelPath, as_path, parts_moved_by
from src.controller_parameters import ControllerParameters
from src.errors import UnsupportedPair
from src.frame_kinematics import FrameKinematics
from src.geometry import ContactQueryResult, ShapeAttachment, closest_points_at, local_point, supports_pair
from src.grasp_control import desired_object_velocity, velocity_bounds
from src.qp_solver import QProblem, solve_qp
from src.quantities import si
from src.rollout import ControlCommand, RolloutScene
from src.symexpr import normalize_assignment, variables

# object velocities below this norm count as "goal reached"
IDLE_VELOCITY = 1e-8

APPROACH = 'approach'
PUSH = 'push'
IDLE = 'idle'


def _shapes_on(scene: RolloutScene, path: ModelPath) -> List[ShapeAttachment]:
    return [s for _, s in sorted(scene.shapes.items()) if s.path == path]


def _perpendicular(n: np.ndarray) -> np.ndarray:
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    tangent = np.cross(n, axis)
    return tangent / np.linalg.norm(tangent)


class PushController:
    """
    Pushes an object part towards an object goal configuration with a robot link.

    While the link is away from the part or badly aligned with the desired motion of the
    contact point, the link navigates towards the contact point and around the part
    (approach mode). Once in contact and aligned, a QP over robot and object velocities
    keeps the contact closed, only lets the part be pushed (never pulled) and keeps the link
    clear of every other part moved by the same variables (push mode).

    Parameters:
    scene: RolloutScene
    robot_link: path of the pushing robot link (shapes attached there are used)
    object_part: path of the pushed part
    goal: object goal configuration
    parameters: ControllerParameters instance
    """

    def __init__(self, scene: RolloutScene, robot_link, object_part, goal: Sequence[float],
                 parameters: ControllerParameters = None, goal_tolerance: float = 1e-2) -> None:
        self.scene = scene
        self.parameters = ControllerParameters() if parameters is None else parameters
        self.goal = np.asarray(goal, dtype=float)
        if self.goal.shape != (len(scene.object_vars),):
            raise ValueError(f'goal needs one value per object variable {[str(v) for v in scene.object_vars]}')
        self.goal_tolerance = goal_tolerance
        self.robot_link = as_path(robot_link)
        self.object_part = as_path(object_part)
        self.robot_shapes = _shapes_on(scene, self.robot_link)
        self.object_shapes = _shapes_on(scene, self.object_part)
        if not self.robot_shapes or not self.object_shapes:
            raise ValueError(f'pushing needs shapes on {self.robot_link} and on {self.object_part}')
        model = scene.model
        moved = parts_moved_by(model, variables(model.get(self.object_part))) - {self.object_part}
        self.obstacle_shapes = [s for _, s in sorted(scene.shapes.items()) if s.path in moved]
        for robot_shape in self.robot_shapes:
            for other in self.object_shapes + self.obstacle_shapes:
                if not supports_pair(robot_shape.shape, other.shape):
                    raise UnsupportedPair(f'no closest-point query between {robot_shape.name} and {other.name}')
        self.robot_kinematics = FrameKinematics(model, self.robot_link, scene.robot_vars)
        self.object_kinematics = {path: FrameKinematics(model, path, scene.object_vars)
                                  for path in {self.object_part} | {s.path for s in self.obstacle_shapes}}
        self.gain = si(self.parameters.proportional_gain)
        logging.info(f'push controller {self.robot_link} -> {self.object_part}: '
                     f'{len(self.obstacle_shapes)} shapes on other moving parts')

    def goal_reached(self, q: Mapping) -> bool:
        q = normalize_assignment(q)
        return bool(np.max(np.abs(self.goal - self.scene.object_values(q))) <= self.goal_tolerance)

    def _closest(self, q, robot_pose, object_shapes) -> Tuple[ContactQueryResult, ShapeAttachment]:
        best = None
        for other in object_shapes:
            pose = self.object_kinematics[other.path].pose(q) @ other.pose_matrix
            for robot_shape in self.robot_shapes:
                result = closest_points_at(other, pose, robot_shape, robot_pose @ robot_shape.pose_matrix)
                if best is None or result.distance < best[0].distance:
                    best = (result, other)
        return best

    def _point_jacobians(self, q, robot_pose, result: ContactQueryResult, other: ShapeAttachment):
        """Jacobians of the robot point r (robot variables) and the object point p (object variables)."""
        _, robot_jacobian = self.robot_kinematics.point_jacobian(q, local_point(robot_pose, result.r))
        kinematics = self.object_kinematics[other.path]
        _, object_jacobian = kinematics.point_jacobian(q, local_point(kinematics.pose(q), result.p))
        return robot_jacobian, object_jacobian

    def _obstacle_rows(self, q, robot_pose) -> List[Tuple[np.ndarray, np.ndarray, float]]:
        """(n' J_r, n' J_s, distance) for every robot shape against every other moving shape."""
        rows = []
        for obstacle in self.obstacle_shapes:
            result, _ = self._closest(q, robot_pose, [obstacle])
            robot_jacobian, object_jacobian = self._point_jacobians(q, robot_pose, result, obstacle)
            rows.append((result.n @ robot_jacobian, result.n @ object_jacobian, result.distance))
        return rows

    def mode(self, contact: ContactQueryResult, direction: np.ndarray) -> Tuple[str, float]:
        """Push mode when touching and the contact normal opposes the desired point motion."""
        norm = float(np.linalg.norm(direction))
        alignment = float(-contact.n @ direction / norm) if norm > 0 else -1.0
        touching = contact.distance <= si(self.parameters.contact_threshold)
        if touching and alignment >= self.parameters.alignment_threshold:
            return PUSH, alignment
        return APPROACH, alignment

    def command(self, q: Mapping) -> ControlCommand:
        q = normalize_assignment(q)
        n_robot, n_object = len(self.scene.robot_vars), len(self.scene.object_vars)
        robot_pose = self.robot_kinematics.pose(q)
        contact, part = self._closest(q, robot_pose, self.object_shapes)
        diagnostics = {'mode': IDLE, 'contact_distance': contact.distance, 'ppn': math.nan}
        object_velocity = desired_object_velocity(self.scene, self.goal, q, self.gain)
        if np.linalg.norm(object_velocity) <= IDLE_VELOCITY:
            return ControlCommand(np.zeros(n_robot), np.zeros(n_object), diagnostics)

        robot_jacobian, object_jacobian = self._point_jacobians(q, robot_pose, contact, part)
        direction = object_jacobian @ object_velocity
        if np.linalg.norm(direction) <= IDLE_VELOCITY:
            return ControlCommand(np.zeros(n_robot), np.zeros(n_object), diagnostics)
        mode, alignment = self.mode(contact, direction)
        diagnostics.update(mode=mode, alignment=alignment)
        obstacles = self._obstacle_rows(q, robot_pose)
        if obstacles:
            diagnostics['obstacle_distance'] = min(distance for *_, distance in obstacles)
        if mode == APPROACH:
            robot_velocity = self._approach(q, contact, direction, robot_jacobian, obstacles)
            return ControlCommand(robot_velocity, np.zeros(n_object), diagnostics)
        robot_velocity, object_velocity = self._push(q, contact, object_velocity, robot_jacobian, object_jacobian, obstacles)
        diagnostics['ppn'] = float(contact.n @ object_jacobian @ object_velocity)
        return ControlCommand(robot_velocity, object_velocity, diagnostics)

    def _approach(self, q, contact, direction, robot_jacobian, obstacles) -> np.ndarray:
        dt = self.scene.time_step
        n = contact.n
        towards = contact.p - contact.r
        gap = float(np.linalg.norm(towards))
        towards = towards / gap if gap > 1e-12 else -n
        lateral = direction - (direction @ n) * n
        if np.linalg.norm(lateral) > 1e-9:
            # moving against the lateral component widens the angle between n and the direction
            tangent = -lateral / np.linalg.norm(lateral)
        elif direction @ n > 0:
            tangent = _perpendicular(n)
        else:
            tangent = np.zeros(3)
        target = si(self.parameters.approach_speed) * towards + si(self.parameters.tangent_speed) * tangent

        n_robot = len(self.scene.robot_vars)
        lower, upper = velocity_bounds(self.scene.model, self.scene.robot_vars, q, dt)
        problem = QProblem(np.full(n_robot, self.parameters.damping), np.zeros(n_robot), lower, upper)
        for row, value in zip(robot_jacobian, target):
            problem.add_soft_row(row, value, value, self.parameters.slack_weight)
        # the pushed part may be approached by at most half the remaining gap per step
        problem.add_row(n @ robot_jacobian, -0.5 * contact.distance / dt, np.inf)
        margin = si(self.parameters.avoidance_margin)
        for robot_row, _, distance in obstacles:
            problem.add_row(robot_row, (margin - distance) / dt, np.inf)
        return np.clip(solve_qp(problem), lower, upper)

    def _push(self, q, contact, desired, robot_jacobian, object_jacobian, obstacles):
        dt = self.scene.time_step
        n_robot, n_object = len(self.scene.robot_vars), len(self.scene.object_vars)
        robot_lower, robot_upper = velocity_bounds(self.scene.model, self.scene.robot_vars, q, dt)
        object_lower, object_upper = velocity_bounds(self.scene.model, self.scene.object_vars, q, dt)
        lower = np.concatenate([robot_lower, object_lower])
        upper = np.concatenate([robot_upper, object_upper])
        weights = np.concatenate([np.full(n_robot, self.parameters.damping), np.ones(n_object)])
        problem = QProblem(weights, np.concatenate([np.zeros(n_robot), desired]), lower, upper)
        closing = 0.5 * (contact.p - contact.r) / dt
        for robot_row, object_row, value in zip(robot_jacobian, object_jacobian, closing):
            problem.add_soft_row(np.concatenate([robot_row, -object_row]), value, value, self.parameters.slack_weight)
        # the part can only be pushed, not pulled
        problem.add_row(np.concatenate([np.zeros(n_robot), contact.n @ object_jacobian]), -np.inf, 0.0)
        margin = si(self.parameters.avoidance_margin)
        for robot_row, object_row, distance in obstacles:
            problem.add_row(np.concatenate([robot_row, -object_row]), (margin - distance) / dt, np.inf)
        solution = np.clip(solve_qp(problem), lower, upper)
        return solution[:n_robot], solution[n_robot:]


def push_step(scene: RolloutScene, robot_link, object_part, q_goal_obj: Sequence[float], q: Mapping,
              parameters: ControllerParameters = None) -> np.ndarray:
    """Robot decision-variable velocities for one pushing step."""
    return PushController(scene, robot_link, object_part, q_goal_obj, parameters).command(q).robot_velocity
