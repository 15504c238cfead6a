"""
Desk-scale fixtures for the controllers: a planar three-joint arm (on a fixed or a
differential-drive base) next to a drawer, a door, a two-segment folding door or a
garage door with a lock.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence

import attr
import numpy as np

from src.articulation_model import HistoryEntry, ModelPath, as_path, replay
from src.controller_parameters import ControllerParameters
from src.frames import translation
from src.geometry import Box, Sphere
from src.grasp_control import GraspController, initial_grasp_configuration
from src.operations import attach_diff_drive, attach_garage_door, attach_shape, connect_joint, create_body
from src.push_control import PushController
from src.rollout import RolloutScene
from src.symexpr import Variable, as_variable, evaluate

Z_AXIS = (0.0, 0.0, 1.0)
LINK_LENGTHS = (0.4, 0.4)
GRIPPER_LENGTH = 0.1
FINGERTIP_RADIUS = 0.02
JOINT_LIMITS = ((-2.9, 2.9), (-2.6, 2.6), (-2.6, 2.6))
JOINT_VELOCITY_LIMIT = 1.5
ARM_JOINTS = ('j1', 'j2', 'j3')
DRIVE_VARIABLES = ('base_x', 'base_y', 'base_theta')
WHEELS = ('lw', 'rw')

EE_PATH = ModelPath.parse('robot.gripper')
SCENE_NAMES = ('drawer', 'door', 'folding_door', 'garage')
BASE_KINDS = ('fixed', 'diff_drive')


def planar_arm_history(base: str = 'fixed', joint_velocity_limit: float = JOINT_VELOCITY_LIMIT) -> List[HistoryEntry]:
    """Arm at the world origin; all joints turn about z and the fingertip sphere sits on the gripper frame."""
    if base not in BASE_KINDS:
        raise ValueError(f'base must be one of {BASE_KINDS}, got {base!r}')
    history = [('create world', create_body('world')),
               ('create robot.base', create_body('robot.base', parent_pose='world'))]
    if base == 'diff_drive':
        history.append(('drive robot.base', attach_diff_drive('robot.base', 0.05, 0.2, *DRIVE_VARIABLES, *WHEELS,
                                                              wheel_vel_limit=20.0)))
    parent = 'robot.base'
    offsets = (0.0, *LINK_LENGTHS)
    for i, (joint, limits) in enumerate(zip(ARM_JOINTS, JOINT_LIMITS)):
        child = f'robot.link{i + 1}'
        history.append((f'create {child}', create_body(child)))
        history.append((f'connect {parent} {child}',
                        connect_joint('revolute', parent, child, origin=translation(offsets[i], 0.0, 0.0), axis=Z_AXIS,
                                      var_name=joint, limits=limits, vel_limit=joint_velocity_limit)))
        parent = child
    history.append(('create robot.gripper', create_body('robot.gripper')))
    history.append(('connect robot.link3 robot.gripper',
                    connect_joint('fixed', parent, 'robot.gripper', origin=translation(GRIPPER_LENGTH, 0.0, 0.0))))
    history.append(('shape robot.gripper 0', attach_shape('robot.fingertip', 'robot.gripper', Sphere(FINGERTIP_RADIUS))))
    return history


def planar_arm_configuration(x: float, y: float, phi: float) -> Dict[Variable, float]:
    """Closed-form joint values placing the gripper frame at (x, y) with heading phi (elbow left)."""
    wrist = np.array([x, y]) - GRIPPER_LENGTH * np.array([math.cos(phi), math.sin(phi)])
    l1, l2 = LINK_LENGTHS
    cos_elbow = (wrist @ wrist - l1 ** 2 - l2 ** 2) / (2 * l1 * l2)
    if abs(cos_elbow) > 1.0:
        raise ValueError(f'gripper position ({x}, {y}) is out of reach')
    elbow = math.acos(cos_elbow)
    shoulder = math.atan2(wrist[1], wrist[0]) - math.atan2(l2 * math.sin(elbow), l1 + l2 * math.cos(elbow))
    return dict(zip(map(as_variable, ARM_JOINTS), (shoulder, elbow, phi - shoulder - elbow)))


def drawer_history() -> List[HistoryEntry]:
    """Drawer opening towards the robot (-x); its front face is at x = 0.78 - drawer, the handle 3 cm in front."""
    return [
        ('create drawer.cabinet', create_body('drawer.cabinet', parent_pose='world', offset=translation(0.78, 0.0, 0.0))),
        ('create drawer.body', create_body('drawer.body')),
        ('connect drawer.cabinet drawer.body',
         connect_joint('prismatic', 'drawer.cabinet', 'drawer.body', axis=(-1.0, 0.0, 0.0), var_name='drawer',
                       limits=(0.0, 0.5), vel_limit=0.5)),
        ('create drawer.handle', create_body('drawer.handle', parent_pose='drawer.body', offset=translation(-0.03, 0.0, 0.0))),
        ('shape drawer.body 0', attach_shape('drawer.front', 'drawer.body', Box((0.01, 0.2, 0.1)),
                                             pose=translation(0.01, 0.0, 0.0))),
    ]


def door_history() -> List[HistoryEntry]:
    """0.4 m door hinged at (0.75, -0.2); opening turns the panel towards the robot."""
    return [
        ('create door.frame', create_body('door.frame', parent_pose='world', offset=translation(0.75, -0.2, 0.0))),
        ('create door.panel', create_body('door.panel')),
        ('connect door.frame door.panel',
         connect_joint('revolute', 'door.frame', 'door.panel', axis=Z_AXIS, var_name='door', limits=(0.0, 1.5),
                       vel_limit=1.0)),
        ('shape door.panel 0', attach_shape('door.leaf', 'door.panel', Box((0.01, 0.2, 0.1)),
                                            pose=translation(0.01, 0.2, 0.0))),
    ]


def folding_door_history() -> List[HistoryEntry]:
    """Two 0.3 m segments hinged at (0.75, -0.3); the outer segment mimics -2 times the fold angle."""
    return [
        ('create fold.frame', create_body('fold.frame', parent_pose='world', offset=translation(0.75, -0.3, 0.0))),
        ('create fold.inner', create_body('fold.inner')),
        ('connect fold.frame fold.inner',
         connect_joint('revolute', 'fold.frame', 'fold.inner', axis=Z_AXIS, var_name='fold', limits=(0.0, 1.2),
                       vel_limit=1.0)),
        ('create fold.outer', create_body('fold.outer')),
        ('connect fold.inner fold.outer',
         connect_joint('mimic', 'fold.inner', 'fold.outer', origin=translation(0.0, 0.3, 0.0), axis=Z_AXIS,
                       mimic_kind='revolute', mimic_of='fold', multiplier=-2.0)),
        ('shape fold.inner 0', attach_shape('fold.inner_leaf', 'fold.inner', Box((0.01, 0.15, 0.1)),
                                            pose=translation(0.01, 0.15, 0.0))),
        ('shape fold.outer 0', attach_shape('fold.outer_leaf', 'fold.outer', Box((0.01, 0.15, 0.1)),
                                            pose=translation(0.01, 0.15, 0.0))),
    ]


def garage_history(sharpness: float = 2000.0) -> List[HistoryEntry]:
    """Garage door with a 2 m rail 1.5 m in front of the robot; lock DoF b."""
    return [
        ('create garage.frame', create_body('garage.frame', parent_pose='world', offset=translation(1.5, 0.0, 0.0))),
        ('attach garage.door', attach_garage_door('garage.frame', 'garage.door', 2.0, var='a', lock_var='b',
                                                  sharpness=sharpness)),
        ('shape garage.door 0', attach_shape('garage.panel', 'garage.door', Box((0.02, 0.5, 0.02)))),
    ]


@attr.define(eq=False)
class SceneSetup:
    """A rollout scene with the frames the controllers act on and a default task."""
    scene: RolloutScene
    history: List[HistoryEntry]
    object_part: ModelPath
    grasp_path: Optional[ModelPath]
    object_start: np.ndarray
    object_goal: np.ndarray
    push_seed: Dict[Variable, float]
    ee_path: ModelPath = EE_PATH

    def base_configuration(self, object_values: Sequence[float]) -> Dict[Variable, float]:
        q = {v: 0.0 for v in self.scene.model.variables() if v.order == 0}
        q.update({v: 0.0 for v in self.scene.robot_vars})
        q.update(dict(zip(self.scene.object_vars, (float(x) for x in object_values))))
        return q

    def grasp_configuration(self, object_values: Sequence[float] = None,
                            parameters: ControllerParameters = None) -> Dict[Variable, float]:
        """Object at ``object_values`` and the robot holding the grasp frame."""
        if self.grasp_path is None:
            raise ValueError('this scene has no grasp frame')
        values = self.object_start if object_values is None else np.asarray(object_values, dtype=float)
        q = self.base_configuration(values)
        handle = np.asarray(self._frame_position(self.grasp_path, q))
        q.update(planar_arm_configuration(handle[0], handle[1], 0.0))
        return initial_grasp_configuration(self.scene, self.ee_path, self.grasp_path, q, parameters)

    def push_configuration(self, object_values: Sequence[float] = None) -> Dict[Variable, float]:
        values = self.object_start if object_values is None else np.asarray(object_values, dtype=float)
        q = self.base_configuration(values)
        q.update(self.push_seed)
        return q

    def _frame_position(self, path: ModelPath, q) -> np.ndarray:
        return evaluate(self.scene.model.get(path), q)[:3, 3]

    def controller(self, kind: str, goal: Sequence[float] = None, parameters: ControllerParameters = None,
                   goal_tolerance: float = 1e-2):
        goal = self.object_goal if goal is None else goal
        if kind == 'grasp':
            if self.grasp_path is None:
                raise ValueError('this scene has no grasp frame')
            return GraspController(self.scene, self.ee_path, self.grasp_path, goal, parameters, goal_tolerance)
        if kind == 'push':
            return PushController(self.scene, self.ee_path, self.object_part, goal, parameters, goal_tolerance)
        raise ValueError(f"controller kind must be 'grasp' or 'push', got {kind!r}")

    def initial_configuration(self, kind: str, object_values: Sequence[float] = None,
                              parameters: ControllerParameters = None) -> Dict[Variable, float]:
        if kind == 'grasp':
            return self.grasp_configuration(object_values, parameters)
        return self.push_configuration(object_values)


def build_scene(name: str, base: str = 'fixed', time_step: float = 0.02, step_limit: int = 500,
                joint_velocity_limit: float = JOINT_VELOCITY_LIMIT) -> SceneSetup:
    """
    Builds one of the fixtures in SCENE_NAMES. Robot decision variables are the arm joints,
    preceded by the wheels on a differential-drive base.
    """
    if name not in SCENE_NAMES:
        raise ValueError(f'scene must be one of {SCENE_NAMES}, got {name!r}')
    history = planar_arm_history(base, joint_velocity_limit)
    robot_vars = (WHEELS if base == 'diff_drive' else ()) + ARM_JOINTS
    if name == 'drawer':
        history += drawer_history()
        setup = dict(object_vars=('drawer',), part='drawer.body', grasp='drawer.handle', start=[0.4], goal=[0.0],
                     seed=planar_arm_configuration(0.28, 0.15, math.pi / 2))
    elif name == 'door':
        history += door_history()
        setup = dict(object_vars=('door',), part='door.panel', grasp=None, start=[0.4], goal=[0.0],
                     seed=planar_arm_configuration(0.5, -0.05, math.pi / 2))
    elif name == 'folding_door':
        history += folding_door_history()
        setup = dict(object_vars=('fold',), part='fold.inner', grasp=None, start=[0.4], goal=[0.0],
                     seed=planar_arm_configuration(0.5, -0.25, math.pi / 2))
    else:
        history += garage_history()
        setup = dict(object_vars=('a', 'b'), part='garage.door', grasp=None, start=[2.0, 0.0], goal=[1.0, 0.0],
                     seed=planar_arm_configuration(0.4, 0.3, math.pi / 2))
    model = replay(history)
    scene = RolloutScene(model, robot_vars, setup['object_vars'], time_step=time_step, step_limit=step_limit)
    logging.info(f'scene {name} on a {base} base: robot {[str(v) for v in scene.robot_vars]}, '
                 f'object {[str(v) for v in scene.object_vars]}')
    return SceneSetup(scene, history, as_path(setup['part']),
                      None if setup['grasp'] is None else as_path(setup['grasp']),
                      np.array(setup['start'], dtype=float), np.array(setup['goal'], dtype=float), setup['seed'])
