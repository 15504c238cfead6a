"""
Registry of model-building operation types and the builtin operations.

An operation type declares the kinds of its arguments (used by the kmodel codec), the model
paths it reads, and the paths, constraint names and shapes it writes. ``apply`` must be a
pure function of the model and the arguments.
"""
from typing import Any, Callable, Dict, FrozenSet, List, Mapping, Tuple

import attr
import numpy as np

from src.articulation_model import ArticulationModel, Constraint, ModelDelta, ModelPath, Operation, as_path
from src.errors import MissingLimits, UnknownOperation
from src.ext_expr import ext
from src.frames import compose, from_numpy, rotation, softstep_lt, translation, unit_axis
from src.geometry import ShapeAttachment
from src.symexpr import MatrixExpr, Variable, as_expr, cos, evaluate, sin, sqrt, variable

# argument kinds understood by the kmodel codec
PATH, POSE, POSE_OR_PATH, EXPR, NUMBER, VECTOR, NAME, SHAPE = (
    'path', 'pose', 'pose_or_path', 'expr', 'number', 'vector', 'name', 'shape')

JOINT_KINDS = ('fixed', 'revolute', 'continuous', 'prismatic', 'mimic')


@attr.define(frozen=True)
class OperationType:
    kind: str
    arg_kinds: Dict[str, str]
    required: FrozenSet[str]
    defaults: Dict[str, Any]
    inputs: Callable[[Mapping], List[ModelPath]]
    declared: Callable[[Mapping], Tuple[FrozenSet, FrozenSet, FrozenSet]]
    build: Callable[[ArticulationModel, Mapping], ModelDelta]

    def resolved_args(self, args: Mapping) -> Dict[str, Any]:
        unknown = set(args) - set(self.arg_kinds)
        if unknown:
            raise ValueError(f'unknown arguments {sorted(unknown)} for {self.kind}')
        missing = self.required - set(args)
        if missing:
            raise ValueError(f'missing arguments {sorted(missing)} for {self.kind}')
        resolved = dict(self.defaults)
        resolved.update({k: v for k, v in args.items() if v is not None})
        for name, kind in self.arg_kinds.items():
            if kind == PATH and resolved.get(name) is not None:
                resolved[name] = as_path(resolved[name])
        return resolved

    def input_paths(self, args: Mapping) -> List[ModelPath]:
        return self.inputs(self.resolved_args(args))

    def outputs(self, args: Mapping) -> Tuple[FrozenSet, FrozenSet, FrozenSet]:
        paths, constraints, shapes = self.declared(self.resolved_args(args))
        return frozenset(paths), frozenset(constraints), frozenset(shapes)

    def apply(self, model: ArticulationModel, args: Mapping) -> ModelDelta:
        return self.build(model, self.resolved_args(args))


_REGISTRY: Dict[str, OperationType] = {}


def register_operation(kind: str, arg_kinds: Dict[str, str], required, defaults=None):
    """Decorator registering a class providing ``inputs``, ``outputs`` and ``apply`` staticmethods."""
    def decorator(cls):
        _REGISTRY[kind] = OperationType(kind, dict(arg_kinds), frozenset(required), dict(defaults or {}),
                                        cls.inputs, cls.outputs, cls.apply)
        return cls
    return decorator


def operation_type(kind: str) -> OperationType:
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise UnknownOperation(f'unknown operation kind {kind!r}') from None


def operation_kinds() -> List[str]:
    return sorted(_REGISTRY)


def _is_path(value) -> bool:
    return isinstance(value, (ModelPath, str))


def _pose(value) -> MatrixExpr:
    if isinstance(value, MatrixExpr):
        return value
    return from_numpy(value)


def joint_transform(kind: str, axis, value) -> MatrixExpr:
    if kind in ('revolute', 'continuous'):
        return rotation(axis, value)
    if kind == 'prismatic':
        return translation(*(a * value for a in axis))
    raise ValueError(f'joint kind {kind!r} has no motion transform')


@register_operation('create_body', {'name': PATH, 'parent_pose': POSE_OR_PATH, 'offset': POSE},
                    required={'name'})
class CreateBody:
    """Stores a frame: a literal pose, or the pose at another path optionally followed by an offset."""

    @staticmethod
    def inputs(args) -> List[ModelPath]:
        parent = args.get('parent_pose')
        return [as_path(parent)] if parent is not None and _is_path(parent) else []

    @staticmethod
    def outputs(args):
        return [args['name']], [], []

    @staticmethod
    def apply(model: ArticulationModel, args) -> ModelDelta:
        parent = args.get('parent_pose')
        if parent is None:
            pose = MatrixExpr.identity(4)
        elif _is_path(parent):
            pose = model.get(parent)
        else:
            pose = _pose(parent)
        if args.get('offset') is not None:
            pose = compose(pose, _pose(args['offset']))
        return ModelDelta(exprs={args['name']: pose})


def _joint_constraint_names(args) -> List[str]:
    if args['kind'] in ('fixed', 'mimic'):
        return []
    names = []
    if args.get('limits') is not None and args['kind'] != 'continuous':
        names.append(f"{args['var_name']}_position")
    if args.get('vel_limit') is not None:
        names.append(f"{args['var_name']}_velocity")
    return names


@register_operation('connect_joint',
                    {'kind': NAME, 'parent': PATH, 'child': PATH, 'origin': POSE, 'axis': VECTOR,
                     'var_name': NAME, 'limits': VECTOR, 'vel_limit': NUMBER, 'mimic_kind': NAME,
                     'mimic_of': NAME, 'multiplier': NUMBER, 'offset': NUMBER},
                    required={'kind', 'parent', 'child'},
                    defaults={'axis': (1.0, 0.0, 0.0), 'multiplier': 1.0, 'offset': 0.0})
class ConnectJoint:
    """
    Child frame = parent frame . origin . joint motion. Revolute and continuous joints rotate
    about the axis, prismatic joints translate along it, mimic joints move like ``mimic_kind``
    with the value multiplier * mimic_of + offset and introduce no variable of their own.
    """

    @staticmethod
    def inputs(args) -> List[ModelPath]:
        return [args['parent'], args['child']]

    @staticmethod
    def outputs(args):
        return [args['child']], _joint_constraint_names(args), []

    @staticmethod
    def apply(model: ArticulationModel, args) -> ModelDelta:
        kind = args['kind']
        if kind not in JOINT_KINDS:
            raise ValueError(f'joint kind must be one of {JOINT_KINDS}, got {kind!r}')
        origin = _pose(args['origin']) if args.get('origin') is not None else MatrixExpr.identity(4)
        frame = compose(model.get(args['parent']), origin)
        constraints = {}
        if kind == 'fixed':
            return ModelDelta(exprs={args['child']: frame})
        axis = unit_axis(args['axis'])
        if kind == 'mimic':
            mimic_kind = args.get('mimic_kind') or 'revolute'
            target = variable(args['mimic_of'])
            value = args['multiplier'] * target + args['offset']
            return ModelDelta(exprs={args['child']: compose(frame, joint_transform(mimic_kind, axis, value))})

        var_name = args.get('var_name')
        if not var_name:
            raise ValueError(f'{kind} joints need a var_name')
        q = variable(var_name)
        if kind in ('revolute', 'prismatic') and args.get('limits') is None:
            raise MissingLimits(f'{kind} joint {args["parent"]} -> {args["child"]} needs position limits')
        if args.get('limits') is not None and kind != 'continuous':
            lower, upper = (float(v) for v in args['limits'])
            constraints[f'{var_name}_position'] = Constraint(lower, upper, q)
        if args.get('vel_limit') is not None:
            vel = float(args['vel_limit'])
            constraints[f'{var_name}_velocity'] = Constraint(-vel, vel, variable(Variable(var_name, 1)))
        return ModelDelta(exprs={args['child']: compose(frame, joint_transform(kind, axis, q))},
                          constraints=constraints)


def drive_paths(base: ModelPath) -> Tuple[ModelPath, ModelPath, ModelPath]:
    prefix = base.sibling(base.name + '_drive')
    return prefix.child('x'), prefix.child('y'), prefix.child('theta')


@register_operation('attach_diff_drive',
                    {'base': PATH, 'wheel_radius': NUMBER, 'axle_half_width': NUMBER, 'x': NAME, 'y': NAME,
                     'theta': NAME, 'left_wheel': NAME, 'right_wheel': NAME, 'wheel_vel_limit': NUMBER},
                    required={'base', 'wheel_radius', 'axle_half_width', 'x', 'y', 'theta', 'left_wheel', 'right_wheel'})
class AttachDiffDrive:
    """
    Places ``base`` on a differential drive. The planar pose variables x, y, theta carry extra
    gradient entries for the wheel velocities, so velocity Jacobians can be taken with respect
    to the wheels although the pose does not depend on wheel positions. An existing frame at
    ``base`` is carried along (pre-multiplied by the drive pose).
    """

    @staticmethod
    def inputs(args) -> List[ModelPath]:
        return []

    @staticmethod
    def outputs(args):
        names = []
        if args.get('wheel_vel_limit') is not None:
            names = [f"{args['left_wheel']}_velocity", f"{args['right_wheel']}_velocity"]
        return [args['base'], *drive_paths(args['base'])], names, []

    @staticmethod
    def apply(model: ArticulationModel, args) -> ModelDelta:
        r = float(args['wheel_radius'])
        half_width = float(args['axle_half_width'])
        if r <= 0 or half_width <= 0:
            raise ValueError('wheel radius and axle half width must be positive')
        left = Variable(args['left_wheel'], 1)
        right = Variable(args['right_wheel'], 1)
        theta_var = variable(args['theta'])
        x = ext(variable(args['x']), extras={left: (r / 2) * cos(theta_var), right: (r / 2) * cos(theta_var)})
        y = ext(variable(args['y']), extras={left: (r / 2) * sin(theta_var), right: (r / 2) * sin(theta_var)})
        theta = ext(theta_var, extras={left: -r / (2 * half_width), right: r / (2 * half_width)})
        pose = compose(translation(x, y, 0.0), rotation((0.0, 0.0, 1.0), theta))
        base = args['base']
        if model.has(base):
            pose = compose(pose, model.get(base))
        x_path, y_path, theta_path = drive_paths(base)
        constraints = {}
        if args.get('wheel_vel_limit') is not None:
            limit = float(args['wheel_vel_limit'])
            for wheel in (left, right):
                constraints[f'{wheel.base_name}_velocity'] = Constraint(-limit, limit, variable(wheel))
        return ModelDelta(exprs={base: pose, x_path: x, y_path: y, theta_path: theta}, constraints=constraints)


def garage_paths(door: ModelPath) -> Tuple[ModelPath, ModelPath]:
    return door.sibling(door.name + '_hinge_a'), door.sibling(door.name + '_hinge_b')


@register_operation('attach_garage_door',
                    {'parent': PATH, 'door': PATH, 'rail_length': NUMBER, 'var': NAME, 'lock_var': NAME,
                     'lock_threshold': NUMBER, 'closed_threshold': NUMBER, 'sharpness': NUMBER, 'vel_limit': NUMBER},
                    required={'parent', 'door', 'rail_length', 'var', 'lock_var'},
                    defaults={'lock_threshold': 0.3, 'closed_threshold': 1.99, 'sharpness': 2000.0, 'vel_limit': 1.0})
class AttachGarageDoor:
    """
    Up-and-over door: hinge A slides along the parent's z axis (a is its height), hinge B
    slides along the x axis and the panel of length l spans both. The door can only move
    once the lock DoF has been turned past ``lock_threshold`` when the door is closed (a near l).
    """

    @staticmethod
    def inputs(args) -> List[ModelPath]:
        return [args['parent']]

    @staticmethod
    def outputs(args):
        door = args['door']
        return [door, *garage_paths(door)], [f"{args['var']}_position", f'{door.name}_lock'], []

    @staticmethod
    def apply(model: ArticulationModel, args) -> ModelDelta:
        length = float(args['rail_length'])
        if length <= 0:
            raise ValueError(f'rail length must be positive, got {length}')
        a = variable(args['var'])
        b = variable(args['lock_var'])
        cos_alpha = a / length
        sin_alpha = sqrt(1.0 - cos_alpha * cos_alpha)
        door_local = MatrixExpr.from_rows([
            [cos_alpha, 0.0, sin_alpha, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [-sin_alpha, 0.0, cos_alpha, a],
            [0.0, 0.0, 0.0, 1.0],
        ])
        parent = model.get(args['parent'])
        door = args['door']
        hinge_a, hinge_b = garage_paths(door)
        k = float(args['sharpness'])
        locked = softstep_lt(b, args['lock_threshold'], k) * softstep_lt(args['closed_threshold'], a, k)
        unlocked = 1.0 - locked
        vel_limit = float(args['vel_limit'])
        constraints = {
            f"{args['var']}_position": Constraint(0.0, length, a),
            f'{door.name}_lock': Constraint(-vel_limit * unlocked, vel_limit * unlocked, variable(Variable(args['var'], 1))),
        }
        return ModelDelta(
            exprs={
                door: compose(parent, door_local),
                hinge_a: compose(parent, translation(0.0, 0.0, a)),
                hinge_b: compose(parent, translation(length * sin_alpha, 0.0, 0.0)),
            },
            constraints=constraints)


@register_operation('add_constraint', {'name': NAME, 'lb': EXPR, 'ub': EXPR, 'expr': EXPR},
                    required={'name', 'lb', 'ub', 'expr'})
class AddConstraint:
    @staticmethod
    def inputs(args) -> List[ModelPath]:
        return []

    @staticmethod
    def outputs(args):
        return [], [args['name']], []

    @staticmethod
    def apply(model: ArticulationModel, args) -> ModelDelta:
        return ModelDelta(constraints={args['name']: Constraint(args['lb'], args['ub'], args['expr'])})


@register_operation('attach_shape', {'name': NAME, 'path': PATH, 'shape': SHAPE, 'pose': POSE},
                    required={'name', 'path', 'shape'})
class AttachShape:
    @staticmethod
    def inputs(args) -> List[ModelPath]:
        return [args['path']]

    @staticmethod
    def outputs(args):
        return [], [], [args['name']]

    @staticmethod
    def apply(model: ArticulationModel, args) -> ModelDelta:
        pose = args.get('pose')
        if pose is None:
            pose = np.eye(4)
        else:
            pose = evaluate(_pose(pose), {})
        return ModelDelta(shapes={args['name']: ShapeAttachment(args['name'], args['path'], args['shape'], pose)})


# convenience constructors used by the loaders, scenes and tests

def _optional_pose(value):
    return None if value is None else _pose(value)


def create_body(name, parent_pose=None, offset=None) -> Operation:
    if parent_pose is not None:
        parent_pose = as_path(parent_pose) if _is_path(parent_pose) else _pose(parent_pose)
    return Operation('create_body', {'name': as_path(name), 'parent_pose': parent_pose, 'offset': _optional_pose(offset)})


def connect_joint(kind: str, parent, child, origin=None, axis=(1.0, 0.0, 0.0), var_name: str = None,
                  limits=None, vel_limit: float = None, mimic_kind: str = None, mimic_of: str = None,
                  multiplier: float = 1.0, offset: float = 0.0) -> Operation:
    return Operation('connect_joint', {
        'kind': kind, 'parent': as_path(parent), 'child': as_path(child), 'origin': _optional_pose(origin),
        'axis': tuple(float(a) for a in axis), 'var_name': var_name,
        'limits': None if limits is None else tuple(float(v) for v in limits),
        'vel_limit': None if vel_limit is None else float(vel_limit), 'mimic_kind': mimic_kind,
        'mimic_of': mimic_of, 'multiplier': float(multiplier), 'offset': float(offset)})


def attach_diff_drive(base, wheel_radius: float, axle_half_width: float, x='x', y='y', theta='theta',
                      left_wheel='lw', right_wheel='rw', wheel_vel_limit: float = None) -> Operation:
    return Operation('attach_diff_drive', {
        'base': as_path(base), 'wheel_radius': float(wheel_radius), 'axle_half_width': float(axle_half_width),
        'x': x, 'y': y, 'theta': theta, 'left_wheel': left_wheel, 'right_wheel': right_wheel,
        'wheel_vel_limit': None if wheel_vel_limit is None else float(wheel_vel_limit)})


def attach_garage_door(parent, door, rail_length: float, var='a', lock_var='b', lock_threshold: float = 0.3,
                       closed_threshold: float = 1.99, sharpness: float = 2000.0, vel_limit: float = 1.0) -> Operation:
    return Operation('attach_garage_door', {
        'parent': as_path(parent), 'door': as_path(door), 'rail_length': float(rail_length), 'var': var,
        'lock_var': lock_var, 'lock_threshold': float(lock_threshold), 'closed_threshold': float(closed_threshold),
        'sharpness': float(sharpness), 'vel_limit': float(vel_limit)})


def add_constraint(name: str, lb, ub, expr) -> Operation:
    return Operation('add_constraint', {'name': name, 'lb': as_expr(lb), 'ub': as_expr(ub), 'expr': as_expr(expr)})


def attach_shape(name: str, path, shape, pose=None) -> Operation:
    return Operation('attach_shape', {'name': name, 'path': as_path(path), 'shape': shape, 'pose': _optional_pose(pose)})
