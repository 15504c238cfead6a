from typing import Any, Dict, Sequence, Tuple, Union

import attr
import numpy as np

from src.articulation_model import ArticulationModel, ModelPath, as_path
from src.errors import FormatError, UnsupportedPair
from src.frames import transform_point
from src.symexpr import MatrixExpr, evaluate

CAPSULE_SAMPLES = 9
_DEGENERATE = 1e-12


def validate_positive(instance, attribute, value):
    if not value > 0:
        raise ValueError(f'{attribute.name} must be positive, got {value}')


def validate_half_extents(instance, attribute, value):
    if len(value) != 3 or any(not v > 0 for v in value):
        raise ValueError(f'box half extents must be three positive numbers, got {value}')


def _float_tuple(value) -> Tuple[float, ...]:
    return tuple(float(v) for v in value)


@attr.define(frozen=True)
class Sphere:
    radius: float = attr.field(converter=float, validator=validate_positive)


@attr.define(frozen=True)
class Box:
    half_extents: Tuple[float, float, float] = attr.field(converter=_float_tuple, validator=validate_half_extents)


@attr.define(frozen=True)
class Capsule:
    """Capsule along the local z axis: segment of length 2 half_length, swept by a sphere of radius."""
    radius: float = attr.field(converter=float, validator=validate_positive)
    half_length: float = attr.field(converter=float, validator=validate_positive)


Shape = Union[Sphere, Box, Capsule]


def _pose_tuple(value) -> Tuple[float, ...]:
    array = np.asarray(value, dtype=float)
    if array.shape != (4, 4):
        raise ValueError(f'local poses are 4x4 matrices, got shape {array.shape}')
    return tuple(array.ravel().tolist())


@attr.define(frozen=True)
class ShapeAttachment:
    """A primitive shape rigidly attached to the frame stored at ``path``."""
    name: str
    path: ModelPath = attr.field(converter=as_path)
    shape: Shape
    local_pose: Tuple[float, ...] = attr.field(factory=lambda: np.eye(4), converter=_pose_tuple)

    @property
    def pose_matrix(self) -> np.ndarray:
        return np.array(self.local_pose, dtype=float).reshape(4, 4)


@attr.define(eq=False)
class ContactQueryResult:
    """Closest points p (on the first shape) and r (on the second), normal n from p toward r."""
    p: np.ndarray
    r: np.ndarray
    n: np.ndarray
    distance: float

    def swapped(self) -> 'ContactQueryResult':
        return ContactQueryResult(self.r, self.p, -self.n, self.distance)


def shape_to_json(shape: Shape) -> Dict[str, Any]:
    if isinstance(shape, Sphere):
        return {'sphere': {'r': shape.radius}}
    if isinstance(shape, Box):
        return {'box': {'half_extents': list(shape.half_extents)}}
    if isinstance(shape, Capsule):
        return {'capsule': {'r': shape.radius, 'half_length': shape.half_length}}
    raise TypeError(f'unknown shape {shape!r}')


def shape_from_json(doc: Any, json_path: str = '$') -> Shape:
    if not isinstance(doc, dict) or len(doc) != 1:
        raise FormatError('shape must be an object with exactly one of sphere, box, capsule', json_path)
    kind, params = next(iter(doc.items()))
    try:
        if kind == 'sphere':
            return Sphere(params['r'])
        if kind == 'box':
            return Box(params['half_extents'])
        if kind == 'capsule':
            return Capsule(params['r'], params['half_length'])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f'invalid {kind} parameters: {exc}', f'{json_path}.{kind}') from None
    raise FormatError(f'unknown shape kind {kind!r}', json_path)


def world_pose(model: ArticulationModel, attachment: ShapeAttachment, q) -> np.ndarray:
    frame = np.asarray(evaluate(model.get(attachment.path), q), dtype=float)
    return frame @ attachment.pose_matrix


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _sphere_sphere(ca, ra, cb, rb, fallback):
    delta = cb - ca
    centre_distance = float(np.linalg.norm(delta))
    n = delta / centre_distance if centre_distance > _DEGENERATE else fallback
    return ca + ra * n, cb - rb * n, n, centre_distance - ra - rb


def _point_box(point, box_pose, half_extents):
    """Closest box surface point, outward normal toward ``point`` and signed distance (negative inside)."""
    rotation, origin = box_pose[:3, :3], box_pose[:3, 3]
    local = rotation.T @ (point - origin)
    h = np.asarray(half_extents)
    clamped = np.clip(local, -h, h)
    outside = local - clamped
    gap = float(np.linalg.norm(outside))
    if gap > _DEGENERATE:
        return origin + rotation @ clamped, rotation @ (outside / gap), gap
    # inside: leave through the nearest face
    depth = h - np.abs(local)
    axis = int(np.argmin(depth))
    direction = 1.0 if local[axis] >= 0.0 else -1.0
    surface = local.copy()
    surface[axis] = direction * h[axis]
    normal = np.zeros(3)
    normal[axis] = direction
    return origin + rotation @ surface, rotation @ normal, -float(depth[axis])


def _sphere_box(sphere: Sphere, sphere_pose, box: Box, box_pose, fallback):
    centre = sphere_pose[:3, 3]
    surface, outward, signed = _point_box(centre, box_pose, box.half_extents)
    n = -outward
    return centre - sphere.radius * outward, surface, n, signed - sphere.radius


def _capsule_segment(capsule: Capsule, pose):
    axis = pose[:3, 2]
    centre = pose[:3, 3]
    return centre - capsule.half_length * axis, centre + capsule.half_length * axis


def _closest_on_segment(point, start, end):
    direction = end - start
    length_sq = float(direction @ direction)
    t = 0.0 if length_sq <= _DEGENERATE else float(np.clip((point - start) @ direction / length_sq, 0.0, 1.0))
    return start + t * direction


def _sphere_capsule(sphere: Sphere, sphere_pose, capsule: Capsule, capsule_pose, fallback):
    centre = sphere_pose[:3, 3]
    start, end = _capsule_segment(capsule, capsule_pose)
    nearest = _closest_on_segment(centre, start, end)
    return _sphere_sphere(centre, sphere.radius, nearest, capsule.radius, fallback)


def _capsule_box(capsule: Capsule, capsule_pose, box: Box, box_pose, fallback):
    start, end = _capsule_segment(capsule, capsule_pose)
    best = None
    for t in np.linspace(0.0, 1.0, CAPSULE_SAMPLES):
        sample_pose = np.eye(4)
        sample_pose[:3, 3] = start + t * (end - start)
        result = _sphere_box(Sphere(capsule.radius), sample_pose, box, box_pose, fallback)
        if best is None or result[3] < best[3]:
            best = result
    return best


def _sphere_sphere_shapes(a: Sphere, pose_a, b: Sphere, pose_b, fallback):
    return _sphere_sphere(pose_a[:3, 3], a.radius, pose_b[:3, 3], b.radius, fallback)


_PAIR_QUERIES = {
    (Sphere, Sphere): _sphere_sphere_shapes,
    (Sphere, Box): _sphere_box,
    (Sphere, Capsule): _sphere_capsule,
    (Capsule, Box): _capsule_box,
}


def supports_pair(a: Shape, b: Shape) -> bool:
    return (type(a), type(b)) in _PAIR_QUERIES or (type(b), type(a)) in _PAIR_QUERIES


def closest_points_at(a: ShapeAttachment, pose_a: np.ndarray, b: ShapeAttachment, pose_b: np.ndarray) -> ContactQueryResult:
    """
    Closest points between two attachments at given world poses (shape poses, local pose
    already applied). Degenerate normals fall back to the +x axis of the shape whose name
    sorts first, oriented from a toward b.
    """
    if a.name <= b.name:
        fallback = pose_a[:3, 0].copy()
    else:
        fallback = -pose_b[:3, 0]
    query = _PAIR_QUERIES.get((type(a.shape), type(b.shape)))
    if query is not None:
        p, r, n, distance = query(a.shape, pose_a, b.shape, pose_b, fallback)
        return ContactQueryResult(np.asarray(p, dtype=float), np.asarray(r, dtype=float), _unit(np.asarray(n, dtype=float)), float(distance))
    query = _PAIR_QUERIES.get((type(b.shape), type(a.shape)))
    if query is None:
        raise UnsupportedPair(f'no closest-point query between {type(a.shape).__name__} and {type(b.shape).__name__}')
    p, r, n, distance = query(b.shape, pose_b, a.shape, pose_a, -fallback)
    return ContactQueryResult(np.asarray(r, dtype=float), np.asarray(p, dtype=float), -_unit(np.asarray(n, dtype=float)), float(distance))


def closest_points(a: ShapeAttachment, b: ShapeAttachment, q, model: ArticulationModel) -> ContactQueryResult:
    """Closest points between two attachments with frame poses evaluated from the model at q."""
    if not supports_pair(a.shape, b.shape):
        raise UnsupportedPair(f'no closest-point query between {type(a.shape).__name__} and {type(b.shape).__name__}')
    return closest_points_at(a, world_pose(model, a, q), b, world_pose(model, b, q))


def contact_expr(model: ArticulationModel, path, local_point: Sequence[float]) -> MatrixExpr:
    """World position of a point fixed in the frame at ``path``, as a 3x1 expression."""
    return transform_point(model.get(path), [float(c) for c in local_point])


def local_point(frame_pose: np.ndarray, world_point: np.ndarray) -> np.ndarray:
    """Coordinates of a world point in the frame given by a numeric 4x4 pose."""
    return frame_pose[:3, :3].T @ (np.asarray(world_point, dtype=float) - frame_pose[:3, 3])


def shapes_on(model: ArticulationModel, paths) -> Dict[str, ShapeAttachment]:
    paths = {as_path(p) for p in paths}
    return {name: s for name, s in sorted(model.shapes.items()) if s.path in paths}
