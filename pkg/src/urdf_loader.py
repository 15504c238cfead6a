import logging
import re
import xml.etree.ElementTree as ET
from typing import Dict, List, Optional, Tuple

import attr
import numpy as np

from src.articulation_model import ModelPath, Operation, as_path
from src.errors import CycleError, MimicCycle, ParseError, UnsupportedGeometry, UnsupportedJoint
from src.frames import origin_transform, unit_axis
from src.geometry import Box, Capsule, Sphere
from src.operations import attach_shape, connect_joint, create_body
from src.symexpr import evaluate

SUPPORTED_JOINTS = ('fixed', 'revolute', 'continuous', 'prismatic')
REJECTED_JOINTS = ('planar', 'floating')


def sanitize_name(name: str) -> str:
    """Maps URDF names onto path segments ([A-Za-z0-9_]+)."""
    cleaned = re.sub(r'[^A-Za-z0-9_]', '_', name or '')
    if not cleaned:
        raise ParseError(f'empty name {name!r}')
    return cleaned


def _floats(text: Optional[str], count: int, default: Tuple[float, ...], what: str) -> Tuple[float, ...]:
    if text is None:
        return default
    try:
        values = tuple(float(v) for v in text.split())
    except ValueError:
        raise ParseError(f'{what}: {text!r} is not a list of numbers') from None
    if len(values) != count:
        raise ParseError(f'{what}: expected {count} numbers, got {len(values)}')
    return values


def _float_attribute(element, name: str, default: Optional[float], what: str) -> Optional[float]:
    text = element.get(name)
    if text is None:
        return default
    try:
        return float(text)
    except ValueError:
        raise ParseError(f'{what}: attribute {name}={text!r} is not a number') from None


def _origin(element, what: str):
    origin = element.find('origin') if element is not None else None
    if origin is None:
        return (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
    xyz = _floats(origin.get('xyz'), 3, (0.0, 0.0, 0.0), f'{what} origin xyz')
    rpy = _floats(origin.get('rpy'), 3, (0.0, 0.0, 0.0), f'{what} origin rpy')
    return xyz, rpy


@attr.define
class UrdfJoint:
    name: str
    kind: str
    parent: str
    child: str
    xyz: Tuple[float, float, float]
    rpy: Tuple[float, float, float]
    axis: Tuple[float, float, float]
    lower: Optional[float] = None
    upper: Optional[float] = None
    velocity: Optional[float] = None
    has_limit: bool = False
    mimic_joint: Optional[str] = None
    multiplier: float = 1.0
    offset: float = 0.0
    index: int = 0


@attr.define
class UrdfLink:
    name: str
    shapes: List[Tuple[object, np.ndarray]] = attr.field(factory=list)


@attr.define
class UrdfDocument:
    robot_name: str
    links: Dict[str, UrdfLink]
    joints: Dict[str, UrdfJoint]


def _parse_geometry(element, link_name: str):
    geometry = element.find('geometry')
    if geometry is None or len(geometry) == 0:
        raise ParseError(f'link {link_name}: geometry element without a primitive')
    primitive = geometry[0]
    what = f'link {link_name} {primitive.tag}'
    if primitive.tag == 'box':
        size = _floats(primitive.get('size'), 3, None, f'{what} size')
        if size is None:
            raise ParseError(f'{what}: missing size')
        return Box(tuple(s / 2.0 for s in size))
    if primitive.tag == 'sphere':
        radius = _float_attribute(primitive, 'radius', None, what)
        if radius is None:
            raise ParseError(f'{what}: missing radius')
        return Sphere(radius)
    if primitive.tag == 'cylinder':
        radius = _float_attribute(primitive, 'radius', None, what)
        length = _float_attribute(primitive, 'length', None, what)
        if radius is None or length is None:
            raise ParseError(f'{what}: needs radius and length')
        # capsule approximation of the cylinder
        return Capsule(radius, length / 2.0)
    if primitive.tag == 'mesh':
        raise UnsupportedGeometry(f'link {link_name}: mesh geometry is not supported')
    raise ParseError(f'{what}: unknown geometry primitive')


def read_urdf(xml: str) -> UrdfDocument:
    """Parses the supported URDF subset into plain records (no model semantics yet)."""
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise ParseError(f'malformed XML: {exc}') from None
    if root.tag != 'robot':
        raise ParseError(f'root element must be <robot>, got <{root.tag}>')

    links: Dict[str, UrdfLink] = {}
    for element in root.findall('link'):
        name = element.get('name')
        if not name:
            raise ParseError('link without a name')
        if name in links:
            raise ParseError(f'link {name} declared twice')
        link = UrdfLink(name)
        carriers = element.findall('collision') or element.findall('visual')
        for carrier in carriers:
            shape = _parse_geometry(carrier, name)
            xyz, rpy = _origin(carrier, f'link {name}')
            link.shapes.append((shape, evaluate(origin_transform(xyz, rpy), {})))
        links[name] = link

    joints: Dict[str, UrdfJoint] = {}
    for index, element in enumerate(root.findall('joint')):
        name = element.get('name')
        kind = element.get('type')
        if not name or not kind:
            raise ParseError('joint needs name and type attributes')
        if name in joints:
            raise ParseError(f'joint {name} declared twice')
        if kind in REJECTED_JOINTS:
            raise UnsupportedJoint(f'joint {name}: {kind} joints are not supported')
        if kind not in SUPPORTED_JOINTS:
            raise ParseError(f'joint {name}: unknown joint type {kind!r}')
        parent = element.find('parent')
        child = element.find('child')
        if parent is None or child is None or not parent.get('link') or not child.get('link'):
            raise ParseError(f'joint {name}: needs parent and child links')
        parent_name, child_name = parent.get('link'), child.get('link')
        for link_name in (parent_name, child_name):
            if link_name not in links:
                raise ParseError(f'joint {name}: references undeclared link {link_name}')
        xyz, rpy = _origin(element, f'joint {name}')
        axis_element = element.find('axis')
        axis = _floats(axis_element.get('xyz') if axis_element is not None else None, 3, (1.0, 0.0, 0.0), f'joint {name} axis')
        try:
            axis = unit_axis(axis)
        except ValueError as exc:
            raise ParseError(f'joint {name}: {exc}') from None
        joint = UrdfJoint(name, kind, parent_name, child_name, xyz, rpy, axis, index=index)
        limit = element.find('limit')
        if limit is not None:
            joint.has_limit = True
            joint.lower = _float_attribute(limit, 'lower', 0.0, f'joint {name} limit')
            joint.upper = _float_attribute(limit, 'upper', 0.0, f'joint {name} limit')
            joint.velocity = _float_attribute(limit, 'velocity', None, f'joint {name} limit')
        mimic = element.find('mimic')
        if mimic is not None:
            if not mimic.get('joint'):
                raise ParseError(f'joint {name}: mimic element without joint attribute')
            joint.mimic_joint = mimic.get('joint')
            joint.multiplier = _float_attribute(mimic, 'multiplier', 1.0, f'joint {name} mimic')
            joint.offset = _float_attribute(mimic, 'offset', 0.0, f'joint {name} mimic')
        joints[name] = joint
    return UrdfDocument(root.get('name', ''), links, joints)


def _topological_order(joints: Dict[str, UrdfJoint], with_mimic: bool) -> Optional[List[UrdfJoint]]:
    """Kahn ordering of joints (parent connections first, mimic targets first); None on a cycle."""
    by_child = {j.child: j for j in joints.values()}
    predecessors: Dict[str, set] = {name: set() for name in joints}
    for joint in joints.values():
        upstream = by_child.get(joint.parent)
        if upstream is not None:
            predecessors[joint.name].add(upstream.name)
        if with_mimic and joint.mimic_joint is not None:
            predecessors[joint.name].add(joint.mimic_joint)
    ordered = []
    remaining = dict(predecessors)
    while remaining:
        ready = sorted((joints[n] for n, pre in remaining.items() if not pre), key=lambda j: j.index)
        if not ready:
            return None
        for joint in ready:
            ordered.append(joint)
            del remaining[joint.name]
        for pre in remaining.values():
            pre.difference_update(j.name for j in ready)
    return ordered


def _mimic_source(joint: UrdfJoint, joints: Dict[str, UrdfJoint]) -> Tuple[UrdfJoint, float, float]:
    """Follows mimic chains to the independent joint; returns it with the composed affine map."""
    multiplier, offset = 1.0, 0.0
    current = joint
    while current.mimic_joint is not None:
        multiplier, offset = multiplier * current.multiplier, multiplier * current.offset + offset
        current = joints[current.mimic_joint]
    return current, multiplier, offset


def history_from_document(document: UrdfDocument, prefix: Optional[str] = None) -> List[Tuple[str, Operation]]:
    prefix_path = as_path(prefix) if prefix else None

    def link_path(name: str) -> ModelPath:
        segment = sanitize_name(name)
        return prefix_path.child(segment) if prefix_path is not None else ModelPath((segment,))

    children = {}
    for joint in document.joints.values():
        if joint.child in children:
            raise CycleError(f'link {joint.child} has two parent joints ({children[joint.child]} and {joint.name})')
        children[joint.child] = joint.name
        if joint.mimic_joint is not None and joint.mimic_joint not in document.joints:
            raise ParseError(f'joint {joint.name} mimics undeclared joint {joint.mimic_joint}')
    if _topological_order(document.joints, with_mimic=False) is None:
        raise CycleError('the joint graph contains a kinematic loop')
    ordered = _topological_order(document.joints, with_mimic=True)
    if ordered is None:
        raise MimicCycle('mimic references form a cycle')

    history = []
    # phase 1: bodies and their shapes
    for name, link in document.links.items():
        path = link_path(name)
        history.append((f'create {path}', create_body(path)))
        for i, (shape, pose) in enumerate(link.shapes):
            history.append((f'shape {path} {i}', attach_shape(f'{path}#{i}', path, shape, pose)))
    # phase 2: connections, parents before children and mimic targets before mimickers
    for joint in ordered:
        parent, child = link_path(joint.parent), link_path(joint.child)
        origin = origin_transform(joint.xyz, joint.rpy)
        tag = f'connect {parent} {child}'
        if joint.kind == 'fixed':
            operation = connect_joint('fixed', parent, child, origin)
        elif joint.mimic_joint is not None:
            source, multiplier, offset = _mimic_source(joint, document.joints)
            if joint.has_limit:
                logging.warning(f'joint {joint.name}: limits of mimic joints are ignored')
            operation = connect_joint('mimic', parent, child, origin, joint.axis, mimic_kind=joint.kind,
                                      mimic_of=sanitize_name(source.name), multiplier=multiplier, offset=offset)
        else:
            limits = (joint.lower, joint.upper) if joint.has_limit and joint.kind != 'continuous' else None
            operation = connect_joint(joint.kind, parent, child, origin, joint.axis, sanitize_name(joint.name),
                                      limits=limits, vel_limit=joint.velocity)
        history.append((tag, operation))
    logging.info(f'URDF robot {document.robot_name!r}: {len(document.links)} links, {len(document.joints)} joints, '
                 f'{len(history)} operations')
    return history


def parse_urdf(xml: str, prefix: Optional[str] = None) -> List[Tuple[str, Operation]]:
    """
    Translates a URDF document into an operation history: first a body (and its shapes) per
    link, then one connect operation per joint ordered so parents and mimic targets come first.
    """
    return history_from_document(read_urdf(xml), prefix)
