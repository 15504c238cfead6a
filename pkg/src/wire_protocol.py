"""
Newline-delimited JSON messages exchanged between the model server and its clients.
Every line is one self-contained JSON object with a ``type`` field:

    hello      {version}
    subscribe  {paths}
    apply      {request_id, placement: {kind, tag}, tag, op: {kind, args}}
    update     {revision, changed_paths, defs, constraints_changed, snapshot}
    ack        {request_id, revision}
    error      {request_id?, code, message}

``defs`` maps paths to expression ASTs (null for a removed path) and
``constraints_changed`` maps constraint names to {lb, ub, expr} ASTs (null once removed).
"""
import json
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from src.articulation_model import Constraint, ModelPath, Operation, Placement, as_path
from src.errors import ArticulationError, BadMessage
from src.expr_io import expr_from_json, expr_to_json, scalar_from_json
from src.kmodel_io import operation_from_json, operation_to_json

PROTOCOL_VERSION = 1

HELLO = 'hello'
SUBSCRIBE = 'subscribe'
APPLY = 'apply'
UPDATE = 'update'
ACK = 'ack'
ERROR = 'error'

REQUIRED_FIELDS = {
    HELLO: ('version',),
    SUBSCRIBE: ('paths',),
    APPLY: ('request_id', 'placement', 'tag', 'op'),
    UPDATE: ('revision', 'changed_paths', 'defs', 'constraints_changed'),
    ACK: ('request_id', 'revision'),
    ERROR: ('code', 'message'),
}


def encode_message(message: Mapping[str, Any]) -> bytes:
    return (json.dumps(message, separators=(',', ':'), allow_nan=False) + '\n').encode('utf-8')


def decode_message(line: bytes) -> Dict[str, Any]:
    """Parses one line; raises BadMessage for invalid JSON, unknown types and missing fields."""
    try:
        message = json.loads(line.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMessage(f'line is not valid JSON: {exc}') from None
    if not isinstance(message, dict):
        raise BadMessage('messages are JSON objects')
    kind = message.get('type')
    if kind not in REQUIRED_FIELDS:
        raise BadMessage(f'unknown message type {kind!r}')
    missing = [name for name in REQUIRED_FIELDS[kind] if name not in message]
    if missing:
        raise BadMessage(f'{kind} message lacks {", ".join(missing)}')
    return message


def hello(version: int = PROTOCOL_VERSION) -> Dict[str, Any]:
    return {'type': HELLO, 'version': version}


def subscribe(paths: Iterable) -> Dict[str, Any]:
    return {'type': SUBSCRIBE, 'paths': [str(as_path(p)) for p in paths]}


def apply_request(request_id: int, tag: str, operation: Operation, placement: Placement = Placement()) -> Dict[str, Any]:
    op = operation_to_json(tag, operation)
    return {'type': APPLY, 'request_id': request_id, 'tag': tag,
            'placement': {'kind': placement.kind, 'tag': placement.tag},
            'op': {'kind': op['kind'], 'args': op['args']}}


def ack(request_id, revision: int) -> Dict[str, Any]:
    return {'type': ACK, 'request_id': request_id, 'revision': revision}


def error(code: str, message: str, request_id=None) -> Dict[str, Any]:
    doc = {'type': ERROR, 'code': code, 'message': message}
    if request_id is not None:
        doc['request_id'] = request_id
    return doc


def error_from_exception(exc: ArticulationError, request_id=None) -> Dict[str, Any]:
    return error(exc.code, str(exc), request_id)


def constraint_to_json(constraint: Constraint) -> Dict[str, Any]:
    return {'lb': expr_to_json(constraint.lb), 'ub': expr_to_json(constraint.ub), 'expr': expr_to_json(constraint.expr)}


def constraint_from_json(doc: Any, json_path: str) -> Constraint:
    if not isinstance(doc, dict) or set(doc) != {'lb', 'ub', 'expr'}:
        raise BadMessage(f'{json_path}: constraints are objects with lb, ub and expr')
    return Constraint(*(scalar_from_json(doc[key], f'{json_path}.{key}') for key in ('lb', 'ub', 'expr')))


def update(revision: int, defs: Mapping[ModelPath, Any], constraints: Mapping[str, Optional[Constraint]],
           snapshot: bool = False) -> Dict[str, Any]:
    """Update message; a None definition or constraint marks a removal."""
    return {
        'type': UPDATE,
        'revision': revision,
        'snapshot': snapshot,
        'changed_paths': sorted(str(p) for p in defs),
        'defs': {str(p): None if e is None else expr_to_json(e) for p, e in sorted(defs.items())},
        'constraints_changed': {name: None if c is None else constraint_to_json(c) for name, c in sorted(constraints.items())},
    }


def parse_apply(message: Mapping[str, Any]) -> Tuple[Any, str, Operation, Placement]:
    """(request_id, tag, operation, placement) of an apply message; raises BadMessage."""
    placement_doc = message['placement']
    if not isinstance(placement_doc, dict):
        raise BadMessage('placement must be an object')
    try:
        placement = Placement(placement_doc.get('kind', 'append'), placement_doc.get('tag'))
    except ValueError as exc:
        raise BadMessage(str(exc)) from None
    op = message['op']
    if not isinstance(op, dict):
        raise BadMessage('op must be an object')
    try:
        tag, operation = operation_from_json({'tag': message['tag'], 'kind': op.get('kind'), 'args': op.get('args', {})}, '$.op')
    except ArticulationError as exc:
        raise BadMessage(str(exc)) from None
    return message['request_id'], tag, operation, placement


def parse_paths(message: Mapping[str, Any]) -> Tuple[ModelPath, ...]:
    paths = message['paths']
    if not isinstance(paths, list):
        raise BadMessage('paths must be a list')
    try:
        return tuple(as_path(p) for p in paths)
    except (TypeError, ValueError) as exc:
        raise BadMessage(f'invalid subscription path: {exc}') from None


def parse_update(message: Mapping[str, Any]) -> Tuple[int, Dict[ModelPath, Any], Dict[str, Optional[Constraint]]]:
    """(revision, definitions, constraints) of an update message with expressions decoded."""
    revision = message['revision']
    if isinstance(revision, bool) or not isinstance(revision, int):
        raise BadMessage('revision must be an integer')
    defs_doc, constraints_doc = message['defs'], message['constraints_changed']
    if not isinstance(defs_doc, dict) or not isinstance(constraints_doc, dict):
        raise BadMessage('defs and constraints_changed must be objects')
    try:
        defs = {as_path(p): None if doc is None else expr_from_json(doc, f'$.defs.{p}') for p, doc in defs_doc.items()}
        constraints = {name: None if doc is None else constraint_from_json(doc, f'$.constraints_changed.{name}')
                       for name, doc in constraints_doc.items()}
    except (ArticulationError, TypeError, ValueError) as exc:
        if isinstance(exc, BadMessage):
            raise
        raise BadMessage(f'undecodable update: {exc}') from None
    return revision, defs, constraints
