"""
The kmodel format: a JSON document holding a tagged operation history,
``{"version": 1, "history": [{"tag": ..., "kind": ..., "args": {...}}, ...]}``.
Loading a kmodel means replaying its history.
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Tuple

from src.articulation_model import ModelPath, Operation, as_path
from src.errors import FormatError, UnknownOperation
from src.expr_io import expr_from_json, expr_to_json
from src.geometry import shape_from_json, shape_to_json
from src.operations import EXPR, NAME, NUMBER, PATH, POSE, POSE_OR_PATH, SHAPE, VECTOR, operation_type
from src.symexpr import MatrixExpr
from src.urdf_loader import parse_urdf

KMODEL_VERSION = 1

History = List[Tuple[str, Operation]]


def encode_arg(kind: str, value: Any) -> Any:
    if value is None:
        return None
    if kind in (PATH, NAME):
        return str(value)
    if kind in (POSE, EXPR):
        return expr_to_json(value)
    if kind == POSE_OR_PATH:
        return str(value) if isinstance(value, (ModelPath, str)) else expr_to_json(value)
    if kind == NUMBER:
        return float(value)
    if kind == VECTOR:
        return [float(v) for v in value]
    if kind == SHAPE:
        return shape_to_json(value)
    raise ValueError(f'unknown argument kind {kind!r}')


def decode_arg(kind: str, doc: Any, json_path: str) -> Any:
    if doc is None:
        return None
    if kind == PATH:
        if not isinstance(doc, str):
            raise FormatError('paths are strings', json_path)
        try:
            return as_path(doc)
        except ValueError as exc:
            raise FormatError(str(exc), json_path) from None
    if kind == NAME:
        if not isinstance(doc, str):
            raise FormatError('names are strings', json_path)
        return doc
    if kind == POSE:
        pose = expr_from_json(doc, json_path)
        if not isinstance(pose, MatrixExpr) or pose.shape != (4, 4):
            raise FormatError('poses are 4x4 matrices', json_path)
        return pose
    if kind == POSE_OR_PATH:
        return decode_arg(PATH if isinstance(doc, str) else POSE, doc, json_path)
    if kind == EXPR:
        return expr_from_json(doc, json_path)
    if kind == NUMBER:
        if isinstance(doc, bool) or not isinstance(doc, (int, float)):
            raise FormatError('expected a number', json_path)
        return float(doc)
    if kind == VECTOR:
        if not isinstance(doc, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in doc):
            raise FormatError('expected a list of numbers', json_path)
        return tuple(float(v) for v in doc)
    if kind == SHAPE:
        return shape_from_json(doc, json_path)
    raise ValueError(f'unknown argument kind {kind!r}')


def operation_to_json(tag: str, operation: Operation) -> Dict[str, Any]:
    kinds = operation_type(operation.kind).arg_kinds
    args = {}
    for name, value in operation.args.items():
        if name not in kinds:
            raise ValueError(f'{operation.kind} has no argument {name!r}')
        args[name] = encode_arg(kinds[name], value)
    return {'tag': tag, 'kind': operation.kind, 'args': args}


def operation_from_json(doc: Any, json_path: str) -> Tuple[str, Operation]:
    if not isinstance(doc, dict):
        raise FormatError('history entries are objects', json_path)
    tag, kind, args = doc.get('tag'), doc.get('kind'), doc.get('args', {})
    if not isinstance(tag, str) or not tag:
        raise FormatError('tag must be a nonempty string', f'{json_path}.tag')
    try:
        kinds = operation_type(kind).arg_kinds
    except UnknownOperation:
        raise FormatError(f'unknown operation kind {kind!r}', f'{json_path}.kind') from None
    if not isinstance(args, dict):
        raise FormatError('args must be an object', f'{json_path}.args')
    decoded = {}
    for name, value in args.items():
        if name not in kinds:
            raise FormatError(f'{kind} has no argument {name!r}', f'{json_path}.args.{name}')
        decoded[name] = decode_arg(kinds[name], value, f'{json_path}.args.{name}')
    return tag, Operation(kind, decoded)


def history_to_json(history: History) -> Dict[str, Any]:
    return {'version': KMODEL_VERSION, 'history': [operation_to_json(tag, op) for tag, op in history]}


def history_from_json(doc: Any) -> History:
    if not isinstance(doc, dict):
        raise FormatError('kmodel documents are objects')
    if doc.get('version') != KMODEL_VERSION:
        raise FormatError(f'unsupported kmodel version {doc.get("version")!r}', '$.version')
    entries = doc.get('history')
    if not isinstance(entries, list):
        raise FormatError('history must be a list', '$.history')
    history = [operation_from_json(entry, f'$.history[{i}]') for i, entry in enumerate(entries)]
    tags = [tag for tag, _ in history]
    if len(set(tags)) != len(tags):
        duplicate = next(t for t in tags if tags.count(t) > 1)
        raise FormatError(f'tag {duplicate!r} appears twice', '$.history')
    return history


def save_kmodel(history: History) -> str:
    return json.dumps(history_to_json(history), separators=(',', ':'))


def load_kmodel(text: str) -> History:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f'invalid JSON: {exc}') from None
    return history_from_json(doc)


def write_kmodel_file(path, history: History) -> None:
    """Writes atomically: a temporary file next to the target is renamed over it."""
    path = Path(path)
    temporary = path.with_name(path.name + '.tmp')
    with open(temporary, 'w') as file:
        file.write(save_kmodel(history))
    os.replace(temporary, path)


def load_model_file(path) -> History:
    """Reads a URDF (by extension .urdf or .xml) or kmodel file into an operation history."""
    path = Path(path)
    with open(path, 'r') as file:
        text = file.read()
    if path.suffix.lower() in ('.urdf', '.xml'):
        history = parse_urdf(text)
    else:
        history = load_kmodel(text)
    logging.info(f'loaded {len(history)} operations from {path}')
    return history
