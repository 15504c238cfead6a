"""
Canonical JSON AST of expressions:

- constants ``{"c": 1.5}``
- variables ``{"var": "a'", "order_encoded_in_apostrophes": true}``
- nodes ``{"op": "add", "args": [...]}``
- extended expressions ``{"expr": <ast>, "grad": {"a'": <ast>}, "nonanalytic": ["a'"]}``
- matrices ``{"rows": 4, "cols": 4, "entries": [...]}``

Decoding rebuilds the exact node structure (no simplification), so encode/decode is
structurally exact.
"""
import math
from typing import Any, Dict

from src.errors import FormatError
from src.ext_expr import ExtExpr
from src.symexpr import ARITY, MatrixExpr, ScalarExpr, Variable, _raw


def expr_to_json(expr) -> Dict[str, Any]:
    if isinstance(expr, MatrixExpr):
        return {'rows': expr.rows, 'cols': expr.cols, 'entries': [expr_to_json(e) for e in expr.entries]}
    if isinstance(expr, ExtExpr):
        doc = {'expr': _scalar_to_json(expr.expr),
               'grad': {str(k): _scalar_to_json(v) for k, v in sorted(expr.gradient_map.items())}}
        if expr.nonanalytic:
            doc['nonanalytic'] = sorted(str(k) for k in expr.nonanalytic)
        return doc
    if isinstance(expr, ScalarExpr):
        return _scalar_to_json(expr)
    raise TypeError(f'cannot encode {type(expr).__name__} as an expression')


def _scalar_to_json(expr: ScalarExpr, memo: Dict[int, Any] = None) -> Dict[str, Any]:
    memo = {} if memo is None else memo
    key = id(expr)
    if key in memo:
        return memo[key]
    if expr.op == 'c':
        if not math.isfinite(expr.value):
            raise ValueError(f'non-finite constant {expr.value} cannot be encoded')
        doc = {'c': expr.value}
    elif expr.op == 'var':
        doc = {'var': str(expr.variable), 'order_encoded_in_apostrophes': True}
    else:
        doc = {'op': expr.op, 'args': [_scalar_to_json(a, memo) for a in expr.args]}
    memo[key] = doc
    return doc


def expr_from_json(doc: Any, json_path: str = '$'):
    if not isinstance(doc, dict):
        raise FormatError(f'expected an expression object, got {type(doc).__name__}', json_path)
    if 'entries' in doc:
        return _matrix_from_json(doc, json_path)
    if 'expr' in doc:
        return _ext_from_json(doc, json_path)
    return scalar_from_json(doc, json_path)


def _matrix_from_json(doc: dict, json_path: str) -> MatrixExpr:
    rows, cols, entries = doc.get('rows'), doc.get('cols'), doc.get('entries')
    if not isinstance(rows, int) or not isinstance(cols, int) or rows < 1 or cols < 1:
        raise FormatError('matrix needs positive integer rows and cols', json_path)
    if not isinstance(entries, list) or len(entries) != rows * cols:
        raise FormatError(f'matrix needs {rows * cols} entries', f'{json_path}.entries')
    decoded = tuple(expr_from_json(e, f'{json_path}.entries[{i}]') for i, e in enumerate(entries))
    return MatrixExpr(rows, cols, decoded)


def _ext_from_json(doc: dict, json_path: str) -> ExtExpr:
    grad_doc = doc.get('grad', {})
    if not isinstance(grad_doc, dict):
        raise FormatError('grad must be an object', f'{json_path}.grad')
    expr = scalar_from_json(doc['expr'], f'{json_path}.expr')
    grad = {}
    for name, entry in grad_doc.items():
        grad[_parse_variable(name, f'{json_path}.grad')] = scalar_from_json(entry, f'{json_path}.grad.{name}')
    nonanalytic = doc.get('nonanalytic', [])
    if not isinstance(nonanalytic, list):
        raise FormatError('nonanalytic must be a list', f'{json_path}.nonanalytic')
    keys = frozenset(_parse_variable(n, f'{json_path}.nonanalytic') for n in nonanalytic)
    return ExtExpr(expr, grad, keys)


def _parse_variable(text: Any, json_path: str) -> Variable:
    if not isinstance(text, str):
        raise FormatError('variable names must be strings', json_path)
    try:
        return Variable.parse(text)
    except ValueError as exc:
        raise FormatError(str(exc), json_path) from None


def scalar_from_json(doc: Any, json_path: str = '$') -> ScalarExpr:
    if not isinstance(doc, dict):
        raise FormatError(f'expected an expression object, got {type(doc).__name__}', json_path)
    if 'c' in doc:
        value = doc['c']
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FormatError('constant must be a number', f'{json_path}.c')
        return _raw('c', value=float(value))
    if 'var' in doc:
        return _raw('var', variable=_parse_variable(doc['var'], f'{json_path}.var'))
    op = doc.get('op')
    if op not in ARITY:
        raise FormatError(f'unknown operator {op!r}', f'{json_path}.op')
    args = doc.get('args')
    if not isinstance(args, list) or len(args) != ARITY[op]:
        raise FormatError(f'operator {op} takes {ARITY[op]} arguments', f'{json_path}.args')
    return _raw(op, tuple(scalar_from_json(a, f'{json_path}.args[{i}]') for i, a in enumerate(args)))
