import math
import numbers
import re
from typing import Callable, Dict, FrozenSet, Mapping, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from src.errors import DimensionMismatch, DomainError, MissingVariable

_NAME_PATTERN = re.compile(r'^[A-Za-z0-9_]+$')

# sigmoid arguments are clamped to this magnitude before exponentiation
SIGMOID_CLAMP = 500.0


def validate_base_name(instance, attribute, value):
    if not isinstance(value, str) or not _NAME_PATTERN.match(value):
        raise ValueError(f"Variable base names must match [A-Za-z0-9_]+, got {value!r}")


def validate_order(instance, attribute, value):
    if not isinstance(value, int) or value < 0:
        raise ValueError(f"Variable order must be a non-negative integer, got {value!r}")


@attr.define(frozen=True, order=True)
class Variable:
    """
    A degree-of-freedom aspect: order 0 is the position, 1 the velocity, 2 the acceleration.
    The text form appends one apostrophe per order, e.g. "a''" is the acceleration of a.
    """
    base_name: str = attr.field(validator=validate_base_name)
    order: int = attr.field(default=0, validator=validate_order)

    @classmethod
    def parse(cls, text: str) -> 'Variable':
        stripped = text.rstrip("'")
        return cls(stripped, len(text) - len(stripped))

    def derivative(self) -> 'Variable':
        """The variable naming this variable's time derivative, used as key in gradients."""
        return Variable(self.base_name, self.order + 1)

    def position(self) -> 'Variable':
        return Variable(self.base_name, 0)

    def with_order(self, order: int) -> 'Variable':
        return Variable(self.base_name, order)

    def __str__(self) -> str:
        return self.base_name + "'" * self.order

    def __repr__(self) -> str:
        return f'Variable({str(self)!r})'


def as_variable(value: Union[str, Variable]) -> Variable:
    if isinstance(value, Variable):
        return value
    if isinstance(value, str):
        return Variable.parse(value)
    raise TypeError(f'cannot interpret {value!r} as a Variable')


Assignment = Mapping[Variable, float]


def normalize_assignment(q: Mapping) -> Dict[Variable, float]:
    """Accepts Variable or text keys and returns a Variable-keyed float dict."""
    return {as_variable(k): float(v) for k, v in q.items()}


@attr.define(frozen=True, cache_hash=True, repr=False)
class ScalarExpr:
    """
    Immutable node of a symbolic scalar expression tree. Leaves are constants (op "c") and
    variables (op "var"); all other nodes carry their operands in ``args``.
    Build nodes through the module functions, which apply the canonical simplifications.
    """
    op: str
    args: Tuple['ScalarExpr', ...] = ()
    value: Optional[float] = None
    variable: Optional[Variable] = None
    variables: FrozenSet[Variable] = attr.field(default=frozenset(), eq=False)

    @property
    def is_constant(self) -> bool:
        return self.op == 'c'

    def __repr__(self) -> str:
        return f'ScalarExpr({format_expr(self)})'

    def __str__(self) -> str:
        return format_expr(self)

    # arithmetic; unknown operand types are left to their reflected methods
    def __add__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('add', (self, other))

    def __radd__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('add', (other, self))

    def __sub__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('sub', (self, other))

    def __rsub__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('sub', (other, self))

    def __mul__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('mul', (self, other))

    def __rmul__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('mul', (other, self))

    def __truediv__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('div', (self, other))

    def __rtruediv__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('div', (other, self))

    def __pow__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('pow', (self, other))

    def __rpow__(self, other):
        other = _coerce(other)
        return NotImplemented if other is None else _make('pow', (other, self))

    def __neg__(self):
        return _make('neg', (self,))

    def __abs__(self):
        return _make('abs', (self,))


def _raw(op: str, args: Tuple[ScalarExpr, ...] = (), value: float = None, variable: Variable = None) -> ScalarExpr:
    """Node construction without simplification (used by the JSON decoder)."""
    if op == 'c':
        return ScalarExpr('c', (), float(value), None, frozenset())
    if op == 'var':
        return ScalarExpr('var', (), None, variable, frozenset((variable,)))
    free = frozenset().union(*(a.variables for a in args)) if args else frozenset()
    return ScalarExpr(op, tuple(args), None, None, free)


def constant(value: float) -> ScalarExpr:
    return _raw('c', value=float(value))


def variable(name: Union[str, Variable]) -> ScalarExpr:
    return _raw('var', variable=as_variable(name))


ZERO = constant(0.0)
ONE = constant(1.0)


def _coerce(value) -> Optional[ScalarExpr]:
    if isinstance(value, ScalarExpr):
        return value
    if isinstance(value, numbers.Real) and not isinstance(value, bool):
        return constant(float(value))
    if isinstance(value, Variable):
        return variable(value)
    return None


def as_expr(value) -> ScalarExpr:
    coerced = _coerce(value)
    if coerced is None:
        raise TypeError(f'cannot interpret {value!r} as a scalar expression')
    return coerced


# --- numeric semantics, shared by the interpreter and the compiled tape ---

def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise DomainError(f'division by zero ({a} / {b})')
    return a / b


def _pow(a: float, b: float) -> float:
    if a < 0.0 and not float(b).is_integer():
        raise DomainError(f'negative base {a} with non-integer exponent {b}')
    if a == 0.0 and b < 0.0:
        raise DomainError(f'zero base with negative exponent {b}')
    try:
        return math.pow(a, b)
    except (OverflowError, ValueError) as exc:
        raise DomainError(f'pow({a}, {b}) failed: {exc}') from exc


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise DomainError(f'sqrt of negative value {a}')
    return math.sqrt(a)


def _asin(a: float) -> float:
    if a < -1.0 or a > 1.0:
        raise DomainError(f'asin argument {a} outside [-1, 1]')
    return math.asin(a)


def _acos(a: float) -> float:
    if a < -1.0 or a > 1.0:
        raise DomainError(f'acos argument {a} outside [-1, 1]')
    return math.acos(a)


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise DomainError(f'exp({a}) overflows') from exc


def _log(a: float) -> float:
    if a <= 0.0:
        raise DomainError(f'log of non-positive value {a}')
    return math.log(a)


def _tan(a: float) -> float:
    return math.tan(a)


def _sigmoid(a: float) -> float:
    a = min(max(a, -SIGMOID_CLAMP), SIGMOID_CLAMP)
    return 1.0 / (1.0 + math.exp(-a))


def _sign(a: float) -> float:
    return float((a > 0.0) - (a < 0.0))


def _step(a: float) -> float:
    return 1.0 if a >= 0.0 else 0.0


NUMERIC_OPS: Dict[str, Callable[..., float]] = {
    'add': lambda a, b: a + b,
    'sub': lambda a, b: a - b,
    'mul': lambda a, b: a * b,
    'div': _div,
    'neg': lambda a: -a,
    'pow': _pow,
    'sqrt': _sqrt,
    'abs': abs,
    'min': lambda a, b: a if a <= b else b,
    'max': lambda a, b: a if a >= b else b,
    'sin': math.sin,
    'cos': math.cos,
    'tan': _tan,
    'asin': _asin,
    'acos': _acos,
    'atan2': math.atan2,
    'exp': _exp,
    'log': _log,
    'sigmoid': _sigmoid,
    'sign': _sign,
    'step': _step,
}

ARITY = {op: (1 if op in ('neg', 'sqrt', 'abs', 'sin', 'cos', 'tan', 'asin', 'acos', 'exp', 'log',
                          'sigmoid', 'sign', 'step') else 2)
         for op in NUMERIC_OPS}


def _make(op: str, args: Tuple[ScalarExpr, ...]) -> ScalarExpr:
    """Builds a node, applying constant folding, 0/1 identities and double-negation removal."""
    if all(a.op == 'c' for a in args):
        try:
            return constant(NUMERIC_OPS[op](*(a.value for a in args)))
        except DomainError:
            pass  # keep the node; evaluation reports the error
    if op == 'add':
        a, b = args
        if _is_value(a, 0.0):
            return b
        if _is_value(b, 0.0):
            return a
    elif op == 'sub':
        a, b = args
        if _is_value(b, 0.0):
            return a
        if _is_value(a, 0.0):
            return _make('neg', (b,))
        if a == b:
            return ZERO
    elif op == 'mul':
        a, b = args
        if _is_value(a, 0.0) or _is_value(b, 0.0):
            return ZERO
        if _is_value(a, 1.0):
            return b
        if _is_value(b, 1.0):
            return a
        if _is_value(a, -1.0):
            return _make('neg', (b,))
        if _is_value(b, -1.0):
            return _make('neg', (a,))
    elif op == 'div':
        a, b = args
        if _is_value(b, 1.0):
            return a
        # 0 / x stays a node: evaluation at x = 0 must report the division
    elif op == 'neg':
        if args[0].op == 'neg':
            return args[0].args[0]
    elif op == 'pow':
        a, b = args
        if _is_value(b, 1.0):
            return a
        if _is_value(b, 0.0):
            return ONE
    return _raw(op, args)


def _is_value(expr: ScalarExpr, value: float) -> bool:
    return expr.op == 'c' and expr.value == value


def _dispatch(op: str, *args):
    coerced = [_coerce(a) for a in args]
    if any(c is None for c in coerced):
        for a in args:
            apply_op = getattr(type(a), 'apply_op', None)
            if apply_op is not None:
                return apply_op(op, *args)
        raise TypeError(f'unsupported operand types for {op}: {[type(a).__name__ for a in args]}')
    return _make(op, tuple(coerced))


def add(a, b):
    return _dispatch('add', a, b)


def sub(a, b):
    return _dispatch('sub', a, b)


def mul(a, b):
    return _dispatch('mul', a, b)


def div(a, b):
    return _dispatch('div', a, b)


def neg(a):
    return _dispatch('neg', a)


def power(a, b):
    return _dispatch('pow', a, b)


def sqrt(a):
    return _dispatch('sqrt', a)


def absolute(a):
    return _dispatch('abs', a)


def minimum(a, b):
    return _dispatch('min', a, b)


def maximum(a, b):
    return _dispatch('max', a, b)


def sin(a):
    return _dispatch('sin', a)


def cos(a):
    return _dispatch('cos', a)


def tan(a):
    return _dispatch('tan', a)


def asin(a):
    return _dispatch('asin', a)


def acos(a):
    return _dispatch('acos', a)


def atan2(y, x):
    return _dispatch('atan2', y, x)


def exp(a):
    return _dispatch('exp', a)


def log(a):
    return _dispatch('log', a)


def sigmoid(a):
    return _dispatch('sigmoid', a)


def sign(a):
    return _dispatch('sign', a)


def step(a):
    return _dispatch('step', a)


def partial(op: str, args: Sequence[ScalarExpr], index: int, node: ScalarExpr = None) -> ScalarExpr:
    """
    Local partial derivative of ``op(*args)`` with respect to ``args[index]``.
    ``node`` is the node itself for rules that reuse it (sqrt, tan, exp, sigmoid). The rules
    are written against the arithmetic operators so they also apply to extended expressions.
    """
    if op == 'add':
        return 1.0
    if op == 'sub':
        return 1.0 if index == 0 else -1.0
    if op == 'mul':
        return args[1] if index == 0 else args[0]
    if op == 'div':
        a, b = args
        return 1.0 / b if index == 0 else -a / (b * b)
    if op == 'neg':
        return -1.0
    if op == 'pow':
        a, b = args
        if index == 0:
            return b * power(a, b - 1.0)
        return node * log(a)
    if op == 'sqrt':
        return 0.5 / node
    if op == 'abs':
        return sign(args[0])
    if op == 'min':
        a, b = args
        s = step(b - a)  # ties pick the first argument
        return s if index == 0 else 1.0 - s
    if op == 'max':
        a, b = args
        s = step(a - b)
        return s if index == 0 else 1.0 - s
    if op == 'sin':
        return cos(args[0])
    if op == 'cos':
        return -sin(args[0])
    if op == 'tan':
        return 1.0 + node * node
    if op == 'asin':
        return 1.0 / sqrt(1.0 - args[0] * args[0])
    if op == 'acos':
        return -1.0 / sqrt(1.0 - args[0] * args[0])
    if op == 'atan2':
        y, x = args
        denominator = x * x + y * y
        return x / denominator if index == 0 else -y / denominator
    if op == 'exp':
        return node
    if op == 'log':
        return 1.0 / args[0]
    if op == 'sigmoid':
        return node * (1.0 - node)
    if op in ('sign', 'step'):
        return 0.0
    raise ValueError(f'no derivative rule for {op!r}')


@attr.define(frozen=True, cache_hash=True, repr=False)
class MatrixExpr:
    """Row-major matrix of scalar (or extended) expressions."""
    rows: int
    cols: int
    entries: tuple = attr.field()

    @entries.validator
    def _check_entries(self, attribute, value):
        if self.rows < 1 or self.cols < 1:
            raise DimensionMismatch(f'matrix dimensions must be positive, got {self.rows}x{self.cols}')
        if len(value) != self.rows * self.cols:
            raise DimensionMismatch(f'{self.rows}x{self.cols} matrix needs {self.rows * self.cols} entries, got {len(value)}')

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> 'MatrixExpr':
        n_rows = len(rows)
        n_cols = len(rows[0]) if n_rows else 0
        if any(len(r) != n_cols for r in rows):
            raise DimensionMismatch('ragged matrix literal')
        return cls(n_rows, n_cols, tuple(_entry(x) for r in rows for x in r))

    @classmethod
    def identity(cls, n: int = 4) -> 'MatrixExpr':
        return cls(n, n, tuple(ONE if i == j else ZERO for i in range(n) for j in range(n)))

    @classmethod
    def column(cls, values: Sequence) -> 'MatrixExpr':
        return cls(len(values), 1, tuple(_entry(x) for x in values))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def variables(self) -> FrozenSet[Variable]:
        return frozenset().union(*(variables(e) for e in self.entries))

    def __getitem__(self, index: Tuple[int, int]):
        i, j = index
        return self.entries[i * self.cols + j]

    def row_entries(self, i: int) -> tuple:
        return self.entries[i * self.cols:(i + 1) * self.cols]

    def column_entries(self, j: int) -> tuple:
        return self.entries[j::self.cols]

    def transpose(self) -> 'MatrixExpr':
        return MatrixExpr(self.cols, self.rows, tuple(self[i, j] for j in range(self.cols) for i in range(self.rows)))

    def block(self, row_start: int, row_stop: int, col_start: int, col_stop: int) -> 'MatrixExpr':
        return MatrixExpr(row_stop - row_start, col_stop - col_start,
                          tuple(self[i, j] for i in range(row_start, row_stop) for j in range(col_start, col_stop)))

    def __matmul__(self, other: 'MatrixExpr') -> 'MatrixExpr':
        if not isinstance(other, MatrixExpr):
            return NotImplemented
        if self.cols != other.rows:
            raise DimensionMismatch(f'cannot multiply {self.rows}x{self.cols} by {other.rows}x{other.cols}')
        entries = []
        for i in range(self.rows):
            row = self.row_entries(i)
            for j in range(other.cols):
                entries.append(_dot(row, other.column_entries(j)))
        return MatrixExpr(self.rows, other.cols, tuple(entries))

    def __add__(self, other: 'MatrixExpr') -> 'MatrixExpr':
        if not isinstance(other, MatrixExpr):
            return NotImplemented
        if self.shape != other.shape:
            raise DimensionMismatch(f'cannot add {self.shape} and {other.shape}')
        return MatrixExpr(self.rows, self.cols, tuple(a + b for a, b in zip(self.entries, other.entries)))

    def __sub__(self, other: 'MatrixExpr') -> 'MatrixExpr':
        if not isinstance(other, MatrixExpr):
            return NotImplemented
        if self.shape != other.shape:
            raise DimensionMismatch(f'cannot subtract {self.shape} and {other.shape}')
        return MatrixExpr(self.rows, self.cols, tuple(a - b for a, b in zip(self.entries, other.entries)))

    def __mul__(self, scalar) -> 'MatrixExpr':
        if isinstance(scalar, MatrixExpr):
            return NotImplemented
        return MatrixExpr(self.rows, self.cols, tuple(e * scalar for e in self.entries))

    def __rmul__(self, scalar) -> 'MatrixExpr':
        if isinstance(scalar, MatrixExpr):
            return NotImplemented
        return MatrixExpr(self.rows, self.cols, tuple(scalar * e for e in self.entries))

    def __repr__(self) -> str:
        rows = ['[' + ', '.join(str(e) for e in self.row_entries(i)) + ']' for i in range(self.rows)]
        return f'MatrixExpr({self.rows}x{self.cols}, [' + ', '.join(rows) + '])'


def _entry(value):
    if isinstance(value, ScalarExpr) or hasattr(type(value), 'apply_op'):
        return value
    return as_expr(value)


def _dot(row: Sequence, column: Sequence):
    total = None
    for a, b in zip(row, column):
        term = a * b
        if _is_zero(term):
            continue
        total = term if total is None else total + term
    return ZERO if total is None else total


def _is_zero(expr) -> bool:
    if isinstance(expr, ScalarExpr):
        return _is_value(expr, 0.0)
    return bool(getattr(expr, 'is_zero', False))


def matrix_from_numpy(array) -> MatrixExpr:
    array = np.atleast_2d(np.asarray(array, dtype=float))
    return MatrixExpr.from_rows(array.tolist())


def variables(expr) -> FrozenSet[Variable]:
    """The set of variable leaves of a scalar, extended or matrix expression."""
    if isinstance(expr, (numbers.Real,)):
        return frozenset()
    return expr.variables


def _leaf_expr(expr) -> ScalarExpr:
    """The plain expression behind a scalar or extended expression."""
    if isinstance(expr, ScalarExpr):
        return expr
    inner = getattr(expr, 'expr', None)
    if isinstance(inner, ScalarExpr):
        return inner
    return as_expr(expr)


def evaluate(expr, q: Mapping) -> Union[float, np.ndarray]:
    """
    Numeric value of an expression under the assignment q, which must cover var(expr).
    Matrices evaluate entrywise to a numpy array; subexpressions shared between entries
    are evaluated once.
    """
    q = normalize_assignment(q)
    cache: Dict[int, float] = {}
    if isinstance(expr, MatrixExpr):
        values = [_evaluate(_leaf_expr(e), q, cache) for e in expr.entries]
        return np.array(values, dtype=float).reshape(expr.rows, expr.cols)
    return _evaluate(_leaf_expr(expr), q, cache)


def _evaluate(expr: ScalarExpr, q: Mapping[Variable, float], cache: Dict[int, float]) -> float:
    key = id(expr)
    if key in cache:
        return cache[key]
    if expr.op == 'c':
        result = expr.value
    elif expr.op == 'var':
        try:
            result = q[expr.variable]
        except KeyError:
            raise MissingVariable(expr.variable) from None
    else:
        result = NUMERIC_OPS[expr.op](*(_evaluate(a, q, cache) for a in expr.args))
    cache[key] = result
    return result


def substitute(expr, partial_assignment: Mapping):
    """
    Replaces the assigned variables by constants and folds the result. Unassigned variables
    stay symbolic; an empty assignment returns the expression unchanged.
    """
    partial_assignment = normalize_assignment(partial_assignment)
    if not partial_assignment:
        return expr
    memo: Dict[int, ScalarExpr] = {}
    if isinstance(expr, MatrixExpr):
        return MatrixExpr(expr.rows, expr.cols, tuple(_substitute_any(e, partial_assignment, memo) for e in expr.entries))
    return _substitute_any(expr, partial_assignment, memo)


def _substitute_any(expr, q, memo):
    if isinstance(expr, ScalarExpr):
        return _substitute(expr, q, memo)
    substitute_with = getattr(expr, 'substitute_with', None)
    if substitute_with is None:
        raise TypeError(f'cannot substitute into {type(expr).__name__}')
    return substitute_with(lambda e: _substitute(e, q, memo))


def _substitute(expr: ScalarExpr, q: Mapping[Variable, float], memo: Dict[int, ScalarExpr]) -> ScalarExpr:
    if not (expr.variables & q.keys()):
        return expr
    key = id(expr)
    if key in memo:
        return memo[key]
    if expr.op == 'var':
        result = constant(q[expr.variable])
    else:
        result = _make(expr.op, tuple(_substitute(a, q, memo) for a in expr.args))
    memo[key] = result
    return result


def replace_variables(expr, replacements: Mapping[Variable, ScalarExpr]):
    """Replaces variable leaves by expressions (symbolic substitution, used by mimic joints)."""
    memo: Dict[int, ScalarExpr] = {}
    replacements = {as_variable(k): as_expr(v) for k, v in replacements.items()}

    def rewrite(e: ScalarExpr) -> ScalarExpr:
        if not (e.variables & replacements.keys()):
            return e
        key = id(e)
        if key not in memo:
            if e.op == 'var':
                memo[key] = replacements[e.variable]
            else:
                memo[key] = _make(e.op, tuple(rewrite(a) for a in e.args))
        return memo[key]

    if isinstance(expr, MatrixExpr):
        return MatrixExpr(expr.rows, expr.cols, tuple(rewrite(e) for e in expr.entries))
    return rewrite(expr)


def diff(expr, var: Union[str, Variable]):
    """
    Analytic partial derivative with respect to ``var``; zero when var is not in var(expr).
    Matrices are differentiated entrywise.
    """
    var = as_variable(var)
    memo: Dict[int, ScalarExpr] = {}
    if isinstance(expr, MatrixExpr):
        return MatrixExpr(expr.rows, expr.cols, tuple(_diff(_leaf_expr(e), var, memo) for e in expr.entries))
    return _diff(_leaf_expr(expr), var, memo)


def _diff(expr: ScalarExpr, var: Variable, memo: Dict[int, ScalarExpr]) -> ScalarExpr:
    if var not in expr.variables:
        return ZERO
    if expr.op == 'var':
        return ONE
    key = id(expr)
    if key in memo:
        return memo[key]
    result = ZERO
    for index, arg in enumerate(expr.args):
        if var not in arg.variables:
            continue
        local = as_expr(partial(expr.op, expr.args, index, expr))
        result = result + local * _diff(arg, var, memo)
    memo[key] = result
    return result


def is_constant(expr) -> bool:
    return not variables(expr)


_INFIX = {'add': '+', 'sub': '-', 'mul': '*', 'div': '/', 'pow': '**'}


def format_expr(expr: ScalarExpr) -> str:
    if expr.op == 'c':
        return repr(expr.value) if expr.value < 0 else f'{expr.value:g}'
    if expr.op == 'var':
        return str(expr.variable)
    if expr.op in _INFIX:
        a, b = expr.args
        return f'({format_expr(a)} {_INFIX[expr.op]} {format_expr(b)})'
    if expr.op == 'neg':
        return f'-{format_expr(expr.args[0])}'
    return f'{expr.op}(' + ', '.join(format_expr(a) for a in expr.args) + ')'


def count_nodes(expr) -> int:
    """Number of distinct nodes reachable from the expression (shared subtrees count once)."""
    seen = set()
    stack = [_leaf_expr(e) for e in (expr.entries if isinstance(expr, MatrixExpr) else (expr,))]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(node.args)
    return len(seen)
