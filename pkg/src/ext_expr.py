import numbers
from typing import Dict, FrozenSet, Mapping, Optional, Sequence, Union

import attr

from src.symexpr import (ScalarExpr, MatrixExpr, Variable, ZERO, as_expr, as_variable, diff, evaluate,
                         normalize_assignment, partial, _make)

Gradient = Dict[Variable, ScalarExpr]


def _freeze_gradient(value: Mapping) -> Dict[Variable, ScalarExpr]:
    return {as_variable(k): as_expr(v) for k, v in value.items()}


@attr.define(frozen=True, eq=False, repr=False)
class ExtExpr:
    """
    An expression paired with its extended gradient: a mapping from derivative variables
    (order n+1 of a variable of order n) to expressions. Entries may be extra (no matching
    variable in ``expr``) or override the analytic derivative; both kinds are tracked in
    ``nonanalytic`` and survive all arithmetic.
    """
    expr: ScalarExpr = attr.field(converter=as_expr)
    gradient_map: Dict[Variable, ScalarExpr] = attr.field(factory=dict, converter=_freeze_gradient)
    nonanalytic: FrozenSet[Variable] = attr.field(default=frozenset(), converter=frozenset)

    @property
    def variables(self) -> FrozenSet[Variable]:
        return self.expr.variables

    @property
    def is_zero(self) -> bool:
        return self.expr.op == 'c' and self.expr.value == 0.0 and not self.gradient_map

    def gradient(self) -> Dict[Variable, ScalarExpr]:
        return dict(self.gradient_map)

    def substitute_with(self, rewrite) -> 'ExtExpr':
        """Applies an expression rewrite to the value and every gradient entry."""
        return ExtExpr(rewrite(self.expr), {k: rewrite(g) for k, g in self.gradient_map.items()}, self.nonanalytic)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExtExpr):
            return NotImplemented
        return (self.expr == other.expr and self.gradient_map == other.gradient_map
                and self.nonanalytic == other.nonanalytic)

    def __hash__(self) -> int:
        return hash((self.expr, frozenset(self.gradient_map.items()), self.nonanalytic))

    def __repr__(self) -> str:
        entries = ', '.join(f'{k}: {v}' for k, v in sorted(self.gradient_map.items()))
        return f'ExtExpr({self.expr}, {{{entries}}})'

    @classmethod
    def apply_op(cls, op: str, *args) -> 'ExtExpr':
        return ext_arith(op, *args)

    def __add__(self, other):
        return _binary('add', self, other)

    def __radd__(self, other):
        return _binary('add', other, self)

    def __sub__(self, other):
        return _binary('sub', self, other)

    def __rsub__(self, other):
        return _binary('sub', other, self)

    def __mul__(self, other):
        return _binary('mul', self, other)

    def __rmul__(self, other):
        return _binary('mul', other, self)

    def __truediv__(self, other):
        return _binary('div', self, other)

    def __rtruediv__(self, other):
        return _binary('div', other, self)

    def __pow__(self, other):
        return _binary('pow', self, other)

    def __rpow__(self, other):
        return _binary('pow', other, self)

    def __neg__(self):
        return ext_arith('neg', self)

    def __abs__(self):
        return ext_arith('abs', self)


def _binary(op: str, a, b):
    if not _is_operand(a) or not _is_operand(b):
        return NotImplemented
    return ext_arith(op, a, b)


def _is_operand(value) -> bool:
    return isinstance(value, (ExtExpr, ScalarExpr, Variable)) or (
        isinstance(value, numbers.Real) and not isinstance(value, bool))


def lift(expr) -> ExtExpr:
    """The extended expression whose gradient is exactly the analytic one."""
    if isinstance(expr, ExtExpr):
        return expr
    expr = as_expr(expr)
    grad = {}
    for v in sorted(expr.variables):
        d = diff(expr, v)
        if not _is_zero_constant(d):
            grad[v.derivative()] = d
    return ExtExpr(expr, grad, frozenset())


def ext(expr, overrides: Optional[Mapping] = None, extras: Optional[Mapping] = None) -> ExtExpr:
    """
    Lifts ``expr`` and then replaces (overrides) or adds (extras) gradient entries.
    Overrides must name derivatives of variables of expr; extras must not.
    """
    base = lift(expr)
    grad = base.gradient()
    nonanalytic = set(base.nonanalytic)
    own_keys = {v.derivative() for v in base.variables}
    for key, value in (overrides or {}).items():
        key = as_variable(key)
        if key not in own_keys:
            raise ValueError(f'override {key} does not correspond to a variable of {base.expr}')
        grad[key] = as_expr(value)
        nonanalytic.add(key)
    for key, value in (extras or {}).items():
        key = as_variable(key)
        if key in own_keys:
            raise ValueError(f'extra entry {key} collides with an analytic entry; use an override')
        grad[key] = as_expr(value)
        nonanalytic.add(key)
    return ExtExpr(base.expr, grad, frozenset(nonanalytic))


def _is_zero_constant(expr: ScalarExpr) -> bool:
    return expr.op == 'c' and expr.value == 0.0


def ext_arith(op: str, *operands) -> ExtExpr:
    """
    Combines extended expressions by ``op``. The value is op(expr...) and every gradient key
    in the union of the operands' keys is propagated by the chain rule,
    g[k] = sum_i d op / d arg_i * g_i[k], with missing keys read as zero.
    """
    lifted = [lift(o) for o in operands]
    exprs = tuple(e.expr for e in lifted)
    node = _make(op, exprs)
    nonanalytic = frozenset().union(*(e.nonanalytic for e in lifted))
    keys = set()
    for e in lifted:
        keys.update(e.gradient_map)
    partials = [None] * len(lifted)
    grad = {}
    for key in sorted(keys):
        total = ZERO
        for i, e in enumerate(lifted):
            g = e.gradient_map.get(key)
            if g is None or _is_zero_constant(g):
                continue
            if partials[i] is None:
                partials[i] = as_expr(partial(op, exprs, i, node))
            total = total + partials[i] * g
        if _is_zero_constant(total) and key not in nonanalytic:
            continue
        grad[key] = total
    return ExtExpr(node, grad, nonanalytic)


def gradient(expr) -> Dict[Variable, ScalarExpr]:
    """Extended gradient of an ExtExpr, or the analytic gradient of a plain expression."""
    return lift(expr).gradient()


def gradient_entry(expr, derivative_variable: Union[str, Variable]) -> ScalarExpr:
    key = as_variable(derivative_variable)
    if isinstance(expr, ExtExpr):
        return expr.gradient_map.get(key, ZERO)
    if key.order == 0:
        raise ValueError(f'{key} is not a derivative variable')
    return diff(as_expr(expr), Variable(key.base_name, key.order - 1))


def jacobian(rows, vars: Sequence[Union[str, Variable]]) -> MatrixExpr:
    """
    Stacks derivative entries: (i, j) is the extended-gradient entry of row i for vars[j]'
    when the row is extended, otherwise d row_i / d vars[j].
    """
    if isinstance(rows, MatrixExpr):
        if rows.cols != 1:
            raise ValueError(f'jacobian rows must form a column, got {rows.rows}x{rows.cols}')
        rows = rows.entries
    vars = [as_variable(v) for v in vars]
    if not vars:
        raise ValueError('jacobian needs at least one variable')
    entries = []
    for row in rows:
        for v in vars:
            if isinstance(row, ExtExpr):
                entries.append(row.gradient_map.get(v.derivative(), ZERO))
            else:
                entries.append(diff(as_expr(row), v))
    return MatrixExpr(len(rows), len(vars), tuple(entries))


def evaluate_gradient(expr, q: Mapping) -> Dict[Variable, float]:
    q = normalize_assignment(q)
    return {k: float(evaluate(g, q)) for k, g in gradient(expr).items()}


def nonanalytic_keys(expr) -> FrozenSet[Variable]:
    return expr.nonanalytic if isinstance(expr, ExtExpr) else frozenset()


def plain(expr) -> ScalarExpr:
    """The value expression without gradient information."""
    return expr.expr if isinstance(expr, ExtExpr) else as_expr(expr)
