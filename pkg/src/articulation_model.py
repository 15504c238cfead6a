import logging
import re
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import attr

from src.errors import ArticulationError, DuplicateName, DuplicateTag, OperationContractError, UnknownPath, UnknownTag
from src.symexpr import ScalarExpr, Variable, as_expr, as_variable, variables

_SEGMENT = re.compile(r'^[A-Za-z0-9_]+$')


def validate_segments(instance, attribute, value):
    if not value:
        raise ValueError('paths need at least one segment')
    for segment in value:
        if not isinstance(segment, str) or not _SEGMENT.match(segment):
            raise ValueError(f'path segment {segment!r} must match [A-Za-z0-9_]+')


@attr.define(frozen=True, order=True)
class ModelPath:
    """Dot-separated name of a model entry, e.g. ``kitchen.drawer.handle``."""
    segments: Tuple[str, ...] = attr.field(converter=tuple, validator=validate_segments)

    @classmethod
    def parse(cls, text: Union[str, 'ModelPath']) -> 'ModelPath':
        if isinstance(text, ModelPath):
            return text
        if not isinstance(text, str):
            raise TypeError(f'cannot interpret {text!r} as a model path')
        return cls(tuple(text.split('.')))

    @property
    def name(self) -> str:
        return self.segments[-1]

    @property
    def parent(self) -> Optional['ModelPath']:
        return ModelPath(self.segments[:-1]) if len(self.segments) > 1 else None

    def child(self, segment: str) -> 'ModelPath':
        return ModelPath(self.segments + (segment,))

    def sibling(self, segment: str) -> 'ModelPath':
        return ModelPath(self.segments[:-1] + (segment,))

    def startswith(self, prefix: 'ModelPath') -> bool:
        return self.segments[:len(prefix.segments)] == prefix.segments

    def __str__(self) -> str:
        return '.'.join(self.segments)


def as_path(value) -> ModelPath:
    return ModelPath.parse(value)


@attr.define(frozen=True)
class Constraint:
    """Dual inequality lb <= expr <= ub; bounds may be expressions of the model state."""
    lb: ScalarExpr = attr.field(converter=as_expr)
    ub: ScalarExpr = attr.field(converter=as_expr)
    expr: ScalarExpr = attr.field(converter=as_expr)

    @property
    def variables(self) -> FrozenSet[Variable]:
        return self.expr.variables

    def bare_variable(self) -> Optional[Variable]:
        """The constrained variable when the constrained expression is exactly one variable."""
        return self.expr.variable if self.expr.op == 'var' else None


@attr.define
class ModelDelta:
    """Entries produced by one operation application."""
    exprs: Dict[ModelPath, Any] = attr.field(factory=dict)
    constraints: Dict[str, Constraint] = attr.field(factory=dict)
    shapes: Dict[str, Any] = attr.field(factory=dict)


@attr.define
class ArticulationModel:
    """
    Named expression store plus constraint store. ``shapes`` holds collision shape
    attachments by name and ``provenance`` maps ("path"|"constraint"|"shape", name) to the
    tag of the operation that last wrote the entry.
    """
    exprs: Dict[ModelPath, Any] = attr.field(factory=dict)
    constraints: Dict[str, Constraint] = attr.field(factory=dict)
    shapes: Dict[str, Any] = attr.field(factory=dict)
    provenance: Dict[Tuple[str, str], str] = attr.field(factory=dict)

    def get(self, path) -> Any:
        path = as_path(path)
        try:
            return self.exprs[path]
        except KeyError:
            raise UnknownPath(f'no expression stored at {path}') from None

    def has(self, path) -> bool:
        return as_path(path) in self.exprs

    def paths(self) -> List[ModelPath]:
        return sorted(self.exprs)

    def variables(self) -> FrozenSet[Variable]:
        """All variables appearing in stored expressions and constraints."""
        found = set()
        for e in self.exprs.values():
            found |= variables(e)
        for c in self.constraints.values():
            found |= c.variables | c.lb.variables | c.ub.variables
        return frozenset(found)

    def copy(self) -> 'ArticulationModel':
        return ArticulationModel(dict(self.exprs), dict(self.constraints), dict(self.shapes), dict(self.provenance))

    def with_delta(self, delta: ModelDelta, tag: str) -> 'ArticulationModel':
        model = self.copy()
        for path, expr in delta.exprs.items():
            model.exprs[path] = expr
            model.provenance[('path', str(path))] = tag
        for name, constraint in delta.constraints.items():
            if name in model.constraints:
                raise DuplicateName(f'constraint {name!r} already exists', tag)
            model.constraints[name] = constraint
            model.provenance[('constraint', name)] = tag
        for name, shape in delta.shapes.items():
            if name in model.shapes:
                raise DuplicateName(f'shape {name!r} already exists', tag)
            model.shapes[name] = shape
            model.provenance[('shape', name)] = tag
        return model


@attr.define(frozen=True)
class Operation:
    """A model-building step: the registered operation ``kind`` applied to ``args``."""
    kind: str
    args: Dict[str, Any] = attr.field(factory=dict, converter=dict)


def validate_placement_kind(instance, attribute, value):
    if value not in ('append', 'before', 'replace'):
        raise ValueError(f"placement must be 'append', 'before' or 'replace', got {value!r}")


@attr.define(frozen=True)
class Placement:
    kind: str = attr.field(default='append', validator=validate_placement_kind)
    tag: Optional[str] = None

    @classmethod
    def append(cls) -> 'Placement':
        return cls('append')

    @classmethod
    def before(cls, tag: str) -> 'Placement':
        return cls('before', tag)

    @classmethod
    def replace(cls, tag: str) -> 'Placement':
        return cls('replace', tag)


@attr.define(frozen=True)
class ChangeSet:
    """Differences between the model before and after one apply_operation call."""
    changed_paths: FrozenSet[ModelPath] = frozenset()
    removed_paths: FrozenSet[ModelPath] = frozenset()
    changed_constraints: FrozenSet[str] = frozenset()
    removed_constraints: FrozenSet[str] = frozenset()
    changed_shapes: FrozenSet[str] = frozenset()
    removed_shapes: FrozenSet[str] = frozenset()

    @property
    def is_empty(self) -> bool:
        return not (self.changed_paths or self.removed_paths or self.changed_constraints
                    or self.removed_constraints or self.changed_shapes or self.removed_shapes)


HistoryEntry = Tuple[str, Operation]


def _diff_stores(old: Mapping, new: Mapping) -> Tuple[frozenset, frozenset]:
    changed = frozenset(k for k, v in new.items() if k not in old or old[k] is not v and old[k] != v)
    removed = frozenset(k for k in old if k not in new)
    return changed, removed


def compute_change_set(old: ArticulationModel, new: ArticulationModel) -> ChangeSet:
    changed_paths, removed_paths = _diff_stores(old.exprs, new.exprs)
    changed_constraints, removed_constraints = _diff_stores(old.constraints, new.constraints)
    changed_shapes, removed_shapes = _diff_stores(old.shapes, new.shapes)
    return ChangeSet(changed_paths, removed_paths, changed_constraints, removed_constraints, changed_shapes, removed_shapes)


def apply_single(model: ArticulationModel, tag: str, operation: Operation) -> ArticulationModel:
    """Applies one operation to a model and returns the new model; the input is not modified."""
    from src.operations import operation_type
    try:
        op_type = operation_type(operation.kind)
        for path in op_type.input_paths(operation.args):
            if path not in model.exprs:
                raise UnknownPath(f'operation input {path} does not exist')
        delta = op_type.apply(model, operation.args)
        declared = op_type.outputs(operation.args)
        produced = (frozenset(delta.exprs), frozenset(delta.constraints), frozenset(delta.shapes))
        if produced != declared:
            raise OperationContractError(f'{operation.kind} produced {_describe(produced)} but declared {_describe(declared)}')
        return model.with_delta(delta, tag)
    except ArticulationError as exc:
        if exc.tag is None:
            exc.tag = tag
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise OperationContractError(f'{operation.kind} rejected its arguments: {exc}', tag) from exc


def _describe(outputs) -> str:
    paths, constraints, shapes = outputs
    return f'paths {sorted(map(str, paths))}, constraints {sorted(constraints)}, shapes {sorted(shapes)}'


class ModelBuilder:
    """
    Owns an articulation model and the tagged operation history it was built from.
    The model is only changed through apply_operation, which keeps the invariant
    model == replay(history). A snapshot of the model before each operation is kept so
    insertions and replacements re-apply only the affected suffix.
    """

    def __init__(self, history: Iterable[HistoryEntry] = ()) -> None:
        self.model = ArticulationModel()
        self._history: List[HistoryEntry] = []
        self._snapshots: List[ArticulationModel] = []
        for tag, operation in history:
            self.apply_operation(tag, operation)

    @property
    def history(self) -> Tuple[HistoryEntry, ...]:
        return tuple(self._history)

    @property
    def tags(self) -> List[str]:
        return [tag for tag, _ in self._history]

    def index_of(self, tag: str) -> int:
        for i, (existing, _) in enumerate(self._history):
            if existing == tag:
                return i
        raise UnknownTag(f'no operation tagged {tag!r}')

    def apply_operation(self, tag: str, operation: Operation, placement: Placement = Placement()) -> ChangeSet:
        """
        Inserts ``operation`` under ``tag`` and brings the model up to date.

        Parameters:
        tag: unique semantic tag such as "connect base arm"
        operation: the operation to apply
        placement: append (default), before(tag) or replace(tag)

        Returns the change set relative to the previous model. On error the builder is left
        unchanged and the raised error carries the tag of the failing operation.
        """
        if not isinstance(tag, str) or not tag:
            raise ValueError('operation tags must be nonempty strings')
        existing_tags = set(self.tags)
        if placement.kind == 'append':
            if tag in existing_tags:
                raise DuplicateTag(f'tag {tag!r} is already in the history', tag)
            index = len(self._history)
            new_history = self._history + [(tag, operation)]
        elif placement.kind == 'before':
            index = self.index_of(placement.tag)
            if tag in existing_tags:
                raise DuplicateTag(f'tag {tag!r} is already in the history', tag)
            new_history = self._history[:index] + [(tag, operation)] + self._history[index:]
        else:
            index = self.index_of(placement.tag)
            if tag != placement.tag and tag in existing_tags:
                raise DuplicateTag(f'tag {tag!r} is already in the history', tag)
            new_history = self._history[:index] + [(tag, operation)] + self._history[index + 1:]

        model = self._snapshots[index] if index < len(self._snapshots) else self.model
        new_snapshots = self._snapshots[:index]
        for entry_tag, entry_op in new_history[index:]:
            new_snapshots.append(model)
            model = apply_single(model, entry_tag, entry_op)

        changes = compute_change_set(self.model, model)
        self.model = model
        self._history = new_history
        self._snapshots = new_snapshots
        logging.debug(f'applied {operation.kind} as {tag!r} ({placement.kind}); '
                      f'{len(changes.changed_paths)} paths changed, {len(new_history) - index} operations re-applied')
        return changes


def replay(history: Iterable[HistoryEntry]) -> ArticulationModel:
    """Applies all operations in order, starting from the empty model."""
    model = ArticulationModel()
    for tag, operation in history:
        model = apply_single(model, tag, operation)
    return model


def constraints_for(model: ArticulationModel, vars: Iterable) -> Dict[str, Constraint]:
    """Constraints whose constrained expression shares at least one variable with ``vars``."""
    wanted = frozenset(as_variable(v) for v in vars)
    if not wanted:
        return {}
    return {name: c for name, c in sorted(model.constraints.items()) if c.expr.variables & wanted}


def constraints_for_controlled(model: ArticulationModel, position_vars: Iterable, max_order: int) -> Dict[str, Constraint]:
    """constraints_for with every variable expanded to all derivative orders 0..max_order."""
    if max_order < 0:
        raise ValueError(f'max_order must be non-negative, got {max_order}')
    expanded = {as_variable(v).with_order(order) for v in position_vars for order in range(max_order + 1)}
    return constraints_for(model, expanded)


def direct_constraints(model: ArticulationModel, var) -> List[Constraint]:
    """Constraints on exactly the given variable (not on expressions of it)."""
    var = as_variable(var)
    return [c for _, c in sorted(model.constraints.items()) if c.bare_variable() == var]


def parts_moved_by(model: ArticulationModel, vars: Iterable) -> FrozenSet[ModelPath]:
    """Paths whose stored expression depends on any of ``vars``."""
    wanted = frozenset(as_variable(v) for v in vars)
    if not wanted:
        return frozenset()
    return frozenset(path for path, expr in model.exprs.items() if variables(expr) & wanted)
