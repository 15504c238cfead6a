import logging
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from src.errors import UncoveredVariable
from src.symexpr import NUMERIC_OPS, ScalarExpr, Variable, as_variable
from src.ext_expr import plain


class CompiledFunction:
    """
    Flat instruction tape evaluating a list of expressions for values given in the order of
    ``variables``. Structurally equal subexpressions are evaluated once. The tape is immutable;
    every call works on its own register file, so a compiled function can be shared freely.
    """

    def __init__(self, exprs: Sequence, variables: Sequence[Union[str, Variable]]) -> None:
        self.variables: Tuple[Variable, ...] = tuple(as_variable(v) for v in variables)
        exprs = [plain(e) for e in exprs]
        self.n_outputs = len(exprs)

        slot_of_variable = {v: i for i, v in enumerate(self.variables)}
        covered = set(slot_of_variable)
        for e in exprs:
            missing = e.variables - covered
            if missing:
                raise UncoveredVariable(
                    f'variables {sorted(str(v) for v in missing)} are not among the compiled inputs')

        self._constants: List[float] = []
        self._instructions: List[Tuple] = []
        self._n_inputs = len(self.variables)
        slots: Dict[ScalarExpr, int] = {}
        constant_slots: Dict[float, int] = {}

        def register(e: ScalarExpr) -> int:
            found = slots.get(e)
            if found is not None:
                return found
            if e.op == 'var':
                slot = slot_of_variable[e.variable]
            elif e.op == 'c':
                slot = constant_slots.get(e.value)
                if slot is None:
                    self._constants.append(e.value)
                    slot = self._n_inputs + len(self._constants) - 1
                    constant_slots[e.value] = slot
            else:
                arg_slots = tuple(register(a) for a in e.args)
                self._instructions.append((NUMERIC_OPS[e.op], arg_slots))
                slot = -len(self._instructions)  # placeholder, resolved below
            slots[e] = slot
            return slot

        raw_outputs = [register(e) for e in exprs]
        base = self._n_inputs + len(self._constants)

        def resolve(slot: int) -> int:
            return base + (-slot - 1) if slot < 0 else slot

        self._instructions = [(fn, tuple(resolve(s) for s in args)) for fn, args in self._instructions]
        self._outputs = tuple(resolve(s) for s in raw_outputs)
        self.tape_length = len(self._instructions)
        logging.debug(f'compiled {self.n_outputs} expressions over {self._n_inputs} variables '
                      f'into {self.tape_length} instructions')

    def __call__(self, values) -> np.ndarray:
        values = [float(v) for v in values]
        if len(values) != self._n_inputs:
            raise ValueError(f'expected {self._n_inputs} input values, got {len(values)}')
        registers = values + self._constants
        append = registers.append
        for fn, args in self._instructions:
            if len(args) == 1:
                append(fn(registers[args[0]]))
            else:
                append(fn(registers[args[0]], registers[args[1]]))
        return np.array([registers[s] for s in self._outputs], dtype=float)

    def call_with(self, q) -> np.ndarray:
        """Evaluates with a Variable (or text) keyed assignment."""
        q = {as_variable(k): v for k, v in q.items()}
        return self([q[v] for v in self.variables])


def compile_exprs(exprs: Sequence, variables: Sequence[Union[str, Variable]]) -> CompiledFunction:
    return CompiledFunction(exprs, variables)
