import logging
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from src.articulation_model import ArticulationModel, as_path
from src.expr_compiler import CompiledFunction
from src.ext_expr import ExtExpr, jacobian, plain
from src.symexpr import MatrixExpr, Variable, as_expr, as_variable, variables

# fraction of a bound interval by which linearisation points are pulled inside the bounds
INTERIOR_FRACTION = 1e-7


def pull_inside(values: np.ndarray, lower: np.ndarray, upper: np.ndarray, fraction: float = INTERIOR_FRACTION) -> np.ndarray:
    """
    Clamps values into [lower + f w, upper - f w] with w the interval width. Closed-form models
    (e.g. square roots reaching zero at a limit) have unbounded derivatives exactly at the bounds.
    """
    width = np.where(np.isfinite(upper - lower), upper - lower, 0.0)
    return np.clip(values, lower + fraction * width, upper - fraction * width)


def _pose_entries(frame: MatrixExpr) -> List:
    if frame.shape != (4, 4):
        raise ValueError(f'frames are 4x4 transforms, got {frame.shape}')
    return list(frame.entries[:12])


class FrameKinematics:
    """
    Compiled world pose of one model frame together with its velocity Jacobian with respect to
    a list of decision variables. Jacobian columns use extended-gradient entries where the
    frame carries them, so a column for a wheel variable maps wheel velocity to frame motion.
    """

    def __init__(self, model: ArticulationModel, path, decision_variables: Sequence[Union[str, Variable]]) -> None:
        self.path = as_path(path)
        self.decision_variables = tuple(as_variable(v) for v in decision_variables)
        entries = _pose_entries(model.get(self.path))
        jac = jacobian(MatrixExpr.column(entries), self.decision_variables) if self.decision_variables else None
        outputs = [plain(e) for e in entries]
        if jac is not None:
            outputs += [plain(e) for e in jac.entries]
        self.inputs = tuple(sorted(frozenset().union(*(variables(e) for e in outputs))))
        self._function = CompiledFunction(outputs, self.inputs)
        logging.debug(f'frame {self.path}: {len(self.inputs)} inputs, {self._function.tape_length} instructions')

    def _input_values(self, q: Mapping[Variable, float]) -> List[float]:
        return [q[v] for v in self.inputs]

    def pose(self, q: Mapping[Variable, float]) -> np.ndarray:
        values = self._function(self._input_values(q))
        return np.vstack([values[:12].reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])

    def pose_and_jacobian(self, q: Mapping[Variable, float]) -> Tuple[np.ndarray, np.ndarray]:
        """World pose (4x4) and d(3x4 pose entries)/dt per unit decision velocity, shape (3, 4, n)."""
        values = self._function(self._input_values(q))
        pose = np.vstack([values[:12].reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
        n = len(self.decision_variables)
        return pose, values[12:].reshape(3, 4, n) if n else np.zeros((3, 4, 0))

    def point_jacobian(self, q: Mapping[Variable, float], local: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """World position of a point fixed in the frame and its Jacobian (3 x n)."""
        pose, d_pose = self.pose_and_jacobian(q)
        homogeneous = np.append(np.asarray(local, dtype=float), 1.0)
        return pose[:3] @ homogeneous, np.einsum('ijk,j->ik', d_pose, homogeneous)

    def twist_jacobian(self, q: Mapping[Variable, float]) -> Tuple[np.ndarray, np.ndarray]:
        """Pose and the 6 x n Jacobian of (origin velocity, angular velocity) in world coordinates."""
        pose, d_pose = self.pose_and_jacobian(q)
        rotation = pose[:3, :3]
        n = d_pose.shape[2]
        angular = np.zeros((3, n))
        for j in range(n):
            omega = d_pose[:, :3, j] @ rotation.T
            angular[:, j] = 0.5 * np.array([omega[2, 1] - omega[1, 2], omega[0, 2] - omega[2, 0], omega[1, 0] - omega[0, 1]])
        return pose, np.vstack([d_pose[:, 3, :], angular])


class KinematicIntegrator:
    """
    Integrates commanded decision-variable velocities into a full assignment. Variables that are
    only driven through extended gradients (the planar pose of a differential drive) are stored
    as extended expressions of a bare variable; their rates are the gradient entries for the
    decision variables.
    """

    def __init__(self, model: ArticulationModel, decision_variables: Sequence[Union[str, Variable]]) -> None:
        self.decision_variables = tuple(as_variable(v) for v in decision_variables)
        keys = [v.derivative() for v in self.decision_variables]
        self.driven: List[Variable] = []
        rows = []
        for path in model.paths():
            expr = model.get(path)
            if not isinstance(expr, ExtExpr) or expr.expr.op != 'var':
                continue
            driven = expr.expr.variable
            if driven in self.decision_variables or driven in self.driven:
                continue
            if not any(k in expr.nonanalytic for k in keys):
                continue
            self.driven.append(driven)
            rows.extend(expr.gradient_map.get(k, 0.0) for k in keys)
        if self.driven:
            rows = [as_expr(r) for r in rows]
            self.inputs = tuple(sorted(frozenset().union(*(r.variables for r in rows))))
            self._rates = CompiledFunction(rows, self.inputs)
        else:
            self.inputs = ()
            self._rates = None

    def rates(self, q: Mapping[Variable, float]) -> np.ndarray:
        """Matrix mapping decision velocities to driven-variable velocities (len(driven) x n)."""
        n = len(self.decision_variables)
        if self._rates is None:
            return np.zeros((0, n))
        return self._rates([q[v] for v in self.inputs]).reshape(len(self.driven), n)

    def step(self, q: Mapping[Variable, float], velocities: Sequence[float], dt: float) -> Dict[Variable, float]:
        velocities = np.asarray(velocities, dtype=float)
        updated = dict(q)
        if self.driven:
            # midpoint rule for the driven variables
            rates = self.rates(q)
            half = dict(q)
            for v, rate in zip(self.driven, rates @ velocities):
                half[v] = q[v] + 0.5 * dt * rate
            for v, velocity in zip(self.decision_variables, velocities):
                half[v] = q[v] + 0.5 * dt * velocity
            for v, rate in zip(self.driven, self.rates(half) @ velocities):
                updated[v] = q[v] + dt * rate
        for v, velocity in zip(self.decision_variables, velocities):
            updated[v] = q[v] + dt * velocity
        return updated
