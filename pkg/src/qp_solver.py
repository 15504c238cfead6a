"""
Dense convex QP solver for the small per-step problems of the controllers.

    minimize    1/2 x' W x - g' x       (W diagonal, nonnegative)
    subject to  lower <= x <= upper
                lb_i <= a_i' x <= ub_i               (hard rows)
                lb_j <= a_j' x - s_j <= ub_j         (soft rows, penalty 1/2 w_j s_j^2)

The problem is solved by operator splitting (ADMM) on the stacked form l <= A y <= u with
y = (x, s). Every ``check_interval`` iterations the current active set is polished by a
direct KKT solve; a polished point satisfying all KKT conditions is returned.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lu_factor, lu_solve

from src.errors import Infeasible, IterationLimit

# bounds beyond this magnitude count as absent
INFINITY = 1e20


def validate_positive(instance, attribute, value):
    if not value > 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def validate_relaxation(instance, attribute, value):
    if not 0 < value < 2:
        raise ValueError(f"{attribute.name} must lie in (0, 2), got {value}")


@attr.define
class QpSettings:
    tolerance: float = attr.field(default=1e-6, validator=validate_positive, converter=float)
    max_iterations: int = attr.field(default=4000, validator=validate_positive, converter=int)
    sigma: float = attr.field(default=1e-6, validator=validate_positive, converter=float)
    alpha: float = attr.field(default=1.6, validator=validate_relaxation, converter=float)
    rho: float = attr.field(default=0.1, validator=validate_positive, converter=float)
    check_interval: int = attr.field(default=25, validator=validate_positive, converter=int)
    infeasibility_tolerance: float = attr.field(default=1e-5, validator=validate_positive, converter=float)
    polish_regularization: float = attr.field(default=1e-9, validator=validate_positive, converter=float)
    polish_refinement: int = attr.field(default=3, converter=int)


def _vector(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=float)).copy()


def validate_weights(instance, attribute, value):
    if value.ndim != 1:
        raise ValueError(f'{attribute.name} must be a vector')
    if np.any(value < 0) or not np.all(np.isfinite(value)):
        raise ValueError(f'{attribute.name} must be finite and nonnegative, got {value}')


@attr.define(eq=False)
class QProblem:
    weights: np.ndarray = attr.field(converter=_vector, validator=validate_weights)
    linear: np.ndarray = attr.field(converter=_vector)
    lower: np.ndarray = attr.field(default=None)
    upper: np.ndarray = attr.field(default=None)
    rows: List[Tuple[np.ndarray, float, float]] = attr.field(factory=list)
    soft_rows: List[Tuple[np.ndarray, float, float, float]] = attr.field(factory=list)

    def __attrs_post_init__(self):
        n = len(self.weights)
        if self.linear.shape != (n,):
            raise ValueError(f'linear term has shape {self.linear.shape}, expected ({n},)')
        self.lower = np.full(n, -np.inf) if self.lower is None else _vector(self.lower)
        self.upper = np.full(n, np.inf) if self.upper is None else _vector(self.upper)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError(f'box bounds must have shape ({n},)')

    @classmethod
    def zeros(cls, n: int) -> 'QProblem':
        return cls(np.zeros(n), np.zeros(n))

    @property
    def n(self) -> int:
        return len(self.weights)

    def _row(self, a) -> np.ndarray:
        a = _vector(a)
        if a.shape != (self.n,):
            raise ValueError(f'constraint row has shape {a.shape}, expected ({self.n},)')
        return a

    def add_row(self, a: Sequence[float], lb: float = -np.inf, ub: float = np.inf) -> None:
        if lb > ub:
            raise ValueError(f'row bounds are inverted: {lb} > {ub}')
        self.rows.append((self._row(a), float(lb), float(ub)))

    def add_soft_row(self, a: Sequence[float], lb: float, ub: float, weight: float) -> None:
        if lb > ub:
            raise ValueError(f'row bounds are inverted: {lb} > {ub}')
        if not weight > 0:
            raise ValueError(f'soft rows need a positive weight, got {weight}')
        self.soft_rows.append((self._row(a), float(lb), float(ub), float(weight)))

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.weights * x) - self.linear @ x)


def _stacked(problem: QProblem):
    n, k = problem.n, len(problem.soft_rows)
    total = n + k
    P = np.diag(np.concatenate([problem.weights, [w for *_, w in problem.soft_rows]]))
    q = np.concatenate([-problem.linear, np.zeros(k)])
    blocks = [np.hstack([np.eye(n), np.zeros((n, k))])]
    lower = [problem.lower]
    upper = [problem.upper]
    if problem.rows:
        blocks.append(np.hstack([np.array([a for a, _, _ in problem.rows]), np.zeros((len(problem.rows), k))]))
        lower.append([lb for _, lb, _ in problem.rows])
        upper.append([ub for _, _, ub in problem.rows])
    for j, (a, lb, ub, _) in enumerate(problem.soft_rows):
        row = np.zeros((1, total))
        row[0, :n] = a
        row[0, n + j] = -1.0
        blocks.append(row)
        lower.append([lb])
        upper.append([ub])
    A = np.vstack(blocks)
    l = np.clip(np.concatenate([np.asarray(b, dtype=float) for b in lower]), -INFINITY, INFINITY)
    u = np.clip(np.concatenate([np.asarray(b, dtype=float) for b in upper]), -INFINITY, INFINITY)
    return P, q, A, l, u


def _residuals(P, q, A, x, z, y) -> Tuple[float, float]:
    Ax = A @ x
    primal = float(np.max(np.abs(Ax - z), initial=0.0))
    dual = float(np.max(np.abs(P @ x + q + A.T @ y), initial=0.0))
    return primal, dual


def _polish(P, q, A, l, u, z, y, settings: QpSettings) -> Optional[np.ndarray]:
    """Solves the equality-constrained problem of the guessed active set; None if it is not optimal."""
    low = (z - l < -y) & (l > -INFINITY)
    upp = (u - z < y) & (u < INFINITY)
    active = np.flatnonzero(low | upp)
    targets = np.where(upp[active], u[active], l[active])
    n, m = P.shape[0], len(active)
    A_act = A[active]
    exact = np.block([[P, A_act.T], [A_act, np.zeros((m, m))]])
    delta = settings.polish_regularization
    regularized = exact + np.diag(np.concatenate([np.full(n, delta), np.full(m, -delta)]))
    rhs = np.concatenate([-q, targets])
    try:
        factor = lu_factor(regularized, check_finite=True)
        solution = lu_solve(factor, rhs)
        for _ in range(settings.polish_refinement):
            solution += lu_solve(factor, rhs - exact @ solution)
    except (LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(solution)):
        return None
    x = solution[:n]
    multipliers = np.zeros(len(l))
    multipliers[active] = solution[n:]
    tol = settings.tolerance
    Ax = A @ x
    if np.any(Ax < l - tol) or np.any(Ax > u + tol):
        return None
    one_sided = low[active] != upp[active]
    if np.any((multipliers[active] > tol) & low[active] & one_sided):
        return None
    if np.any((multipliers[active] < -tol) & upp[active] & one_sided):
        return None
    if np.max(np.abs(P @ x + q + A.T @ multipliers), initial=0.0) > tol:
        return None
    return x


def _primal_infeasible(delta_y: np.ndarray, A, l, u, tolerance: float) -> bool:
    norm = float(np.max(np.abs(delta_y), initial=0.0))
    if norm <= tolerance:
        return False
    v = delta_y / norm
    support = float(u @ np.maximum(v, 0.0) + l @ np.minimum(v, 0.0))
    return support < -tolerance and float(np.max(np.abs(A.T @ v), initial=0.0)) < tolerance


def _factor(P, A, rho_vector, sigma):
    return cho_factor(P + sigma * np.eye(P.shape[0]) + A.T @ (rho_vector[:, None] * A))


def solve_qp(problem: QProblem, settings: QpSettings = None) -> np.ndarray:
    """
    Returns the minimizer x of the problem (slack values are dropped).

    Raises Infeasible when the hard constraints admit no point and IterationLimit when the
    tolerance is not reached within ``settings.max_iterations``.
    """
    settings = QpSettings() if settings is None else settings
    n = problem.n
    if n == 0:
        return np.zeros(0)
    if np.any(problem.lower > problem.upper):
        raise Infeasible(f'box bounds are empty for variables {np.flatnonzero(problem.lower > problem.upper).tolist()}')
    P, q, A, l, u = _stacked(problem)
    equality = (u - l) <= 1e-12
    rho = settings.rho
    rho_vector = np.where(equality, 1e3 * rho, rho)
    factor = _factor(P, A, rho_vector, settings.sigma)
    x = np.zeros(P.shape[0])
    z = np.zeros(A.shape[0])
    y = np.zeros(A.shape[0])
    alpha = settings.alpha
    for iteration in range(1, settings.max_iterations + 1):
        x_tilde = cho_solve(factor, settings.sigma * x - q + A.T @ (rho_vector * z - y))
        z_relaxed = alpha * (A @ x_tilde) + (1.0 - alpha) * z
        x = alpha * x_tilde + (1.0 - alpha) * x
        z_next = np.clip(z_relaxed + y / rho_vector, l, u)
        y_next = y + rho_vector * (z_relaxed - z_next)
        delta_y = y_next - y
        z, y = z_next, y_next

        if iteration % settings.check_interval and iteration != settings.max_iterations:
            continue
        polished = _polish(P, q, A, l, u, z, y, settings)
        if polished is not None:
            logging.debug(f'QP solved by polishing after {iteration} iterations')
            return polished[:n]
        primal, dual = _residuals(P, q, A, x, z, y)
        if primal <= settings.tolerance and dual <= settings.tolerance:
            logging.debug(f'QP converged after {iteration} iterations')
            return x[:n]
        if _primal_infeasible(delta_y, A, l, u, settings.infeasibility_tolerance):
            raise Infeasible(f'hard constraints are contradictory (certificate after {iteration} iterations)')
        # rho adaptation from the normalized residual ratio
        primal_scale = max(float(np.max(np.abs(A @ x))), float(np.max(np.abs(z))), 1e-12)
        dual_scale = max(float(np.max(np.abs(P @ x))), float(np.max(np.abs(A.T @ y))), float(np.max(np.abs(q))), 1e-12)
        ratio = np.sqrt((primal / primal_scale) / (dual / dual_scale + 1e-12) + 1e-12)
        new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
        if new_rho > 5.0 * rho or new_rho < 0.2 * rho:
            rho = new_rho
            rho_vector = np.where(equality, 1e3 * rho, rho)
            factor = _factor(P, A, rho_vector, settings.sigma)
    raise IterationLimit(f'QP did not converge within {settings.max_iterations} iterations')
