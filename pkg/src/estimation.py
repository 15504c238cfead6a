import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.transform import Rotation

from src.articulation_model import ArticulationModel, ModelPath, as_path, constraints_for
from src.errors import NoSymbolicEntries, NonConstantBound, SingularResidualCovariance
from src.estimation_parameters import EkfParameters
from src.expr_compiler import CompiledFunction
from src.ext_expr import plain
from src.frame_kinematics import pull_inside
from src.quantities import si
from src.symexpr import ScalarExpr, Variable, diff

CONDITION_LIMIT = 1e12
ARMIJO_C = 1e-4
R_REGULARIZATION = 1e-9
ITERATION_TOLERANCE = 1e-12


@attr.define(eq=False)
class ObservationModel:
    """
    Observation function h: the symbolic entries of the observed frames (row-major, frames in
    the given order) as functions of the position variables. Constant entries carry no
    information about the state and are left out.
    """
    state_vars: Tuple[Variable, ...]
    h: List[ScalarExpr]
    frame_paths: List[ModelPath]
    entry_index: Dict[Tuple[ModelPath, int, int], int]
    h_function: CompiledFunction
    jacobian_function: CompiledFunction
    pose_functions: Dict[ModelPath, CompiledFunction]

    @property
    def dimension(self) -> int:
        return len(self.h)

    def observe(self, q: np.ndarray) -> np.ndarray:
        return self.h_function(q)

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        return self.jacobian_function(q).reshape(len(self.h), len(self.state_vars))

    def extract(self, poses: Sequence[np.ndarray]) -> np.ndarray:
        """Picks the observed entries out of numeric 4x4 poses of the observed frames."""
        z = np.zeros(len(self.h))
        for (path, row, col), index in self.entry_index.items():
            z[index] = poses[self.frame_paths.index(path)][row, col]
        return z


def build_observation_model(model: ArticulationModel, frame_paths: Sequence) -> ObservationModel:
    paths = [as_path(p) for p in frame_paths]
    h: List[ScalarExpr] = []
    entry_index = {}
    for path in paths:
        frame = model.get(path)
        for row in range(3):
            for col in range(4):
                entry = plain(frame[row, col])
                if entry.variables:
                    entry_index[(path, row, col)] = len(h)
                    h.append(entry)
    if not h:
        raise NoSymbolicEntries(f'frames {[str(p) for p in paths]} do not depend on any variable')
    state_vars = tuple(sorted({v for e in h for v in e.variables if v.order == 0}))
    jacobian_entries = [diff(e, v) for e in h for v in state_vars]
    logging.info(f'observation model over {[str(p) for p in paths]}: {len(h)} symbolic entries, '
                 f'state {[str(v) for v in state_vars]}')
    pose_functions = {path: CompiledFunction([plain(e) for e in model.get(path).entries[:12]], state_vars) for path in paths}
    return ObservationModel(state_vars, h, paths, entry_index, CompiledFunction(h, state_vars),
                            CompiledFunction(jacobian_entries, state_vars), pose_functions)


@attr.define(eq=False)
class EkfState:
    q: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def assignment(self, state_vars: Sequence[Variable]) -> Dict[Variable, float]:
        return dict(zip(state_vars, self.q.tolist()))


def _constant(expr: ScalarExpr, name: str) -> float:
    if expr.variables:
        raise NonConstantBound(f'constraint {name} has a state-dependent bound {expr}')
    return float(expr.value)


def variable_bounds(model: ArticulationModel, state_vars: Sequence[Variable], default_bound: float = math.pi) -> Tuple[np.ndarray, np.ndarray]:
    """Bounds from position constraints on exactly the variable; unconstrained DoF get +-default_bound."""
    lower = np.full(len(state_vars), -default_bound)
    upper = np.full(len(state_vars), default_bound)
    relevant = constraints_for(model, state_vars)
    for i, v in enumerate(state_vars):
        found = False
        for name, constraint in relevant.items():
            if constraint.bare_variable() != v:
                continue
            lb, ub = _constant(constraint.lb, name), _constant(constraint.ub, name)
            if not found:
                lower[i], upper[i] = lb, ub
                found = True
            else:
                lower[i], upper[i] = max(lower[i], lb), min(upper[i], ub)
    return lower, upper


def init_state(model: ArticulationModel, obs_model: ObservationModel, default_bound: float = math.pi) -> EkfState:
    """Starts in the centre of the configuration space with covariance from the half-widths."""
    lower, upper = variable_bounds(model, obs_model.state_vars, default_bound)
    q0 = 0.5 * (lower + upper)
    sigma0 = np.diag((0.5 * (upper - lower)) ** 2)
    return EkfState(q0, sigma0, lower, upper)


def estimate_R(obs_model: ObservationModel, q_nominal: np.ndarray, sigma_t: float, sigma_r: float,
               n_samples: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Observation covariance from noisy samples around the nominal frame poses. Translation noise
    is N(0, sigma_t^2) per axis; rotation noise turns about a uniformly random axis by an angle
    drawn from N(0, sigma_r^2).
    """
    if n_samples < 2:
        raise ValueError(f'estimate_R needs at least 2 samples, got {n_samples}')
    rng = np.random.default_rng() if rng is None else rng
    nominal = nominal_poses(obs_model, q_nominal)
    samples = np.zeros((n_samples, obs_model.dimension))
    for k in range(n_samples):
        samples[k] = obs_model.extract([perturb_pose(pose, sigma_t, sigma_r, rng) for pose in nominal])
    covariance = np.atleast_2d(np.cov(samples, rowvar=False))
    return covariance + R_REGULARIZATION * np.eye(obs_model.dimension)


def nominal_poses(obs_model: ObservationModel, q: np.ndarray) -> List[np.ndarray]:
    """Numeric poses of the observed frames at q."""
    return [np.vstack([obs_model.pose_functions[path](q).reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
            for path in obs_model.frame_paths]


def perturb_pose(pose: np.ndarray, sigma_t: float, sigma_r: float, rng: np.random.Generator) -> np.ndarray:
    noisy = pose.copy()
    noisy[:3, 3] += rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else 0.0
    if sigma_r > 0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.normal(0.0, sigma_r)
        noisy[:3, :3] = Rotation.from_rotvec(axis * angle).as_matrix() @ pose[:3, :3]
    return noisy


def _objective(obs_model: ObservationModel, q: np.ndarray, z: np.ndarray) -> float:
    residual = obs_model.observe(q) - z
    return 0.5 * float(residual @ residual)


def bootstrap(state: EkfState, z0: np.ndarray, obs_model: ObservationModel, steps: int = 10) -> EkfState:
    """
    Moves q towards the first observation by projected gradient descent on 0.5 |h(q) - z0|^2
    with a backtracking (Armijo) line search starting at step 1. The covariance is kept.
    """
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (obs_model.dimension,):
        raise ValueError(f'observation has shape {z0.shape}, expected ({obs_model.dimension},)')
    q = state.clamp(state.q.astype(float))
    for _ in range(steps):
        residual = obs_model.observe(q) - z0
        value = 0.5 * float(residual @ residual)
        linearisation = pull_inside(q, state.lower, state.upper)
        gradient = obs_model.jacobian(linearisation).T @ residual
        if not np.any(gradient):
            break
        step = 1.0
        accepted = False
        for _ in range(40):
            candidate = state.clamp(q - step * gradient)
            if _objective(obs_model, candidate, z0) <= value + ARMIJO_C * float(gradient @ (candidate - q)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        q = candidate
    return EkfState(q, state.sigma.copy(), state.lower, state.upper)


def predict(state: EkfState, qdot: np.ndarray, dt: float) -> EkfState:
    """Constant-velocity prediction q + dt qdot; the process noise is zero."""
    if not dt > 0:
        raise ValueError(f'time step must be positive, got {dt}')
    q = state.clamp(state.q + dt * np.asarray(qdot, dtype=float))
    return EkfState(q, state.sigma.copy(), state.lower, state.upper)


def update(state: EkfState, z: np.ndarray, obs_model: ObservationModel, R: np.ndarray, iterations: int = 1,
           tolerance: float = ITERATION_TOLERANCE) -> EkfState:
    """
    EKF measurement update. With iterations > 1 the observation model is relinearised at the
    updated estimate until the step falls below tolerance (iterated EKF); one iteration is the
    plain EKF update. The covariance uses the Jacobian of the last linearisation.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (obs_model.dimension,) or R.shape != (obs_model.dimension, obs_model.dimension):
        raise ValueError('observation and covariance dimensions do not match the observation model')
    if iterations < 1:
        raise ValueError(f'update needs at least one iteration, got {iterations}')
    prior = state.q
    q = prior
    for _ in range(iterations):
        H = obs_model.jacobian(pull_inside(q, state.lower, state.upper))
        gain = _kalman_gain(H, state.sigma, R)
        innovation = z - obs_model.observe(q) - H @ (prior - q)
        candidate = state.clamp(prior + gain @ innovation)
        step = float(np.linalg.norm(candidate - q))
        q = candidate
        if step < tolerance:
            break
    # Joseph form of (I - K H) Sigma
    reduction = np.eye(len(q)) - gain @ H
    sigma = reduction @ state.sigma @ reduction.T + gain @ R @ gain.T
    sigma = 0.5 * (sigma + sigma.T)
    return EkfState(q, sigma, state.lower, state.upper)


def _kalman_gain(H: np.ndarray, sigma: np.ndarray, R: np.ndarray) -> np.ndarray:
    S = H @ sigma @ H.T + R
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > CONDITION_LIMIT:
        raise SingularResidualCovariance(f'residual covariance is ill conditioned (cond {np.linalg.cond(S):.3g})')
    try:
        factor = cho_factor(S)
    except LinAlgError as exc:
        raise SingularResidualCovariance(f'residual covariance is not positive definite: {exc}') from None
    return cho_solve(factor, H @ sigma).T


class ArticulationEkf:
    """
    Model-agnostic EKF for a set of observed frames. The observation covariance R is estimated
    once at the initial state from the configured noise levels.

    Parameters:
    model: articulation model providing the frames and the position constraints
    frame_paths: frames whose 6D poses are observed
    parameters: EkfParameters instance
    """

    def __init__(self, model: ArticulationModel, frame_paths: Sequence, parameters: EkfParameters = None,
                 rng: Optional[np.random.Generator] = None) -> None:
        self.parameters = EkfParameters() if parameters is None else parameters
        self.rng = np.random.default_rng() if rng is None else rng
        self.obs_model = build_observation_model(model, frame_paths)
        self.state = init_state(model, self.obs_model, si(self.parameters.default_bound))
        self.R = estimate_R(self.obs_model, self.state.q, si(self.parameters.translation_noise),
                            si(self.parameters.rotation_noise), self.parameters.noise_samples, self.rng)
        self.initialized = False

    @property
    def state_vars(self) -> Tuple[Variable, ...]:
        return self.obs_model.state_vars

    def observe_poses(self, poses: Sequence[np.ndarray]) -> np.ndarray:
        return self.obs_model.extract(poses)

    def step(self, z: np.ndarray, qdot: Optional[np.ndarray] = None) -> EkfState:
        """Bootstraps on the first observation, then runs predict and update."""
        if not self.initialized:
            self.state = bootstrap(self.state, z, self.obs_model, self.parameters.bootstrap_steps)
            self.initialized = True
        if qdot is None:
            qdot = np.zeros(len(self.state_vars))
        self.state = predict(self.state, qdot, si(self.parameters.time_step))
        self.state = update(self.state, z, self.obs_model, self.R, self.parameters.update_iterations)
        return self.state
