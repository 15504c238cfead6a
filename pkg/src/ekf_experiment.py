import csv
import logging
import time
from pathlib import Path
from typing import Dict, List

import attr
import numpy as np

from src.articulation_model import ArticulationModel
from src.estimation import ArticulationEkf, bootstrap, init_state, nominal_poses, perturb_pose, predict, update
from src.estimation_parameters import EkfExperimentParameters
from src.quantities import si


@attr.define
class EkfTrialSummary:
    trial: int
    initial_error: float
    final_error: float

    @property
    def improved(self) -> bool:
        return self.final_error < self.initial_error


@attr.define
class EkfExperimentResult:
    state_vars: List[str]
    rows: List[Dict[str, float]] = attr.field(factory=list)
    trials: List[EkfTrialSummary] = attr.field(factory=list)
    iteration_ms: List[float] = attr.field(factory=list)

    @property
    def improved_fraction(self) -> float:
        return float(np.mean([t.improved for t in self.trials])) if self.trials else 0.0

    @property
    def mean_final_error(self) -> float:
        return float(np.mean([t.final_error for t in self.trials])) if self.trials else 0.0

    @property
    def mean_iteration_ms(self) -> float:
        return float(np.mean(self.iteration_ms)) if self.iteration_ms else 0.0

    @property
    def std_iteration_ms(self) -> float:
        return float(np.std(self.iteration_ms)) if self.iteration_ms else 0.0

    def write_csv(self, path) -> None:
        columns = ['trial', 'step'] + [f'error_{name}' for name in self.state_vars] + ['iteration_ms']
        with open(Path(path), 'w', newline='') as file:
            writer = csv.DictWriter(file, fieldnames=columns)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def run_ekf_experiment(model: ArticulationModel, parameters: EkfExperimentParameters) -> EkfExperimentResult:
    """
    Monte-Carlo tracking experiment of a static object: per trial a ground-truth configuration is
    drawn uniformly within the bounds, noisy pose observations are generated from it, and the
    filter (bootstrap on the first observation, then predict + update per observation) is run
    from the centre of the configuration space. Errors are mean absolute per-variable errors;
    timing covers predict + update.
    """
    rng = np.random.default_rng(parameters.seed)
    filter_parameters = parameters.filter
    ekf = ArticulationEkf(model, parameters.observed_frames, filter_parameters, rng)
    obs_model = ekf.obs_model
    sigma_t = si(filter_parameters.translation_noise)
    sigma_r = si(filter_parameters.rotation_noise)
    dt = si(filter_parameters.time_step)
    names = [str(v) for v in obs_model.state_vars]
    result = EkfExperimentResult(names)
    zero_velocity = np.zeros(len(names))

    for trial in range(parameters.trials):
        state = init_state(model, obs_model, si(filter_parameters.default_bound))
        truth = rng.uniform(state.lower, state.upper)
        true_poses = nominal_poses(obs_model, truth)
        initial_error = float(np.mean(np.abs(state.q - truth)))
        for step in range(parameters.observations_per_trial):
            z = obs_model.extract([perturb_pose(pose, sigma_t, sigma_r, rng) for pose in true_poses])
            if step == 0:
                state = bootstrap(state, z, obs_model, filter_parameters.bootstrap_steps)
            started = time.perf_counter()
            state = predict(state, zero_velocity, dt)
            state = update(state, z, obs_model, ekf.R, filter_parameters.update_iterations)
            elapsed_ms = 1000.0 * (time.perf_counter() - started)
            result.iteration_ms.append(elapsed_ms)
            row = {'trial': trial, 'step': step, 'iteration_ms': elapsed_ms}
            row.update({f'error_{name}': abs(float(q - t)) for name, q, t in zip(names, state.q, truth)})
            result.rows.append(row)
        final_error = float(np.mean(np.abs(state.q - truth)))
        result.trials.append(EkfTrialSummary(trial, initial_error, final_error))
        logging.debug(f'trial {trial}: error {initial_error:.4g} -> {final_error:.4g}')

    logging.info(f'EKF experiment: {parameters.trials} trials, {result.improved_fraction:.1%} improved, '
                 f'mean final error {result.mean_final_error:.4g}, '
                 f'iteration {result.mean_iteration_ms:.3f} +- {result.std_iteration_ms:.3f} ms')
    if parameters.output_file:
        result.write_csv(parameters.output_file)
    return result


def run_dof_sweep(model: ArticulationModel, parameters: EkfExperimentParameters) -> Dict[int, EkfExperimentResult]:
    """
    Repeats the experiment on the same model while observing growing prefixes of the observed
    frames, keyed by the number of estimated DoF. A prefix that adds no DoF is skipped.
    """
    results: Dict[int, EkfExperimentResult] = {}
    for count in range(1, len(parameters.observed_frames) + 1):
        variant = attr.evolve(parameters, observed_frames=list(parameters.observed_frames[:count]), output_file=None)
        result = run_ekf_experiment(model, variant)
        dof = len(result.state_vars)
        if dof in results:
            continue
        results[dof] = result
        logging.info(f'{dof} DoF: iteration {result.mean_iteration_ms:.3f} ms')
    return results
