"""
Subcommands of the command-line interface. Every command returns its exit code:
0 on success, 1 on a domain error (or a failed check), 2 on a usage error.
"""
import argparse
import asyncio
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.articulation_model import ArticulationModel, HistoryEntry, as_path, direct_constraints, replay
from src.configuration_management import ConfigurationManagement
from src.controller_parameters import RolloutParameters
from src.ekf_experiment import run_dof_sweep, run_ekf_experiment
from src.errors import ArticulationError, FormatError
from src.estimation_parameters import EkfExperimentParameters
from src.expr_compiler import CompiledFunction
from src.expr_io import expr_from_json
from src.ext_expr import ExtExpr, nonanalytic_keys, plain
from src.frames import position_of
from src.kmodel_io import load_kmodel, load_model_file, save_kmodel, write_kmodel_file
from src.model_server import serve
from src.operations import attach_garage_door, create_body, garage_paths
from src.quantities import si
from src.rollout import rollout
from src.scenes import BASE_KINDS, SCENE_NAMES, build_scene
from src.server_parameters import ServerParameters
from src.symexpr import MatrixExpr, Variable, ZERO, diff, evaluate, format_expr, variables

FINITE_DIFFERENCE_STEP = 1e-6
# unbounded variables are sampled in [-pi, pi]
DEFAULT_SAMPLE_RANGE = (-math.pi, math.pi)
# samples keep this fraction of the range away from the limits
SAMPLE_MARGIN = 0.01
GARAGE_SAMPLES = 201
OVERRIDE_NOTE = 'override (skipped analytic check)'


class UsageError(Exception):
    pass


def parse_assignment(text: str) -> Tuple[Variable, float]:
    name, separator, value = text.partition('=')
    if not separator:
        raise argparse.ArgumentTypeError(f'assignments are written name=value, got {text!r}')
    try:
        return Variable.parse(name.strip()), float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f'invalid assignment {text!r}: {exc}') from None


def load_model(path) -> Tuple[List[HistoryEntry], ArticulationModel]:
    history = load_model_file(path)
    return history, replay(history)


def _resolve(path: Optional[str], relative_to: Path) -> Optional[str]:
    """Relative file names in a configuration file refer to the directory of that file."""
    if not path or Path(path).is_absolute() or Path(path).exists():
        return path
    return str(relative_to.parent / path)


def format_matrix(values: np.ndarray) -> str:
    return '\n'.join(' '.join(f'{v:.12g}' for v in row) for row in np.atleast_2d(values))


def cmd_fk(args) -> int:
    _, model = load_model(args.model)
    q = dict(args.set)
    print(format_matrix(evaluate(model.get(args.frame), q)))
    return 0


def sample_ranges(model: ArticulationModel, vars: Sequence[Variable]) -> Tuple[np.ndarray, np.ndarray]:
    """Constant position limits of each variable, the default range where there are none."""
    lower, upper = [], []
    for v in vars:
        lo, hi = -np.inf, np.inf
        for constraint in direct_constraints(model, v):
            if constraint.lb.is_constant and constraint.ub.is_constant:
                lo, hi = max(lo, constraint.lb.value), min(hi, constraint.ub.value)
        lower.append(lo if np.isfinite(lo) else DEFAULT_SAMPLE_RANGE[0])
        upper.append(hi if np.isfinite(hi) else DEFAULT_SAMPLE_RANGE[1])
    return np.array(lower), np.array(upper)


def gradient_check(model: ArticulationModel, entries: Sequence, labels: Sequence[str], samples: int,
                   rng: np.random.Generator) -> Tuple[float, str, List[str], int]:
    """
    Compares analytic derivatives of every entry against central differences at random points.
    Returns the worst relative deviation, where it occurred, the skipped overridden entries and
    the number of comparisons.
    """
    position_vars = sorted({v for e in entries for v in variables(e) if v.order == 0})
    if not position_vars:
        return 0.0, '', [], 0
    skipped, checked, derivatives = [], [], []
    for entry, label in zip(entries, labels):
        overridden = nonanalytic_keys(entry)
        for v in position_vars:
            if v.derivative() in overridden:
                skipped.append(f'{label} d/d{v}: {OVERRIDE_NOTE}')
                continue
            if isinstance(entry, ExtExpr):
                derivative = entry.gradient_map.get(v.derivative(), ZERO)
            else:
                derivative = diff(entry, v)
            checked.append((label, entry, v))
            derivatives.append(derivative)
    if not checked:
        return 0.0, '', skipped, 0
    values = CompiledFunction([plain(e) for e in entries], position_vars)
    analytic = CompiledFunction(derivatives, position_vars)
    index_of_entry = {id(e): i for i, e in enumerate(entries)}
    lower, upper = sample_ranges(model, position_vars)
    margin = SAMPLE_MARGIN * (upper - lower)
    worst, worst_at = 0.0, ''
    h = FINITE_DIFFERENCE_STEP
    for _ in range(samples):
        point = rng.uniform(lower + margin, upper - margin)
        exact = analytic(list(point))
        shifted = {}
        for k, (label, entry, v) in enumerate(checked):
            j = position_vars.index(v)
            if j not in shifted:
                forward, backward = point.copy(), point.copy()
                forward[j] += h
                backward[j] -= h
                shifted[j] = (values(list(forward)) - values(list(backward))) / (2 * h)
            numeric = shifted[j][index_of_entry[id(entry)]]
            deviation = abs(exact[k] - numeric) / max(1.0, abs(exact[k]), abs(numeric))
            if deviation > worst:
                worst, worst_at = deviation, f'{label} d/d{v}'
    return worst, worst_at, skipped, len(checked) * samples


def cmd_gradcheck(args) -> int:
    if not args.tol > 0:
        raise UsageError(f'--tol must be positive, got {args.tol}')
    if args.samples < 1:
        raise UsageError(f'--samples must be positive, got {args.samples}')
    _, model = load_model(args.model)
    if args.frame is not None:
        expr = model.get(args.frame)
        name = str(as_path(args.frame))
    else:
        try:
            expr = expr_from_json(json.loads(args.expr))
        except json.JSONDecodeError as exc:
            raise FormatError(f'--expr is not valid JSON: {exc}') from None
        name = 'expr'
    if isinstance(expr, MatrixExpr):
        entries = list(expr.entries)
        labels = [f'{name}[{i // expr.cols},{i % expr.cols}]' for i in range(len(entries))]
    else:
        entries, labels = [expr], [name]
    worst, worst_at, skipped, comparisons = gradient_check(model, entries, labels, args.samples,
                                                           np.random.default_rng(args.seed))
    for line in skipped:
        print(line)
    print(f'{comparisons} comparisons, worst relative deviation {worst:.3e}'
          + (f' at {worst_at}' if worst_at else '') + f' (tolerance {args.tol:g})')
    if worst > args.tol:
        print('FAIL')
        return 1
    print('PASS')
    return 0


def garage_demo_model(rail_length: float, sharpness: float) -> ArticulationModel:
    return replay([
        ('create world', create_body('world')),
        ('attach garage', attach_garage_door('world', 'garage', rail_length, var='a', lock_var='b', sharpness=sharpness)),
    ])


def garage_demo_rows(rail_length: float = 2.0, sharpness: float = 2000.0, samples: int = GARAGE_SAMPLES):
    """(path rows, lock rows) of the garage-door sweep."""
    model = garage_demo_model(rail_length, sharpness)
    hinge_a, hinge_b = (position_of(model.get(p)) for p in garage_paths(as_path('garage')))
    a, b = Variable('a'), Variable('b')
    path_rows = []
    for value in np.linspace(0.0, rail_length, samples):
        q = {a: float(value), b: 0.0}
        point_a = evaluate(hinge_a, q).ravel()
        point_b = evaluate(hinge_b, q).ravel()
        row = [float(value), point_a[0], point_a[2], point_b[0], point_b[2]]
        for fraction in (0.25, 0.5, 0.75):
            point = point_a + fraction * (point_b - point_a)
            row += [point[0], point[2]]
        path_rows.append(row)
    # the demo door has unit velocity limit, so the upper lock bound is the unlocked indicator
    lock = model.constraints['garage_lock']
    lock_rows = []
    for value in np.linspace(0.0, 1.0, samples):
        unlocked = [float(evaluate(lock.ub, {a: at, b: float(value)})) for at in (rail_length, 0.5 * rail_length)]
        lock_rows.append([float(value), *unlocked])
    return path_rows, lock_rows


def cmd_garage_demo(args) -> int:
    if not args.rail_length > 0 or not args.sharpness > 0:
        raise UsageError('--rail-length and --sharpness must be positive')
    path_rows, lock_rows = garage_demo_rows(args.rail_length, args.sharpness)
    with open(args.output, 'w', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(['a', 'Ax', 'Az', 'Bx', 'Bz', 'P25x', 'P25z', 'P50x', 'P50z', 'P75x', 'P75z'])
        writer.writerows([repr(float(v)) for v in row] for row in path_rows)
        writer.writerow([])
        writer.writerow(['b', 'unlocked_at_a2', 'unlocked_at_a1'])
        writer.writerows([repr(float(v)) for v in row] for row in lock_rows)
    logging.info(f'garage sweep written to {args.output}')
    return 0


def cmd_ekf(args) -> int:
    parameters = EkfExperimentParameters()
    ConfigurationManagement.load_configuration(args.config, parameters)
    if args.seed is not None:
        parameters.seed = args.seed
    if args.output is not None:
        parameters.output_file = args.output
    if args.trials is not None:
        parameters.trials = args.trials
    parameters.model_file = _resolve(parameters.model_file, Path(args.config))
    if not parameters.model_file:
        raise UsageError('the configuration names no model_file')
    _, model = load_model(parameters.model_file)
    if args.dof_sweep:
        for dof, result in run_dof_sweep(model, parameters).items():
            print(f'dof {dof} mean_final_error {result.mean_final_error:.6g} '
                  f'iteration_ms {result.mean_iteration_ms:.4f} +- {result.std_iteration_ms:.4f}')
        return 0
    result = run_ekf_experiment(model, parameters)
    print(f'trials {len(result.trials)} improved {result.improved_fraction:.4f} '
          f'mean_final_error {result.mean_final_error:.6g} '
          f'iteration_ms {result.mean_iteration_ms:.4f} +- {result.std_iteration_ms:.4f}')
    return 0


def cmd_rollout(args) -> int:
    parameters = RolloutParameters()
    ConfigurationManagement.load_configuration(args.config, parameters)
    if args.output is not None:
        parameters.output_file = args.output
    if parameters.scene not in SCENE_NAMES or parameters.base not in BASE_KINDS:
        raise UsageError(f'scene must be one of {SCENE_NAMES} and base one of {BASE_KINDS}')
    setup = build_scene(parameters.scene, parameters.base, si(parameters.control.time_step), parameters.step_limit)
    controller = setup.controller(parameters.controller, parameters.goal or None, parameters.control,
                                  parameters.goal_tolerance)
    q0 = setup.initial_configuration(parameters.controller, parameters.start or None, parameters.control)
    trace = rollout(setup.scene, controller, q0)
    if parameters.output_file:
        trace.write_csv(parameters.output_file)
    object_values = setup.scene.object_values(trace.final_q)
    print(f'status {trace.status} steps {len(trace)} object {" ".join(f"{v:.6g}" for v in object_values)}')
    return 1 if trace.status not in ('GoalReached', 'StepLimit') else 0


def cmd_serve(args) -> int:
    parameters = ServerParameters(args.host, args.port)
    if args.store is not None:
        parameters.store = args.store
    history = load_model_file(args.model) if args.model else []
    try:
        asyncio.run(serve(history, parameters))
    except KeyboardInterrupt:
        logging.info('interrupted')
    return 0


def models_equal(a: ArticulationModel, b: ArticulationModel) -> bool:
    return a.exprs == b.exprs and a.constraints == b.constraints and a.shapes == b.shapes


def cmd_convert(args) -> int:
    history, model = load_model(args.input)
    text = save_kmodel(history)
    if not models_equal(model, replay(load_kmodel(text))):
        raise FormatError(f'the converted history of {args.input} does not replay to the same model')
    write_kmodel_file(args.output, history)
    print(f'wrote {len(history)} operations to {args.output}')
    return 0


def cmd_inspect(args) -> int:
    history, model = load_model(args.model)
    print(f'{len(history)} operations, {len(model.exprs)} paths, {len(model.constraints)} constraints, '
          f'{len(model.shapes)} shapes')
    if args.history:
        for tag, operation in history:
            print(f'  op {tag!r}: {operation.kind}')
    for path in model.paths():
        expr = model.get(path)
        shape = f'{expr.rows}x{expr.cols}' if isinstance(expr, MatrixExpr) else 'scalar'
        used = ' '.join(str(v) for v in sorted(variables(expr)))
        print(f'  path {path} [{shape}] {used}')
    for name, constraint in sorted(model.constraints.items()):
        print(f'  constraint {name}: {format_expr(constraint.lb)} <= {format_expr(constraint.expr)} '
              f'<= {format_expr(constraint.ub)}')
    for name, attachment in sorted(model.shapes.items()):
        print(f'  shape {name} on {attachment.path}: {type(attachment.shape).__name__}')
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='articulation',
                                     description='Symbolic articulation models: kinematics, estimation, control and model exchange.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log debug output')
    commands = parser.add_subparsers(dest='command', required=True)

    fk = commands.add_parser('fk', help='evaluate the pose of a frame')
    fk.add_argument('model', help='URDF or kmodel file')
    fk.add_argument('frame', help='model path of the frame')
    fk.add_argument('--set', action='append', type=parse_assignment, default=[], metavar='VAR=VALUE',
                    help='variable value (repeatable)')
    fk.set_defaults(handler=cmd_fk)

    gradcheck = commands.add_parser('gradcheck', help='compare analytic and finite-difference derivatives')
    gradcheck.add_argument('model', help='URDF or kmodel file')
    target = gradcheck.add_mutually_exclusive_group(required=True)
    target.add_argument('--frame', help='model path whose entries are checked')
    target.add_argument('--expr', help='expression as a JSON AST')
    gradcheck.add_argument('--samples', type=int, default=100)
    gradcheck.add_argument('--tol', type=float, default=1e-5)
    gradcheck.add_argument('--seed', type=int, default=0)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    garage = commands.add_parser('garage-demo', help='write the garage-door sweep as CSV')
    garage.add_argument('output', help='CSV file')
    garage.add_argument('--rail-length', type=float, default=2.0)
    garage.add_argument('--sharpness', type=float, default=2000.0)
    garage.set_defaults(handler=cmd_garage_demo)

    ekf = commands.add_parser('ekf', help='run the EKF tracking experiment')
    ekf.add_argument('config', help='YAML or JSON experiment configuration')
    ekf.add_argument('--seed', type=int)
    ekf.add_argument('--trials', type=int)
    ekf.add_argument('--output', help='CSV file with per-step errors')
    ekf.add_argument('--dof-sweep', action='store_true',
                     help='repeat the experiment observing 1, 2, ... of the frames and report timing per DoF count')
    ekf.set_defaults(handler=cmd_ekf)

    rollout_parser = commands.add_parser('rollout', help='simulate a controller on a scene')
    rollout_parser.add_argument('config', help='YAML or JSON rollout configuration')
    rollout_parser.add_argument('--output', help='trace CSV file')
    rollout_parser.set_defaults(handler=cmd_rollout)

    server = commands.add_parser('serve', help='run the model server')
    server.add_argument('model', nargs='?', help='initial URDF or kmodel file')
    server.add_argument('--host', default='127.0.0.1')
    server.add_argument('--port', type=int, default=7310)
    server.add_argument('--store', help='kmodel file the history is persisted to (default: $KINEVERSE_STORE)')
    server.set_defaults(handler=cmd_serve)

    convert = commands.add_parser('convert', help='convert a URDF or kmodel file to kmodel')
    convert.add_argument('input')
    convert.add_argument('output')
    convert.set_defaults(handler=cmd_convert)

    inspect = commands.add_parser('inspect', help='list the paths, constraints and shapes of a model')
    inspect.add_argument('model')
    inspect.add_argument('--history', action='store_true', help='also list the operation history')
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f'usage error: {exc}', file=sys.stderr)
        return 2
    except ArticulationError as exc:
        logging.error(f'{exc.code}: {exc}')
        print(f'error {exc.code}: {exc}', file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        logging.error(f'{type(exc).__name__}: {exc}')
        print(f'error: {exc}', file=sys.stderr)
        return 1
