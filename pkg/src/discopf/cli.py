"""
cli.py module implements the ``discopf`` command line: validate, relax, exact, qptas, gufp and gen.

Every command prints a short summary and, with ``--result PATH``, writes its result document.
Exit codes: 0 success, 1 infeasible, 2 input error, 3 numerical failure.
"""
import argparse
import logging
import math
import sys
import time
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

from . import __version__
from .config import BACKENDS, SolverSettings
from .conic import RelaxationSpec, solve_relaxation
from .core import Reporter, SchemaError, _is_validation_error
from .fileio import (KIND_GUFP, document_kind, load_document, parse_gufp, parse_instance, read_instance,
                     result_document, write_document, write_instance)
from .generate import PROFILES, generate_instance
from .gufp import check_gufp_feasible, solve_gufp
from .handler import (EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, Handler, log_failure,
                      print_failure)
from .model import (REQUIRED_ASSUMPTIONS, demand_phase_spread, evaluate_objective, rotate_instance, rotation_angle,
                    unrotate_state, validate_instance)
from .oracle import GUFP_LIMIT, OPF_LIMIT, brute_force_gufp, brute_force_opf
from .qptas import DEFAULT_MAX_GUESSES, GuessMode, QptasConfig, parse_mode, qptas_solve, reduce_to_gufp
from .sweep import check_feasibility

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

STATUS_EXIT: Dict[str, int] = {
    'ok': EXIT_OK,
    'optimal': EXIT_OK,
    'feasible': EXIT_OK,
    'infeasible': EXIT_INFEASIBLE,
    'assumptions_failed': EXIT_INPUT,
    'numerical_failure': EXIT_NUMERICAL,
}

Command = Callable[[argparse.Namespace, SolverSettings, Reporter], Dict[str, Any]]


def _settings(args: argparse.Namespace) -> SolverSettings:
    return SolverSettings.from_env(backend=args.backend, check_tol=args.tol)


def run_validate(args: argparse.Namespace, settings: SolverSettings, reporter: Reporter) -> Dict[str, Any]:
    inst = read_instance(args.file)
    report = validate_instance(inst)
    return result_document(
        'validate', 'ok' if report.passed(*REQUIRED_ASSUMPTIONS) else 'assumptions_failed',
        flags=report.flags, violations=list(report.violations), data_range=report.data_range,
        phase_spread_deg=math.degrees(demand_phase_spread(inst)),
        nodes=inst.m, users=inst.n, inelastic=len(inst.inelastic), topology_line=inst.topology.is_line,
    )


def run_relax(args: argparse.Namespace, settings: SolverSettings, reporter: Reporter) -> Dict[str, Any]:
    inst = read_instance(args.file)
    rotation = rotation_angle(inst)
    outcome = solve_relaxation(rotate_instance(inst, rotation), RelaxationSpec.rcopf(settings))
    if not outcome.optimal:
        return result_document('relax', outcome.status.value, message=outcome.message)
    state = unrotate_state(outcome.state, rotation)
    report = check_feasibility(inst, state, settings.check_tol)
    return result_document('relax', 'optimal', evaluate_objective(inst, state), state, report,
                           exact=report.verdict, rotation=rotation.phi)


def run_exact(args: argparse.Namespace, settings: SolverSettings, reporter: Reporter) -> Dict[str, Any]:
    inst = read_instance(args.file)
    result = brute_force_opf(inst, args.limit or OPF_LIMIT, settings, args.workers, reporter=reporter)
    return result_document('exact', 'optimal', result.value, result.state, result.report,
                           solved=result.solved, statuses=dict(result.statuses))


def run_qptas(args: argparse.Namespace, settings: SolverSettings, reporter: Reporter) -> Dict[str, Any]:
    inst = read_instance(args.file)
    mode, limit = parse_mode(args.mode)
    extra: Dict[str, Any] = {}
    hint = None
    if mode is GuessMode.ORACLE:
        oracle = brute_force_opf(inst, args.limit or OPF_LIMIT, settings, args.workers, reporter=reporter)
        hint = oracle.x
        extra['oracle_value'] = oracle.value
    cfg = QptasConfig(args.eps, mode, limit, hint, max_guesses=args.max_guesses or DEFAULT_MAX_GUESSES,
                      enumerate_profiles=args.enumerate_profiles, settings=settings, workers=args.workers)
    result = qptas_solve(inst, cfg, reporter=reporter)
    if 'oracle_value' in extra and extra['oracle_value'] > 0:
        extra['ratio'] = result.value / extra['oracle_value']
    return result_document(
        'qptas', 'feasible' if result.report.verdict else 'numerical_failure', result.value, result.state,
        result.report, eps=args.eps, eps_internal=result.eps, beta=result.beta, upper_bound=result.upper_bound,
        guess_count=result.guess_estimate, guesses_processed=result.guesses_processed,
        guesses_feasible=result.guesses_feasible, best_guess=result.best_guess, flags=list(result.flags),
        rotation=result.rotation.phi, **extra,
    )


def run_gufp(args: argparse.Namespace, settings: SolverSettings, reporter: Reporter) -> Dict[str, Any]:
    document = load_document(args.file)
    if document_kind(document) == KIND_GUFP:
        g = parse_gufp(document)
    else:
        inst = parse_instance(document)
        rotated = rotate_instance(inst, rotation_angle(inst))
        baseline = solve_relaxation(rotated, RelaxationSpec.rcopf(settings))
        if not baseline.optimal:
            raise baseline.error()
        g = reduce_to_gufp(rotated, baseline.state.x)
    solution = solve_gufp(g)
    extra: Dict[str, Any] = {}
    if args.exact:
        oracle = brute_force_gufp(g, args.limit or GUFP_LIMIT, args.workers)
        extra.update(oracle_value=oracle.value, oracle_x=None if oracle.x is None else oracle.x.tolist(),
                     statuses=dict(oracle.statuses))
    return result_document(
        'gufp', 'feasible', solution.value, x=solution.x.tolist(), relaxation_value=solution.relaxation_value,
        fractional_support=solution.fractional_support, verified=check_gufp_feasible(g, solution.x),
        dimensions=g.d, edges=g.n_edges, users=g.n_users, **extra,
    )


def run_gen(args: argparse.Namespace, settings: SolverSettings, reporter: Reporter) -> Dict[str, Any]:
    inst = generate_instance(args.seed, args.m, args.ni, args.ne, args.profile)
    write_instance(inst, args.output)
    return result_document('gen', 'ok', output=str(args.output), seed=args.seed, nodes=inst.m, users=inst.n)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--result', metavar='PATH', help="write the result document to PATH")
    common.add_argument('--tol', type=float, help="feasibility check tolerance")
    common.add_argument('--backend', choices=BACKENDS, help="conic solver backend")
    common.add_argument('--workers', type=int, help="worker threads (default: DISCOPF_WORKERS or 1)")
    common.add_argument('--log-level', choices=LOG_LEVELS, default='WARNING')
    common.add_argument('--limit', type=int, help="size limit of the brute-force oracles")
    common.add_argument('--max-guesses', type=int, help="guess count above which full mode refuses to run")

    parser = argparse.ArgumentParser(prog='discopf', description="Optimal power flow with discrete demands")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    validate = commands.add_parser('validate', parents=[common], help="check the operating assumptions")
    validate.add_argument('file')
    validate.set_defaults(run=run_validate)

    relax = commands.add_parser('relax', parents=[common], help="solve the convex relaxation")
    relax.add_argument('file')
    relax.set_defaults(run=run_relax)

    exact = commands.add_parser('exact', parents=[common], help="enumerate every assignment")
    exact.add_argument('file')
    exact.set_defaults(run=run_exact)

    qptas = commands.add_parser('qptas', parents=[common], help="run the approximation scheme")
    qptas.add_argument('file')
    qptas.add_argument('--eps', type=float, required=True)
    qptas.add_argument('--mode', default='full', help="full, capped:N or oracle")
    qptas.add_argument('--enumerate-profiles', action='store_true')
    qptas.set_defaults(run=run_qptas)

    gufp = commands.add_parser('gufp', parents=[common], help="solve a GUFP instance (or the one of a line)")
    gufp.add_argument('file')
    gufp.add_argument('--exact', action='store_true', help="also enumerate every subset")
    gufp.set_defaults(run=run_gufp)

    gen = commands.add_parser('gen', parents=[common], help="draw a random line instance")
    gen.add_argument('--seed', type=int, required=True)
    gen.add_argument('--m', type=int, required=True)
    gen.add_argument('--ni', type=int, required=True)
    gen.add_argument('--ne', type=int, default=0)
    gen.add_argument('--profile', choices=sorted(PROFILES), default='default')
    gen.add_argument('-o', '--output', required=True)
    gen.set_defaults(run=run_gen)
    return parser


def summarize(document: Dict[str, Any]) -> str:
    lines = [f"{document['command']}: {document['status']}"]
    if document.get('objective') is not None:
        lines.append(f"  objective: {document['objective']:.6g}")
    residuals = document.get('residuals')
    if residuals:
        worst = max(residuals['scaled'], key=residuals['scaled'].__getitem__, default=None)
        if worst is not None:
            lines.append(f"  worst residual: {worst}={residuals['scaled'][worst]:.3g} (tol {residuals['tol']:g})")
    for key in ('oracle_value', 'ratio', 'guess_count', 'guesses_feasible', 'flags', 'violations', 'output'):
        if document.get(key) not in (None, [], ()):
            lines.append(f"  {key}: {document[key]}")
    lines.append(f"  wall time: {document.get('wall_time', 0.0):.3f}s")
    return '\n'.join(lines)


def _numerical_failure(command: str, error: Exception) -> Tuple[Dict[str, Any], int]:
    """Errors the pipeline does not raise itself (solver or linear algebra breakdowns)"""
    logger.debug("%s failed unexpectedly", command, exc_info=error)
    print(f"discopf {command}: numerical failure: {type(error).__name__}: {error}", file=sys.stderr)
    return result_document(command, 'numerical_failure', error=f"{type(error).__name__}: {error}"), EXIT_NUMERICAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_INPUT if error.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)
    verbose = getattr(logging, args.log_level) <= logging.INFO
    handler = Handler(log_failure if verbose else print_failure)
    reporter = Reporter('discopf')
    command: Command = args.run
    started = time.perf_counter()
    document: Optional[Dict[str, Any]] = None
    try:
        with handler:
            document = command(args, _settings(args), reporter)
    except (ValueError, TypeError) as error:
        if _is_validation_error(error):
            print(f"discopf {args.command}: error: {error}", file=sys.stderr)
            document = result_document(args.command, 'invalid', error=str(error))
            code = EXIT_INPUT
        else:
            document, code = _numerical_failure(args.command, error)
    except Exception as error:
        document, code = _numerical_failure(args.command, error)
    else:
        if handler.captured is not None:
            if isinstance(handler.captured.error, SchemaError):
                for failure in handler.captured.error.failures:
                    handler(failure)
            code = handler.exit_code
            document = result_document(args.command, 'error', error=str(handler.captured.error),
                                       source=handler.captured.source, exit_code=code)
        else:
            code = STATUS_EXIT.get(document['status'], EXIT_NUMERICAL)
    handler.from_reporter(reporter)
    logger.info("%s finished with status %s (exit %d)", args.command, document['status'], code)
    document['wall_time'] = time.perf_counter() - started
    if args.result:
        write_document(document, args.result)
    print(summarize(document))
    return code
