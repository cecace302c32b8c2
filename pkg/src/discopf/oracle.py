"""
oracle.py module computes exact optima of small instances by enumeration, to certify the
approximation scheme: every binary assignment of the inelastic users of a power flow instance,
or every subset of users of a GUFP instance.
"""
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .config import SolverSettings, worker_count
from .conic import RelaxationSpec, SolveOutcome, restore_exactness, solve_relaxation
from .core import InfeasibleError, LimitExceeded, Reporter
from .functions import scoped
from .gufp import FEASIBILITY_TOL, GufpInstance, check_gufp_feasible
from .model import PowerFlowState, RadialInstance, evaluate_objective, rotate_instance, rotation_angle, unrotate_state
from .sweep import FeasibilityReport, check_feasibility

logger = logging.getLogger(__name__)

OPF_LIMIT = 14
GUFP_LIMIT = 20


@dataclass(frozen=True, eq=False)
class OracleResult:
    """
    :param x: best assignment (None when nothing is feasible)
    :param value: best objective value (utility for GUFP)
    :param solved: number of subproblems evaluated
    :param statuses: number of subproblems per outcome
    """
    x: Optional[np.ndarray]
    value: float
    solved: int
    statuses: Mapping[str, int] = field(default_factory=dict)
    state: Optional[PowerFlowState] = None
    report: Optional[FeasibilityReport] = None


def assignment(inst: RadialInstance, mask: int) -> np.ndarray:
    """The x vector selecting the inelastic users of the mask bits (bit i is ``inst.inelastic[i]``)"""
    x = np.zeros(inst.n)
    for i, k in enumerate(inst.inelastic):
        if mask >> i & 1:
            x[k] = 1.0
    return x


@scoped('oracle')
def brute_force_opf(inst: RadialInstance, limit: int = OPF_LIMIT, settings: Optional[SolverSettings] = None,
                    workers: Optional[int] = None, *, reporter: Optional[Reporter] = None) -> OracleResult:
    """
    Solves the fixed-demand relaxation (elastic users free) for every binary assignment of the
    inelastic users, then restores exactness of the best one, falling back to the next best
    when restoration fails. Runs on the rotated instance; the returned state is unrotated.

    :raises LimitExceeded: when there are more than ``limit`` inelastic users
    :raises InfeasibleError: when no assignment is feasible
    """
    count = len(inst.inelastic)
    if count > limit:
        raise LimitExceeded(f"{count} inelastic users exceed the oracle limit {limit}", 2 ** count, 2 ** limit)
    settings = settings or SolverSettings()
    rotation = rotation_angle(inst)
    rotated = rotate_instance(inst, rotation)
    masks = range(2 ** count)

    def solve(mask: int) -> SolveOutcome:
        spec = RelaxationSpec.copf_fixed(assignment(rotated, mask), settings, free=rotated.elastic)
        return solve_relaxation(rotated, spec)

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(solve, masks))
    else:
        outcomes = [solve(mask) for mask in masks]
    statuses = Counter(outcome.status.value for outcome in outcomes)
    logger.info("oracle solved %d assignments: %s", len(outcomes), dict(statuses))
    solved = [mask for mask in masks if outcomes[mask].optimal]
    ranked = sorted(solved, key=lambda mask: (-outcomes[mask].objective, mask))
    for mask in ranked:
        restored = restore_exactness(rotated, outcomes[mask].state.x, settings)
        if restored.optimal and 'restoration_infeasible' not in restored.flags:
            state = unrotate_state(restored.state, rotation)
            report = check_feasibility(inst, state, settings.check_tol)
            return OracleResult(state.x.copy(), evaluate_objective(inst, state), len(outcomes), dict(statuses),
                                state, report)
        if reporter is not None:
            reporter.report(restored.error() if not restored.optimal else InfeasibleError('restoration infeasible'),
                            mask=mask)
        logger.info("restoration of assignment %d failed, trying the next best", mask)
    raise InfeasibleError("no assignment of the inelastic users is feasible")


def iter_subsets(g: GufpInstance, prefix: int = 0, prefix_bits: int = 0) -> Iterator[Tuple[int, float, bool]]:
    """
    Yields (mask, utility, feasible) for every subset of users whose first ``prefix_bits`` users are
    chosen by ``prefix``, visiting the others in Gray code order so each step adds or removes one user.
    """
    table = np.hstack(g.loads) if g.n_users else np.zeros((0, g.d * g.n_edges))
    capacities = np.concatenate(g.capacities) if g.d else np.zeros(0)
    bound = capacities + FEASIBILITY_TOL * (1 + np.abs(capacities))
    utilities = np.asarray(g.utilities, dtype=float)
    mask = prefix
    chosen = [k for k in range(prefix_bits) if prefix >> k & 1]
    current = table[chosen].sum(axis=0) if chosen else np.zeros(table.shape[1])
    utility = float(utilities[chosen].sum()) if chosen else 0.0
    yield mask, utility, bool((current <= bound).all())
    for step in range(1, 2 ** (g.n_users - prefix_bits)):
        k = prefix_bits + (step & -step).bit_length() - 1
        if mask >> k & 1:
            current = current - table[k]
            utility -= utilities[k]
        else:
            current = current + table[k]
            utility += utilities[k]
        mask ^= 1 << k
        yield mask, utility, bool((current <= bound).all())


def _best_subset(g: GufpInstance, prefix: int, prefix_bits: int) -> Tuple[Optional[int], float, int, int]:
    best, value, feasible, seen = None, -math.inf, 0, 0
    for mask, utility, ok in iter_subsets(g, prefix, prefix_bits):
        seen += 1
        if not ok:
            continue
        feasible += 1
        if utility > value or (utility == value and best is not None and mask < best):
            best, value = mask, utility
    return best, value, feasible, seen


def brute_force_gufp(g: GufpInstance, limit: int = GUFP_LIMIT, workers: Optional[int] = None) -> OracleResult:
    """
    Maximum utility feasible subset, ties broken by the smallest mask. The subsets are split by their
    choice of the first users across the workers.

    :raises LimitExceeded: when there are more than ``limit`` users
    """
    if g.n_users > limit:
        raise LimitExceeded(f"{g.n_users} users exceed the oracle limit {limit}", 2 ** g.n_users, 2 ** limit)
    workers = workers or worker_count()
    prefix_bits = min(g.n_users, math.ceil(math.log2(workers))) if workers > 1 else 0
    prefixes = range(2 ** prefix_bits)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts: List[Tuple[Optional[int], float, int, int]] = list(
                executor.map(lambda prefix: _best_subset(g, prefix, prefix_bits), prefixes))
    else:
        parts = [_best_subset(g, prefix, prefix_bits) for prefix in prefixes]
    best, value = None, -math.inf
    for mask, utility, _, _ in parts:
        if mask is not None and (utility > value or (utility == value and mask < best)):
            best, value = mask, utility
    feasible = sum(part[2] for part in parts)
    solved = sum(part[3] for part in parts)
    statuses = {'feasible': feasible, 'infeasible': solved - feasible}
    x = np.array([float(best >> k & 1) for k in range(g.n_users)]) if best is not None else None
    if x is not None and not check_gufp_feasible(g, x):
        logger.warning("incremental load sums disagree with the direct check on mask %d", best)
    return OracleResult(x, value if best is not None else 0.0, solved, statuses)
