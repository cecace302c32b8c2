"""
qptas.py module implements the approximation scheme for line networks: the reduction of the power
flow constraints to a 3-dimensional GUFP instance, the enumeration of guesses (large demands and
peak levels per group), the restricted relaxation solved for every guess, the per-group rounding and
the final exactness restoration.

Three enumeration modes are available:

- ``FULL``: every guess, refused up front when the exact count exceeds ``QptasConfig.max_guesses``,
- ``CAPPED``: a deterministic prefix of the full enumeration,
- ``ORACLE``: the single guess induced by a reference solution (typically the brute-force optimum).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import chain, combinations, combinations_with_replacement
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from .config import SolverSettings, worker_count
from .conic import PackingRow, RelaxationSpec, SolveOutcome, restore_exactness, solve_relaxation
from .core import AssumptionError, Failure, LimitExceeded, NumericalFailure, Reporter, TopologyError, _invalid
from .functions import scoped
from .gufp import (EdgePartition, GroupKey, GufpInstance, Grouping, LevelGrid, SeparableStepFunction,
                   best_profile_rounding, build_levels, build_partition, group_users, interval_extremes,
                   modify_loss_bound, modify, reciprocal_epsilon, restricted_profile_from_fractional)
from .model import (RadialInstance, PowerFlowState, RotationRecord, SIGN_TOL, evaluate_objective,
                    rotate_instance, rotation_angle, unrotate_state)
from .socp import SolverStatus
from .sweep import (FeasibilityReport, SweepMode, check_feasibility, forward_backward_sweep, loss_drop,
                    voltage_sensitivity)

logger = logging.getLogger(__name__)

DEFAULT_GROWTH = 2.0
DEFAULT_MAX_GUESSES = 100_000


class GuessMode(Enum):
    FULL = 'full'
    CAPPED = 'capped'
    ORACLE = 'oracle'


@dataclass(frozen=True, eq=False)
class QptasConfig:
    """
    :param eps: target approximation parameter in (0, 1)
    :param mode: guess enumeration mode
    :param limit: number of guesses processed in ``CAPPED`` mode
    :param hint: reference assignment (one entry per user) inducing the ``ORACLE`` guess
    :param growth: growth constant of the edge partition
    :param max_guesses: ``FULL`` mode refuses to start above this many guesses
    :param enumerate_profiles: round every group under all restricted profiles instead of the one
        built from the fractional solution
    :param profile_limit: cap on the number of profiles per group in that mode
    :param workers: number of guess processing threads (``DISCOPF_WORKERS`` when None)
    """
    eps: float
    mode: GuessMode = GuessMode.FULL
    limit: Optional[int] = None
    hint: Optional[Sequence[float]] = None
    growth: float = DEFAULT_GROWTH
    max_guesses: int = DEFAULT_MAX_GUESSES
    enumerate_profiles: bool = False
    profile_limit: int = 10_000
    settings: SolverSettings = field(default_factory=SolverSettings)
    workers: Optional[int] = None

    def __post_init__(self) -> None:
        if __debug__:
            if not 0 < self.eps < 1:
                raise _invalid(ValueError, f"eps must lie in (0, 1), got {self.eps}")
            if self.mode is GuessMode.CAPPED and (self.limit is None or self.limit < 1):
                raise _invalid(ValueError, "capped mode needs a positive guess limit")
            if self.mode is GuessMode.ORACLE and self.hint is None:
                raise _invalid(ValueError, "oracle mode needs a reference assignment")
            if self.growth <= 1:
                raise _invalid(ValueError, "the growth constant must exceed 1")


def parse_mode(text: str) -> Tuple[GuessMode, Optional[int]]:
    """Parses ``full``, ``oracle`` or ``capped:N``"""
    name, _, count = text.partition(':')
    try:
        mode = GuessMode(name)
    except ValueError:
        raise _invalid(ValueError, f"unknown mode {text!r}, expected full, capped:N or oracle") from None
    if mode is GuessMode.CAPPED:
        if not count.isdigit() or int(count) < 1:
            raise _invalid(ValueError, f"capped mode needs a positive count, got {text!r}")
        return mode, int(count)
    if count:
        raise _invalid(ValueError, f"mode {name!r} takes no count")
    return mode, None


# -------------------------------------------------------------------------------------------------- reduction

def reduce_to_gufp(inst: RadialInstance, x_prime: Sequence[float]) -> GufpInstance:
    """
    Builds the 3-GUFP instance of the inelastic users of a line (GUFP user i is ``inst.inelastic[i]``).

    Dimension 0 (forward order) is the voltage drop weight Re(Σ_{shared path} conj(z) s_k), with base
    functions the cumulative resistance and reactance; dimensions 1 and 2 (reversed order) are the
    real and reactive demand carried by each line. Capacities are the loads of ``x_prime``.

    :raises TopologyError: when the network is not a line
    :raises AssumptionError: when a reactance or a demand part is negative
    """
    nodes = inst.topology.line_nodes
    m = inst.m
    edges = [j - 1 for j in nodes]
    resistance = inst.z.real[edges]
    reactance = inst.z.imag[edges]
    if (resistance < -SIGN_TOL).any() or (reactance < -SIGN_TOL).any():
        raise AssumptionError("the reduction needs nonnegative resistances and reactances")
    position = {j: i for i, j in enumerate(nodes)}
    drop_base = np.maximum(np.vstack([np.cumsum(resistance), np.cumsum(reactance)]), 0.0)
    unit = np.ones((1, m))
    demands = []
    for k in inst.inelastic:
        s = inst.s[k]
        if s.real < -SIGN_TOL or s.imag < -SIGN_TOL:
            raise AssumptionError(f"user {inst.users[k].name} has a demand outside the first quadrant")
        p = position[inst.users[k].node]
        real, imag = max(s.real, 0.0), max(s.imag, 0.0)
        demands.append((
            SeparableStepFunction((real, imag), 0, p),
            SeparableStepFunction((real,), m - 1 - p, m - 1 - p),
            SeparableStepFunction((imag,), m - 1 - p, m - 1 - p),
        ))
    utilities = np.array([inst.users[k].utility for k in inst.inelastic], dtype=float)
    names = tuple(inst.users[k].name for k in inst.inelastic)
    bases = (drop_base, unit, unit.copy())
    structure = GufpInstance(bases, (False, True, True), utilities, tuple(demands),
                             tuple(np.zeros(m) for _ in bases), names)
    x = np.asarray(x_prime, dtype=float)[list(inst.inelastic)]
    capacities = tuple(structure.load(x, r) if structure.n_users else np.zeros(m) for r in range(3))
    return GufpInstance(bases, (False, True, True), utilities, tuple(demands), capacities, names)


class LeafKnapsackRow(NamedTuple):
    """2 Σ_k rho_kj x_k (load) against v0 - v_min_j - loss drop (capacity) at a leaf j"""
    leaf: int
    load: float
    capacity: float
    slack: float


def leaf_knapsack_bound(inst: RadialInstance, x_bar: Sequence[float],
                        baseline: PowerFlowState) -> List[LeafKnapsackRow]:
    """
    With the currents of the baseline kept, the voltage floor of a leaf is a single knapsack
    inequality over the demands; reports its slack (<= 0 when the floor holds) for every leaf.
    Meaningful when the voltage floors do not decrease away from the root.
    """
    x = np.asarray(x_bar, dtype=float)
    rho = voltage_sensitivity(inst)
    drops = loss_drop(inst, baseline.ell)
    rows = []
    for leaf in inst.topology.leaves:
        e = leaf - 1
        load = 2 * float(x @ rho[:, e]) if inst.n else 0.0
        capacity = inst.v0 - inst.v_min[e] - drops[e]
        rows.append(LeafKnapsackRow(leaf, load, capacity, load - capacity))
    return rows


# ---------------------------------------------------------------------------------------------------- guesses

@dataclass(frozen=True)
class GroupGuess:
    """Guessed large users (GUFP indices) and peak level indices (per dimension, per interval) of one group"""
    key: GroupKey
    large: Tuple[int, ...]
    peaks: Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True)
class GuessConfig:
    index: int
    groups: Tuple[GroupGuess, ...] = ()


@dataclass(frozen=True, eq=False)
class ResolvedGroup:
    """A group guess with its peak values h, smallness thresholds B and small users S"""
    key: GroupKey
    large: Tuple[int, ...]
    peaks: Tuple[np.ndarray, ...]
    thresholds: Tuple[np.ndarray, ...]
    small: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class QptasContext:
    """Everything about the (rotated) instance that does not depend on the guess"""
    instance: RadialInstance
    rotation: RotationRecord
    gufp: GufpInstance
    partition: EdgePartition
    grouping: Grouping
    levels: LevelGrid
    eps: float
    beta: float
    upper: Tuple[np.ndarray, ...]
    lower: Tuple[np.ndarray, ...]
    baseline: SolveOutcome

    @property
    def users(self) -> Tuple[int, ...]:
        """Instance index of every GUFP user"""
        return self.instance.inelastic

    @property
    def large_cap(self) -> int:
        """Largest size of a guessed large set"""
        return math.floor(self.partition.total / self.eps ** 2)


def compute_beta(partition: EdgePartition, patterns: Optional[Sequence[Sequence[int]]] = None) -> float:
    """
    max over the possible sets H of dimensions a group can be active on of max_{r in H} 2(2 C_r + alpha P_r),
    alpha = Σ_r P_r / Σ_{r in H} P_r.
    """
    dims = range(len(partition.starts))
    if patterns is None:
        patterns = [subset for size in range(1, len(dims) + 1) for subset in combinations(dims, size)]
    beta = 0.0
    for active in patterns:
        if not active:
            continue
        alpha = partition.total / sum(partition.count(r) for r in active)
        beta = max(beta, max(2 * (2 * partition.growth[r] + alpha * partition.count(r)) for r in active))
    return beta


def internal_epsilon(eps_prime: float, beta: float) -> float:
    """eps' / (3 (2 beta + 1)) rounded down to a reciprocal integer"""
    return reciprocal_epsilon(eps_prime / (3 * (2 * beta + 1)))


def prepare(inst: RadialInstance, cfg: QptasConfig) -> QptasContext:
    """
    Rotates the instance, solves its relaxation, reduces it to 3-GUFP and builds the partition, the
    level grid and the groups.

    :raises InfeasibleError: when even the relaxation has no feasible point
    """
    rotation = rotation_angle(inst)
    rotated = rotate_instance(inst, rotation)
    if not rotated.topology.is_line:
        raise TopologyError("the approximation scheme needs a line network")
    baseline = solve_relaxation(rotated, RelaxationSpec.rcopf(cfg.settings))
    if not baseline.optimal:
        raise baseline.error()
    g = reduce_to_gufp(rotated, baseline.state.x)
    partition = build_partition(g, cfg.growth)
    beta = compute_beta(partition)
    eps = internal_epsilon(cfg.eps, beta)
    grouping = group_users(g, eps, partition)
    levels = build_levels(g, eps, grouping.survivors)
    upper, lower = interval_extremes(g, partition)
    logger.info("prepared line of %d edges: %d groups, partition sizes %s, eps=%g, beta=%g", rotated.m,
                len(grouping.groups), [partition.count(r) for r in range(g.d)], eps, beta)
    return QptasContext(rotated, rotation, g, partition, grouping, levels, eps, beta, tuple(upper), tuple(lower),
                        baseline)


def _peak_sequences(ctx: QptasContext) -> List[Callable[[], Iterator[Tuple[int, ...]]]]:
    return [
        (lambda r=r: combinations_with_replacement(range(len(ctx.levels.levels[r])), ctx.partition.count(r)))
        for r in range(ctx.gufp.d)
    ]


def _lazy_product(factories: Sequence[Callable[[], Iterator]]) -> Iterator[tuple]:
    if not factories:
        yield ()
        return
    for head in factories[0]():
        for tail in _lazy_product(factories[1:]):
            yield (head,) + tail


def _group_choices(ctx: QptasContext, key: GroupKey) -> Iterator[GroupGuess]:
    members = ctx.grouping.groups[key]
    for size in range(min(len(members), ctx.large_cap) + 1):
        for large in combinations(members, size):
            for peaks in _lazy_product(_peak_sequences(ctx)):
                yield GroupGuess(key, large, peaks)


def estimate_guess_count(ctx: QptasContext) -> int:
    """Exact number of guesses of the full enumeration"""
    peaks = 1
    for r in range(ctx.gufp.d):
        peaks *= math.comb(len(ctx.levels.levels[r]) + ctx.partition.count(r) - 1, ctx.partition.count(r))
    total = 1
    for members in ctx.grouping.groups.values():
        subsets = sum(math.comb(len(members), size) for size in range(min(len(members), ctx.large_cap) + 1))
        total *= subsets * peaks
    return total


def oracle_guess(ctx: QptasContext, hint: Sequence[float]) -> GuessConfig:
    """
    The guess induced by a reference assignment: its large users of every group and, per interval,
    the smallest level covering the peak of its small users.
    """
    x = np.asarray(hint, dtype=float)
    chosen = {i for i, k in enumerate(ctx.users) if x[k] >= 0.5}
    groups = []
    for key, members in ctx.grouping.groups.items():
        taken = [i for i in members if i in chosen]
        peak = [ctx.upper[r][taken].sum(axis=0) for r in range(ctx.gufp.d)]
        large = tuple(i for i in taken
                      if any((ctx.lower[r][i] > ctx.eps ** 2 * peak[r]).any() for r in range(ctx.gufp.d)))
        peaks = []
        for r in range(ctx.gufp.d):
            rest = peak[r] - ctx.upper[r][list(large)].sum(axis=0)
            peaks.append(tuple(ctx.levels.round_up(r, max(float(value), 0.0)) for value in rest))
        groups.append(GroupGuess(key, large, tuple(peaks)))
    return GuessConfig(0, tuple(groups))


def enumerate_guesses(ctx: QptasContext, cfg: QptasConfig) -> Iterator[GuessConfig]:
    """
    Yields the guesses of the configured mode, in a fixed order (group, large set size, level indices).

    :raises LimitExceeded: in full mode, when the guess count exceeds ``cfg.max_guesses``
    """
    if cfg.mode is GuessMode.ORACLE:
        yield oracle_guess(ctx, cfg.hint)
        return
    if cfg.mode is GuessMode.FULL:
        count = estimate_guess_count(ctx)
        if count > cfg.max_guesses:
            raise LimitExceeded(f"full enumeration needs {count} guesses (limit {cfg.max_guesses})",
                                count, cfg.max_guesses)
    keys = list(ctx.grouping.groups)
    factories = [(lambda key=key: _group_choices(ctx, key)) for key in keys]
    for index, groups in enumerate(_lazy_product(factories)):
        if cfg.mode is GuessMode.CAPPED and index >= cfg.limit:
            return
        yield GuessConfig(index, groups)


def resolve_guess(ctx: QptasContext, guess: GuessConfig) -> List[ResolvedGroup]:
    """Peak values, B^{p,r} = eps^2 (h^{p,r} + Σ_{large} f_max^{p,r}) and the small users of every group"""
    resolved = []
    for group in guess.groups:
        large = set(group.large)
        peaks = tuple(ctx.levels.levels[r][list(group.peaks[r])] for r in range(ctx.gufp.d))
        thresholds = tuple(
            ctx.eps ** 2 * (peaks[r] + ctx.upper[r][list(group.large)].sum(axis=0)) for r in range(ctx.gufp.d)
        )
        small = tuple(
            i for i in ctx.grouping.groups[group.key]
            if i not in large and all((ctx.lower[r][i] <= thresholds[r]).all() for r in range(ctx.gufp.d))
        )
        resolved.append(ResolvedGroup(group.key, group.large, peaks, thresholds, small))
    return resolved


# --------------------------------------------------------------------------------------------------- solving

@dataclass(frozen=True, eq=False)
class GuessOutcome:
    index: int
    status: SolverStatus
    value: float = -math.inf
    x: Optional[np.ndarray] = None
    sweep_feasible: bool = True
    removed: int = 0


def restricted_spec(ctx: QptasContext, resolved: Sequence[ResolvedGroup], cfg: QptasConfig,
                    index: int = 0) -> RelaxationSpec:
    """Large users pinned to 1, inelastic users outside every small set to 0, peaks of the small users bounded"""
    large: Set[int] = set(chain.from_iterable(group.large for group in resolved))
    small: Set[int] = set(chain.from_iterable(group.small for group in resolved))
    fixed = {}
    for i, k in enumerate(ctx.users):
        if i in large:
            fixed[k] = 1.0
        elif i not in small:
            fixed[k] = 0.0
    packing = []
    for q, group in enumerate(resolved):
        if not group.small:
            continue
        for r in range(ctx.gufp.d):
            for p, peak in enumerate(group.peaks[r]):
                coefficients = {ctx.users[i]: float(ctx.upper[r][i, p]) for i in group.small}
                packing.append(PackingRow(coefficients, float(peak), f'q{q}.r{r}.p{p}'))
    return RelaxationSpec.restricted(fixed, packing, cfg.settings, guess=index)


def round_groups(ctx: QptasContext, resolved: Sequence[ResolvedGroup], x_prime: np.ndarray,
                 cfg: QptasConfig) -> Tuple[np.ndarray, int]:
    """
    Assembles x_bar from a solution of the restricted relaxation: rounded small users, pinned large
    users, other inelastic users dropped and elastic users kept.
    """
    x_tilde = np.asarray(x_prime, dtype=float)[list(ctx.users)]
    x_bar = np.asarray(x_prime, dtype=float).copy()
    large = set(chain.from_iterable(group.large for group in resolved))
    for i, k in enumerate(ctx.users):
        x_bar[k] = 1.0 if i in large else 0.0
    removed = 0
    for group in resolved:
        if not group.small:
            continue
        if not ctx.grouping.active[group.key]:
            for i in group.small:
                x_bar[ctx.users[i]] = 1.0
            continue
        if cfg.enumerate_profiles:
            result = best_profile_rounding(group.small, x_tilde, group.peaks, ctx.gufp, ctx.partition, ctx.eps,
                                           cfg.profile_limit)
        else:
            profile = restricted_profile_from_fractional(group.peaks, ctx.eps, x_tilde, group.small, ctx.gufp,
                                                         ctx.partition)
            result = modify(group.small, x_tilde, group.peaks, profile, ctx.gufp, ctx.partition, ctx.eps,
                            group.key, strict=True)
        if logger.isEnabledFor(logging.DEBUG):
            lost = float(ctx.gufp.utilities[list(group.small)] @ (x_tilde[list(group.small)]
                                                                  - result.x_hat[list(group.small)]))
            bound = modify_loss_bound(ctx.grouping, group.key, ctx.partition, group.peaks, group.thresholds, ctx.eps)
            logger.debug("group %s lost utility %g (allowed %g)", group.key, lost, bound)
        for i in group.small:
            x_bar[ctx.users[i]] = result.x_hat[i]
        removed += len(result.removed)
    return x_bar, removed


def process_guess(ctx: QptasContext, cfg: QptasConfig, guess: GuessConfig,
                  reporter: Optional[Reporter] = None) -> GuessOutcome:
    """Solves the restricted relaxation of one guess, rounds it and re-solves with the rounded demands fixed"""
    resolved = resolve_guess(ctx, guess)
    stage = reporter(f'guess[{guess.index}]') if reporter is not None else None
    outcome = solve_relaxation(ctx.instance, restricted_spec(ctx, resolved, cfg, guess.index))
    if not outcome.optimal:
        if outcome.status is SolverStatus.NUMERICAL_FAILURE and stage is not None:
            stage.report(outcome.error(), status=outcome.status.value)
        logger.debug("guess %d skipped: %s", guess.index, outcome.status.value)
        return GuessOutcome(guess.index, outcome.status)
    try:
        x_bar, removed = round_groups(ctx, resolved, outcome.state.x, cfg)
    except NumericalFailure as error:
        if stage is not None:
            stage.report(error, step='modify')
        logger.debug("guess %d skipped: rounding failed: %s", guess.index, error)
        return GuessOutcome(guess.index, SolverStatus.NUMERICAL_FAILURE)
    swept = forward_backward_sweep(ctx.instance, x_bar, outcome.state, SweepMode.KEEP_CURRENT)
    # kept currents are not exact, only the relaxed constraints are expected to hold
    sweep_report = check_feasibility(ctx.instance, swept, cfg.settings.check_tol)
    if not sweep_report.relaxed_verdict:
        logger.warning("guess %d: kept-current sweep of the rounded demands violates %s=%g", guess.index,
                       *sweep_report.max_relaxed_violation)
    fixed = solve_relaxation(ctx.instance, RelaxationSpec.copf_fixed(x_bar, cfg.settings))
    if not fixed.optimal:
        if stage is not None:
            stage.report(fixed.error(), status=fixed.status.value, step='copf_fixed')
        return GuessOutcome(guess.index, fixed.status, sweep_feasible=sweep_report.relaxed_verdict,
                            removed=removed)
    logger.debug("guess %d: value %g", guess.index, fixed.objective)
    return GuessOutcome(guess.index, SolverStatus.OPTIMAL, fixed.objective, x_bar, sweep_report.relaxed_verdict,
                       removed)


@dataclass(frozen=True, eq=False)
class QptasResult:
    state: PowerFlowState
    value: float
    report: FeasibilityReport
    eps: float
    beta: float
    upper_bound: float
    guess_estimate: int
    guesses_processed: int
    guesses_feasible: int
    best_guess: Optional[int]
    rotation: RotationRecord
    flags: Tuple[str, ...] = ()
    failures: Tuple[Failure, ...] = ()

    @property
    def x(self) -> np.ndarray:
        return self.state.x


@scoped('qptas')
def qptas_solve(inst: RadialInstance, cfg: QptasConfig, *, reporter: Optional[Reporter] = None) -> QptasResult:
    """
    Runs the approximation scheme on a line instance and returns a state feasible for the exact
    program (of the instance as given, rotation undone).

    When no guess yields a solution, the inelastic users are all dropped and the elastic ones keep
    their relaxed values (flag ``fallback``).

    :raises InfeasibleError: when the relaxation (or the final restoration) is infeasible
    :raises LimitExceeded: in full mode above the guess limit
    """
    local = reporter if reporter is not None else Reporter('qptas')
    ctx = prepare(inst, cfg)
    if cfg.mode is GuessMode.ORACLE:
        estimate = 1
    else:
        estimate = estimate_guess_count(ctx)
        if cfg.mode is GuessMode.CAPPED:
            estimate = min(estimate, cfg.limit)
    workers = cfg.workers or worker_count()
    guesses = enumerate_guesses(ctx, cfg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(lambda guess: process_guess(ctx, cfg, guess, local), guesses))
    else:
        outcomes = [process_guess(ctx, cfg, guess, local) for guess in guesses]
    candidates = [outcome for outcome in outcomes if outcome.status is SolverStatus.OPTIMAL]
    flags: List[str] = []
    if any(not outcome.sweep_feasible for outcome in outcomes if outcome.x is not None):
        flags.append('sweep_check_failed')
    if candidates:
        best = max(candidates, key=lambda outcome: (outcome.value, -outcome.index))
        x_final, best_index = best.x, best.index
    else:
        flags.append('fallback')
        logger.warning("no guess produced a solution, dropping every inelastic user")
        x_final = ctx.baseline.state.x.copy()
        x_final[list(ctx.users)] = 0.0
        best_index = None
    restored = restore_exactness(ctx.instance, x_final, cfg.settings, reporter=local)
    if not restored.optimal:
        raise restored.error()
    flags.extend(restored.flags)
    state = unrotate_state(restored.state, ctx.rotation)
    report = check_feasibility(inst, state, cfg.settings.check_tol)
    value = evaluate_objective(inst, state)
    logger.info("qptas: %d guesses, %d solved, value %g (relaxation %g)", len(outcomes), len(candidates), value,
                ctx.baseline.objective)
    failures = tuple(failure for failure in local.failures if failure.source.startswith(local.label))
    return QptasResult(state, value, report, ctx.eps, ctx.beta, ctx.baseline.objective, estimate, len(outcomes),
                       len(candidates), best_index, ctx.rotation, tuple(flags), failures)
