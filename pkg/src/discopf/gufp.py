"""
gufp.py module implements the generalized unsplittable flow problem on an ordered edge sequence with
d demand dimensions (d-GUFP): each user k asks, in every dimension r, for a monotone step function
f_k^r of the edge, and a subset of users is feasible when its summed demand stays below the monotone
capacity c^r on every edge.

Each dimension has its own edge order (forward, or reversed for non-increasing data); every array of a
dimension (bases, loads, capacities, profiles) is stored in that dimension's order, so all functions
here are non-decreasing along their arrays. ``GufpInstance.position`` maps natural edge indices.

The module provides the rounding machinery used by the approximation scheme: the edge partition with
bounded growth per interval, the level grid, the grouping of users by utility-to-demand ratio, the
restricted profiles and the ``modify`` rounding with its vertex extraction (``to_bfs``).
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .core import AssumptionError, LimitExceeded, NumericalFailure, _invalid

logger = logging.getLogger(__name__)

MONOTONE_TOL = 1e-12
FEASIBILITY_TOL = 1e-9
SETTLE_TOL = 1e-6

GroupKey = Tuple[Optional[int], ...]


@dataclass(frozen=True)
class SeparableStepFunction:
    """
    f(e) = 0 before ``start``, Σ_t a_t b_t(e) from ``start`` up to ``saturation`` (excluded),
    Σ_t a_t b_t(saturation) from ``saturation`` on. Positions are in the dimension's order.
    """
    coefficients: Tuple[float, ...]
    start: int
    saturation: int

    def values(self, base: np.ndarray) -> np.ndarray:
        """Evaluates the function on every position given the dimension's base functions (T x n)"""
        combined = np.asarray(self.coefficients, dtype=float) @ base
        positions = np.arange(base.shape[1])
        out = np.where(positions < self.saturation, combined, combined[self.saturation])
        out[positions < self.start] = 0.0
        return out

    def evaluate(self, base: np.ndarray, position: int) -> float:
        if position < self.start:
            return 0.0
        return float(np.asarray(self.coefficients, dtype=float) @ base[:, min(position, self.saturation)])


def _monotone(values: np.ndarray) -> bool:
    return bool((np.diff(values, axis=-1) >= -MONOTONE_TOL * (1 + np.abs(values[..., 1:]))).all())


@dataclass(frozen=True, eq=False)
class GufpInstance:
    bases: Tuple[np.ndarray, ...]
    reversed_order: Tuple[bool, ...]
    utilities: np.ndarray
    demands: Tuple[Tuple[SeparableStepFunction, ...], ...]
    capacities: Tuple[np.ndarray, ...]
    names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        d = len(self.bases)
        if len(self.reversed_order) != d or len(self.capacities) != d:
            raise _invalid(ValueError, "bases, orientations and capacities must have one entry per dimension")
        n = self.n_edges
        for r, base in enumerate(self.bases):
            if base.ndim != 2 or base.shape[1] != n or self.capacities[r].shape != (n,):
                raise _invalid(ValueError, f"dimension {r} does not span {n} edges")
            if (base < 0).any() or not _monotone(base):
                raise AssumptionError(f"base functions of dimension {r} must be nonnegative and non-decreasing")
            if not _monotone(self.capacities[r]):
                raise AssumptionError(f"capacity of dimension {r} must be non-decreasing in its edge order")
        if len(self.demands) != len(self.utilities):
            raise _invalid(ValueError, "one demand tuple per user is required")
        if (np.asarray(self.utilities) < 0).any():
            raise AssumptionError("utilities must be nonnegative")
        for k, functions in enumerate(self.demands):
            if len(functions) != d:
                raise _invalid(ValueError, f"user {k} needs one demand function per dimension")
            for r, f in enumerate(functions):
                if len(f.coefficients) != self.bases[r].shape[0] or min(f.coefficients, default=0) < 0:
                    raise AssumptionError(f"user {k} has invalid coefficients in dimension {r}")
                if not (0 <= f.start < n and 0 <= f.saturation < n):
                    raise _invalid(ValueError, f"user {k} has start/saturation outside the edge range")

    @property
    def d(self) -> int:
        return len(self.bases)

    @property
    def n_edges(self) -> int:
        return self.bases[0].shape[1] if self.bases else 0

    @property
    def n_users(self) -> int:
        return len(self.demands)

    def position(self, r: int, e: int) -> int:
        """Position of the natural edge index e in dimension r's order"""
        return self.n_edges - 1 - e if self.reversed_order[r] else e

    @cached_property
    def loads(self) -> Tuple[np.ndarray, ...]:
        """Per dimension, the K x n table of f_k^r values"""
        tables = []
        for r, base in enumerate(self.bases):
            rows = [functions[r].values(base) for functions in self.demands]
            tables.append(np.vstack(rows) if rows else np.zeros((0, self.n_edges)))
        return tuple(tables)

    def load(self, x: np.ndarray, r: int) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.loads[r]


def evaluate_demand(g: GufpInstance, k: int, r: int, position: int) -> float:
    """f_k^r at the given position of dimension r's order"""
    return g.demands[k][r].evaluate(g.bases[r], position)


def check_gufp_feasible(g: GufpInstance, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    """True iff every dimension's load stays below its capacity on every edge"""
    return all((g.load(x, r) <= g.capacities[r] + tol * (1 + np.abs(g.capacities[r]))).all() for r in range(g.d))


# ---------------------------------------------------------------------------------------------------- partition

@dataclass(frozen=True)
class EdgePartition:
    """Consecutive intervals of positions per dimension, given by their first positions"""
    starts: Tuple[Tuple[int, ...], ...]
    n_edges: int
    growth: Tuple[float, ...]

    def count(self, r: int) -> int:
        """P_r"""
        return len(self.starts[r])

    @property
    def total(self) -> int:
        """Σ_r P_r"""
        return sum(map(len, self.starts))

    def intervals(self, r: int) -> List[Tuple[int, int]]:
        """(first, last) positions of every interval of dimension r"""
        bounds = list(self.starts[r]) + [self.n_edges]
        return [(bounds[p], bounds[p + 1] - 1) for p in range(len(self.starts[r]))]

    def last(self, r: int, p: int) -> int:
        return self.intervals(r)[p][1]


def build_partition(g: GufpInstance, growth: Union[float, Sequence[float]] = 2.0) -> EdgePartition:
    """
    Cuts every dimension where some base function first becomes positive and wherever it exceeds
    ``growth`` times its value at its previous cut, so that each user's demand varies by at most
    that factor over the positions of an interval where it is positive. The leading positions where
    every base vanishes belong to the first interval.
    """
    constants = tuple(growth) if isinstance(growth, Sequence) else (float(growth),) * g.d
    if any(c <= 1 for c in constants):
        raise _invalid(ValueError, "growth constants must exceed 1")
    starts = []
    for r, base in enumerate(g.bases):
        cuts = set()
        for b in base:
            positive = np.flatnonzero(b > 0)
            if positive.size == 0:
                continue
            reference = b[positive[0]]
            cuts.add(int(positive[0]))
            for i in range(int(positive[0]) + 1, g.n_edges):
                if b[i] > constants[r] * reference:
                    cuts.add(i)
                    reference = b[i]
        starts.append((0,) + tuple(sorted(cuts))[1:])
    return EdgePartition(tuple(starts), g.n_edges, constants)


def interval_extremes(g: GufpInstance, partition: EdgePartition) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Per dimension, the K x P_r tables of the largest value of f_k^r on each interval and of its
    smallest positive value there (0 when f_k^r vanishes on the interval).
    """
    upper, lower = [], []
    for r in range(g.d):
        table = g.loads[r]
        spans = partition.intervals(r)
        high = np.zeros((g.n_users, len(spans)))
        low = np.zeros((g.n_users, len(spans)))
        for p, (first, last) in enumerate(spans):
            block = table[:, first:last + 1]
            high[:, p] = block.max(axis=1) if block.size else 0.0
            masked = np.where(block > 0, block, np.inf)
            smallest = masked.min(axis=1) if block.size else np.full(g.n_users, np.inf)
            low[:, p] = np.where(np.isfinite(smallest), smallest, 0.0)
        upper.append(high)
        lower.append(low)
    return upper, lower


# ------------------------------------------------------------------------------------------------ levels, groups

@dataclass(frozen=True, eq=False)
class LevelGrid:
    """Per dimension, the level values 0, f_min, f_min (1+eps), ... reaching n f_max"""
    eps: float
    base: Tuple[float, ...]
    levels: Tuple[np.ndarray, ...]

    def round_up(self, r: int, value: float) -> int:
        """Index of the smallest level not below value"""
        levels = self.levels[r]
        index = int(np.searchsorted(levels, value - 1e-12 * max(1.0, abs(value)), side='left'))
        if index >= len(levels):
            raise _invalid(ValueError, f"value {value} exceeds the top level of dimension {r}")
        return index


def build_levels(g: GufpInstance, eps: float, users: Optional[Sequence[int]] = None) -> LevelGrid:
    users = list(range(g.n_users)) if users is None else list(users)
    bases, levels = [], []
    for r in range(g.d):
        table = g.loads[r][users] if users else np.zeros((0, g.n_edges))
        positive = table[table > 0]
        if positive.size == 0:
            bases.append(0.0)
            levels.append(np.zeros(1))
            continue
        low = float(positive.min())
        high = float(table.max())
        top = g.n_users * high
        count = max(0, math.ceil(math.log(top / low) / math.log1p(eps)))
        values = low * (1 + eps) ** np.arange(count + 1)
        while values[-1] < top:
            values = np.append(values, values[-1] * (1 + eps))
        bases.append(low)
        levels.append(np.concatenate([[0.0], values]))
    return LevelGrid(eps, tuple(bases), tuple(levels))


def _dyadic_class(ratio: float) -> int:
    """The q with 2^(q-1) <= ratio < 2^q"""
    q = math.floor(math.log2(ratio)) + 1
    while 2.0 ** (q - 1) > ratio:
        q -= 1
    while 2.0 ** q <= ratio:
        q += 1
    return q


@dataclass(frozen=True, eq=False)
class Grouping:
    eps: float
    survivors: Tuple[int, ...]
    scales: Tuple[Optional[float], ...]
    classes: Mapping[int, GroupKey]
    groups: Mapping[GroupKey, Tuple[int, ...]]
    strength: Mapping[GroupKey, Tuple[np.ndarray, ...]]
    active: Mapping[GroupKey, Tuple[int, ...]]
    alpha: Mapping[GroupKey, Optional[float]]
    layout: Tuple[Tuple[int, int], ...] = ()

    def members(self, key: GroupKey) -> Tuple[int, ...]:
        return self.groups[key]


def group_users(g: GufpInstance, eps: float, partition: Optional[EdgePartition] = None) -> Grouping:
    """
    Drops users with utility below eps u_max / n and groups the others by the dyadic class of
    u_k / (a_k^{r,t} L_r) in every (r, t), L_r = eps u_max / (n max a^r); a zero coefficient is class None.
    """
    if not 0 < eps < 1:
        raise _invalid(ValueError, "eps must lie in (0, 1)")
    partition = partition or build_partition(g)
    layout = tuple((r, t) for r in range(g.d) for t in range(g.bases[r].shape[0]))
    utilities = np.asarray(g.utilities, dtype=float)
    n = g.n_users
    u_max = float(utilities.max()) if n else 0.0
    survivors = tuple(k for k in range(n) if utilities[k] > 0 and utilities[k] >= eps * u_max / n)
    scales: List[Optional[float]] = []
    for r in range(g.d):
        a_max = max((max(g.demands[k][r].coefficients, default=0.0) for k in survivors), default=0.0)
        scales.append(eps * u_max / (n * a_max) if a_max > 0 else None)
    classes: Dict[int, GroupKey] = {}
    for k in survivors:
        key = []
        for r, t in layout:
            a = g.demands[k][r].coefficients[t]
            key.append(None if a == 0 else _dyadic_class(utilities[k] / (a * scales[r])))
        classes[k] = tuple(key)
    groups: Dict[GroupKey, List[int]] = {}
    for k in survivors:
        groups.setdefault(classes[k], []).append(k)
    strength: Dict[GroupKey, Tuple[np.ndarray, ...]] = {}
    active: Dict[GroupKey, Tuple[int, ...]] = {}
    alpha: Dict[GroupKey, Optional[float]] = {}
    for key in groups:
        per_dim = []
        for r in range(g.d):
            values = np.zeros(partition.count(r))
            for p in range(partition.count(r)):
                last = partition.last(r, p)
                for (r2, t), q in zip(layout, key):
                    if r2 == r and q is not None:
                        values[p] += g.bases[r][t, last] / (2.0 ** q * scales[r])
            per_dim.append(values)
        strength[key] = tuple(per_dim)
        active[key] = tuple(r for r in range(g.d) if per_dim[r][-1] > 0)
        used = sum(partition.count(r) for r in active[key])
        alpha[key] = partition.total / used if used else None
    logger.debug("grouped %d of %d users into %d groups", len(survivors), n, len(groups))
    return Grouping(eps, survivors, tuple(scales), classes,
                    {key: tuple(members) for key, members in groups.items()}, strength, active, alpha, layout)


# --------------------------------------------------------------------------------------------------- profiles

def is_reciprocal(eps: float) -> bool:
    inverse = 1.0 / eps
    return abs(inverse - round(inverse)) <= 1e-9 * inverse


def reciprocal_epsilon(eps: float) -> float:
    """Rounds eps down to the nearest 1/k"""
    return 1.0 / math.ceil(1.0 / eps - 1e-9)


@dataclass(frozen=True, eq=False)
class RestrictedProfile:
    """Per dimension, a non-decreasing step function on the positions with values l * eps * h^{p,r}"""
    eps: float
    peaks: Tuple[np.ndarray, ...]
    values: Tuple[np.ndarray, ...]

    def steps(self, r: int) -> List[Tuple[int, float]]:
        """(last position, value) of every maximal constant run of dimension r"""
        values = self.values[r]
        runs = []
        for pos in range(len(values)):
            if pos + 1 == len(values) or values[pos + 1] != values[pos]:
                runs.append((pos, float(values[pos])))
        return runs


def restricted_profile_from_fractional(peaks: Sequence[np.ndarray], eps: float, x_tilde: np.ndarray,
                                       users: Sequence[int], g: GufpInstance,
                                       partition: EdgePartition) -> RestrictedProfile:
    """
    Floors the fractional profile Σ_{k in users} f_k^r x~_k on interval p to the lattice eps h^{p,r}
    (at most h^{p,r}), keeping the running maximum so the result is non-decreasing and never above
    the fractional profile.
    """
    if not is_reciprocal(eps):
        raise _invalid(ValueError, f"1/eps must be an integer, got eps={eps}")
    top = round(1.0 / eps)
    users = list(users)
    x = np.asarray(x_tilde, dtype=float)
    values = []
    for r in range(g.d):
        fractional = x[users] @ g.loads[r][users] if users else np.zeros(g.n_edges)
        out = np.zeros(g.n_edges)
        running = 0.0
        for p, (first, last) in enumerate(partition.intervals(r)):
            step = eps * float(peaks[r][p])
            for pos in range(first, last + 1):
                if step > 0:
                    level = min(math.floor(fractional[pos] / step + 1e-9), top)
                    candidate = min(level * step, fractional[pos])
                else:
                    candidate = 0.0
                running = max(running, candidate)
                out[pos] = running
        values.append(out)
    return RestrictedProfile(eps, tuple(np.asarray(h, dtype=float) for h in peaks), tuple(values))


def profile_constraints(g: GufpInstance, users: Sequence[int],
                        profile: RestrictedProfile) -> Tuple[np.ndarray, np.ndarray]:
    """
    The non-redundant packing rows of ``load <= profile``: one per profile step, at its last position,
    since the load is non-decreasing inside a step.
    """
    users = list(users)
    rows, rhs = [], []
    for r in range(g.d):
        for pos, value in profile.steps(r):
            row = g.loads[r][users, pos]
            if row.any():
                rows.append(row)
                rhs.append(value)
    if not rows:
        return np.zeros((0, len(users))), np.zeros(0)
    return np.vstack(rows), np.array(rhs)


def to_bfs(rows: np.ndarray, rhs: np.ndarray, start: np.ndarray, utilities: np.ndarray,
           tol: float = FEASIBILITY_TOL) -> np.ndarray:
    """
    Moves a feasible point of {0 <= x <= 1, rows x <= rhs} to a vertex without decreasing utilities @ x:
    while the fractional entries outnumber the rank of the tight rows restricted to them, step along a
    null-space direction of those rows until a bound or another row becomes tight.
    """
    x = np.clip(np.asarray(start, dtype=float), 0.0, 1.0)
    rows = np.asarray(rows, dtype=float).reshape(-1, len(x))
    rhs = np.asarray(rhs, dtype=float)
    utilities = np.asarray(utilities, dtype=float)
    for _ in range(4 * (len(x) + len(rhs)) + 10):
        x[x <= tol] = 0.0
        x[x >= 1 - tol] = 1.0
        fractional = np.flatnonzero((x > 0) & (x < 1))
        if fractional.size == 0:
            break
        slack = rhs - rows @ x
        tight = np.flatnonzero(slack <= tol * (1 + np.abs(rhs)))
        block = rows[np.ix_(tight, fractional)]
        if tight.size and np.linalg.matrix_rank(block) >= fractional.size:
            break
        if tight.size:
            direction = null_space(block)[:, 0]
        else:
            direction = np.zeros(fractional.size)
            direction[0] = 1.0
        if utilities[fractional] @ direction < 0:
            direction = -direction
        step = math.inf
        for i, di in zip(fractional, direction):
            if di > MONOTONE_TOL:
                step = min(step, (1 - x[i]) / di)
            elif di < -MONOTONE_TOL:
                step = min(step, -x[i] / di)
        loose = np.setdiff1d(np.arange(len(rhs)), tight)
        if loose.size:
            rates = rows[np.ix_(loose, fractional)] @ direction
            for row, rate in zip(loose, rates):
                if rate > MONOTONE_TOL:
                    step = min(step, max(slack[row], 0.0) / rate)
        if not math.isfinite(step):
            raise NumericalFailure("vertex search found no blocking constraint")
        x[fractional] = np.clip(x[fractional] + step * direction, 0.0, 1.0)
    return x


@dataclass(frozen=True, eq=False)
class ModifyResult:
    x_hat: np.ndarray
    vertex: np.ndarray
    removed: Tuple[int, ...]
    fractional_support: int
    settled: Tuple[int, ...] = ()

    def utility(self, g: GufpInstance) -> float:
        return float(np.asarray(g.utilities) @ self.x_hat)


def modify(users: Sequence[int], x_tilde: np.ndarray, peaks: Sequence[np.ndarray], profile: RestrictedProfile,
           g: GufpInstance, partition: EdgePartition, eps: float, key: Optional[GroupKey] = None, *,
           strict: bool = False) -> ModifyResult:
    """
    Rounds the fractional assignment of the users of one group under the restricted profile.

    Per dimension and interval, users are dropped from the left-most edge on until eps h^{p,r} of
    fractional load is cleared (users already dropped count for free, otherwise lowest index first);
    the rest is moved to a vertex of the packing polytope under the profile and rounded down.

    Profile rows still exceeded after the drops are settled by dropping more users (``settled``).
    With ``strict`` the profile must come from the fractional assignment itself, so only excesses
    below ``SETTLE_TOL`` (relative) are settled.

    :raises NumericalFailure: under ``strict``, when a row is exceeded by more than ``SETTLE_TOL``
    """
    users = list(users)
    x_hat = np.zeros(g.n_users)
    if not users:
        return ModifyResult(x_hat, np.zeros(0), (), 0)
    x_tilde = np.asarray(x_tilde, dtype=float)
    x_bar = np.zeros(g.n_users)
    x_bar[users] = x_tilde[users]
    removed: List[int] = []
    for r in range(g.d):
        table = g.loads[r]
        for p, (first, last) in enumerate(partition.intervals(r)):
            target = eps * float(peaks[r][p])
            if target <= 0:
                continue
            cleared, counted, i = 0.0, set(), first
            while cleared < target and i <= last:
                candidates = [k for k in users if k not in counted and x_tilde[k] * table[k, i] > 0]
                if not candidates:
                    i += 1
                    continue
                dropped = [k for k in candidates if x_bar[k] == 0]
                k = dropped[0] if dropped else candidates[0]
                if x_bar[k] != 0:
                    x_bar[k] = 0.0
                    removed.append(k)
                counted.add(k)
                cleared += x_tilde[k] * table[k, i]
    rows, rhs = profile_constraints(g, users, profile)
    local = x_bar[users]
    settled: List[int] = []
    violated = np.flatnonzero(rows @ local > rhs + FEASIBILITY_TOL * (1 + np.abs(rhs))) if rows.size else []
    if strict and len(violated):
        excess = (rows @ local - rhs) / (1 + np.abs(rhs))
        if excess.max() > SETTLE_TOL:
            row = int(np.argmax(excess))
            raise NumericalFailure(f"profile row {row} exceeded by {excess[row]:g} after the drops")
    while len(violated):
        row = violated[0]
        index = next(i for i in range(len(users)) if rows[row, i] > 0 and local[i] > 0)
        local[index] = 0.0
        settled.append(users[index])
        violated = np.flatnonzero(rows @ local > rhs + FEASIBILITY_TOL * (1 + np.abs(rhs)))
    if settled:
        logger.debug("profile rows still exceeded after the drops, settled by dropping users %s", settled)
        removed.extend(settled)
    vertex = to_bfs(rows, rhs, local, np.asarray(g.utilities, dtype=float)[users])
    support = int(((vertex > 0) & (vertex < 1)).sum())
    x_hat[users] = (vertex >= 1 - FEASIBILITY_TOL).astype(float)
    if key is not None:
        logger.debug("group %s: %d users, %d dropped, %d fractional at the vertex", key, len(users),
                     len(removed), support)
    return ModifyResult(x_hat, vertex, tuple(removed), support, tuple(settled))


def modify_loss_bound(grouping: Grouping, key: GroupKey, partition: EdgePartition, peaks: Sequence[np.ndarray],
                      thresholds: Sequence[np.ndarray], eps: float) -> float:
    """
    Utility loss allowed to ``modify`` for one group:
    Σ_{r active} (Σ_p C_r (eps h^{p,r} + B^{p,r}) / H^{p,r} + alpha P_r B^{P_r,r} / (eps H^{P_r,r})).
    """
    total = 0.0
    alpha = grouping.alpha[key]
    for r in grouping.active[key]:
        H = grouping.strength[key][r]
        growth = partition.growth[r]
        for p in range(partition.count(r)):
            numerator = eps * float(peaks[r][p]) + float(thresholds[r][p])
            if numerator > 0:
                total += growth * numerator / H[p] if H[p] > 0 else math.inf
        last = partition.count(r) - 1
        total += (alpha or 0.0) * partition.count(r) * float(thresholds[r][last]) / (eps * H[last])
    return total


def count_profiles(peaks: Sequence[np.ndarray], eps: float, n_edges: int) -> int:
    count = 1
    for h in peaks:
        values = {round(level * eps * float(peak), 15) for peak in h for level in range(round(1 / eps) + 1)}
        count *= math.comb(len(values) + n_edges - 1, n_edges)
    return count


def enumerate_profiles(peaks: Sequence[np.ndarray], eps: float, n_edges: int,
                       limit: int = 100_000) -> Iterator[RestrictedProfile]:
    """Every (h, eps)-restricted profile, refusing when there are more than ``limit``"""
    if not is_reciprocal(eps):
        raise _invalid(ValueError, f"1/eps must be an integer, got eps={eps}")
    count = count_profiles(peaks, eps, n_edges)
    if count > limit:
        raise LimitExceeded(f"{count} restricted profiles exceed the limit {limit}", count, limit)
    lattices = [
        sorted({round(level * eps * float(peak), 15) for peak in h for level in range(round(1 / eps) + 1)})
        for h in peaks
    ]
    per_dim = [itertools.combinations_with_replacement(values, n_edges) for values in lattices]
    for choice in itertools.product(*map(list, per_dim)):
        yield RestrictedProfile(eps, tuple(np.asarray(h, dtype=float) for h in peaks),
                                tuple(np.array(values) for values in choice))


def best_profile_rounding(users: Sequence[int], x_tilde: np.ndarray, peaks: Sequence[np.ndarray],
                          g: GufpInstance, partition: EdgePartition, eps: float,
                          limit: int = 100_000) -> ModifyResult:
    """Runs ``modify`` under every restricted profile below the fractional profile and keeps the best"""
    users = list(users)
    x = np.asarray(x_tilde, dtype=float)
    fractional = [x[users] @ g.loads[r][users] if users else np.zeros(g.n_edges) for r in range(g.d)]
    best: Optional[ModifyResult] = None
    for profile in enumerate_profiles(peaks, eps, g.n_edges, limit):
        if any((profile.values[r] > fractional[r] + FEASIBILITY_TOL).any() for r in range(g.d)):
            continue
        result = modify(users, x, peaks, profile, g, partition, eps)
        if best is None or result.utility(g) > best.utility(g):
            best = result
    if best is None:
        return modify(users, x, peaks, restricted_profile_from_fractional(peaks, eps, x, users, g, partition),
                      g, partition, eps)
    return best


# ------------------------------------------------------------------------------------------------- standalone

@dataclass(frozen=True, eq=False)
class GufpSolution:
    x: np.ndarray
    value: float
    relaxation_value: float
    fractional_support: int


def packing_rows(g: GufpInstance) -> Tuple[np.ndarray, np.ndarray]:
    """All capacity rows (one per dimension and edge) over every user"""
    if g.n_users == 0:
        return np.zeros((0, 0)), np.zeros(0)
    rows = np.vstack([g.loads[r].T for r in range(g.d)])
    rhs = np.concatenate(g.capacities)
    return rows, rhs


def solve_gufp(g: GufpInstance) -> GufpSolution:
    """
    Rounds the linear relaxation: solve it (HiGHS), move to a vertex, round down, then add back
    users greedily by decreasing utility while they fit.
    """
    utilities = np.asarray(g.utilities, dtype=float)
    if g.n_users == 0:
        return GufpSolution(np.zeros(0), 0.0, 0.0, 0)
    rows, rhs = packing_rows(g)
    result = linprog(-utilities, A_ub=rows, b_ub=rhs, bounds=[(0.0, 1.0)] * g.n_users, method='highs')
    if result.status != 0:
        raise NumericalFailure(f"linear relaxation failed: {result.message}")
    vertex = to_bfs(rows, rhs, result.x, utilities)
    support = int(((vertex > 0) & (vertex < 1)).sum())
    x = (vertex >= 1 - FEASIBILITY_TOL).astype(float)
    for k in sorted(range(g.n_users), key=lambda k: (-utilities[k], k)):
        if x[k] == 0:
            x[k] = 1.0
            if not check_gufp_feasible(g, x):
                x[k] = 0.0
    return GufpSolution(x, float(utilities @ x), float(-result.fun), support)
