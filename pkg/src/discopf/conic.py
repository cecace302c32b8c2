"""
conic.py module builds the second-order cone relaxations of the power flow problem and restores
exactness of their solutions.

Variants of the relaxation:

- ``RCOPF``: every x_k relaxed to [0, 1],
- ``COPF_FIXED``: x fixed (optionally leaving some users, typically the elastic ones, free),
- ``RCOPF_RESTRICTED``: some users pinned, others zeroed, plus packing rows Σ a_k x_k <= rhs,
- ``LOSS_MIN``: x fixed, total loss Σ ell_e minimized subject to an objective floor.

Fixed users enter the programs as constants, so the equality system keeps full row rank.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import SolverSettings
from .functions import scoped
from .core import Reporter, InfeasibleError, NumericalFailure
from .model import RadialInstance, PowerFlowState, evaluate_objective
from .socp import ConicProgram, ConeDims, SolverStatus, rotated_cone, solve_socp
from .sweep import FeasibilityReport, check_feasibility, iterate_sweep, _is_integral

logger = logging.getLogger(__name__)

# Floor slacks tried in turn by the loss minimizing step of the exactness restoration
_RETRY_SLACK = 1e-7


class Variant(Enum):
    RCOPF = 'rcopf'
    COPF_FIXED = 'copf_fixed'
    RCOPF_RESTRICTED = 'rcopf_restricted'
    LOSS_MIN = 'loss_min'


class PackingRow(NamedTuple):
    """Σ_k coefficients[k] x_k <= rhs"""
    coefficients: Mapping[int, float]
    rhs: float
    label: str = ''


@dataclass(frozen=True, eq=False)
class RelaxationSpec:
    variant: Variant
    fixed: Mapping[int, float] = field(default_factory=dict)
    packing: Tuple[PackingRow, ...] = ()
    floor: Optional[float] = None
    settings: SolverSettings = field(default_factory=SolverSettings)
    guess: Any = None

    @classmethod
    def rcopf(cls, settings: Optional[SolverSettings] = None) -> 'RelaxationSpec':
        return cls(Variant.RCOPF, settings=settings or SolverSettings())

    @classmethod
    def copf_fixed(cls, x: Sequence[float], settings: Optional[SolverSettings] = None,
                   free: Sequence[int] = ()) -> 'RelaxationSpec':
        """x fixed for every user but the ``free`` ones, which stay in [0, 1]"""
        released = set(free)
        fixed = {k: float(value) for k, value in enumerate(x) if k not in released}
        return cls(Variant.COPF_FIXED, fixed, settings=settings or SolverSettings())

    @classmethod
    def restricted(cls, fixed: Mapping[int, float], packing: Sequence[PackingRow],
                   settings: Optional[SolverSettings] = None, guess: Any = None) -> 'RelaxationSpec':
        return cls(Variant.RCOPF_RESTRICTED, dict(fixed), tuple(packing), settings=settings or SolverSettings(),
                   guess=guess)

    @classmethod
    def loss_min(cls, x: Sequence[float], floor: float,
                 settings: Optional[SolverSettings] = None) -> 'RelaxationSpec':
        fixed = {k: float(value) for k, value in enumerate(x)}
        return cls(Variant.LOSS_MIN, fixed, floor=floor, settings=settings or SolverSettings())


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    status: SolverStatus
    state: Optional[PowerFlowState] = None
    objective: float = float('nan')
    cone_residual: float = float('nan')
    exactness_residual: float = float('nan')
    message: str = ''
    report: Optional[FeasibilityReport] = None
    flags: Tuple[str, ...] = ()

    @property
    def optimal(self) -> bool:
        return self.status is SolverStatus.OPTIMAL

    def error(self) -> Exception:
        """The exception describing a non optimal outcome"""
        if self.status is SolverStatus.INFEASIBLE:
            return InfeasibleError(self.message or 'infeasible program')
        return NumericalFailure(self.message or 'solver failure')


class _Layout:
    """Variable positions: P, Q, ell, v per edge, then the free x_k, then the epigraph variable t"""

    def __init__(self, m: int, free: Sequence[int]) -> None:
        self.m = m
        self.free = tuple(free)
        self.column = {k: 4 * m + i for i, k in enumerate(self.free)}
        self.t = 4 * m + len(self.free)
        self.size = self.t + 1

    def P(self, e: int) -> int:
        return e

    def Q(self, e: int) -> int:
        return self.m + e

    def L(self, e: int) -> int:
        return 2 * self.m + e

    def V(self, e: int) -> int:
        return 3 * self.m + e


class _Rows:
    """Accumulates rows of a linear system over ``size`` variables"""

    def __init__(self, size: int) -> None:
        self.size = size
        self.rows: List[np.ndarray] = []
        self.rhs: List[float] = []

    def add(self, entries: Mapping[int, float], rhs: float) -> None:
        row = np.zeros(self.size)
        for index, value in entries.items():
            row[index] += value
        self.rows.append(row)
        self.rhs.append(rhs)

    def matrix(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.rows:
            return np.zeros((0, self.size)), np.zeros(0)
        return np.vstack(self.rows), np.array(self.rhs)


def build_program(inst: RadialInstance, spec: RelaxationSpec) -> Tuple[ConicProgram, _Layout, np.ndarray]:
    """
    States the relaxation as a conic program.

    :returns: the program, its variable layout and the vector of fixed x values
    :raises InfeasibleError: when a packing row has no free user and a negative right hand side
    """
    m, topology = inst.m, inst.topology
    free = [k for k in range(inst.n) if k not in spec.fixed]
    lay = _Layout(m, free)
    x_fixed = np.zeros(inst.n)
    for k, value in spec.fixed.items():
        x_fixed[k] = value
    coefficients = inst.objective_coefficients
    s = inst.s

    # power flow equalities
    equalities = _Rows(lay.size)
    for j in range(1, m + 1):
        e = j - 1
        z = inst.z[e]
        parts = {'re': (lay.P, z.real, s.real), 'im': (lay.Q, z.imag, s.imag)}
        for var, loss, demand in parts.values():
            entries = {var(e): 1.0, lay.L(e): -loss}
            for t in topology.children[j]:
                entries[var(t - 1)] = -1.0
            rhs = 0.0
            for k in inst.users_at[j]:
                if k in lay.column:
                    entries[lay.column[k]] = entries.get(lay.column[k], 0.0) - demand[k]
                else:
                    rhs += demand[k] * x_fixed[k]
            equalities.add(entries, rhs)
        i = inst.tail(e)
        entries = {lay.V(e): 1.0, lay.L(e): -abs(z) ** 2, lay.P(e): 2 * z.real, lay.Q(e): 2 * z.imag}
        if i == 0:
            equalities.add(entries, inst.v0)
        else:
            entries[lay.V(i - 1)] = -1.0
            equalities.add(entries, 0.0)

    # linear inequalities
    linear = _Rows(lay.size)
    for e in range(m):
        linear.add({lay.V(e): -1.0}, -inst.v_min[e])
        linear.add({lay.V(e): 1.0}, inst.v_max[e])
        linear.add({lay.L(e): -1.0}, 0.0)
        if math.isfinite(inst.l_cap[e]):
            linear.add({lay.L(e): 1.0}, inst.l_cap[e])
    for k in free:
        linear.add({lay.column[k]: -1.0}, 0.0)
        linear.add({lay.column[k]: 1.0}, 1.0)
    feeder = topology.feeder - 1
    phi = inst.objective.phi
    for slope, intercept in inst.objective.pieces:
        # t <= slope * y + intercept with y = -(P_f cos(phi) + Q_f sin(phi))
        linear.add({lay.t: 1.0, lay.P(feeder): slope * math.cos(phi), lay.Q(feeder): slope * math.sin(phi)},
                   intercept)
    for row in spec.packing:
        entries = {lay.column[k]: a for k, a in row.coefficients.items() if k in lay.column and a != 0}
        rhs = row.rhs - sum(a * x_fixed[k] for k, a in row.coefficients.items() if k not in lay.column)
        if not entries:
            if rhs < -spec.settings.feastol:
                raise InfeasibleError(f"packing row {row.label or '?'} violated by the fixed users")
            continue
        linear.add(entries, rhs)
    fixed_part = inst.objective.m_shift + float(coefficients @ x_fixed) if inst.n else inst.objective.m_shift
    if spec.floor is not None:
        entries = {lay.t: -1.0}
        for k in free:
            entries[lay.column[k]] = -coefficients[k]
        linear.add(entries, fixed_part - spec.floor)

    # second-order cones
    G_blocks, h_blocks = [], []
    soc: List[int] = []
    n = lay.size
    for e in range(m):
        z = inst.z[e]
        cap = inst.s_cap[e]
        if math.isfinite(cap):
            forward = np.zeros((3, n))
            forward[1, lay.P(e)] = -1.0
            forward[2, lay.Q(e)] = -1.0
            reverse = np.zeros((3, n))
            reverse[1, lay.P(e)] = 1.0
            reverse[1, lay.L(e)] = -z.real
            reverse[2, lay.Q(e)] = 1.0
            reverse[2, lay.L(e)] = -z.imag
            for block in (forward, reverse):
                G_blocks.append(block)
                h_blocks.append(np.array([cap, 0.0, 0.0]))
                soc.append(3)
        i = inst.tail(e)
        G, h = rotated_cone(n, lay.L(e), None if i == 0 else lay.V(i - 1), (lay.P(e), lay.Q(e)), v_const=inst.v0)
        G_blocks.append(G)
        h_blocks.append(h)
        soc.append(G.shape[0])

    G_lin, h_lin = linear.matrix()
    G = np.vstack([G_lin, *G_blocks]) if G_blocks else G_lin
    h = np.concatenate([h_lin, *h_blocks]) if h_blocks else h_lin
    A, b = equalities.matrix()
    c = np.zeros(n)
    if spec.variant is Variant.LOSS_MIN:
        c[[lay.L(e) for e in range(m)]] = 1.0
    else:
        c[lay.t] = -1.0
        for k in free:
            c[lay.column[k]] = -coefficients[k]
    program = ConicProgram(c, G, h, ConeDims(G_lin.shape[0], tuple(soc)), A, b)
    return program, lay, x_fixed


def _extract(inst: RadialInstance, lay: _Layout, x_fixed: np.ndarray, values: np.ndarray) -> PowerFlowState:
    m = inst.m
    P = values[0:m]
    Q = values[m:2 * m]
    ell = np.maximum(values[2 * m:3 * m], 0.0)
    v = values[3 * m:4 * m].copy()
    x = x_fixed.copy()
    for k, column in lay.column.items():
        x[k] = min(max(values[column], 0.0), 1.0)
    S = P + 1j * Q
    return PowerFlowState(-S[inst.topology.feeder - 1], x, v, ell, S, integral=_is_integral(inst, x))


@scoped('relax')
def solve_relaxation(inst: RadialInstance, spec: RelaxationSpec, *,
                     reporter: Optional[Reporter] = None) -> SolveOutcome:
    """
    Solves one conic relaxation. Non optimal outcomes are returned (and reported to the
    reporter when one is given), not raised.
    """
    try:
        program, lay, x_fixed = build_program(inst, spec)
    except InfeasibleError as error:
        outcome = SolveOutcome(SolverStatus.INFEASIBLE, message=str(error))
    else:
        solution = solve_socp(program, spec.settings)
        if solution.status is SolverStatus.OPTIMAL:
            state = _extract(inst, lay, x_fixed, solution.x)
            report = check_feasibility(inst, state, spec.settings.check_tol)
            outcome = SolveOutcome(SolverStatus.OPTIMAL, state, evaluate_objective(inst, state), report.cone,
                                   report.exactness, solution.message, report)
        else:
            outcome = SolveOutcome(solution.status, message=solution.message)
    logger.debug("%s: %s objective=%s", spec.variant.value, outcome.status.value, outcome.objective)
    if reporter is not None and not outcome.optimal:
        reporter.report(outcome.error(), variant=spec.variant.value, status=outcome.status.value)
    return outcome


@scoped('restore')
def restore_exactness(inst: RadialInstance, x: Sequence[float], settings: Optional[SolverSettings] = None, *,
                      reporter: Optional[Reporter] = None) -> SolveOutcome:
    """
    Finds a state feasible for the exact program with demands x, at least as good as the relaxation
    with x fixed: solve the fixed relaxation, minimize the total loss subject to not losing objective,
    then sweep with exact currents until the exactness residual is within tolerance.
    """
    settings = settings or SolverSettings()
    x = np.asarray(x, dtype=float)
    fixed = solve_relaxation(inst, RelaxationSpec.copf_fixed(x, settings), reporter=reporter)
    if not fixed.optimal:
        return fixed
    baseline = fixed.state
    for slack in (settings.floor_slack, _RETRY_SLACK):
        floor = fixed.objective - slack
        lossless = solve_relaxation(inst, RelaxationSpec.loss_min(x, floor, settings), reporter=reporter)
        if lossless.optimal:
            baseline = lossless.state
            break
        logger.debug("loss minimization with floor slack %g: %s", slack, lossless.status.value)
    else:
        logger.info("loss minimization failed, sweeping the fixed relaxation solution directly")
    state, sweeps = iterate_sweep(inst, x, baseline, settings.check_tol, settings.max_sweeps)
    report = check_feasibility(inst, state, settings.check_tol)
    flags: List[str] = []
    if not report.verdict:
        loose = check_feasibility(inst, state, 10 * settings.check_tol)
        if not loose.verdict:
            flags.append('restoration_infeasible')
            logger.warning("restored state violates %s=%g", *report.max_violation)
    return SolveOutcome(SolverStatus.OPTIMAL, state, evaluate_objective(inst, state), report.cone,
                        report.exactness, f"{sweeps} sweeps", report, tuple(flags))
