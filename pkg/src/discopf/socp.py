"""
socp.py module is the seam between the power flow programs and the conic solvers.

Programs are stated in the standard conic form

    minimize    c'x
    subject to  Gx + s = h,  s in K
                Ax = b

where K is a product of a nonnegative orthant (``dims.linear`` rows first) and second-order cones
(``dims.soc``), exactly the form cvxopt's ``conelp`` accepts. The default backend is cvxopt's
primal-dual interior point method with Nesterov-Todd scaling; the ``cvxpy`` backend (optional extra)
solves the same program through cvxpy, for cross-checking.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Protocol, Sequence, Tuple

import numpy as np

from .config import SolverSettings
from .core import _invalid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConeDims:
    linear: int
    soc: Tuple[int, ...] = ()

    @property
    def rows(self) -> int:
        return self.linear + sum(self.soc)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    dims: ConeDims
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        if __debug__:
            n = self.c.shape[0]
            if self.G.shape != (self.dims.rows, n) or self.h.shape != (self.dims.rows,):
                raise _invalid(ValueError, f"G must be {self.dims.rows}x{n} and h of length {self.dims.rows}")
            if self.A.shape[1] != n or self.A.shape[0] != self.b.shape[0]:
                raise _invalid(ValueError, "A and b dimensions do not match")

    @property
    def size(self) -> int:
        return self.c.shape[0]


class SolverStatus(Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    NUMERICAL_FAILURE = 'numerical_failure'


@dataclass(frozen=True, eq=False)
class ConicSolution:
    status: SolverStatus
    x: Optional[np.ndarray] = None
    objective: float = float('nan')
    gap: Optional[float] = None
    primal_residual: Optional[float] = None
    iterations: int = 0
    message: str = ''
    backend: str = ''


def rotated_cone(n: int, ell: int, v: Optional[int], flows: Sequence[int], v_const: float = 0.0,
                 flow_consts: Sequence[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows (G, h) of ell * v >= Σ flow^2 written as the second-order cone
    ||(2 flow_1, ..., ell - v)|| <= ell + v.

    ``v`` is a variable index, or None for the constant ``v_const``; ``flows`` are variable
    indices and ``flow_consts`` constant flows.
    """
    size = 2 + len(flows) + len(flow_consts)
    G = np.zeros((size, n))
    h = np.zeros(size)
    G[0, ell] = -1.0
    G[-1, ell] = -1.0
    if v is None:
        h[0] = v_const
        h[-1] = -v_const
    else:
        G[0, v] = -1.0
        G[-1, v] = 1.0
    for row, index in enumerate(flows, 1):
        G[row, index] = -2.0
    for row, value in enumerate(flow_consts, 1 + len(flows)):
        h[row] = 2.0 * value
    return G, h


class SocpBackend(Protocol):
    name: str

    def solve(self, program: ConicProgram, settings: SolverSettings) -> ConicSolution:
        ...


class CvxoptBackend:
    name = 'cvxopt'

    def solve(self, program: ConicProgram, settings: SolverSettings) -> ConicSolution:
        from cvxopt import matrix, solvers

        G, h, dims = program.G, program.h, program.dims
        if dims.rows == 0:
            # conelp needs at least one cone row
            G, h, dims = np.zeros((1, program.size)), np.ones(1), ConeDims(1)
        options = {
            'show_progress': False,
            'maxiters': settings.max_iters,
            'abstol': settings.abstol,
            'reltol': settings.reltol,
            'feastol': settings.feastol,
        }
        kwargs = {}
        if program.A.shape[0]:
            kwargs['A'] = matrix(np.ascontiguousarray(program.A, dtype=float))
            kwargs['b'] = matrix(np.ascontiguousarray(program.b, dtype=float))
        try:
            result = solvers.conelp(
                matrix(np.ascontiguousarray(program.c, dtype=float)),
                matrix(np.ascontiguousarray(G, dtype=float)),
                matrix(np.ascontiguousarray(h, dtype=float)),
                {'l': dims.linear, 'q': list(dims.soc), 's': []},
                options=options,
                **kwargs,
            )
        except (ValueError, ArithmeticError) as error:
            return ConicSolution(SolverStatus.NUMERICAL_FAILURE, message=f"conelp: {error}", backend=self.name)
        status = result['status']
        iterations = int(result.get('iterations') or 0)
        pinf = result.get('primal infeasibility')
        gap = result.get('relative gap')
        if gap is None:
            gap = result.get('gap')
        if status == 'primal infeasible':
            certificate = result.get('residual as primal infeasibility certificate')
            return ConicSolution(SolverStatus.INFEASIBLE, iterations=iterations, backend=self.name,
                                 message=f"primal infeasibility certificate residual {certificate}")
        x = None if result.get('x') is None else np.array(result['x']).ravel()
        loose = 100 * max(settings.feastol, settings.reltol)
        accurate = status == 'optimal' or (
            status == 'unknown' and x is not None and pinf is not None and pinf <= loose
            and gap is not None and gap <= loose
        )
        if not accurate or x is None:
            return ConicSolution(SolverStatus.NUMERICAL_FAILURE, iterations=iterations, backend=self.name,
                                 message=f"conelp stopped with status {status!r}")
        return ConicSolution(SolverStatus.OPTIMAL, x, float(program.c @ x), gap, pinf, iterations,
                             status, self.name)


class CvxpyBackend:
    name = 'cvxpy'

    def solve(self, program: ConicProgram, settings: SolverSettings) -> ConicSolution:
        import cvxpy as cp

        x = cp.Variable(program.size)
        constraints = []
        if program.A.shape[0]:
            constraints.append(program.A @ x == program.b)
        linear = program.dims.linear
        if linear:
            constraints.append(program.G[:linear] @ x <= program.h[:linear])
        offset = linear
        for size in program.dims.soc:
            block = program.h[offset:offset + size] - program.G[offset:offset + size] @ x
            constraints.append(cp.SOC(block[0], block[1:]))
            offset += size
        problem = cp.Problem(cp.Minimize(program.c @ x), constraints)
        try:
            problem.solve(solver=cp.CLARABEL, max_iter=settings.max_iters)
        except cp.error.SolverError as error:
            return ConicSolution(SolverStatus.NUMERICAL_FAILURE, message=str(error), backend=self.name)
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return ConicSolution(SolverStatus.INFEASIBLE, message=problem.status, backend=self.name)
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or x.value is None:
            return ConicSolution(SolverStatus.NUMERICAL_FAILURE, message=str(problem.status), backend=self.name)
        value = np.asarray(x.value, dtype=float).ravel()
        return ConicSolution(SolverStatus.OPTIMAL, value, float(program.c @ value), message=problem.status,
                             backend=self.name)


BACKENDS: Dict[str, SocpBackend] = {
    CvxoptBackend.name: CvxoptBackend(),
    CvxpyBackend.name: CvxpyBackend(),
}


def solve_socp(program: ConicProgram, settings: Optional[SolverSettings] = None) -> ConicSolution:
    """Solves the conic program with the backend named in the settings"""
    settings = settings or SolverSettings()
    solution = BACKENDS[settings.backend].solve(program, settings)
    logger.debug("%s: %d variables, %d cone rows, %d equalities -> %s (%d iterations)",
                 solution.backend, program.size, program.dims.rows, program.A.shape[0],
                 solution.status.value, solution.iterations)
    return solution
