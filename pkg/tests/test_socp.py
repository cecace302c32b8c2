import math

import numpy as np
from pytest import approx, importorskip, mark, param, raises

from discopf import SolverSettings
from discopf.socp import ConeDims, ConicProgram, SolverStatus, rotated_cone, solve_socp


def in_cone(s: np.ndarray) -> bool:
    return s[0] >= np.linalg.norm(s[1:]) - 1e-12


@mark.parametrize("ell, v, flow, inside", [
    param(2.0, 1.0, 1.4, True, id="inside"),
    param(2.0, 1.0, 1.5, False, id="outside"),
    param(1.0, 1.0, 1.0, True, id="boundary"),
])
def test_rotated_cone(ell, v, flow, inside):
    G, h = rotated_cone(3, 0, 1, (2,))
    assert in_cone(h - G @ np.array([ell, v, flow])) is inside


def test_rotated_cone_with_constant_voltage():
    G, h = rotated_cone(2, 0, None, (1,), v_const=1.0)
    assert in_cone(h - G @ np.array([1.0, 0.99]))
    assert not in_cone(h - G @ np.array([1.0, 1.01]))


def test_rotated_cone_with_constant_flows():
    G, h = rotated_cone(2, 0, 1, (), flow_consts=(0.5,))
    assert in_cone(h - G @ np.array([0.5, 0.5]))
    assert not in_cone(h - G @ np.array([0.2, 0.5]))


@mark.skipif(__debug__ is False, reason="No validation is done with optimized mode")
def test_program_shapes():
    with raises(ValueError):
        ConicProgram(np.zeros(2), np.zeros((3, 2)), np.zeros(3), ConeDims(2), np.zeros((0, 2)), np.zeros(0))


def norm_program() -> ConicProgram:
    """minimize t subject to ||(1, 2)|| <= t"""
    G = np.array([[-1.0], [0.0], [0.0]])
    h = np.array([0.0, 1.0, 2.0])
    return ConicProgram(np.array([1.0]), G, h, ConeDims(0, (3,)), np.zeros((0, 1)), np.zeros(0))


def test_cvxopt_second_order_cone():
    solution = solve_socp(norm_program())
    assert solution.status is SolverStatus.OPTIMAL
    assert solution.x == approx([math.sqrt(5)], abs=1e-6)
    assert solution.backend == 'cvxopt'


def test_cvxopt_linear_program_with_equality():
    # minimize -x - y subject to x + y = 1, 0 <= x, y <= 0.7
    G = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    h = np.array([0.0, 0.0, 0.7, 0.7])
    program = ConicProgram(np.array([-1.0, -1.0]), G, h, ConeDims(4), np.array([[1.0, 1.0]]), np.array([1.0]))
    solution = solve_socp(program)
    assert solution.status is SolverStatus.OPTIMAL
    assert solution.objective == approx(-1.0, abs=1e-6)


def test_cvxopt_infeasible():
    # x >= 1 and x <= 0
    G = np.array([[-1.0], [1.0]])
    program = ConicProgram(np.array([1.0]), G, np.array([-1.0, 0.0]), ConeDims(2), np.zeros((0, 1)), np.zeros(0))
    assert solve_socp(program).status is SolverStatus.INFEASIBLE


def test_cvxpy_agrees():
    importorskip('cvxpy')
    solution = solve_socp(norm_program(), SolverSettings(backend='cvxpy'))
    assert solution.status is SolverStatus.OPTIMAL
    assert solution.x == approx([math.sqrt(5)], abs=1e-5)
