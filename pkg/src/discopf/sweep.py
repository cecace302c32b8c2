"""
sweep.py module implements the forward-backward sweep that turns a relaxed operating point into one
that satisfies the power flow equalities, the closed forms of the branch powers and voltages that the
sweep computes recursively, and the feasibility checker of the full set of operating constraints.
"""
import logging
from dataclasses import dataclass, asdict, field
from enum import Enum
from typing import Dict, Mapping, Tuple

import numpy as np

from .core import NumericalFailure
from .model import RadialInstance, PowerFlowState

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6


class SweepMode(Enum):
    EXACT_CURRENT = 'exact'  # ell_e <- |S'_e|^2 / v'_i
    KEEP_CURRENT = 'keep'    # ell_e <- ell'_e


def node_loads(inst: RadialInstance, x: np.ndarray) -> np.ndarray:
    """Σ_{k in U_j} s_k x_k for every node j (index 0 is the substation)"""
    loads = np.zeros(inst.m + 1, dtype=complex)
    if inst.n:
        np.add.at(loads, [user.node for user in inst.users], inst.s * np.asarray(x, dtype=float))
    return loads


def tail_voltages(inst: RadialInstance, v: np.ndarray) -> np.ndarray:
    """v_i of every line (i, j)"""
    return np.array([inst.tail_voltage(v, e) for e in range(inst.m)], dtype=float)


def _is_integral(inst: RadialInstance, x: np.ndarray) -> bool:
    return all(x[k] in (0.0, 1.0) for k in inst.inelastic)


def forward_backward_sweep(inst: RadialInstance, x_bar: np.ndarray, baseline: PowerFlowState,
                           mode: SweepMode = SweepMode.EXACT_CURRENT) -> PowerFlowState:
    """
    Recomputes the branch powers leaf to root for the demands x_bar, then the voltages root to leaf.

    The currents are either recomputed from the baseline (``EXACT_CURRENT``) or kept (``KEEP_CURRENT``).

    :raises NumericalFailure: when the baseline has a non-positive voltage at a line tail
    """
    topology = inst.topology
    x = np.asarray(x_bar, dtype=float).copy()
    if mode is SweepMode.EXACT_CURRENT:
        tails = tail_voltages(inst, baseline.v)
        if (tails <= 0).any():
            raise NumericalFailure(f"non-positive tail voltage on edges {np.flatnonzero(tails <= 0).tolist()}")
        ell = np.abs(baseline.S) ** 2 / tails
    else:
        ell = np.asarray(baseline.ell, dtype=float).copy()
    loads = node_loads(inst, x)
    S = np.zeros(inst.m, dtype=complex)
    for j in reversed(topology.order[1:]):
        S[j - 1] = loads[j] + sum(S[t - 1] for t in topology.children[j]) + inst.z[j - 1] * ell[j - 1]
    v = np.zeros(inst.m)
    for j in topology.order[1:]:
        e = j - 1
        z = inst.z[e]
        v[e] = inst.tail_voltage(v, e) + abs(z) ** 2 * ell[e] - 2 * (np.conj(z) * S[e]).real
    return PowerFlowState(-S[topology.feeder - 1], x, v, ell, S, integral=_is_integral(inst, x))


def aggregate_power(inst: RadialInstance, x: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """S_ij = Σ_{k in N_j} s_k x_k + Σ_{e in E_j ∪ {(i,j)}} z_e ell_e for every line"""
    x = np.asarray(x, dtype=float)
    losses = inst.z * np.asarray(ell, dtype=float)
    S = np.zeros(inst.m, dtype=complex)
    for j in range(1, inst.m + 1):
        users = list(inst.subtree_users[j])
        edges = [t - 1 for t in inst.topology.subtree[j]]
        S[j - 1] = (inst.s[users] * x[users]).sum() + losses[edges].sum()
    return S


def voltage_sensitivity(inst: RadialInstance) -> np.ndarray:
    """rho[k, j-1] = Re(Σ_{e in P_k ∩ P_j} conj(z_e) s_k), the voltage drop weight of user k at node j"""
    path = inst.topology.path
    rho = np.zeros((inst.n, inst.m))
    conj_z = np.conj(inst.z)
    for k, user in enumerate(inst.users):
        own = set(path[user.node])
        for j in range(1, inst.m + 1):
            shared = [e for e in path[j] if e in own]
            rho[k, j - 1] = (conj_z[shared].sum() * user.s).real
    return rho


def loss_drop(inst: RadialInstance, ell: np.ndarray) -> np.ndarray:
    """
    Loss part of the voltage drop at every node j:
    2 Σ_{(h,t) in P_j} Re(conj(z_ht) Σ_{e in E_t} z_e ell_e) + Σ_{(h,t) in P_j} |z_ht|^2 ell_ht
    """
    topology = inst.topology
    ell = np.asarray(ell, dtype=float)
    losses = inst.z * ell
    per_edge = np.zeros(inst.m)
    for t in range(1, inst.m + 1):
        inner = sum(losses[u - 1] for u in topology.subtree[t] if u != t)
        z = inst.z[t - 1]
        per_edge[t - 1] = 2 * (np.conj(z) * inner).real + abs(z) ** 2 * ell[t - 1]
    return np.array([per_edge[list(topology.path[j])].sum() for j in range(1, inst.m + 1)])


def closed_form_voltage(inst: RadialInstance, x: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """v_j = v0 - 2 Σ_k rho_kj x_k - loss_drop_j for every node j"""
    x = np.asarray(x, dtype=float)
    demand = 2 * (x @ voltage_sensitivity(inst)) if inst.n else np.zeros(inst.m)
    return inst.v0 - demand - loss_drop(inst, ell)


@dataclass(frozen=True)
class FeasibilityReport:
    """
    Worst absolute residual of every constraint family, and the verdict at ``tol`` computed on the
    residuals scaled by 1 + |bound| where the bound is nonzero.
    """
    power_balance: float
    root_balance: float
    voltage_drop: float
    voltage_bounds: float
    capacity_forward: float
    capacity_reverse: float
    current_cap: float
    cone: float
    exactness: float
    box: float
    sign: float
    tol: float = DEFAULT_TOL
    scaled: Mapping[str, float] = field(default_factory=dict)

    RESIDUALS = ('power_balance', 'root_balance', 'voltage_drop', 'voltage_bounds', 'capacity_forward',
                 'capacity_reverse', 'current_cap', 'cone', 'exactness', 'box', 'sign')

    @property
    def verdict(self) -> bool:
        """Feasible for the exact program"""
        return all(value <= self.tol for value in self.scaled.values())

    @property
    def relaxed_verdict(self) -> bool:
        """Feasible for the conic relaxation (exactness not required)"""
        return all(value <= self.tol for name, value in self.scaled.items() if name != 'exactness')

    @property
    def max_violation(self) -> Tuple[str, float]:
        name = max(self.scaled, key=self.scaled.__getitem__)
        return name, self.scaled[name]

    @property
    def max_relaxed_violation(self) -> Tuple[str, float]:
        """Worst scaled residual among the relaxed constraints"""
        relaxed = {name: value for name, value in self.scaled.items() if name != 'exactness'}
        name = max(relaxed, key=relaxed.__getitem__)
        return name, relaxed[name]

    def as_dict(self) -> Dict[str, object]:
        document = {name: value for name, value in asdict(self).items() if name in self.RESIDUALS}
        document.update(tol=self.tol, feasible=self.verdict, relaxed_feasible=self.relaxed_verdict,
                        scaled=dict(self.scaled))
        return document


def _worst(values: np.ndarray) -> float:
    return float(values.max()) if values.size else 0.0


def check_feasibility(inst: RadialInstance, state: PowerFlowState, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    """Evaluates every operating constraint on the state"""
    if not tol > 0:
        raise ValueError("tol must be positive")
    topology = inst.topology
    x, v, ell, S = (np.asarray(a) for a in (state.x, state.v, state.ell, state.S))
    loads = node_loads(inst, x)
    balance = np.array([
        abs(S[j - 1] - loads[j] - sum(S[t - 1] for t in topology.children[j]) - inst.z[j - 1] * ell[j - 1])
        for j in range(1, inst.m + 1)
    ])
    root = abs(S[topology.feeder - 1] + state.s0) if inst.m else abs(state.s0)
    tails = tail_voltages(inst, v)
    z = inst.z
    drop = np.abs(v - tails - np.abs(z) ** 2 * ell + 2 * (np.conj(z) * S).real)
    below = inst.v_min - v
    above = v - inst.v_max
    bounds = np.maximum(np.maximum(below, above), 0.0)
    bounds_scale = 1 + np.where(below > above, np.abs(inst.v_min), np.abs(inst.v_max))
    finite_s = np.isfinite(inst.s_cap)
    forward = np.maximum(np.abs(S) - inst.s_cap, 0.0)[finite_s]
    reverse = np.maximum(np.abs(-S + z * ell) - inst.s_cap, 0.0)[finite_s]
    finite_l = np.isfinite(inst.l_cap)
    current = np.maximum(ell - inst.l_cap, 0.0)[finite_l]
    flow = np.abs(S) ** 2
    cone = np.maximum(flow - ell * tails, 0.0)
    exactness = np.abs(ell * tails - flow)
    box = np.maximum(np.maximum(-x, x - 1), 0.0) if x.size else np.zeros(0)
    if state.integral and inst.inelastic:
        picked = x[list(inst.inelastic)]
        box = np.concatenate([box, np.minimum(np.abs(picked), np.abs(picked - 1))])
    sign = np.maximum(np.concatenate([-v, -ell]), 0.0)

    scaled = {
        'power_balance': _worst(balance),
        'root_balance': float(root),
        'voltage_drop': _worst(drop),
        'voltage_bounds': _worst(bounds / bounds_scale),
        'capacity_forward': _worst(forward / (1 + inst.s_cap[finite_s])),
        'capacity_reverse': _worst(reverse / (1 + inst.s_cap[finite_s])),
        'current_cap': _worst(current / (1 + inst.l_cap[finite_l])),
        'cone': _worst(cone / (1 + flow)),
        'exactness': _worst(exactness / (1 + flow)),
        'box': _worst(box),
        'sign': _worst(sign),
    }
    report = FeasibilityReport(
        power_balance=_worst(balance), root_balance=float(root), voltage_drop=_worst(drop),
        voltage_bounds=_worst(bounds), capacity_forward=_worst(forward), capacity_reverse=_worst(reverse),
        current_cap=_worst(current), cone=_worst(cone), exactness=_worst(exactness),
        box=_worst(box), sign=_worst(sign), tol=tol, scaled=scaled,
    )
    if not report.verdict:
        logger.debug("state infeasible at tol=%g, worst %s=%g", tol, *report.max_violation)
    return report


def iterate_sweep(inst: RadialInstance, x: np.ndarray, baseline: PowerFlowState, tol: float = DEFAULT_TOL,
                  max_sweeps: int = 50) -> Tuple[PowerFlowState, int]:
    """
    Repeats the exact-current sweep until the exactness residual is within tol.

    Every sweep keeps the relaxed constraints satisfied and does not increase the currents,
    so the iteration settles on an exact point.
    """
    state = baseline
    for count in range(1, max_sweeps + 1):
        state = forward_backward_sweep(inst, x, state, SweepMode.EXACT_CURRENT)
        tails = tail_voltages(inst, state.v)
        flow = np.abs(state.S) ** 2
        residual = _worst(np.abs(state.ell * tails - flow))
        if residual <= tol:
            return state, count
    logger.warning("exactness residual %g above %g after %d sweeps", residual, tol, max_sweeps)
    return state, max_sweeps
