"""
model.py module holds the domain types of the radial optimal power flow problem with discrete
demands: the network (``RadialInstance``), the objective (``ObjectiveSpec``) and one operating point
(``PowerFlowState``), together with the validation of the operating assumptions, the rotation that
moves every demand into the first quadrant, and the evaluation of the objective.

Conventions: node 0 is the substation, nodes ``1..m`` are listed in ``RadialInstance.buses`` and the
line feeding node ``j`` is edge ``j - 1``. Powers are per-unit complex numbers; ``v`` and ``ell`` are the
squared voltage and current magnitudes.
"""
import cmath
import math
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import TopologyError, AssumptionError, _invalid

logger = logging.getLogger(__name__)

ComplexQuantity = complex

# Tolerance of the sign checks made on instance data
SIGN_TOL = 1e-12


class UserKind(str, Enum):
    INELASTIC = 'inelastic'
    ELASTIC = 'elastic'


@dataclass(frozen=True)
class Line:
    """A line with impedance ``z``, apparent power cap ``s_cap`` and squared current cap ``l_cap``"""
    z: complex
    s_cap: float = math.inf
    l_cap: float = math.inf


@dataclass(frozen=True)
class Bus:
    """A non-root node with its voltage bounds and the line that feeds it from ``parent``"""
    parent: int
    line: Line
    v_min: float
    v_max: float


@dataclass(frozen=True)
class User:
    name: str
    node: int
    s: complex
    utility: float = 0.0
    kind: UserKind = UserKind.INELASTIC

    @property
    def elastic(self) -> bool:
        return self.kind is UserKind.ELASTIC


@dataclass(frozen=True)
class ObjectiveSpec:
    """
    Objective f(s0, x) = f0(y) + Σ_F w_k Re(s_k) x_k + Σ_I u_k x_k.

    f0(y) = m_shift + g(y) where g is the concave piecewise linear function with the given
    ``slopes`` (one more than ``breakpoints``) normalized by g(0) = 0, evaluated at the generation
    coordinate y = Re(s0 e^{-i phi}). ``phi`` is the rotation already applied to the instance.
    """
    slopes: Tuple[float, ...] = (0.0,)
    breakpoints: Tuple[float, ...] = ()
    f1_weights: Mapping[int, float] = field(default_factory=dict)
    m_shift: float = 0.0
    phi: float = 0.0

    def __post_init__(self) -> None:
        if __debug__:
            if len(self.slopes) != len(self.breakpoints) + 1:
                raise _invalid(ValueError, "f0 needs exactly one more slope than breakpoints")
            if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
                raise _invalid(ValueError, "f0 breakpoints must be strictly increasing")
            if any(g2 > g1 for g1, g2 in zip(self.slopes, self.slopes[1:])):
                raise _invalid(ValueError, "f0 slopes must be non-increasing (concave f0)")

    @cached_property
    def pieces(self) -> Tuple[Tuple[float, float], ...]:
        """Affine pieces (slope, intercept) with g = min over the pieces"""
        pieces = [(self.slopes[0], 0.0)]
        intercept = 0.0
        for i, breakpoint in enumerate(self.breakpoints, 1):
            intercept -= (self.slopes[i] - self.slopes[i - 1]) * breakpoint
            pieces.append((self.slopes[i], intercept))
        offset = min(c for _, c in pieces)
        return tuple((slope, c - offset) for slope, c in pieces)

    def g(self, y: float) -> float:
        return min(slope * y + c for slope, c in self.pieces)

    def f0(self, y: float) -> float:
        return self.m_shift + self.g(y)


@dataclass(frozen=True)
class Topology:
    """Cached tree structure; edge ``j - 1`` feeds node ``j``"""
    m: int
    parent: Tuple[int, ...]
    children: Tuple[Tuple[int, ...], ...]
    order: Tuple[int, ...]
    depth: Tuple[int, ...]
    path: Tuple[Tuple[int, ...], ...]
    subtree: Tuple[Tuple[int, ...], ...]

    @property
    def feeder(self) -> int:
        return self.children[0][0]

    @property
    def leaves(self) -> Tuple[int, ...]:
        return tuple(j for j in range(1, self.m + 1) if not self.children[j])

    @property
    def is_line(self) -> bool:
        return all(len(kids) <= 1 for kids in self.children)

    @property
    def line_nodes(self) -> Tuple[int, ...]:
        """Nodes of a line from the feeder to the leaf"""
        if not self.is_line:
            raise TopologyError("the network is not a line")
        return self.order[1:]


def build_topology(parents: Sequence[int]) -> Topology:
    """
    Builds the tree of nodes ``0..m`` from ``parents[j - 1]`` (parent of node j).

    :raises TopologyError: when the map is not a tree rooted at 0 or node 0 has not exactly one child
    """
    m = len(parents)
    parent = (-1, *parents)
    children: List[List[int]] = [[] for _ in range(m + 1)]
    for j in range(1, m + 1):
        i = parent[j]
        if not 0 <= i <= m or i == j:
            raise TopologyError(f"node {j} has invalid parent {i}")
        children[i].append(j)
    if len(children[0]) != 1:
        raise TopologyError(f"node 0 must have exactly one child (the feeder), found {len(children[0])}")
    order: List[int] = []
    depth = [0] * (m + 1)
    queue = deque([0])
    while queue:
        i = queue.popleft()
        order.append(i)
        for j in sorted(children[i]):
            depth[j] = depth[i] + 1
            queue.append(j)
    if len(order) != m + 1:
        unreachable = sorted(set(range(m + 1)) - set(order))
        raise TopologyError(f"parent map has a cycle, nodes {unreachable} are not connected to node 0")
    path: List[Tuple[int, ...]] = [()] * (m + 1)
    for j in order[1:]:
        path[j] = path[parent[j]] + (j - 1,)
    subtree: List[List[int]] = [[j] for j in range(m + 1)]
    for j in reversed(order[1:]):
        subtree[parent[j]].extend(subtree[j])
    return Topology(
        m=m,
        parent=parent,
        children=tuple(tuple(sorted(kids)) for kids in children),
        order=tuple(order),
        depth=tuple(depth),
        path=tuple(path),
        subtree=tuple(tuple(sorted(nodes)) for nodes in subtree),
    )


@dataclass(frozen=True)
class RadialInstance:
    v0: float
    buses: Tuple[Bus, ...]
    users: Tuple[User, ...] = ()
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)

    @property
    def m(self) -> int:
        return len(self.buses)

    @property
    def n(self) -> int:
        return len(self.users)

    @cached_property
    def topology(self) -> Topology:
        return build_topology([bus.parent for bus in self.buses])

    @cached_property
    def z(self) -> np.ndarray:
        return np.array([bus.line.z for bus in self.buses], dtype=complex)

    @cached_property
    def s(self) -> np.ndarray:
        return np.array([user.s for user in self.users], dtype=complex)

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([bus.v_min for bus in self.buses], dtype=float)

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([bus.v_max for bus in self.buses], dtype=float)

    @cached_property
    def s_cap(self) -> np.ndarray:
        return np.array([bus.line.s_cap for bus in self.buses], dtype=float)

    @cached_property
    def l_cap(self) -> np.ndarray:
        return np.array([bus.line.l_cap for bus in self.buses], dtype=float)

    @cached_property
    def inelastic(self) -> Tuple[int, ...]:
        return tuple(k for k, user in enumerate(self.users) if not user.elastic)

    @cached_property
    def elastic(self) -> Tuple[int, ...]:
        return tuple(k for k, user in enumerate(self.users) if user.elastic)

    @cached_property
    def users_at(self) -> Tuple[Tuple[int, ...], ...]:
        """U_j: users attached to node j"""
        at: List[List[int]] = [[] for _ in range(self.m + 1)]
        for k, user in enumerate(self.users):
            at[user.node].append(k)
        return tuple(map(tuple, at))

    @cached_property
    def subtree_users(self) -> Tuple[Tuple[int, ...], ...]:
        """N_j: users attached anywhere in the subtree of node j"""
        return tuple(
            tuple(sorted(k for node in nodes for k in self.users_at[node]))
            for nodes in self.topology.subtree
        )

    def tail(self, e: int) -> int:
        """Gets the node the line e leaves from"""
        return self.buses[e].parent

    def tail_voltage(self, v: np.ndarray, e: int) -> float:
        """Gets v_i for the line e = (i, j) from a node voltage vector indexed like the edges"""
        i = self.buses[e].parent
        return self.v0 if i == 0 else float(v[i - 1])

    @cached_property
    def objective_coefficients(self) -> np.ndarray:
        """Linear objective weight of each x_k: u_k for inelastic users, w_k Re(s_k) (unrotated) for elastic"""
        unrotate = cmath.exp(-1j * self.objective.phi)
        coefficients = np.zeros(self.n)
        for k, user in enumerate(self.users):
            if user.elastic:
                coefficients[k] = self.objective.f1_weights.get(k, 0.0) * (user.s * unrotate).real
            else:
                coefficients[k] = user.utility
        return coefficients

    def with_objective(self, **changes) -> 'RadialInstance':
        return replace(self, objective=replace(self.objective, **changes))


@dataclass(frozen=True, eq=False)
class PowerFlowState:
    """One operating point; ``v``, ``ell`` and ``S`` are indexed by edge (``v[j - 1]`` is node j)"""
    s0: complex
    x: np.ndarray
    v: np.ndarray
    ell: np.ndarray
    S: np.ndarray
    integral: bool = False

    def __post_init__(self) -> None:
        if __debug__:
            m = len(self.v)
            if len(self.ell) != m or len(self.S) != m:
                raise _invalid(ValueError, "v, ell and S must have one entry per edge")

    @classmethod
    def zeros(cls, inst: RadialInstance) -> 'PowerFlowState':
        """The no-load operating point: every voltage at v0, no flow, no loss"""
        return cls(0j, np.zeros(inst.n), np.full(inst.m, inst.v0), np.zeros(inst.m), np.zeros(inst.m, complex))

    def with_x(self, x: np.ndarray, integral: bool = False) -> 'PowerFlowState':
        return replace(self, x=np.asarray(x, dtype=float), integral=integral)


# Assumptions the solvers rely on; the others are restored by rotating the instance
REQUIRED_ASSUMPTIONS = ('monotone_cost', 'resistive_lines', 'voltage_reference', 'aligned_demands', 'demand_spread',
                        'bounded_range')


@dataclass(frozen=True)
class ValidationReport:
    flags: Dict[str, bool]
    data_range: float
    violations: Tuple[str, ...] = ()

    def passed(self, *names: str) -> bool:
        """Checks the given assumptions (all of them when none given)"""
        return all(self.flags[name] for name in (names or self.flags))


@dataclass(frozen=True)
class RotationRecord:
    phi: float = 0.0

    def __post_init__(self) -> None:
        if __debug__:
            if not -SIGN_TOL <= self.phi <= math.pi / 2 + SIGN_TOL:
                raise _invalid(ValueError, f"rotation angle must lie in [0, pi/2], got {self.phi}")


def _ratio(values: np.ndarray) -> float:
    positive = values[values > 0]
    if positive.size == 0:
        return 1.0
    return float(positive.max() / positive.min())


def data_range(inst: RadialInstance) -> float:
    """The data range M: largest max/min ratio among positive resistances, reactances and demand parts"""
    return max(
        _ratio(inst.z.real), _ratio(inst.z.imag),
        _ratio(inst.s.real), _ratio(inst.s.imag),
    )


def demand_phase_spread(inst: RadialInstance) -> float:
    """The largest pairwise phase difference between nonzero demands (radians)"""
    angles = [cmath.phase(s) for s in inst.s if s != 0]
    return max(angles) - min(angles) if angles else 0.0


def validate_instance(inst: RadialInstance) -> ValidationReport:
    """
    Checks the operating assumptions and computes the data range.

    - monotone_cost: f0 non-decreasing (every slope >= 0); monotone_cost_rotated additionally requires
      the rotation in [0, pi/2],
    - resistive_lines: Re(z_e) >= 0,
    - voltage_reference: v_min_j <= v0 <= v_max_j,
    - aligned_demands: Re(conj(z_e) s_k) >= 0 for every line and user,
    - demand_spread: Re(s_k) >= 0 and pairwise phase spread <= pi/2,
    - first_quadrant: every demand in the first quadrant,
    - bounded_range: the data range is at most 2^(log2(mn)^2).

    :raises TopologyError: when the parent map is not a tree with a single feeder
    """
    topology = inst.topology  # structural problems are hard failures
    violations: List[str] = []
    flags: Dict[str, bool] = {}

    def check(name: str, ok: bool, message: str) -> None:
        flags[name] = bool(ok)
        if not ok:
            violations.append(f"{name}: {message}")

    slopes = inst.objective.slopes
    check('monotone_cost', min(slopes) >= 0, f"f0 has a negative slope {min(slopes)}")
    check('monotone_cost_rotated', flags['monotone_cost'] and 0 <= inst.objective.phi <= math.pi / 2 + SIGN_TOL,
          "f0 is not non-decreasing in both generation coordinates")
    bad_lines = [e for e in range(inst.m) if inst.z[e].real < -SIGN_TOL]
    check('resistive_lines', not bad_lines, f"negative resistance on edges {bad_lines}")
    bad_nodes = [j for j in range(1, inst.m + 1)
                 if not inst.v_min[j - 1] <= inst.v0 <= inst.v_max[j - 1]]
    check('voltage_reference', inst.v0 > 0 and not bad_nodes, f"v0 outside the voltage bounds of nodes {bad_nodes}")
    if inst.n and inst.m:
        products = (np.conj(inst.z)[:, None] * inst.s[None, :]).real
        worst = float(products.min())
    else:
        worst = 0.0
    check('aligned_demands', worst >= -SIGN_TOL, f"Re(conj(z) s) reaches {worst}")
    spread = demand_phase_spread(inst)
    check('demand_spread', (inst.s.real >= -SIGN_TOL).all() and spread <= math.pi / 2 + SIGN_TOL,
          f"demand phase spread {math.degrees(spread):.2f} deg or negative real demand")
    check('first_quadrant', (inst.s.real >= -SIGN_TOL).all() and (inst.s.imag >= -SIGN_TOL).all(),
          "some demand leaves the first quadrant")
    m_range = data_range(inst)
    size = max(inst.m * inst.n, 2)
    check('bounded_range', m_range <= 2.0 ** (math.log2(size) ** 2), f"data range {m_range:g} too large for the size")
    logger.debug("validated instance with %d nodes, %d users (M=%g, tree depth %d)",
                 inst.m, inst.n, m_range, max(topology.depth))
    return ValidationReport(flags, m_range, tuple(violations))


def rotation_angle(inst: RadialInstance) -> RotationRecord:
    """
    Computes phi = max(max_k -arg(s_k), 0) clamped to [0, pi/2], the smallest counterclockwise
    rotation that moves every demand into the first quadrant.

    :raises AssumptionError: when the demands cannot all be rotated into the first quadrant
    """
    demands = [s for s in inst.s if s != 0]
    if not demands:
        return RotationRecord(0.0)
    if any(s.real < -SIGN_TOL * abs(s) for s in demands) or demand_phase_spread(inst) > math.pi / 2 + SIGN_TOL:
        raise AssumptionError("demands with negative real part or phase spread above 90 degrees")
    phi = min(max(max(-cmath.phase(s) for s in demands), 0.0), math.pi / 2)
    turn = cmath.exp(1j * phi)
    for s in demands:
        rotated = s * turn
        if rotated.real < -SIGN_TOL * abs(s) or rotated.imag < -SIGN_TOL * abs(s):
            raise AssumptionError(f"demand {s} leaves the first quadrant after rotating by {phi}")
    return RotationRecord(phi)


def rotate_instance(inst: RadialInstance, rotation: RotationRecord) -> RadialInstance:
    """Multiplies every impedance and demand by e^{i phi} and records phi in the objective"""
    if rotation.phi == 0:
        return inst
    turn = cmath.exp(1j * rotation.phi)
    buses = tuple(replace(bus, line=replace(bus.line, z=bus.line.z * turn)) for bus in inst.buses)
    users = tuple(replace(user, s=user.s * turn) for user in inst.users)
    objective = replace(inst.objective, phi=inst.objective.phi + rotation.phi)
    return replace(inst, buses=buses, users=users, objective=objective)


def unrotate_state(state: PowerFlowState, rotation: RotationRecord) -> PowerFlowState:
    """Maps a state of the rotated instance back: S and s0 multiplied by e^{-i phi}"""
    if rotation.phi == 0:
        return state
    turn = cmath.exp(-1j * rotation.phi)
    return replace(state, s0=state.s0 * turn, S=state.S * turn)


def rotate_state(state: PowerFlowState, rotation: RotationRecord) -> PowerFlowState:
    """Inverse of ``unrotate_state``"""
    if rotation.phi == 0:
        return state
    turn = cmath.exp(1j * rotation.phi)
    return replace(state, s0=state.s0 * turn, S=state.S * turn)


def generation(inst: RadialInstance, s0: complex) -> float:
    """The generation coordinate y = Re(s0 e^{-i phi}) at which f0 is evaluated"""
    return (s0 * cmath.exp(-1j * inst.objective.phi)).real


def evaluate_objective(inst: RadialInstance, state: PowerFlowState) -> float:
    """f0 term + linear f1 term + Σ_{k in I} u_k x_k"""
    linear = float(inst.objective_coefficients @ state.x) if inst.n else 0.0
    return inst.objective.f0(generation(inst, state.s0)) + linear


def default_m_shift(inst: RadialInstance, objective: Optional[ObjectiveSpec] = None) -> float:
    """M_shift = c(Σ|s_k| + Σ finite S_cap) with c(p) = -g(-p), making f0 >= 0 on any feasible range"""
    objective = objective or inst.objective
    caps = inst.s_cap[np.isfinite(inst.s_cap)]
    reach = float(np.abs(inst.s).sum() + caps.sum())
    return -objective.g(-reach)
