"""
generate.py module draws random line instances that satisfy the operating assumptions: positive
impedances, demands with power factor at least 0.8, voltage bounds of 5% around ``v0 = 1`` and
capacities under which serving nobody is feasible.
"""
import math
from typing import Dict, List

import numpy as np

from .core import _invalid
from .model import Bus, Line, ObjectiveSpec, RadialInstance, User, UserKind, default_m_shift

V0 = 1.0
V_MIN = 0.95 ** 2
V_MAX = 1.05 ** 2
MAX_ANGLE = math.degrees(math.acos(0.8))
MIN_ANGLE = 5.0

# Line capacity as a multiple of the apparent demand downstream of the line
PROFILES: Dict[str, float] = {
    'loose': 3.0,
    'default': 1.5,
    'tight': 0.6,
}


def generate_instance(seed: int, m: int, n_inelastic: int, n_elastic: int = 0,
                      profile: str = 'default') -> RadialInstance:
    """
    Draws a line instance ``0 - 1 - ... - m``, deterministic in the seed.

    Users sit at uniformly drawn nodes with demand magnitude in [0.05, 0.3] and phase angle in
    [5, 36.87] degrees. Inelastic users (named ``i1, i2, ...``) have utilities in [1, 10]; elastic
    users (``e1, ...``) carry a linear weight in [0.5, 2] instead. The generation cost is linear
    with a slope in [1, 3].
    """
    if m < 1 or n_inelastic < 0 or n_elastic < 0:
        raise _invalid(ValueError, "m must be positive and the user counts nonnegative")
    if profile not in PROFILES:
        raise _invalid(ValueError, f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")
    rng = np.random.default_rng(seed)
    resistance = rng.uniform(0.005, 0.02, m)
    reactance = rng.uniform(0.005, 0.02, m)

    users: List[User] = []
    weights: Dict[int, float] = {}
    total = n_inelastic + n_elastic
    nodes = rng.integers(1, m + 1, total)
    magnitudes = rng.uniform(0.05, 0.3, total)
    angles = np.radians(rng.uniform(MIN_ANGLE, MAX_ANGLE, total))
    utilities = rng.uniform(1.0, 10.0, n_inelastic)
    elastic_weights = rng.uniform(0.5, 2.0, n_elastic)
    for k in range(total):
        s = complex(magnitudes[k] * math.cos(angles[k]), magnitudes[k] * math.sin(angles[k]))
        if k < n_inelastic:
            users.append(User(f'i{k + 1}', int(nodes[k]), s, float(utilities[k]), UserKind.INELASTIC))
        else:
            weights[k] = float(elastic_weights[k - n_inelastic])
            users.append(User(f'e{k - n_inelastic + 1}', int(nodes[k]), s, 0.0, UserKind.ELASTIC))

    downstream = np.zeros(m)
    for user in users:
        downstream[:user.node] += abs(user.s)
    caps = PROFILES[profile] * (downstream + 0.05)
    buses = tuple(
        Bus(j - 1, Line(complex(resistance[j - 1], reactance[j - 1]), float(caps[j - 1])), V_MIN, V_MAX)
        for j in range(1, m + 1)
    )
    objective = ObjectiveSpec((float(rng.uniform(1.0, 3.0)),), (), weights)
    inst = RadialInstance(V0, buses, tuple(users), objective)
    return inst.with_objective(m_shift=default_m_shift(inst))
