from pathlib import Path
from typing import List

import numpy as np
from pytest import fixture

import discopf
from discopf import (Bus, Failure, GufpInstance, Line, ObjectiveSpec, RadialInstance, SeparableStepFunction, User,
                     UserKind, read_instance)


class FailureHolder:
    failures: List[Failure]

    def __init__(self):
        self.failures = []

    def __call__(self, failure: Failure) -> None:
        self.failures.append(failure)

    @property
    def sources(self) -> List[str]:
        return [failure.source for failure in self.failures]

    @property
    def errors(self) -> List[Exception]:
        return [failure.error for failure in self.failures]


@fixture
def handler() -> FailureHolder:
    """Object that stores the failure when called"""
    return FailureHolder()


@fixture
def error():
    """Generic exception made available for testing"""
    return Exception("Test error")


SAMPLE = Path(discopf.__file__).parent / 'data' / 'sample_line.json'


@fixture
def sample_path() -> Path:
    """The shipped 5-node line with 6 inelastic users and 1 elastic"""
    return SAMPLE


@fixture
def sample(sample_path) -> RadialInstance:
    return read_instance(sample_path)


@fixture
def three_node_line() -> RadialInstance:
    """0 - 1 - 2 - 3, one inelastic user at node 2 and one at node 3, one elastic at node 1"""
    buses = (
        Bus(0, Line(0.01 + 0.02j, 2.0), 0.81, 1.21),
        Bus(1, Line(0.02 + 0.01j), 0.81, 1.21),
        Bus(2, Line(0.01 + 0.01j), 0.81, 1.21),
    )
    users = (
        User('a', 2, 0.3 + 0.1j, 4.0),
        User('b', 3, 0.2 + 0.1j, 3.0),
        User('c', 1, 0.1 + 0.05j, 0.0, UserKind.ELASTIC),
    )
    return RadialInstance(1.0, buses, users, ObjectiveSpec((1.0,), (), {2: 0.5}, m_shift=5.0))


@fixture
def star() -> RadialInstance:
    """Node 1 feeds nodes 2 and 3 (not a line)"""
    buses = (
        Bus(0, Line(0.01 + 0.01j), 0.81, 1.21),
        Bus(1, Line(0.01 + 0.01j), 0.81, 1.21),
        Bus(1, Line(0.01 + 0.01j), 0.81, 1.21),
    )
    users = (User('a', 2, 0.1 + 0.05j, 1.0), User('b', 3, 0.1 + 0.05j, 1.0))
    return RadialInstance(1.0, buses, users)


@fixture
def knapsack() -> GufpInstance:
    """One dimension, one edge: a knapsack of capacity 5 with weights 3, 2, 4 and utilities 5, 4, 6"""
    base = np.ones((1, 1))
    weights, utilities = (3.0, 2.0, 4.0), (5.0, 4.0, 6.0)
    demands = tuple((SeparableStepFunction((w,), 0, 0),) for w in weights)
    return GufpInstance((base,), (False,), np.array(utilities), demands, (np.array([5.0]),), ('x', 'y', 'z'))


@fixture
def staircase() -> GufpInstance:
    """
    One dimension, four edges with base 1, 2, 4, 8 and capacity 1, 2, 4, 16: user k starts at edge k with
    a unit coefficient, so two users only fit together when one of them is user 3 (best: users 0 and 3)
    """
    base = np.array([[1.0, 2.0, 4.0, 8.0]])
    demands = tuple((SeparableStepFunction((1.0,), k, 3),) for k in range(4))
    return GufpInstance((base,), (False,), np.array([3.0, 1.0, 1.0, 2.0]), demands,
                        (np.array([1.0, 2.0, 4.0, 16.0]),))
