import numpy as np
from pytest import approx, mark, param, raises

from discopf import AssumptionError, GufpInstance, LimitExceeded, NumericalFailure, SeparableStepFunction, solve_gufp
from discopf.gufp import (EdgePartition, RestrictedProfile, best_profile_rounding, build_levels, build_partition,
                          check_gufp_feasible, count_profiles, enumerate_profiles, evaluate_demand, group_users,
                          interval_extremes, is_reciprocal, modify, modify_loss_bound, profile_constraints,
                          reciprocal_epsilon, restricted_profile_from_fractional, to_bfs)

STAIRCASE_BASE = np.array([[1.0, 2.0, 4.0, 8.0]])


@mark.parametrize("f, expected", [
    param(SeparableStepFunction((1.0,), 0, 3), [1, 2, 4, 8], id="whole_range"),
    param(SeparableStepFunction((1.0,), 2, 3), [0, 0, 4, 8], id="late_start"),
    param(SeparableStepFunction((1.0,), 0, 1), [1, 2, 2, 2], id="early_saturation"),
    param(SeparableStepFunction((0.5,), 1, 2), [0, 1, 2, 2], id="scaled"),
])
def test_step_function_values(f, expected):
    assert f.values(STAIRCASE_BASE) == approx(expected)
    assert [f.evaluate(STAIRCASE_BASE, pos) for pos in range(4)] == approx(expected)


def test_loads_and_feasibility(staircase):
    assert staircase.loads[0][1] == approx([0, 2, 4, 8])
    assert evaluate_demand(staircase, 3, 0, 2) == 0.0
    assert check_gufp_feasible(staircase, np.array([1.0, 0.0, 0.0, 1.0]))
    assert not check_gufp_feasible(staircase, np.array([1.0, 1.0, 0.0, 0.0]))
    assert staircase.load(np.array([1.0, 0.0, 0.0, 1.0]), 0) == approx([1, 2, 4, 16])


def test_reversed_position():
    base = np.ones((1, 3))
    g = GufpInstance((base,), (True,), np.array([1.0]), ((SeparableStepFunction((1.0,), 0, 0),),),
                     (np.ones(3),))
    assert [g.position(0, e) for e in range(3)] == [2, 1, 0]


@mark.parametrize("change, error", [
    param(dict(capacities=(np.array([2.0, 1.0, 4.0, 16.0]),)), AssumptionError, id="decreasing_capacity"),
    param(dict(utilities=np.array([-1.0, 1.0, 1.0, 2.0])), AssumptionError, id="negative_utility"),
    param(dict(bases=(np.array([[1.0, 2.0, 1.0, 8.0]]),)), AssumptionError, id="decreasing_base"),
    param(dict(reversed_order=(False, True)), ValueError, id="orientation_count"),
])
def test_invalid_instance(staircase, change, error):
    fields = dict(bases=staircase.bases, reversed_order=staircase.reversed_order, utilities=staircase.utilities,
                  demands=staircase.demands, capacities=staircase.capacities)
    fields.update(change)
    with raises(error):
        GufpInstance(**fields)


def test_partition(staircase):
    partition = build_partition(staircase, 2.0)
    assert partition.starts == ((0, 2),)
    assert partition.count(0) == 2
    assert partition.total == 2
    assert partition.intervals(0) == [(0, 1), (2, 3)]
    assert partition.last(0, 0) == 1


def test_partition_bounds_growth(staircase):
    partition = build_partition(staircase, 2.0)
    upper, lower = interval_extremes(staircase, partition)
    positive = lower[0] > 0
    assert (upper[0][positive] <= 2.0 * lower[0][positive]).all()
    assert upper[0][1] == approx([2, 8])
    assert lower[0][3] == approx([0, 8])


def test_partition_of_single_edge(knapsack):
    assert build_partition(knapsack).starts == ((0,),)


@mark.parametrize("base, starts", [
    param([0.0, 1.0, 1.0], (0,), id="zero_then_constant"),
    param([0.0, 0.0, 1.0, 4.0], (0, 3), id="zero_then_growing"),
    param([0.0, 0.0, 0.0], (0,), id="all_zero"),
])
def test_partition_merges_leading_zeros(base, starts):
    n = len(base)
    g = GufpInstance((np.array([base]),), (False,), np.array([1.0]), ((SeparableStepFunction((1.0,), 0, n - 1),),),
                     (np.zeros(n),))
    assert build_partition(g).starts == (starts,)


def random_separable(seed: int) -> GufpInstance:
    """Monotone bases with zero runs, users with random starts, saturations and coefficients"""
    rng = np.random.default_rng(seed)
    n, d, users = int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
    bases = []
    for _ in range(d):
        T = int(rng.integers(1, 4))
        bases.append(np.cumsum(rng.uniform(0.1, 3.0, (T, n)) * (rng.random((T, n)) < 0.7), axis=1))
    demands = []
    for _ in range(users):
        functions = []
        for base in bases:
            start = int(rng.integers(0, n))
            saturation = int(rng.integers(start, n))
            functions.append(SeparableStepFunction(tuple(rng.uniform(0.0, 2.0, base.shape[0])), start, saturation))
        demands.append(tuple(functions))
    return GufpInstance(tuple(bases), (False,) * d, rng.uniform(0.0, 1.0, users), tuple(demands),
                        tuple(np.zeros(n) for _ in range(d)))


@mark.parametrize("seed", range(100))
def test_partition_on_random_instances(seed):
    g = random_separable(seed)
    partition = build_partition(g, 2.0)
    upper, lower = interval_extremes(g, partition)
    for r, base in enumerate(g.bases):
        positive = lower[r] > 0
        assert (upper[r][positive] <= 2.0 * lower[r][positive] * (1 + 1e-12)).all()
        assert (upper[r][~positive] == 0).all()
        T = base.shape[0]
        if (base > 0).any():
            spread = base.max() / base[base > 0].min()
            assert partition.count(r) <= T * np.log2(spread) + T + 1e-9
        else:
            assert partition.count(r) == 1


@mark.parametrize("growth", [param(1.0, id="one"), param(0.5, id="below_one")])
def test_partition_growth_must_exceed_one(staircase, growth):
    with raises(ValueError):
        build_partition(staircase, growth)


def test_levels(knapsack):
    levels = build_levels(knapsack, 0.5)
    assert levels.base == (2.0,)
    assert levels.levels[0][:4] == approx([0.0, 2.0, 3.0, 4.5])
    assert levels.levels[0][-1] >= 12.0
    assert levels.round_up(0, 0.0) == 0
    assert levels.round_up(0, 3.0) == 2
    assert levels.round_up(0, 3.1) == 3
    with raises(ValueError):
        levels.round_up(0, 100.0)


def test_grouping(knapsack):
    grouping = group_users(knapsack, 0.5)
    assert grouping.survivors == (0, 1, 2)
    assert grouping.scales == approx((0.25,))
    assert grouping.groups == {(3,): (0, 2), (4,): (1,)}
    assert grouping.active[(3,)] == (0,)


def test_grouping_drops_negligible_users():
    base = np.ones((1, 1))
    demands = tuple((SeparableStepFunction((1.0,), 0, 0),) for _ in range(2))
    g = GufpInstance((base,), (False,), np.array([10.0, 0.1]), demands, (np.array([2.0]),))
    assert group_users(g, 0.5).survivors == (0,)


@mark.parametrize("eps, expected", [
    param(0.3, 0.25, id="rounded_down"),
    param(0.25, 0.25, id="already_reciprocal"),
    param(0.9, 0.5, id="large"),
])
def test_reciprocal_epsilon(eps, expected):
    assert reciprocal_epsilon(eps) == approx(expected)
    assert is_reciprocal(reciprocal_epsilon(eps))


@mark.parametrize("x, expected", [
    param([1.0, 0.5, 0.0], 3.75, id="floored_to_lattice"),
    param([1.0, 1.0, 0.0], 5.0, id="on_lattice"),
    param([0.0, 0.0, 0.0], 0.0, id="zero"),
])
def test_restricted_profile(knapsack, x, expected):
    partition = build_partition(knapsack)
    profile = restricted_profile_from_fractional([np.array([5.0])], 0.25, np.array(x), [0, 1, 2], knapsack,
                                                 partition)
    assert profile.values[0] == approx([expected])


def test_restricted_profile_is_monotone(staircase):
    partition = build_partition(staircase)
    x = np.array([0.3, 0.2, 0.1, 0.9])
    profile = restricted_profile_from_fractional([np.array([2.0, 16.0])], 0.5, x, [0, 1, 2, 3], staircase,
                                                 partition)
    values = profile.values[0]
    assert (np.diff(values) >= 0).all()
    assert (values <= staircase.load(x, 0) + 1e-12).all()


def test_restricted_profile_needs_reciprocal_eps(knapsack):
    with raises(ValueError):
        restricted_profile_from_fractional([np.array([5.0])], 0.3, np.zeros(3), [0, 1, 2], knapsack,
                                           build_partition(knapsack))


def test_profile_constraints(staircase):
    profile = RestrictedProfile(0.5, (np.array([2.0, 16.0]),), (np.array([1.0, 1.0, 4.0, 4.0]),))
    assert profile.steps(0) == [(1, 1.0), (3, 4.0)]
    rows, rhs = profile_constraints(staircase, [0, 1, 2, 3], profile)
    assert rows == approx(np.array([[2.0, 2.0, 0.0, 0.0], [8.0, 8.0, 8.0, 8.0]]))
    assert rhs == approx([1.0, 4.0])


@mark.parametrize("rows, rhs, start, utilities, expected", [
    param([[1.0, 1.0]], [1.0], [0.5, 0.5], [1.0, 2.0], [0.0, 1.0], id="tight_row"),
    param(np.zeros((0, 2)), [], [0.3, 0.6], [1.0, 1.0], [1.0, 1.0], id="box_only"),
    param([[1.0, 1.0]], [1.0], [1.0, 0.0], [1.0, 2.0], [1.0, 0.0], id="already_vertex"),
])
def test_to_bfs(rows, rhs, start, utilities, expected):
    vertex = to_bfs(np.array(rows), np.array(rhs), np.array(start), np.array(utilities))
    assert vertex == approx(expected)
    assert np.array(utilities) @ vertex >= np.array(utilities) @ np.array(start) - 1e-12


def test_modify(knapsack):
    partition = build_partition(knapsack)
    x_tilde = np.array([1.0, 0.5, 0.25])
    peaks = [np.array([5.0])]
    profile = restricted_profile_from_fractional(peaks, 0.25, x_tilde, [0, 1, 2], knapsack, partition)
    result = modify([0, 1, 2], x_tilde, peaks, profile, knapsack, partition, 0.25)
    assert result.removed == (0,)
    assert result.vertex == approx([0.0, 1.0, 0.75])
    assert result.x_hat == approx([0.0, 1.0, 0.0])
    assert result.fractional_support == 1
    assert result.utility(knapsack) == approx(4.0)
    assert check_gufp_feasible(knapsack, result.x_hat)


@mark.parametrize("value, settled", [
    param(1.25, (1,), id="lattice_value_below_the_load"),
    param(2.0 - 1e-8, (1,), id="numerical_leftover"),
])
def test_modify_settles_exceeded_rows(knapsack, value, settled):
    partition = build_partition(knapsack)
    x_tilde = np.array([1.0, 0.5, 0.25])
    profile = RestrictedProfile(0.25, (np.array([5.0]),), (np.array([value]),))
    result = modify([0, 1, 2], x_tilde, [np.array([5.0])], profile, knapsack, partition, 0.25)
    assert result.settled == settled
    assert result.removed == (0,) + settled
    assert knapsack.load(result.x_hat, 0) <= value + 1e-9


def test_strict_modify_rejects_a_mismatched_profile(knapsack):
    partition = build_partition(knapsack)
    x_tilde = np.array([1.0, 0.5, 0.25])
    # after dropping user 0 the load is 2, far above the profile value
    profile = RestrictedProfile(0.25, (np.array([5.0]),), (np.array([1.25]),))
    with raises(NumericalFailure):
        modify([0, 1, 2], x_tilde, [np.array([5.0])], profile, knapsack, partition, 0.25, strict=True)
    leftover = RestrictedProfile(0.25, (np.array([5.0]),), (np.array([2.0 - 1e-8]),))
    result = modify([0, 1, 2], x_tilde, [np.array([5.0])], leftover, knapsack, partition, 0.25, strict=True)
    assert result.settled == (1,)


def test_strict_modify_accepts_the_fractional_profile(knapsack):
    partition = build_partition(knapsack)
    x_tilde = np.array([1.0, 0.5, 0.25])
    peaks = [np.array([5.0])]
    profile = restricted_profile_from_fractional(peaks, 0.25, x_tilde, [0, 1, 2], knapsack, partition)
    result = modify([0, 1, 2], x_tilde, peaks, profile, knapsack, partition, 0.25, strict=True)
    assert result.settled == ()
    assert result.x_hat == approx([0.0, 1.0, 0.0])


def test_modify_without_users(knapsack):
    partition = build_partition(knapsack)
    profile = RestrictedProfile(0.5, (np.array([1.0]),), (np.zeros(1),))
    result = modify([], np.zeros(3), [np.array([1.0])], profile, knapsack, partition, 0.5)
    assert result.x_hat == approx(np.zeros(3))
    assert result.removed == ()


def test_enumerate_profiles():
    peaks = [np.array([1.0])]
    assert count_profiles(peaks, 0.5, 2) == 6
    profiles = list(enumerate_profiles(peaks, 0.5, 2))
    assert len(profiles) == 6
    assert all((np.diff(profile.values[0]) >= 0).all() for profile in profiles)
    with raises(LimitExceeded):
        list(enumerate_profiles(peaks, 0.5, 2, limit=5))


def test_best_profile_rounding(knapsack):
    x_tilde = np.array([1.0, 0.5, 0.25])
    result = best_profile_rounding([0, 1, 2], x_tilde, [np.array([5.0])], knapsack, build_partition(knapsack), 0.25)
    assert result.utility(knapsack) == approx(4.0)
    assert result.x_hat == approx([0.0, 1.0, 0.0])
    assert result.removed[0] == 0
    with raises(LimitExceeded):
        best_profile_rounding([0, 1, 2], x_tilde, [np.array([5.0])], knapsack, build_partition(knapsack), 0.25,
                              limit=4)


def test_modify_loss_bound(knapsack):
    partition = build_partition(knapsack)
    grouping = group_users(knapsack, 0.5, partition)
    assert grouping.strength[(3,)][0] == approx([0.5])
    assert grouping.alpha[(3,)] == 1.0
    bound = modify_loss_bound(grouping, (3,), partition, [np.array([5.0])], [np.array([0.5])], 0.5)
    # growth 2 * (0.5 * 5 + 0.5) / 0.5 + 0.5 / (0.5 * 0.5)
    assert bound == approx(14.0)


@mark.parametrize("fixture, value, x", [
    param('knapsack', 9.0, [1, 1, 0], id="knapsack"),
    param('staircase', 5.0, [1, 0, 0, 1], id="staircase"),
])
def test_solve_gufp(request, fixture, value, x):
    g = request.getfixturevalue(fixture)
    solution = solve_gufp(g)
    assert solution.value == approx(value)
    assert solution.x == approx(x)
    assert solution.relaxation_value == approx(value)
    assert check_gufp_feasible(g, solution.x)


def test_solve_gufp_fractional_relaxation():
    base = np.ones((1, 1))
    demands = tuple((SeparableStepFunction((w,), 0, 0),) for w in (2.0, 2.0))
    g = GufpInstance((base,), (False,), np.array([3.0, 2.0]), demands, (np.array([3.0]),))
    solution = solve_gufp(g)
    assert solution.relaxation_value == approx(4.0)
    assert solution.value == approx(3.0)
    assert solution.x == approx([1.0, 0.0])


def test_solve_gufp_empty():
    g = GufpInstance((np.ones((1, 2)),), (False,), np.zeros(0), (), (np.ones(2),))
    solution = solve_gufp(g)
    assert solution.value == 0.0
    assert solution.x.size == 0


def test_edge_partition_intervals():
    partition = EdgePartition(((0, 2, 3),), 5, (2.0,))
    assert partition.intervals(0) == [(0, 1), (2, 2), (3, 4)]
