import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curse_lab.assign import (AssignmentInstance, InfeasibleError, Matching, capacities_from_observed,
                              min_reduced_cost, solve, solve_with_duals)


def brute_force(scores, caps):
    """Best objective and lexicographically smallest optimal assignment by enumeration."""
    N, L = scores.shape
    best, best_a = -np.inf, None
    for a in itertools.product(range(L), repeat=N):  # lexicographic order
        if np.any(np.bincount(a, minlength=L) > caps):
            continue
        v = scores[np.arange(N), a].sum()
        if v > best + 1e-9:
            best, best_a = v, a
    return best, np.array(best_a)


def random_instance(rng, integer=False):
    N = int(rng.integers(1, 9))
    L = int(rng.integers(1, 5))
    caps = rng.integers(0, N + 1, L)
    while caps.sum() < N:
        caps[rng.integers(L)] += 1
    scores = rng.integers(0, 4, (N, L)).astype(float) if integer else rng.uniform(size=(N, L))
    return scores, caps


class TestExamples:
    def test_two_by_two(self):
        m, obj = solve(AssignmentInstance([[0.9, 0.1], [0.8, 0.7]], [1, 1]))
        assert list(m.assignment) == [0, 1]
        assert obj == pytest.approx(1.6)

    def test_all_equal_lexicographic(self):
        m, obj = solve(AssignmentInstance(np.full((5, 3), 0.4), [2, 2, 2]))
        assert obj == pytest.approx(2.0)
        assert list(m.assignment) == [0, 0, 1, 1, 2]

    def test_forced(self):
        m, _ = solve(AssignmentInstance(np.random.default_rng(0).uniform(size=(6, 4)), [6, 0, 0, 0]))
        assert np.all(m.assignment == 0)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            AssignmentInstance(np.ones((3, 2)), [1, 1])

    def test_invalid_scores(self):
        with pytest.raises(ValueError):
            AssignmentInstance([[np.nan, 1.0]], [1, 1])
        with pytest.raises(ValueError):
            AssignmentInstance([[1.0, 1.0]], [1, -1])


class TestOracleEquivalence:
    def test_thousand_instances(self):
        rng = np.random.default_rng(2024)
        for k in range(1000):
            scores, caps = random_instance(rng, integer=k % 2 == 1)
            m, obj = solve(AssignmentInstance(scores, caps))
            best, best_a = brute_force(scores, caps)
            assert m.is_feasible(caps)
            assert obj == pytest.approx(best, abs=1e-9)
            np.testing.assert_array_equal(m.assignment, best_a)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_property(self, seed):
        scores, caps = random_instance(np.random.default_rng(seed), integer=seed % 3 == 0)
        m, obj = solve(AssignmentInstance(scores, caps))
        assert obj == pytest.approx(brute_force(scores, caps)[0], abs=1e-9)


class TestCertificates:
    def test_reduced_costs_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            scores, caps = random_instance(rng)
            inst = AssignmentInstance(scores, caps)
            m, _, duals = solve_with_duals(inst)
            assert min_reduced_cost(inst, m, duals) >= -1e-9

    def test_reduced_costs_large(self):
        rng = np.random.default_rng(6)
        inst = AssignmentInstance(rng.uniform(size=(300, 20)), np.full(20, 15))
        m, _, duals = solve_with_duals(inst)
        assert min_reduced_cost(inst, m, duals) >= -1e-9

    def test_row_translation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            scores, caps = random_instance(rng)
            shifted = scores.copy()
            shifted[rng.integers(scores.shape[0])] += rng.normal() * 5
            a = solve(AssignmentInstance(scores, caps))[0].assignment
            b = solve(AssignmentInstance(shifted, caps))[0].assignment
            np.testing.assert_array_equal(a, b)

    def test_beats_random_matchings(self):
        rng = np.random.default_rng(8)
        scores = rng.uniform(size=(60, 5))
        caps = np.full(5, 12)
        _, obj = solve(AssignmentInstance(scores, caps))
        base = np.repeat(np.arange(5), 12)
        for _ in range(200):
            assert Matching(rng.permutation(base)).objective(scores) <= obj + 1e-12


def test_performance():
    rng = np.random.default_rng(9)
    inst = AssignmentInstance(rng.uniform(size=(1000, 43)), capacities_from_observed(
        rng.integers(0, 43, 1000), 43))
    solve(AssignmentInstance(rng.uniform(size=(10, 3)), [4, 4, 4]))  # compile
    t = time.perf_counter()
    m, _ = solve(inst)
    assert time.perf_counter() - t < 1.0
    assert m.is_feasible(inst.capacities)


def test_csv_round_trip(tmp_path):
    inst = AssignmentInstance([[0.25, 1.5], [3.0, -0.125]], [1, 2])
    inst.to_csv(tmp_path / "inst.csv")
    back = AssignmentInstance.from_csv(tmp_path / "inst.csv")
    np.testing.assert_array_equal(back.scores, inst.scores)
    np.testing.assert_array_equal(back.capacities, inst.capacities)


class TestCapacities:
    def test_counting(self):
        assert list(capacities_from_observed([0, 0, 1], 4)) == [2, 1, 0, 0]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=60), st.randoms(use_true_random=False))
    def test_sum_and_permutation(self, locs, rnd):
        caps = capacities_from_observed(locs, 10)
        assert caps.sum() == len(locs)
        shuffled = list(locs)
        rnd.shuffle(shuffled)
        np.testing.assert_array_equal(capacities_from_observed(shuffled, 10), caps)


def test_matching_helpers():
    m = Matching([0, 2, 2])
    assert list(m.loads(3)) == [1, 0, 2]
    assert m.is_feasible([1, 0, 2]) and not m.is_feasible([1, 1, 1])
    assert m.objective(np.arange(9.0).reshape(3, 3)) == 0 + 5 + 8
