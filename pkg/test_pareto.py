"""
Tests for Pareto-front extraction.
"""
import numpy as np
import pytest

from analysis import brute_force_front, pareto_front, pareto_mask
from utils import InvalidArgumentError


def _points(pairs):
    return [{"accuracy": acc, "bitops": cost} for acc, cost in pairs]


def test_single_point_is_its_own_front():
    points = _points([(0.5, 7)])
    assert pareto_front(points) == points


def test_dominated_point_is_dropped():
    points = _points([(0.9, 10), (0.8, 20)])
    assert pareto_front(points) == points[:1]


def test_trade_off_keeps_both_in_input_order():
    points = _points([(0.95, 30), (0.7, 5), (0.8, 40)])
    assert pareto_front(points) == [points[0], points[1]]


def test_exact_ties_are_all_kept():
    points = _points([(0.9, 10), (0.9, 10), (0.9, 12), (0.85, 10)])
    assert pareto_front(points) == points[:2]


def test_equal_accuracy_keeps_cheapest():
    points = _points([(0.9, 12), (0.9, 10)])
    assert pareto_front(points) == [points[1]]


def test_empty_input():
    with pytest.raises(InvalidArgumentError, match="empty"):
        pareto_front([])
    with pytest.raises(InvalidArgumentError):
        pareto_mask(np.array([]), np.array([]))


def test_mismatched_objectives():
    with pytest.raises(InvalidArgumentError):
        pareto_mask(np.zeros(3), np.zeros(4))


def test_custom_objectives():
    points = [("a", 0.9, 100), ("b", 0.8, 50)]
    front = pareto_front(points, accuracy=lambda p: p[1], cost=lambda p: p[2])
    assert [p[0] for p in front] == ["a", "b"]


@pytest.mark.parametrize("seed", range(1000))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    # Coarse values so that ties in either objective are common
    acc = rng.integers(0, 20, size=n) / 20
    cost = rng.integers(0, 15, size=n) * 1000
    points = _points(zip(acc.tolist(), cost.tolist()))
    assert pareto_front(points) == brute_force_front(points)


def test_front_is_mutually_non_dominated(rng):
    acc = rng.uniform(size=200)
    cost = rng.uniform(size=200)
    mask = pareto_mask(acc, cost)
    front = np.flatnonzero(mask)
    for i in front:
        dominated = (acc >= acc[i]) & (cost <= cost[i]) & ((acc > acc[i]) | (cost < cost[i]))
        assert not dominated.any()
    for i in np.flatnonzero(~mask):
        dominated = (acc >= acc[i]) & (cost <= cost[i]) & ((acc > acc[i]) | (cost < cost[i]))
        assert dominated.any()
