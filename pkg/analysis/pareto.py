"""
Pareto-front extraction over (accuracy, cost) points.
"""
from typing import Callable, List, Sequence, TypeVar

import numpy as np

from utils import InvalidArgumentError

T = TypeVar("T")


def _objectives(points: Sequence[T], accuracy: Callable[[T], float], cost: Callable[[T], float]):
    acc = np.array([float(accuracy(p)) for p in points], dtype=np.float64)
    cst = np.array([float(cost(p)) for p in points], dtype=np.float64)
    return acc, cst


def pareto_mask(acc: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """
    Boolean mask of non-dominated points (maximise accuracy, minimise cost).

    q dominates p when acc[q] >= acc[p] and cost[q] <= cost[p] with at
    least one strict. Exact ties dominate neither way, so both are kept.
    """
    acc = np.asarray(acc, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if acc.shape != cost.shape or acc.ndim != 1:
        raise InvalidArgumentError("accuracy and cost must be 1-D arrays of equal length")
    if acc.size == 0:
        raise InvalidArgumentError("pareto front of an empty point set")

    # Walk equal-cost groups cheapest first; only a group's most accurate
    # points survive, and only if they beat everything cheaper.
    order = np.lexsort((-acc, cost))
    keep = np.zeros(acc.size, dtype=bool)
    best_acc = -np.inf
    i = 0
    while i < order.size:
        j = i
        c = cost[order[i]]
        while j < order.size and cost[order[j]] == c:
            j += 1
        group = order[i:j]
        top = acc[group[0]]
        if top > best_acc:
            keep[group[acc[group] == top]] = True
            best_acc = top
        i = j
    return keep


def pareto_front(
    points: Sequence[T],
    accuracy: Callable[[T], float] = lambda p: p["accuracy"],
    cost: Callable[[T], float] = lambda p: p["bitops"],
) -> List[T]:
    """
    Maximal non-dominated subset, in input order.

    Raises:
        InvalidArgumentError: On an empty point set
    """
    if len(points) == 0:
        raise InvalidArgumentError("pareto front of an empty point set")
    acc, cst = _objectives(points, accuracy, cost)
    mask = pareto_mask(acc, cst)
    return [p for p, kept in zip(points, mask) if kept]


def brute_force_front(
    points: Sequence[T],
    accuracy: Callable[[T], float] = lambda p: p["accuracy"],
    cost: Callable[[T], float] = lambda p: p["bitops"],
) -> List[T]:
    """O(n^2) domination filter."""
    if len(points) == 0:
        raise InvalidArgumentError("pareto front of an empty point set")
    acc, cst = _objectives(points, accuracy, cost)
    kept = []
    for i, p in enumerate(points):
        dominated = any(
            acc[j] >= acc[i] and cst[j] <= cst[i] and (acc[j] > acc[i] or cst[j] < cst[i])
            for j in range(len(points))
        )
        if not dominated:
            kept.append(p)
    return kept
