"""Gradient diversity, the batch-size bound, and the implied safe batch size.

Diversity of a gradient set is the ratio of the summed squared norms to the
squared norm of the sum.  The cross term between distinct gradients is
recovered from the identity ||sum g||^2 = sum ||g||^2 + cross, which costs one
pass over the sum vector; the O(n^2) pairwise sum is kept only as a test
oracle for that identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiversityReport:
    """All Definition-level quantities for one gradient set.

    For the degenerate all-zero set the ratio is 0/0; ``delta`` and
    ``batch_bound`` are NaN and ``degenerate`` is set so callers must branch
    explicitly instead of silently reading a made-up number.
    """

    n: int
    sum_sq_norms: float
    cross_term: float
    norm_of_sum_sq: float
    delta: float
    batch_bound: float

    @property
    def degenerate(self) -> bool:
        return math.isnan(self.delta)


def _report_from_moments(n: int, sum_sq: float, norm_of_sum: float) -> DiversityReport:
    cross = norm_of_sum - sum_sq
    if norm_of_sum > 0.0:
        delta = sum_sq / norm_of_sum
    elif sum_sq > 0.0:
        delta = math.inf  # gradients cancel exactly; no clamping by design
    else:
        delta = math.nan
    return DiversityReport(n, sum_sq, cross, norm_of_sum, delta, n * delta)


def diversity_report(gradients) -> DiversityReport:
    """Diversity of a list of flat gradient vectors (all the same length)."""
    grads = [np.asarray(g, dtype=np.float64).ravel() for g in gradients]
    if not grads:
        raise ValueError("diversity needs at least one gradient")
    dim = grads[0].size
    if any(g.size != dim for g in grads):
        raise ValueError("gradients must all have the same length")
    stack = np.stack(grads)
    sum_sq = float(np.square(stack).sum())
    total = stack.sum(axis=0)
    norm_of_sum = float(total @ total)
    return _report_from_moments(len(grads), sum_sq, norm_of_sum)


def report_from_moments(n: int, sum_sq_norms: float, norm_of_sum_sq: float) -> DiversityReport:
    """Build a report from precomputed moments (streaming dataset path)."""
    if n < 1:
        raise ValueError("n must be positive")
    return _report_from_moments(n, float(sum_sq_norms), float(norm_of_sum_sq))


def pairwise_cross_sum(gradients) -> float:
    """Sum over ordered pairs i != j of <g_i, g_j>, by explicit O(n^2) products.

    Slow on purpose; it is the independent oracle for the norm-identity fast
    path in :func:`diversity_report`.
    """
    grads = [np.asarray(g, dtype=np.float64).ravel() for g in gradients]
    if not grads:
        raise ValueError("diversity needs at least one gradient")
    dim = grads[0].size
    if any(g.size != dim for g in grads):
        raise ValueError("gradients must all have the same length")
    total = 0.0
    for i, gi in enumerate(grads):
        for j, gj in enumerate(grads):
            if i != j:
                total += float(gi @ gj)
    return total


@dataclass(frozen=True)
class ImpliedBatchQuery:
    """Inputs of the safe-batch rule B <= slack * n * diversity + 1."""

    delta_slack: float
    n: int
    diversity: float

    def __post_init__(self):
        if self.delta_slack <= 0.0:
            raise ValueError("delta_slack must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.diversity < 0.0:
            raise ValueError("diversity must be nonnegative")


def implied_safe_batch(q: ImpliedBatchQuery) -> int:
    """floor(slack * n * diversity + 1), at least 1."""
    return max(1, int(math.floor(q.delta_slack * q.n * q.diversity + 1.0)))
