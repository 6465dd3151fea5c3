"""Dense-matrix sampling, Gaussian moments, and Monte Carlo estimation.

Matrices are plain float64 numpy arrays in row-major order; everything here
runs in 64-bit because downstream identity checks involve 8th-order products
where float32 accumulation error would swamp the test tolerances.  Long
reductions go through numpy sums (pairwise) or Welford updates, never naive
left-to-right Python loops over large arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericalFailure
from .rng import SeedKey, generator


def as_matrix(entries, rows: int, cols: int) -> np.ndarray:
    """Validate and reshape ``entries`` into a (rows, cols) float64 matrix."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    m = np.asarray(entries, dtype=np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return np.ascontiguousarray(m)


def gaussian_matrix(rows: int, cols: int, key: SeedKey) -> np.ndarray:
    """A (rows, cols) matrix of i.i.d. N(0,1) entries drawn from ``key``'s stream."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    return generator(key).standard_normal((rows, cols))


#: Moments E[Z^k] of a standard normal for even k: (k-1)!!.
_EVEN_MOMENTS = {0: 1.0, 2: 1.0, 4: 3.0, 6: 15.0, 8: 105.0}


def standard_normal_moment(k: int) -> float:
    """E[Z^k] for Z ~ N(0,1); zero for odd k, (k-1)!! for even k.

    Orders above 8 never appear in the closed forms handled here, so they are
    rejected rather than silently extrapolated.
    """
    if k < 0:
        raise ValueError("moment order must be nonnegative")
    if k > 8:
        raise ValueError(f"unsupported moment order {k} (max 8)")
    if k % 2 == 1:
        return 0.0
    return _EVEN_MOMENTS[k]


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with its standard error.

    ``stderr`` is the sample standard deviation divided by sqrt(trials); it is
    ``None`` for a single trial, where no spread can be estimated.
    """

    mean: float
    stderr: Optional[float]
    trials: int

    def z_score(self, reference: float) -> float:
        """(mean - reference) / stderr; +/-inf when stderr is exactly zero."""
        if self.stderr is None:
            raise ValueError("stderr unavailable for a single trial")
        diff = self.mean - reference
        if self.stderr == 0.0:
            return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        return diff / self.stderr


class RunningMoments:
    """Streaming mean/variance (Welford), mergeable across blocks.

    Blocks are merged with Chan's parallel update, so feeding the same blocks
    in the same order always reproduces the same result no matter which worker
    computed each block.
    """

    __slots__ = ("count", "mean", "m2")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def add_block(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return
        mean = float(values.mean())
        m2 = float(np.square(values - mean).sum())
        self._merge_raw(n, mean, m2)

    def merge(self, other: "RunningMoments") -> None:
        self._merge_raw(other.count, other.mean, other.m2)

    def _merge_raw(self, n: int, mean: float, m2: float) -> None:
        if n == 0:
            return
        total = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / total
        self.m2 += m2 + delta * delta * self.count * n / total
        self.count = total

    def estimate(self) -> MCEstimate:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        if self.count == 1:
            return MCEstimate(self.mean, None, 1)
        variance = self.m2 / (self.count - 1)
        # tiny negative m2 can appear from cancellation on constant streams
        stderr = math.sqrt(max(variance, 0.0) / self.count)
        return MCEstimate(self.mean, stderr, self.count)


def mc_estimate(sampler: Callable[[SeedKey], float], trials: int, key: SeedKey) -> MCEstimate:
    """Estimate E[sampler] over ``trials`` independent trials.

    Trial ``t`` receives the child key ``key.child(t)``, so the estimate is a
    pure function of ``(sampler, trials, key)`` and trials could be evaluated
    in any order or in parallel; the reduction here walks trial indices in
    ascending order regardless.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    acc = RunningMoments()
    for t in range(trials):
        value = float(sampler(key.child(t)))
        if not math.isfinite(value):
            raise NumericalFailure(f"trial {t} produced non-finite value {value!r}", trial_index=t)
        acc.add(value)
    return acc.estimate()
