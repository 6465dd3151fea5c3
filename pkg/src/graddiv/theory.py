"""Exact expectations and bounds for Gaussian-weight networks.

Everything here is closed-form evaluation, no sampling.  Width lists name the
layers K_0..K_{L-1} of a linear network with a single output (K_L = 1), all
weights, teacher weights, and inputs i.i.d. N(0,1).  Products over empty index
ranges are 1.

The asymptotic bounds (`nonlinear_ratio_bound`, `two_layer_lnn_batch_ratio`)
are exposed as bare rational shapes with all hidden constants set to 1; they
support trend and monotonicity statements only, never value comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple


def _check_widths(widths: Sequence[int], minimum: int = 1) -> Tuple[int, ...]:
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("need at least two layers (L >= 2): widths list K_0..K_{L-1}")
    if any(w < minimum for w in widths):
        raise ValueError(f"every width must be >= {minimum}, got {widths}")
    return widths


@dataclass(frozen=True)
class ClosedFormReport:
    """All exact expectation quantities for one (widths, n) configuration."""

    widths: Tuple[int, ...]
    n: int
    M: float
    e_n_sum_sq: float
    e_cross: float
    e_norm_of_sum: float
    rho: float
    rho_lower_bound: float


def normalizer(widths: Sequence[int], n: int) -> float:
    """M = n^2 * prod_l K_l (K_l + 2)."""
    m = float(n * n)
    for k in widths:
        m *= k * (k + 2)
    return m


def _cross_inner_sum(widths: Tuple[int, ...]) -> float:
    """sum_phi (L-phi)/(K_phi - 1) prod_{l<=phi} (K_l-1)/(K_l+2)  +  (L/K_0) prod_l K_l/(K_l+2)."""
    L = len(widths)
    total = 0.0
    prefix = 1.0
    for phi, k in enumerate(widths):
        prefix *= (k - 1) / (k + 2)
        total += (L - phi) / (k - 1) * prefix
    tail = 1.0
    for k in widths:
        tail *= k / (k + 2)
    total += L / widths[0] * tail
    return total


def expected_n_sum_sq(widths: Sequence[int], n: int) -> float:
    """Exact E[n sum_i ||grad f_i||^2]; valid for any widths >= 1."""
    widths = _check_widths(widths)
    if n < 1:
        raise ValueError("n must be positive")
    L = len(widths)
    shrink = 1.0
    for k in widths[1:]:
        shrink *= k / (k + 2)
    return normalizer(widths, n) * L * (1.0 + shrink)


def expected_cross(widths: Sequence[int], n: int) -> float:
    """Exact E[sum_{i!=j} <grad f_i, grad f_j>]; requires every width >= 2."""
    widths = _check_widths(widths)
    if n < 1:
        raise ValueError("n must be positive")
    if any(w < 2 for w in widths):
        raise ValueError("cross-term closed form requires every width >= 2")
    return normalizer(widths, n) * (n - 1) / n * _cross_inner_sum(widths)


def mullnn_expectations(widths: Sequence[int], n: int) -> ClosedFormReport:
    """Exact E[n sum ||grad f_i||^2], E[sum_{i!=j} <grad f_i, grad f_j>], and their ratio.

    The cross term divides by K_phi - 1, so every width must be at least 2.
    ``e_norm_of_sum`` is synthesized as ``e_n_sum_sq / n + e_cross`` (exact by
    linearity), and ``rho = e_n_sum_sq / e_norm_of_sum``.
    """
    widths = _check_widths(widths, minimum=2)
    if n < 1:
        raise ValueError("n must be positive")
    M = normalizer(widths, n)
    e_n_sum_sq = expected_n_sum_sq(widths, n)
    e_cross = expected_cross(widths, n)
    e_norm_of_sum = e_n_sum_sq / n + e_cross
    return ClosedFormReport(
        widths=widths,
        n=n,
        M=M,
        e_n_sum_sq=e_n_sum_sq,
        e_cross=e_cross,
        e_norm_of_sum=e_norm_of_sum,
        rho=e_n_sum_sq / e_norm_of_sum,
        rho_lower_bound=lnn_ratio_lower_bound(widths),
    )


def lnn_ratio_lower_bound(widths: Sequence[int]) -> float:
    """L / (sum_{phi=1}^{L-1} (L-phi)/(K_phi-1) + 2L/(d-1)).

    Lower-bounds the expectation ratio of a deep linear network when the
    sample count is large enough; see :func:`min_samples_for_bound` for the
    exact crossover.
    """
    widths = _check_widths(widths, minimum=2)
    L = len(widths)
    d = widths[0]
    denom = 2.0 * L / (d - 1)
    for phi in range(1, L):
        denom += (L - phi) / (widths[phi] - 1)
    return L / denom


def min_samples_for_bound(widths: Sequence[int]) -> int:
    """Smallest n at which rho(widths, n) >= lnn_ratio_lower_bound(widths).

    rho is increasing in n toward L(1+P)/S, which always clears the bound; at
    small n the ratio can sit below it (the bound's hypotheses include a large
    sample count).  Solves the crossover exactly from the closed forms.
    """
    widths = _check_widths(widths, minimum=2)
    L = len(widths)
    P = 1.0
    for k in widths[1:]:
        P *= k / (k + 2)
    S = _cross_inner_sum(widths)
    bound = lnn_ratio_lower_bound(widths)
    D = L / bound
    # rho(n) >= L/D  <=>  n * ((1+P) D - S) >= L (1+P) - S
    gap = (1.0 + P) * D - S
    if gap <= 0.0:
        raise ArithmeticError("bound denominator does not dominate the cross sum")
    return max(1, math.ceil((L * (1.0 + P) - S) / gap))


def equal_width_bound(d: int, K: int, L: int) -> float:
    """1 / ((L-1)/(2(K-1)) + 2/(d-1)): the bound when all hidden widths equal K."""
    if d < 2 or K < 2 or L < 2:
        raise ValueError("equal-width bound needs d, K, L all >= 2")
    return 1.0 / ((L - 1) / (2.0 * (K - 1)) + 2.0 / (d - 1))


def _layer_dims(widths: Tuple[int, ...], a: int) -> Tuple[int, int]:
    L = len(widths)
    if not 1 <= a <= L:
        raise ValueError(f"layer index {a} outside 1..{L}")
    return (1 if a == L else widths[a]), widths[a - 1]


def per_layer_sq_entry(widths: Sequence[int], a: int) -> float:
    """E[(df_i/dW_{a,p,q})^2], independent of (p, q); valid for widths >= 1."""
    widths = _check_widths(widths)
    k_a, k_prev = _layer_dims(widths, a)
    d = widths[0]
    prod_full = 1.0  # prod_{l=1}^{L-1} K_l (K_l + 2)
    prod_sq = 1.0  # prod_{l=1}^{L-1} K_l^2
    for k in widths[1:]:
        prod_full *= k * (k + 2)
        prod_sq *= k * k
    return d * (d + 2) / (k_a * k_prev) * (prod_full + prod_sq)


def per_layer_cross_entry(widths: Sequence[int], a: int) -> float:
    """E[df_i/dW_{a,p,q} * df_j/dW_{a,p,q}] for i != j; requires widths >= 2."""
    widths = _check_widths(widths, minimum=2)
    k_a, k_prev = _layer_dims(widths, a)
    d = widths[0]
    inner = 0.0
    prefix = 1.0
    for phi in range(a):
        k = widths[phi]
        prefix *= (k - 1) / (k + 2)
        inner += prefix / (k - 1)
    tail = 1.0
    for k in widths:
        tail *= k / (k + 2)
    inner += tail / d
    return normalizer(widths, 1) / (k_a * k_prev) * inner


def per_layer_expectations(widths: Sequence[int], a: int) -> Tuple[float, float]:
    """Per-entry expectations for the gradient block of layer ``a``.

    Returns ``(e_sq_entry, e_cross_entry)``; both are independent of the entry
    (p, q).  ``a`` runs 1..L and K_L = 1 for the output layer.
    """
    return per_layer_sq_entry(widths, a), per_layer_cross_entry(widths, a)


@dataclass(frozen=True)
class MomentProfile:
    """Moments of the weight, teacher-weight, and input distributions.

    ``m_w2``/``m_w4`` are shared by every student layer, ``m_wstar2`` by every
    teacher layer; only second teacher moments enter the two-layer forms.
    """

    m_w2: float = 1.0
    m_w4: float = 3.0
    m_x2: float = 1.0
    m_x4: float = 3.0
    m_wstar2: float = 1.0

    def __post_init__(self):
        for name in ("m_w2", "m_w4", "m_x2", "m_x4", "m_wstar2"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.m_w4 < self.m_w2**2 or self.m_x4 < self.m_x2**2:
            raise ValueError("fourth moments must dominate squared second moments")


class TwoLayerEntryExpectations(NamedTuple):
    """Per-entry expectations of a 2-layer linear network under a MomentProfile."""

    hidden_sq: float  # E (df_i/dW_{1,p,q})^2
    output_sq: float  # E (df_i/dW_{2,1,q})^2
    hidden_cross: float  # E df_i/dW_{1,p,q} * df_j/dW_{1,p,q},  i != j
    output_cross: float  # E df_i/dW_{2,1,q} * df_j/dW_{2,1,q},  i != j


def two_layer_entry_expectations(moments: MomentProfile, K: int, d: int) -> TwoLayerEntryExpectations:
    """Exact two-layer per-entry expectations from the moment bookkeeping.

    The output-layer terms are assembled from the term-by-term expansion
    (student sum split at s = q, plus the teacher part).  The s = q student
    term carries the fourth weight moment; at standard-normal moments every
    value matches the general per-layer formulas at L = 2, and the Monte Carlo
    estimators confirm the same numbers.
    """
    if K < 1 or d < 1:
        raise ValueError("K and d must be positive")
    w2, w4 = moments.m_w2, moments.m_w4
    x2, x4 = moments.m_x2, moments.m_x4
    t2 = moments.m_wstar2

    x_quad = (d - 1) * x2 * x2 + x4  # E over one example of the q-weighted input factor

    hidden_sq = w2 * ((K - 1) * w2 * w2 + w4) * x_quad + t2 * K * t2 * t2 * x_quad

    student_out = w2 * (
        (K - 1) * d * w2 * w2 * x_quad + d * w4 * x4 + 3.0 * d * (d - 1) * w2 * w2 * x2 * x2
    )
    teacher_out = K * t2 * d * t2 * w2 * x_quad
    output_sq = student_out + teacher_out

    hidden_cross = w2 * ((K - 1) * w2 * w2 + w4) * x2 * x2 + t2 * K * w2 * t2 * x2 * x2

    student_out_cross = w2 * (
        (K - 1) * d * w2 * w2 * x2 * x2 + d * w4 * x2 * x2 + d * (d - 1) * w2 * w2 * x2 * x2
    )
    teacher_out_cross = K * d * t2 * t2 * w2 * x2 * x2
    output_cross = student_out_cross + teacher_out_cross

    return TwoLayerEntryExpectations(hidden_sq, output_sq, hidden_cross, output_cross)


def nonlinear_ratio_bound(K: int, d: int) -> float:
    """K d^2 / (K d + K + d): order-only lower-bound shape for bounded odd activations.

    The hidden constant is not published; use for monotonicity and trend
    statements only.
    """
    if K < 1 or d < 1:
        raise ValueError("K and d must be positive")
    return K * d * d / (K * d + K + d)


def two_layer_lnn_batch_ratio(K: int, d: int, n: int | None = None) -> float:
    """n K d / (K n + d n + K d), constants suppressed; n=None gives the large-n limit K d/(K+d)."""
    if K < 1 or d < 1:
        raise ValueError("K and d must be positive")
    if n is None:
        return K * d / (K + d)
    if n < 1:
        raise ValueError("n must be positive")
    return n * K * d / (K * n + d * n + K * d)
