"""Monte Carlo estimation of the gradient expectations, against the closed forms.

Sampling scheme
---------------
Trials are processed in fixed blocks of :data:`BLOCK_SIZE`.  Block ``b`` draws
from the child key ``key.child(b)`` and consumes its stream sequentially, one
trial after another, so the trial-to-stream mapping is a pure function of the
key and never depends on scheduling; blocks may be evaluated by a worker pool
and are merged into the Welford accumulators in ascending block order.

For the linear-network estimators each trial consumes ``2P + n*d`` standard
normals laid out as [student weights | teacher weights | inputs], which is
exactly the order :func:`trial_grad_statistics` draws them in, so the fast
kernels and the general backprop route see the same numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _backend, network, theory
from .errors import NumericalFailure, UnsupportedActivation
from .network import ActivationKind, NetworkShape, WeightStack
from .numerics import MCEstimate, RunningMoments
from .rng import SeedKey, generator

#: Trials per block; part of the stream layout, so changing it changes results.
BLOCK_SIZE = 4096


@dataclass(frozen=True)
class MCConfig:
    """One Monte Carlo verification setup.

    ``widths`` lists K_0..K_{L-1}; the output layer is always width 1 here.
    """

    widths: Tuple[int, ...]
    n: int
    trials: int
    key: SeedKey
    activation: ActivationKind = ActivationKind.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("widths must list K_0..K_{L-1} with L >= 2")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.trials < 2:
            raise ValueError("need at least 2 trials for a standard error")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(self.widths + (1,), self.activation)

    def normals_per_trial(self) -> int:
        p = self.shape.parameter_count()
        return 2 * p + self.n * self.widths[0]


def suggested_trials(widths: Sequence[int], n: int) -> int:
    """Heuristic trial count scaled by the K^4 d^3 / n^2 variance order.

    Order-only guidance anchored at 2*10^5 trials for widths <= 8, n <= 5;
    clipped to [2*10^4, 2*10^6].
    """
    k = max(widths)
    d = widths[0]
    factor = (k / 8.0) ** 4 * (d / 8.0) ** 3 / (n / 5.0) ** 2
    return int(min(max(2e5 * max(factor, 0.1), 2e4), 2e6))


def _sample_stack(gen, shape: NetworkShape) -> WeightStack:
    return WeightStack(tuple(gen.standard_normal(dims) for dims in shape.layer_dims()), shape)


def trial_grad_statistics(cfg: MCConfig, trial_key: SeedKey) -> Tuple[float, float, float]:
    """One trial's (n*sum||g_i||^2, ||sum g_i||^2, cross), via full backprop.

    Draws a fresh student stack, teacher stack, and inputs from ``trial_key``
    (weights N(0,1)), labels the inputs with the teacher, and reduces the
    per-example gradients.  Works for every activation; the fast linear
    kernels must agree with this route on linear configs.
    """
    gen = generator(trial_key)
    shape = cfg.shape
    student = _sample_stack(gen, shape)
    teacher = _sample_stack(gen, shape)
    X = gen.standard_normal((cfg.n, cfg.widths[0]))
    Y = network.forward_batch(teacher, X)
    sum_sq, flat_sum, _ = network.gradient_moments(student, X, Y)
    norm_of_sum = float(flat_sum @ flat_sum)
    if not (math.isfinite(sum_sq) and math.isfinite(norm_of_sum)):
        raise NumericalFailure("trial produced non-finite gradient statistics")
    cross = 0.0 if cfg.n == 1 else norm_of_sum - sum_sq
    return cfg.n * sum_sq, norm_of_sum, cross


def _block_sizes(trials: int) -> List[int]:
    sizes = []
    left = trials
    while left > 0:
        sizes.append(min(left, BLOCK_SIZE))
        left -= sizes[-1]
    return sizes


def _run_blocks(cfg: MCConfig, block_fn, columns: int, jobs: int = 1) -> List[RunningMoments]:
    """Evaluate ``block_fn(block_index, block_trials)`` over all blocks.

    Results are merged in ascending block order whatever the execution order,
    so ``jobs`` changes wall time only.
    """
    sizes = _block_sizes(cfg.trials)
    accs = [RunningMoments() for _ in range(columns)]

    def consume(values: np.ndarray) -> None:
        if not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values))[0][0])
            raise NumericalFailure("non-finite trial value in Monte Carlo block", trial_index=bad)
        for c in range(columns):
            accs[c].add_block(values[:, c])

    if jobs <= 1:
        for b, size in enumerate(sizes):
            consume(block_fn(b, size))
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(block_fn, b, size) for b, size in enumerate(sizes)]
            for fut in futures:
                consume(fut.result())
    return accs


def _linear_normals_block(cfg: MCConfig, block_index: int, block_trials: int) -> np.ndarray:
    gen = generator(cfg.key.child(block_index))
    return gen.standard_normal((block_trials, cfg.normals_per_trial()))


def estimate_grad_expectations(
    cfg: MCConfig, jobs: int = 1
) -> Tuple[MCEstimate, MCEstimate, MCEstimate]:
    """Estimates of (E[n sum||g_i||^2], E[||sum g_i||^2], E[cross]).

    Linear configs run on the selected kernel backend; other activations go
    through the general backprop route (useful for trend studies only).
    """
    if cfg.activation is ActivationKind.LINEAR:

        def block(b: int, size: int) -> np.ndarray:
            stats = _backend.lnn_block_stats(_linear_normals_block(cfg, b, size), cfg.widths, cfg.n)
            if cfg.n == 1:
                stats[:, 2] = 0.0
            return stats

    else:

        def block(b: int, size: int) -> np.ndarray:
            gen = generator(cfg.key.child(b))
            shape = cfg.shape
            out = np.empty((size, 3))
            for r in range(size):
                student = _sample_stack(gen, shape)
                teacher = _sample_stack(gen, shape)
                X = gen.standard_normal((cfg.n, cfg.widths[0]))
                Y = network.forward_batch(teacher, X)
                sum_sq, flat_sum, _ = network.gradient_moments(student, X, Y)
                norm_of_sum = float(flat_sum @ flat_sum)
                cross = 0.0 if cfg.n == 1 else norm_of_sum - sum_sq
                out[r] = (cfg.n * sum_sq, norm_of_sum, cross)
            return out

    accs = _run_blocks(cfg, block, 3, jobs)
    return tuple(acc.estimate() for acc in accs)  # type: ignore[return-value]


def estimate_per_layer(
    cfg: MCConfig, a: int, entry: Tuple[int, int] = (0, 0), jobs: int = 1
) -> Tuple[MCEstimate, MCEstimate]:
    """Estimates of the layer-``a`` per-entry squared and cross expectations.

    Each trial contributes the average of (df_i/dW_{a,p,q})^2 over its n
    examples and the average of df_i * df_j over ordered pairs, which estimate
    the same expectations with lower variance than a single-example draw.
    """
    if cfg.activation is not ActivationKind.LINEAR:
        raise UnsupportedActivation("per-entry closed forms exist only for linear networks")
    if cfg.n < 2:
        raise ValueError("per-entry cross estimation needs n >= 2")
    p, q = entry

    def block(b: int, size: int) -> np.ndarray:
        return _backend.lnn_block_entry_stats(
            _linear_normals_block(cfg, b, size), cfg.widths, cfg.n, a, p, q
        )

    accs = _run_blocks(cfg, block, 2, jobs)
    return accs[0].estimate(), accs[1].estimate()


def estimate_layer_blocks(cfg: MCConfig, jobs: int = 1) -> List[Tuple[MCEstimate, MCEstimate]]:
    """Entry-averaged per-layer estimates for all layers, in one sampling pass.

    Every entry (p, q) of a layer block shares one squared and one cross
    expectation (the closed forms depend on the layer only), so averaging the
    per-trial statistic over all entries of the layer estimates the same
    per-entry value as :func:`estimate_per_layer` with much lower variance.
    Returns [(sq, cross)] indexed by layer a-1.
    """
    if cfg.activation is not ActivationKind.LINEAR:
        raise UnsupportedActivation("per-entry closed forms exist only for linear networks")
    if cfg.n < 2:
        raise ValueError("per-entry cross estimation needs n >= 2")
    L = cfg.depth

    def block(b: int, size: int) -> np.ndarray:
        return _backend.lnn_block_layer_stats(_linear_normals_block(cfg, b, size), cfg.widths, cfg.n)

    accs = _run_blocks(cfg, block, 2 * L, jobs)
    return [(accs[a].estimate(), accs[L + a].estimate()) for a in range(L)]


@dataclass(frozen=True)
class ComparisonReport:
    """One empirical-vs-closed-form gate result."""

    name: str
    empirical: Optional[MCEstimate]
    closed_form: Optional[float]
    z_score: float
    rel_error: float
    passed: bool
    note: str = ""

    @property
    def skipped(self) -> bool:
        return self.empirical is None


def gate_report(name: str, est: MCEstimate, closed_form: float, z_tol: float, rel_tol: float) -> ComparisonReport:
    z = est.z_score(closed_form)
    diff = abs(est.mean - closed_form)
    if closed_form != 0.0:
        rel = diff / abs(closed_form)
    else:
        rel = 0.0 if diff == 0.0 else math.inf
    return ComparisonReport(name, est, closed_form, z, rel, abs(z) <= z_tol and rel <= rel_tol)


def compare(cfg: MCConfig, z_tol: float = 4.0, rel_tol: float = 0.03, jobs: int = 1) -> List[ComparisonReport]:
    """Gate every closed-form quantity against its Monte Carlo estimate.

    Produces the three totals plus per-layer per-entry reports.  A report
    passes when |z| <= z_tol AND relative error <= rel_tol; the two-part gate
    keeps tiny-stderr runs from failing on noise and large-stderr runs from
    passing vacuously.  Cross quantities are skipped (not failed) when some
    width is 1, where their closed forms are undefined.
    """
    if cfg.activation is not ActivationKind.LINEAR:
        raise UnsupportedActivation("closed-form comparison is defined for linear networks")
    reports: List[ComparisonReport] = []
    cross_ok = all(w >= 2 for w in cfg.widths)
    skip_note = "precondition K_ell >= 2 unmet"

    est_nss, est_norm, est_cross = estimate_grad_expectations(cfg, jobs=jobs)
    cf_nss = theory.expected_n_sum_sq(cfg.widths, cfg.n)
    reports.append(gate_report("total_n_sum_sq", est_nss, cf_nss, z_tol, rel_tol))
    if cross_ok:
        cf_cross = theory.expected_cross(cfg.widths, cfg.n)
        reports.append(gate_report("total_norm_of_sum", est_norm, cf_nss / cfg.n + cf_cross, z_tol, rel_tol))
        reports.append(gate_report("total_cross", est_cross, cf_cross, z_tol, rel_tol))
    else:
        reports.append(ComparisonReport("total_norm_of_sum", None, None, math.nan, math.nan, True, skip_note))
        reports.append(ComparisonReport("total_cross", None, None, math.nan, math.nan, True, skip_note))

    if cfg.n >= 2:
        layer_estimates = estimate_layer_blocks(cfg, jobs=jobs)
        for a in range(1, cfg.depth + 1):
            est_sq, est_cr = layer_estimates[a - 1]
            cf_sq = theory.per_layer_sq_entry(cfg.widths, a)
            reports.append(gate_report(f"layer{a}_sq_entry", est_sq, cf_sq, z_tol, rel_tol))
            if cross_ok:
                cf_cr = theory.per_layer_cross_entry(cfg.widths, a)
                reports.append(gate_report(f"layer{a}_cross_entry", est_cr, cf_cr, z_tol, rel_tol))
            else:
                reports.append(
                    ComparisonReport(f"layer{a}_cross_entry", None, None, math.nan, math.nan, True, skip_note)
                )
    return reports


@dataclass(frozen=True)
class NonlinearTermEstimate:
    """Estimates of the two-layer decomposition terms A1, A2, B1, B2."""

    a1: MCEstimate
    a2: MCEstimate
    b1: MCEstimate
    b2: MCEstimate

    def ratio(self) -> float:
        """(A1 + A2) / (B1 + B2): the nonlinear expectation ratio."""
        return (self.a1.mean + self.a2.mean) / (self.b1.mean + self.b2.mean)


_BOUNDED = (ActivationKind.TANH, ActivationKind.SOFTSIGN, ActivationKind.ARCTAN)


def twolayer_terms_trial(cfg: MCConfig, trial_key: SeedKey) -> Tuple[float, float, float, float, float, float]:
    """One full-resample trial: (A1, A2, B1, B2, n*sum||g_i||^2, ||sum g_i||^2).

    A1/B1 cover the hidden-layer gradient block, A2/B2 the output layer; the
    last two values come from the independent backprop route so tests can
    check A1 + A2 and B1 + B2 against them.
    """
    if cfg.activation not in _BOUNDED:
        raise UnsupportedActivation(f"{cfg.activation} not covered by the nonlinear decomposition")
    if cfg.depth != 2:
        raise ValueError("the A/B decomposition is for 2-layer networks")
    d, K = cfg.widths
    gen = generator(trial_key)
    shape = cfg.shape
    student = _sample_stack(gen, shape)
    teacher = _sample_stack(gen, shape)
    X = gen.standard_normal((cfg.n, d))
    return _twolayer_terms(cfg, student, teacher, X)


def _twolayer_terms(cfg: MCConfig, student: WeightStack, teacher: WeightStack, X: np.ndarray):
    kind = cfg.activation
    W1, W2 = student.matrices
    Z = X @ W1.T
    S = network.activation_value(kind, Z)
    Dz = network.activation_derivative(kind, Z)
    S_t = network.activation_value(kind, X @ teacher.matrices[0].T)
    yhat = S @ W2.T
    y = S_t @ teacher.matrices[1].T
    e = (yhat - y)[:, 0]
    n = cfg.n

    xsq = np.square(X).sum(axis=1)
    w2 = W2[0]
    a1 = n * float((e * e * ((Dz * Dz) @ (w2 * w2)) * xsq).sum())
    a2 = n * float((e * e * np.square(S).sum(axis=1)).sum())
    b1 = float((w2 * w2) @ np.square((e[:, None] * Dz).T @ X).sum(axis=1))
    b2 = float(np.square(e @ S).sum())

    Y = y
    sum_sq, flat_sum, _ = network.gradient_moments(student, X, Y)
    return a1, a2, b1, b2, n * sum_sq, float(flat_sum @ flat_sum)


@dataclass(frozen=True)
class Conditioning:
    """Fixed first-layer weights and inputs for the conditioned-trend mode."""

    W1: np.ndarray
    W1_teacher: np.ndarray
    X: np.ndarray


def sample_conditioning(d: int, K: int, n: int, key: SeedKey, X: Optional[np.ndarray] = None) -> Conditioning:
    """Draw (W_1, W_1*, X) once; pass ``X`` to reuse inputs across widths."""
    gen = generator(key)
    W1 = gen.standard_normal((K, d))
    W1t = gen.standard_normal((K, d))
    if X is None:
        X = gen.standard_normal((n, d))
    return Conditioning(W1, W1t, X)


def estimate_nonlinear_terms(
    cfg: MCConfig, conditioning: Optional[Conditioning] = None, jobs: int = 1
) -> NonlinearTermEstimate:
    """Estimate (A1, A2, B1, B2) for a 2-layer bounded-activation network.

    Default mode resamples everything (teacher included) every trial.  With a
    ``conditioning``, only the output rows W_2 and W_2* are resampled, which
    is the expectation structure of the nonlinear ratio statement (taken over
    the output layers, conditioned on first layer and inputs).
    """
    if cfg.activation not in _BOUNDED:
        raise UnsupportedActivation(f"{cfg.activation} not covered by the nonlinear decomposition")
    if cfg.depth != 2:
        raise ValueError("the A/B decomposition is for 2-layer networks")
    d, K = cfg.widths

    if conditioning is None:

        def block(b: int, size: int) -> np.ndarray:
            gen = generator(cfg.key.child(b))
            shape = cfg.shape
            out = np.empty((size, 4))
            for r in range(size):
                student = _sample_stack(gen, shape)
                teacher = _sample_stack(gen, shape)
                X = gen.standard_normal((cfg.n, d))
                out[r] = _twolayer_terms(cfg, student, teacher, X)[:4]
            return out

    else:
        kind = cfg.activation
        X = conditioning.X
        if X.shape != (cfg.n, d) or conditioning.W1.shape != (K, d):
            raise ValueError("conditioning shapes disagree with the config")
        Z = X @ conditioning.W1.T
        S = np.ascontiguousarray(network.activation_value(kind, Z))
        Dz = np.ascontiguousarray(network.activation_derivative(kind, Z))
        S_t = np.ascontiguousarray(network.activation_value(kind, X @ conditioning.W1_teacher.T))
        Xc = np.ascontiguousarray(X)

        def block(b: int, size: int) -> np.ndarray:
            gen = generator(cfg.key.child(b))
            w2 = gen.standard_normal((size, K))
            w2_teacher = gen.standard_normal((size, K))
            return _backend.twolayer_block_terms(w2, w2_teacher, S, S_t, Dz, Xc)

    accs = _run_blocks(cfg, block, 4, jobs)
    return NonlinearTermEstimate(*(acc.estimate() for acc in accs))


def conditioned_trend(
    d: int,
    hidden_widths: Sequence[int],
    n: int,
    trials: int,
    conditionings: int,
    key: SeedKey,
    activation: ActivationKind = ActivationKind.TANH,
    jobs: int = 1,
) -> Tuple[int, List[List[float]]]:
    """Count conditionings where the expectation ratio rises monotonically in K.

    Every conditioning fixes one input sample X (shared across widths, so the
    widths are compared on the same data) and fresh (W_1, W_1*) per width,
    then estimates the ratio over W_2, W_2* draws.  Returns the number of
    monotone conditionings and the per-conditioning ratio lists.
    """
    hidden = list(hidden_widths)
    successes = 0
    all_ratios: List[List[float]] = []
    for c in range(conditionings):
        ckey = key.child(c)
        X = generator(ckey.child(0)).standard_normal((n, d))
        ratios = []
        for j, K in enumerate(hidden):
            cond = sample_conditioning(d, K, n, ckey.child(1 + j), X=X)
            cfg = MCConfig((d, K), n, trials, ckey.child(100 + j), activation)
            ratios.append(estimate_nonlinear_terms(cfg, conditioning=cond, jobs=jobs).ratio())
        all_ratios.append(ratios)
        if all(ratios[j] < ratios[j + 1] for j in range(len(ratios) - 1)):
            successes += 1
    return successes, all_ratios
