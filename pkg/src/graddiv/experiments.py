"""The training protocol: fixed-parameter grids, step-size tuning, mini-batch
SGD to a target, batch-size sweeps, and diversity traces.

The update rule is w <- w - step * SUM of the batch's per-example gradients,
with indices drawn i.i.d. uniformly with replacement; any 1/B normalization is
subsumed in the step size, which is why tuned steps shrink as the batch grows.
An epoch is ceil(n/B) iterations; the target metric is evaluated on the full
training set at every epoch boundary, including epoch 0 (initialization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import network
from .diversity import DiversityReport, report_from_moments
from .errors import InfeasibleBudget, NoViableStepSize
from .network import ActivationKind, Dataset, NetworkShape, WeightStack
from .rng import SeedKey, generator

#: Candidate step sizes used when no grid is supplied.
DEFAULT_LR_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1)

#: Batch grid 2^5..2^12.
DEFAULT_BATCH_GRID = tuple(2**i for i in range(5, 13))

DEFAULT_EPOCH_CAP = 250

#: A sweep's threshold batch B* is the largest batch whose epochs-to-target
#: stay within this factor of the fastest batch in the grid.
THRESHOLD_SLACK = 1.5


@dataclass(frozen=True)
class ParamBudget:
    """Total parameter count traded between depth and width."""

    p: int
    d_in: int
    d_out: int

    def __post_init__(self):
        if self.p <= 0 or self.d_in <= 0 or self.d_out <= 0:
            raise ValueError("budget fields must be positive")
        if self.p < self.d_in + self.d_out:
            raise ValueError("budget cannot be below d_in + d_out (width 1 at depth 1)")


def solve_width(budget: ParamBudget, L: int) -> int:
    """Hidden width K such that d_in*K + (L-1)*K^2 + K*d_out ~ p.

    ``L`` counts hidden layers: the architecture is d_in -> K (x L) -> d_out,
    so the weight count is d_in*K + (L-1)*K^2 + K*d_out.  For L >= 2 the
    width is the positive root of (L-1)K^2 + (d_in+d_out)K - p, rounded to
    nearest with ties up; for L = 1 it is p/(d_in+d_out) rounded.
    """
    if L < 1:
        raise ValueError("depth must be >= 1")
    b = budget.d_in + budget.d_out
    if L == 1:
        root = budget.p / b
    else:
        a = L - 1
        root = (-b + math.sqrt(b * b + 4.0 * a * budget.p)) / (2.0 * a)
    k = math.floor(root + 0.5)
    if k < 1:
        raise InfeasibleBudget(f"budget {budget.p} cannot realize width >= 1 at depth {L}")
    return int(k)


def budget_shape(budget: ParamBudget, L: int, activation: ActivationKind) -> NetworkShape:
    """The d_in -> K (x L hidden) -> d_out shape for depth L under the budget."""
    k = solve_width(budget, L)
    widths = (budget.d_in,) + (k,) * L + (budget.d_out,)
    return NetworkShape(widths, activation)


def make_synthetic(shape: NetworkShape, n: int, key: SeedKey, allow_nonlinear: bool = False):
    """Teacher-labeled regression data: x ~ N(0, I_d), y = teacher(x).

    The teacher weights are N(0,1) and the labels are exactly realizable by
    the teacher's own architecture (and, for a linear teacher, by any linear
    network wide enough to express its collapsed map).
    """
    if shape.activation is not ActivationKind.LINEAR and not allow_nonlinear:
        raise ValueError("synthetic teacher is linear; pass allow_nonlinear=True to override")
    if shape.output_dim != 1:
        raise ValueError("synthetic regression teacher has a single output")
    if n < 1:
        raise ValueError("n must be positive")
    teacher = network.sample_teacher(shape, key.child(0))
    X = generator(key.child(1)).standard_normal((n, shape.input_dim))
    y = network.forward_batch(teacher, X)[:, 0]
    return Dataset(X, y), teacher


def make_synthetic_classification(shape: NetworkShape, n: int, key: SeedKey):
    """Teacher-labeled classification data: label = argmax of the teacher output."""
    if shape.output_dim < 2:
        raise ValueError("classification needs at least 2 output units")
    teacher = network.sample_teacher(shape, key.child(0))
    X = generator(key.child(1)).standard_normal((n, shape.input_dim))
    labels = np.argmax(network.forward_batch(teacher, X), axis=1)
    return Dataset(X, labels, classes=shape.output_dim), teacher


@dataclass(frozen=True)
class TrainTarget:
    """Convergence target: training loss <= value, or training accuracy >= value."""

    kind: str  # "loss" | "accuracy"
    value: float

    def __post_init__(self):
        if self.kind not in ("loss", "accuracy"):
            raise ValueError("target kind must be 'loss' or 'accuracy'")

    def met(self, metric: float) -> bool:
        if not math.isfinite(metric):
            return False
        return metric <= self.value if self.kind == "loss" else metric >= self.value


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs besides the data and architecture."""

    batch_size: int
    target: TrainTarget
    seed: SeedKey
    step_size: Optional[float] = None  # tuned separately when None
    lr_grid: Tuple[float, ...] = DEFAULT_LR_GRID
    epoch_cap: int = DEFAULT_EPOCH_CAP
    allow_batch_over_n: bool = False
    shuffle_sampling: bool = False  # epoch-shuffled indices instead of with-replacement

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if not self.lr_grid:
            raise ValueError("lr grid must be nonempty")
        object.__setattr__(self, "lr_grid", tuple(sorted(float(g) for g in self.lr_grid)))
        if self.epoch_cap < 1:
            raise ValueError("epoch cap must be positive")


@dataclass
class TrainOutcome:
    """Result of one training run; epochs is None when the target was not reached."""

    epochs: Optional[int]
    final_metric: float
    diverged: bool
    gradient_evaluations: int
    weights: WeightStack

    @property
    def converged(self) -> bool:
        return self.epochs is not None


def evaluate_metric(weights: WeightStack, data: Dataset, target: TrainTarget) -> float:
    """Mean training loss, or training accuracy (argmax over outputs)."""
    Y = data.target_matrix(weights.shape.output_dim)
    with np.errstate(over="ignore", invalid="ignore"):
        out = network.forward_batch(weights, data.inputs)
        if target.kind == "loss":
            return 0.5 * float(np.square(out - Y).sum()) / data.n
        pred = np.argmax(out, axis=1)
        truth = data.targets if data.classes is not None else np.argmax(Y, axis=1)
        return float(np.mean(pred == truth))


def sgd_step(weights: WeightStack, X: np.ndarray, Y: np.ndarray, indices: np.ndarray, step_size: float) -> WeightStack:
    """One update: w - step_size * sum of the per-example gradients at ``indices``."""
    _, grads, _ = network.batch_loss_and_gradient_sum(weights, X[indices], Y[indices])
    mats = tuple(W - step_size * g for W, g in zip(weights.matrices, grads))
    return WeightStack(mats, weights.shape)


def _check_batch(data: Dataset, cfg: TrainConfig) -> None:
    if cfg.batch_size > data.n and not cfg.allow_batch_over_n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds n={data.n}; set allow_batch_over_n")


def _epoch_indices(gen, n: int, batch: int, shuffle: bool) -> List[np.ndarray]:
    iters = math.ceil(n / batch)
    if not shuffle:
        return [gen.integers(0, n, size=batch) for _ in range(iters)]
    perm = gen.permutation(n)
    return [perm[i * batch : (i + 1) * batch] for i in range(iters)]


def _run_epochs(
    weights: WeightStack,
    X: np.ndarray,
    Y: np.ndarray,
    cfg: TrainConfig,
    step_size: float,
    epochs: int,
    gen,
) -> Tuple[WeightStack, int]:
    """Run exactly ``epochs`` epochs; returns (weights, gradient evaluations)."""
    evals = 0
    n = X.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            for idx in _epoch_indices(gen, n, cfg.batch_size, cfg.shuffle_sampling):
                weights = sgd_step(weights, X, Y, idx, step_size)
                evals += idx.size
            if not all(np.all(np.isfinite(W)) for W in weights.matrices):
                return weights, evals  # diverged; caller inspects
    return weights, evals


def tune_step_size(
    shape: NetworkShape,
    data: Dataset,
    batch_size: int,
    lr_grid: Sequence[float],
    key: SeedKey,
    shuffle_sampling: bool = False,
) -> float:
    """The grid step size with the lowest mean training loss after two epochs.

    Every candidate starts from the same initialization and sees the same
    batch index stream, so the comparison is paired; a candidate that goes
    non-finite ranks last.  Raises NoViableStepSize if every candidate does.
    """
    if not lr_grid:
        raise ValueError("lr grid must be nonempty")
    grid = sorted(float(g) for g in lr_grid)
    init = network.init_training_weights(shape, key.child(0))
    X = data.inputs
    Y = data.target_matrix(shape.output_dim)
    loss_target = TrainTarget("loss", 0.0)
    cfg = TrainConfig(batch_size, loss_target, key, step_size=grid[0], shuffle_sampling=shuffle_sampling,
                      allow_batch_over_n=True)
    best_gamma, best_loss = None, math.inf
    for gamma in grid:
        gen = generator(key.child(1))  # same stream for every candidate
        w, _ = _run_epochs(init, X, Y, cfg, gamma, 2, gen)
        loss = evaluate_metric(w, data, loss_target)
        if math.isfinite(loss) and loss < best_loss:
            best_gamma, best_loss = gamma, loss
    if best_gamma is None:
        raise NoViableStepSize(f"all candidates in {grid} diverged within two epochs")
    return best_gamma


def train_to_target(
    shape: NetworkShape,
    data: Dataset,
    cfg: TrainConfig,
    snapshot_every: Optional[int] = None,
    snapshot_fn: Optional[Callable[[int, WeightStack], None]] = None,
) -> TrainOutcome:
    """Mini-batch SGD until the target metric is met or the epoch cap is hit.

    The target is checked at every epoch boundary starting with epoch 0, so a
    target already met at initialization reports 0 epochs.  Divergence
    (non-finite weights or metric) is reported in the outcome, not raised.
    ``snapshot_fn`` is invoked at epoch boundaries where
    ``epoch % snapshot_every == 0``, before any further updates.
    """
    if cfg.step_size is None:
        raise ValueError("train_to_target needs a tuned step size")
    _check_batch(data, cfg)
    weights = network.init_training_weights(shape, cfg.seed.child(0))
    gen = generator(cfg.seed.child(1))
    X = data.inputs
    Y = data.target_matrix(shape.output_dim)
    evals = 0
    metric = math.nan
    for epoch in range(cfg.epoch_cap + 1):
        metric = evaluate_metric(weights, data, cfg.target)
        if snapshot_fn is not None and snapshot_every and epoch % snapshot_every == 0:
            snapshot_fn(epoch, weights)
        if cfg.target.met(metric):
            return TrainOutcome(epoch, metric, False, evals, weights)
        if not math.isfinite(metric):
            return TrainOutcome(None, metric, True, evals, weights)
        if epoch == cfg.epoch_cap:
            break
        weights, done = _run_epochs(weights, X, Y, cfg, cfg.step_size, 1, gen)
        evals += done
    return TrainOutcome(None, metric, not math.isfinite(metric), evals, weights)


def measure_diversity(weights: WeightStack, data: Dataset) -> DiversityReport:
    """Gradient diversity over every example of ``data`` at the given weights."""
    Y = data.target_matrix(weights.shape.output_dim)
    sum_sq, flat_sum, _ = network.gradient_moments(weights, data.inputs, Y)
    return report_from_moments(data.n, sum_sq, float(flat_sum @ flat_sum))


def diversity_trace(shape: NetworkShape, data: Dataset, cfg: TrainConfig) -> Tuple[float, TrainOutcome]:
    """Average of full-dataset diversity snapshots taken every ten epochs.

    Epoch 0 is always snapshotted, so runs shorter than ten epochs still
    produce one measurement.  Degenerate snapshots (identically zero
    gradients, possible only after an exact fit) are skipped.
    """
    deltas: List[float] = []

    def snap(epoch: int, weights: WeightStack) -> None:
        rep = measure_diversity(weights, data)
        if not rep.degenerate:
            deltas.append(rep.delta)

    outcome = train_to_target(shape, data, cfg, snapshot_every=10, snapshot_fn=snap)
    if not deltas:
        return math.nan, outcome
    return float(np.mean(deltas)), outcome


@dataclass
class DepthScanRow:
    """One depth of a width-vs-depth diversity scan."""

    L: int
    K: int
    params: int
    activation: str
    avg_diversity: float
    runs: int
    seed: int


def synthetic_depth_scan(
    budget: ParamBudget,
    depths: Sequence[int],
    n: int,
    key: SeedKey,
    runs: int = 5,
) -> List[DepthScanRow]:
    """Measured gradient diversity of the fixed-budget linear family per depth.

    For each depth the architecture is the budget shape (hidden width from
    :func:`solve_width`); each of the ``runs`` draws samples a fresh N(0,1)
    teacher of that architecture, labels a shared x ~ N(0, I_d) sample with
    it, and measures full-dataset diversity at N(0,1) weights (the regime the
    closed forms describe, and the first trace snapshot of a run).  Inputs
    are shared across depths within a draw, so the depth comparison is
    paired; the reported value averages the draws, mirroring the multi-run
    averaging of the measurement protocol.
    """
    if runs < 1:
        raise ValueError("need at least one run")
    rows = []
    shapes = {L: budget_shape(budget, L, ActivationKind.LINEAR) for L in depths}
    samples = {L: [] for L in depths}
    for run in range(runs):
        rkey = key.child(run)
        X = generator(rkey.child(0)).standard_normal((n, budget.d_in))
        for j, L in enumerate(depths):
            shape = shapes[L]
            dkey = rkey.child(1 + j)
            teacher = network.sample_teacher(shape, dkey.child(0))
            y = network.forward_batch(teacher, X)[:, 0]
            data = Dataset(X, y)
            weights = network.sample_teacher(shape, dkey.child(1))
            samples[L].append(measure_diversity(weights, data).delta)
    for L in depths:
        shape = shapes[L]
        rows.append(DepthScanRow(
            L=L, K=shape.widths[1], params=shape.parameter_count(),
            activation="linear", avg_diversity=float(np.mean(samples[L])),
            runs=runs, seed=key.root_seed,
        ))
    return rows


@dataclass
class SweepRow:
    """One (architecture, batch size) cell of a sweep."""

    dataset: str
    L: int
    K: int
    params: int
    activation: str
    batch_size: int
    tuned_lr: Optional[float]
    epochs: Optional[int]
    converged: bool
    final_metric: float
    avg_diversity: Optional[float]
    seed: int
    error: str = ""


@dataclass
class SweepResult:
    """All rows of one architecture's batch sweep plus its threshold batch."""

    rows: List[SweepRow]
    threshold_batch: Optional[int]
    slack: float = THRESHOLD_SLACK

    def largest_batch_within(self, budget_epochs: int) -> Optional[int]:
        good = [r.batch_size for r in self.rows if r.converged and r.epochs <= budget_epochs]
        return max(good) if good else None


def _threshold_batch(rows: List[SweepRow], slack: float) -> Optional[int]:
    converged = [r for r in rows if r.converged]
    if not converged:
        return None
    floor_epochs = min(r.epochs for r in converged)
    allowed = max(1.0, slack * floor_epochs)
    good = [r.batch_size for r in converged if r.epochs <= allowed]
    return max(good) if good else None


def batch_sweep(
    shape: NetworkShape,
    data: Dataset,
    target: TrainTarget,
    key: SeedKey,
    batch_grid: Sequence[int] = DEFAULT_BATCH_GRID,
    lr_grid: Sequence[float] = DEFAULT_LR_GRID,
    epoch_cap: int = DEFAULT_EPOCH_CAP,
    dataset_name: str = "dataset",
    trace_diversity: bool = False,
    slack: float = THRESHOLD_SLACK,
    allow_batch_over_n: bool = False,
    progress: Optional[Callable[[SweepRow], None]] = None,
) -> SweepResult:
    """Tune and train once per batch size; failed cells are recorded, not fatal."""
    rows: List[SweepRow] = []
    L = shape.depth - 1  # hidden-layer count, the convention of the sweep grids
    K = shape.widths[1]
    for j, B in enumerate(batch_grid):
        bkey = key.child(j)
        row = SweepRow(
            dataset=dataset_name,
            L=L,
            K=K,
            params=shape.parameter_count(),
            activation=shape.activation.value,
            batch_size=int(B),
            tuned_lr=None,
            epochs=None,
            converged=False,
            final_metric=math.nan,
            avg_diversity=None,
            seed=key.root_seed,
        )
        try:
            if B > data.n and not allow_batch_over_n:
                raise ValueError(f"batch size {B} exceeds n={data.n}")
            gamma = tune_step_size(shape, data, B, lr_grid, bkey)
            cfg = TrainConfig(
                int(B), target, bkey, step_size=gamma, lr_grid=tuple(lr_grid),
                epoch_cap=epoch_cap, allow_batch_over_n=allow_batch_over_n,
            )
            if trace_diversity:
                avg_delta, outcome = diversity_trace(shape, data, cfg)
                row.avg_diversity = avg_delta
            else:
                outcome = train_to_target(shape, data, cfg)
            row.tuned_lr = gamma
            row.epochs = outcome.epochs
            row.converged = outcome.converged
            row.final_metric = outcome.final_metric
        except (NoViableStepSize, ValueError, FloatingPointError) as exc:
            row.error = str(exc)
        rows.append(row)
        if progress is not None:
            progress(row)
    return SweepResult(rows, _threshold_batch(rows, slack), slack)


def largest_batch_within(
    budget_epochs: int,
    shape: NetworkShape,
    data: Dataset,
    target: TrainTarget,
    key: SeedKey,
    sweep: Optional[SweepResult] = None,
    **sweep_kwargs,
) -> Optional[int]:
    """Largest grid batch size converging within ``budget_epochs`` (None if none).

    Pass a precomputed ``sweep`` to reuse its rows instead of re-training.
    """
    if budget_epochs < 0:
        raise ValueError("epoch budget must be nonnegative")
    if sweep is None:
        sweep = batch_sweep(shape, data, target, key, **sweep_kwargs)
    return sweep.largest_batch_within(budget_epochs)
