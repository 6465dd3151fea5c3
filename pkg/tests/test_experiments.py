import math

import numpy as np
import pytest

from graddiv import experiments, network
from graddiv.errors import InfeasibleBudget, NoViableStepSize
from graddiv.experiments import (
    ParamBudget,
    TrainConfig,
    TrainTarget,
    batch_sweep,
    budget_shape,
    diversity_trace,
    evaluate_metric,
    largest_batch_within,
    make_synthetic,
    make_synthetic_classification,
    measure_diversity,
    sgd_step,
    solve_width,
    train_to_target,
    tune_step_size,
)
from graddiv.network import ActivationKind, Dataset, NetworkShape
from graddiv.rng import SeedKey, generator


def test_solve_width_paper_grid():
    budget = ParamBudget(16000, 784, 10)
    assert solve_width(budget, 10) == 17
    assert solve_width(budget, 1) == 20


def test_solve_width_boundary():
    assert solve_width(ParamBudget(794, 784, 10), 1) == 1


def test_solve_width_synthetic_grid():
    budget = ParamBudget(16000, 16, 1)
    assert solve_width(budget, 1) == 941
    assert solve_width(budget, 4) == 70
    assert solve_width(budget, 8) == 47


def test_solve_width_infeasible():
    with pytest.raises(InfeasibleBudget):
        solve_width(ParamBudget(20, 10, 10), 50)


def test_budget_shape_parameter_counts():
    budget = ParamBudget(16000, 784, 10)
    shape = budget_shape(budget, 10, ActivationKind.RELU)
    assert shape.widths == (784,) + (17,) * 10 + (10,)
    assert abs(shape.parameter_count() - 16000) / 16000 < 0.02


def test_make_synthetic_realizable_and_deterministic():
    shape = NetworkShape((6, 4, 1), ActivationKind.LINEAR)
    data, teacher = make_synthetic(shape, 200, SeedKey(1))
    assert evaluate_metric(teacher, data, TrainTarget("loss", 0.0)) <= 1e-20
    data2, _ = make_synthetic(shape, 200, SeedKey(1))
    assert np.array_equal(data.inputs, data2.inputs)
    assert np.array_equal(data.targets, data2.targets)


def test_make_synthetic_input_variance():
    shape = NetworkShape((8, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 10_000, SeedKey(2))
    per_coord = data.inputs.var(axis=0)
    assert np.all(np.abs(per_coord - 1.0) < 0.05)


def test_make_synthetic_rejects_nonlinear_without_flag():
    shape = NetworkShape((4, 3, 1), ActivationKind.TANH)
    with pytest.raises(ValueError):
        make_synthetic(shape, 10, SeedKey(0))
    data, _ = make_synthetic(shape, 10, SeedKey(0), allow_nonlinear=True)
    assert data.n == 10


def test_classification_teacher_scores_perfectly():
    shape = NetworkShape((5, 4, 3), ActivationKind.TANH)
    data, teacher = make_synthetic_classification(shape, 300, SeedKey(3))
    assert evaluate_metric(teacher, data, TrainTarget("accuracy", 1.0)) == 1.0


def test_sgd_step_matches_full_gradient_descent():
    shape = NetworkShape((4, 3, 1), ActivationKind.SOFTSIGN)
    data, _ = make_synthetic(shape, 12, SeedKey(4), allow_nonlinear=True)
    w = network.init_training_weights(shape, SeedKey(5))
    gamma = 0.01
    Y = data.target_matrix(1)

    stepped = sgd_step(w, data.inputs, Y, np.arange(data.n), gamma)
    total = np.zeros(shape.parameter_count())
    for i in range(data.n):
        total += network.per_example_gradient(w, data.inputs[i], float(data.targets[i])).gradient
    expected = w.flat() - gamma * total
    assert np.allclose(stepped.flat(), expected, rtol=1e-12, atol=1e-14)

    single = sgd_step(w, data.inputs, Y, np.array([7]), gamma)
    g7 = network.per_example_gradient(w, data.inputs[7], float(data.targets[7])).gradient
    assert np.allclose(single.flat(), w.flat() - gamma * g7, rtol=1e-12, atol=1e-14)


def test_train_target_met_at_initialization():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 20, SeedKey(6))
    cfg = TrainConfig(4, TrainTarget("loss", 1e12), SeedKey(7), step_size=0.01)
    outcome = train_to_target(shape, data, cfg)
    assert outcome.epochs == 0 and outcome.converged
    assert outcome.gradient_evaluations == 0


def test_zero_step_never_converges():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 20, SeedKey(8))
    cfg = TrainConfig(20, TrainTarget("loss", 1e-12), SeedKey(9), step_size=0.0, epoch_cap=5)
    outcome = train_to_target(shape, data, cfg)
    assert outcome.epochs is None and not outcome.converged and not outcome.diverged


def test_epoch_accounting():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 25, SeedKey(10))
    cfg = TrainConfig(7, TrainTarget("loss", 0.0), SeedKey(11), step_size=1e-6, epoch_cap=4)
    outcome = train_to_target(shape, data, cfg)
    assert outcome.gradient_evaluations == 4 * math.ceil(25 / 7) * 7


def test_training_reproducible():
    shape = NetworkShape((6, 5, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 64, SeedKey(12))
    cfg = TrainConfig(8, TrainTarget("loss", 1e-12), SeedKey(13), step_size=3e-3, epoch_cap=200)
    a = train_to_target(shape, data, cfg)
    b = train_to_target(shape, data, cfg)
    assert a.epochs == b.epochs
    assert a.final_metric == b.final_metric
    assert all(np.array_equal(x, y) for x, y in zip(a.weights.matrices, b.weights.matrices))
    assert a.converged


def test_batch_over_n_needs_flag():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 10, SeedKey(14))
    cfg = TrainConfig(16, TrainTarget("loss", 1e-6), SeedKey(15), step_size=1e-3)
    with pytest.raises(ValueError):
        train_to_target(shape, data, cfg)
    cfg_ok = TrainConfig(16, TrainTarget("loss", 1e-6), SeedKey(15), step_size=1e-3,
                         allow_batch_over_n=True, epoch_cap=2)
    train_to_target(shape, data, cfg_ok)


def test_tune_singleton_grid():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 30, SeedKey(16))
    assert tune_step_size(shape, data, 8, [0.007], SeedKey(17)) == 0.007


def test_tune_ranks_divergent_candidates_last():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 30, SeedKey(18))
    assert tune_step_size(shape, data, 8, [1e6, 1e-3], SeedKey(19)) == 1e-3


def test_tune_argmin_property():
    shape = NetworkShape((5, 4, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 40, SeedKey(20))
    grid = [1e-4, 1e-3, 1e-2, 1e-1]
    key = SeedKey(21)
    chosen = tune_step_size(shape, data, 8, grid, key)

    # oracle: replay every candidate exactly as the tuner does
    init = network.init_training_weights(shape, key.child(0))
    Y = data.target_matrix(1)
    losses = {}
    for gamma in grid:
        cfg = TrainConfig(8, TrainTarget("loss", 0.0), key, step_size=gamma)
        gen = generator(key.child(1))
        w, _ = experiments._run_epochs(init, data.inputs, Y, cfg, gamma, 2, gen)
        loss = evaluate_metric(w, data, TrainTarget("loss", 0.0))
        losses[gamma] = loss if math.isfinite(loss) else math.inf
    assert losses[chosen] == min(losses.values())


def test_tune_raises_when_everything_diverges():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 30, SeedKey(22))
    with pytest.raises(NoViableStepSize):
        tune_step_size(shape, data, 8, [1e7, 1e8], SeedKey(23))


def test_diversity_trace_short_run_single_snapshot():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 20, SeedKey(24))
    cfg = TrainConfig(4, TrainTarget("loss", 1e12), SeedKey(25), step_size=1e-3, epoch_cap=50)
    avg, outcome = diversity_trace(shape, data, cfg)
    assert outcome.epochs == 0
    first = measure_diversity(network.init_training_weights(shape, cfg.seed.child(0)), data)
    assert avg == pytest.approx(first.delta)


def test_diversity_trace_single_example_is_one():
    shape = NetworkShape((3, 2, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 1, SeedKey(26))
    cfg = TrainConfig(1, TrainTarget("loss", 1e-20), SeedKey(27), step_size=1e-3, epoch_cap=25)
    avg, _ = diversity_trace(shape, data, cfg)
    assert avg == pytest.approx(1.0)


def _identical_inputs_dataset(n=24, d=4, key=SeedKey(28)):
    x = generator(key).standard_normal(d)
    X = np.tile(x, (n, 1))
    shape = NetworkShape((d, 3, 1), ActivationKind.LINEAR)
    teacher = network.sample_teacher(shape, key.child(1))
    y = network.forward_batch(teacher, X)[:, 0]
    return Dataset(X, y), shape


def test_identical_gradients_fixture_diversity():
    data, shape = _identical_inputs_dataset()
    w = network.init_training_weights(shape, SeedKey(29))
    rep = measure_diversity(w, data)
    assert rep.delta == pytest.approx(1.0 / data.n, rel=1e-9)


def test_sweep_on_identical_gradients_fixture():
    data, shape = _identical_inputs_dataset()
    target = TrainTarget("loss", 1e-10)
    result = batch_sweep(shape, data, target, SeedKey(30), batch_grid=(2, 8, 24),
                         lr_grid=(1e-3, 1e-2, 1e-1), epoch_cap=120,
                         dataset_name="fixture", trace_diversity=True)
    rows = result.rows
    assert [r.batch_size for r in rows] == [2, 8, 24]
    converged = [r for r in rows if r.converged]
    assert converged, "fixture should converge for at least one batch size"
    epochs = [r.epochs for r in rows if r.converged]
    assert all(a <= b for a, b in zip(epochs, epochs[1:]))
    for r in rows:
        if r.avg_diversity is not None:
            assert r.avg_diversity == pytest.approx(1.0 / data.n, rel=1e-6)


def test_sweep_single_batch_threshold():
    shape = NetworkShape((4, 3, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 40, SeedKey(31))
    target = TrainTarget("loss", 1e-10)
    result = batch_sweep(shape, data, target, SeedKey(32), batch_grid=(8,),
                         lr_grid=(1e-3, 1e-2, 3e-2), epoch_cap=200, dataset_name="tiny")
    assert result.rows[0].converged
    assert result.threshold_batch == 8


def test_sweep_records_failures_without_raising():
    shape = NetworkShape((4, 3, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 16, SeedKey(33))
    target = TrainTarget("loss", 1e-10)
    result = batch_sweep(shape, data, target, SeedKey(34), batch_grid=(8, 64),
                         lr_grid=(1e-3, 1e-2, 3e-2, 1e-1), epoch_cap=300, dataset_name="tiny")
    assert result.rows[1].error  # batch 64 > n=16 without the explicit flag
    assert result.rows[0].converged


def test_largest_batch_within_budget():
    shape = NetworkShape((4, 3, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 64, SeedKey(35))
    target = TrainTarget("loss", 1e-10)
    sweep = batch_sweep(shape, data, target, SeedKey(36), batch_grid=(4, 16, 64),
                        lr_grid=(1e-3, 1e-2, 3e-2), epoch_cap=200, dataset_name="tiny")
    cap_budget = largest_batch_within(10**9, shape, data, target, SeedKey(36), sweep=sweep)
    assert cap_budget == max(r.batch_size for r in sweep.rows if r.converged)
    assert largest_batch_within(0, shape, data, target, SeedKey(36), sweep=sweep) is None
    with pytest.raises(ValueError):
        largest_batch_within(-1, shape, data, target, SeedKey(36), sweep=sweep)


def test_synthetic_depth_scan_is_deterministic_and_paired():
    budget = ParamBudget(600, 8, 1)
    rows_a = experiments.synthetic_depth_scan(budget, (1, 2), n=500, key=SeedKey(40), runs=4)
    rows_b = experiments.synthetic_depth_scan(budget, (1, 2), n=500, key=SeedKey(40), runs=4)
    assert [(r.L, r.K, r.avg_diversity) for r in rows_a] == [(r.L, r.K, r.avg_diversity) for r in rows_b]
    assert all(r.avg_diversity > 0 for r in rows_a)
    assert rows_a[0].K == solve_width(budget, 1)
    with pytest.raises(ValueError):
        experiments.synthetic_depth_scan(budget, (1,), n=10, key=SeedKey(0), runs=0)


def test_shuffle_sampling_mode_runs():
    shape = NetworkShape((4, 3, 1), ActivationKind.LINEAR)
    data, _ = make_synthetic(shape, 32, SeedKey(37))
    cfg = TrainConfig(8, TrainTarget("loss", 1e-12), SeedKey(38), step_size=1e-2,
                      epoch_cap=300, shuffle_sampling=True)
    outcome = train_to_target(shape, data, cfg)
    assert outcome.converged
