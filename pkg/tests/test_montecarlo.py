import math

import numpy as np
import pytest

from graddiv import montecarlo, network, theory
from graddiv.errors import UnsupportedActivation
from graddiv.montecarlo import (
    MCConfig,
    compare,
    conditioned_trend,
    estimate_grad_expectations,
    estimate_layer_blocks,
    estimate_nonlinear_terms,
    estimate_per_layer,
    gate_report,
    sample_conditioning,
    suggested_trials,
    trial_grad_statistics,
    twolayer_terms_trial,
)
from graddiv.network import ActivationKind, NetworkShape, WeightStack
from graddiv.rng import SeedKey, generator

LIN = ActivationKind.LINEAR
BOUNDED = (ActivationKind.TANH, ActivationKind.SOFTSIGN, ActivationKind.ARCTAN)


def test_config_validation():
    with pytest.raises(ValueError):
        MCConfig((2,), 3, 100, SeedKey(0))
    with pytest.raises(ValueError):
        MCConfig((2, 2), 0, 100, SeedKey(0))
    with pytest.raises(ValueError):
        MCConfig((2, 2), 3, 1, SeedKey(0))


def test_trial_statistics_deterministic():
    cfg = MCConfig((2, 2), 3, 10, SeedKey(0))
    key = SeedKey(5, 6)
    assert trial_grad_statistics(cfg, key) == trial_grad_statistics(cfg, key)


def test_trial_statistics_zero_when_student_equals_teacher():
    # the diagnostic degenerate case: zero residual kills every statistic
    shape = NetworkShape((3, 2, 1), LIN)
    teacher = network.sample_teacher(shape, SeedKey(1))
    X = generator(SeedKey(2)).standard_normal((4, 3))
    Y = network.forward_batch(teacher, X)
    sum_sq, flat_sum, loss = network.gradient_moments(teacher, X, Y)
    assert sum_sq == 0.0 and loss == 0.0 and np.all(flat_sum == 0.0)


def test_single_example_cross_is_exactly_zero():
    cfg = MCConfig((2, 2), 1, 500, SeedKey(3))
    stats = trial_grad_statistics(cfg, SeedKey(4))
    assert stats[2] == 0.0
    _, _, cross = estimate_grad_expectations(cfg)
    assert cross.mean == 0.0 and cross.stderr == 0.0


def test_kernel_agrees_with_backprop_route():
    # dual route: the block kernel and the general backprop path must see the
    # same numbers from the same key and produce the same statistics
    from graddiv import _backend

    for widths, n in (((2, 2), 3), ((3, 2, 2), 5), ((4, 3, 3), 4)):
        cfg = MCConfig(widths, n, 10, SeedKey(77))
        key = cfg.key.child(12)
        row = generator(key).standard_normal((1, cfg.normals_per_trial()))
        kernel_stats = _backend.lnn_block_stats(row, widths, n)[0]
        general = trial_grad_statistics(cfg, key)
        assert np.allclose(kernel_stats, general, rtol=1e-10)


def test_estimates_deterministic_and_job_invariant():
    cfg = MCConfig((3, 2, 2), 4, 9000, SeedKey(21))
    a = estimate_grad_expectations(cfg, jobs=1)
    b = estimate_grad_expectations(cfg, jobs=4)
    assert a == b
    c = estimate_grad_expectations(cfg, jobs=1)
    assert a == c


def test_estimates_near_closed_forms():
    cfg = MCConfig((2, 2), 3, 40_000, SeedKey(3).child(0))
    nss, norm, cross = estimate_grad_expectations(cfg)
    assert abs(nss.mean - 1728) <= 5 * nss.stderr
    assert abs(norm.mean - 888) <= 5 * norm.stderr
    assert abs(cross.mean - 312) <= 5 * cross.stderr


def test_per_layer_estimates_near_closed_forms():
    cfg = MCConfig((2, 2), 3, 40_000, SeedKey(3).child(1))
    sq1, cr1 = estimate_per_layer(cfg, 1)
    assert abs(sq1.mean - 24) <= 5 * sq1.stderr
    assert abs(cr1.mean - 6) <= 5 * cr1.stderr
    sq2, cr2 = estimate_per_layer(cfg, 2)
    assert abs(sq2.mean - 48) <= 5 * sq2.stderr
    assert abs(cr2.mean - 14) <= 5 * cr2.stderr


def test_layer_blocks_match_single_entry_expectations():
    cfg = MCConfig((3, 2, 2), 5, 30_000, SeedKey(9))
    blocks = estimate_layer_blocks(cfg)
    assert len(blocks) == 3
    for a, (sq, cr) in enumerate(blocks, 1):
        assert abs(sq.mean - theory.per_layer_sq_entry(cfg.widths, a)) <= 5 * sq.stderr
        assert abs(cr.mean - theory.per_layer_cross_entry(cfg.widths, a)) <= 5 * cr.stderr


def test_stderr_scales_with_trials():
    base = MCConfig((2, 2), 3, 30_000, SeedKey(31))
    double = MCConfig((2, 2), 3, 60_000, SeedKey(31))
    s1 = estimate_grad_expectations(base)[0].stderr
    s2 = estimate_grad_expectations(double)[0].stderr
    ratio = s2 / s1
    assert 0.9 / math.sqrt(2) <= ratio <= 1.1 / math.sqrt(2)


def test_compare_passes_on_anchor_config():
    cfg = MCConfig((2, 2), 3, 60_000, SeedKey(3).child(0))
    reports = compare(cfg, z_tol=4.5, rel_tol=0.05)
    names = [r.name for r in reports]
    assert names[:3] == ["total_n_sum_sq", "total_norm_of_sum", "total_cross"]
    assert all(r.passed for r in reports)


def test_compare_rejects_corrupted_closed_form():
    cfg = MCConfig((2, 2), 3, 60_000, SeedKey(3).child(0))
    nss, _, _ = estimate_grad_expectations(cfg)
    corrupted = gate_report("corrupted", nss, 1728 * 1.1, z_tol=4.0, rel_tol=0.03)
    assert not corrupted.passed


def test_compare_skips_cross_for_width_one():
    cfg = MCConfig((2, 1), 3, 5_000, SeedKey(5))
    reports = compare(cfg, z_tol=6.0, rel_tol=0.2)
    by_name = {r.name: r for r in reports}
    assert by_name["total_cross"].skipped
    assert "K_ell >= 2" in by_name["total_cross"].note
    assert not by_name["total_n_sum_sq"].skipped
    assert not by_name["layer1_sq_entry"].skipped
    assert by_name["layer1_cross_entry"].skipped


def test_compare_requires_linear_activation():
    cfg = MCConfig((2, 2), 3, 100, SeedKey(0), ActivationKind.TANH)
    with pytest.raises(UnsupportedActivation):
        compare(cfg)


@pytest.mark.parametrize("kind", BOUNDED, ids=lambda k: k.value)
def test_ab_decomposition_identities(kind):
    cfg = MCConfig((5, 4), 6, 100, SeedKey(41), kind)
    for t in range(100):
        a1, a2, b1, b2, n_sum_sq, norm_sum_sq = twolayer_terms_trial(cfg, cfg.key.child(t))
        assert a1 + a2 == pytest.approx(n_sum_sq, rel=1e-8)
        assert b1 + b2 == pytest.approx(norm_sum_sq, rel=1e-8)


def test_nonlinear_terms_reject_unbounded_activations():
    for kind in (LIN, ActivationKind.RELU):
        cfg = MCConfig((4, 3), 5, 100, SeedKey(0), kind)
        with pytest.raises(UnsupportedActivation):
            estimate_nonlinear_terms(cfg)


def test_nonlinear_terms_resample_mode_deterministic():
    cfg = MCConfig((4, 3), 5, 300, SeedKey(8), ActivationKind.TANH)
    a = estimate_nonlinear_terms(cfg)
    b = estimate_nonlinear_terms(cfg)
    assert a == b
    assert a.ratio() > 0


def test_nonlinear_terms_conditioned_mode_matches_trial_identity():
    d, K, n = 6, 4, 8
    cond = sample_conditioning(d, K, n, SeedKey(13))
    cfg = MCConfig((d, K), n, 500, SeedKey(14), ActivationKind.SOFTSIGN)
    est = estimate_nonlinear_terms(cfg, conditioning=cond)
    assert est.a1.mean > 0 and est.b2.mean > 0
    # conditioned kernel must agree with the direct formulas for one trial
    gen = generator(cfg.key.child(0))
    w2 = gen.standard_normal((1, K))
    w2t = gen.standard_normal((1, K))
    shape = cfg.shape
    student = WeightStack((cond.W1, w2), shape)
    teacher = WeightStack((cond.W1_teacher, w2t), shape)
    direct = montecarlo._twolayer_terms(cfg, student, teacher, cond.X)
    from graddiv import _backend

    Z = cond.X @ cond.W1.T
    S = network.activation_value(cfg.activation, Z)
    Dz = network.activation_derivative(cfg.activation, Z)
    St = network.activation_value(cfg.activation, cond.X @ cond.W1_teacher.T)
    kernel = _backend.twolayer_block_terms(w2, w2t, np.ascontiguousarray(S), np.ascontiguousarray(St),
                                           np.ascontiguousarray(Dz), np.ascontiguousarray(cond.X))[0]
    assert np.allclose(kernel, direct[:4], rtol=1e-10)


def test_conditioned_trend_smoke():
    successes, ratios = conditioned_trend(8, (2, 4), n=20, trials=400, conditionings=3, key=SeedKey(55))
    assert 0 <= successes <= 3
    assert len(ratios) == 3 and all(len(r) == 2 for r in ratios)
    assert all(all(v > 0 for v in row) for row in ratios)


def test_suggested_trials_guidance():
    assert suggested_trials((8, 8), 5) == 200_000
    assert suggested_trials((2, 2), 3) >= 20_000
    assert suggested_trials((16, 16), 2) > suggested_trials((8, 8), 5)
