import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grouprobe.errors import DegenerateInputError, ValidationError
from grouprobe.synth import SynthConfig, gen_spurious_dataset
from grouprobe.tensor_io import DatasetBundle
from grouprobe.trainer import (
    ClassifierHead,
    GroupWeightState,
    TrainConfig,
    batch_group_stats,
    class_normalize,
    cosine_lr,
    ema_update,
    forward_probs,
    group_balanced_weights,
    init_head,
    load_head,
    loss_gradient,
    raw_group_weights,
    save_head,
    train,
    weighted_loss,
)
from grouprobe.zeroshot import annotate_attributes, form_groups, zs_classify

# frozen with 60-digit arithmetic: e^30 / (e^30 + 2)
P_WARM_K3 = 0.9999999999998128


def test_forward_matches_closed_form():
    theta = np.eye(4)[:3]
    head = ClassifierHead(theta, scale=30.0)
    p = forward_probs(head, theta[0:1])
    assert p[0, 0] == pytest.approx(P_WARM_K3, abs=5e-16)


def test_forward_equidistant():
    head = ClassifierHead(np.eye(2), scale=30.0)
    p = forward_probs(head, np.array([[1.0, 1.0]]))
    assert np.array_equal(p, [[0.5, 0.5]])


def test_forward_zero_scale_uniform():
    head = ClassifierHead(np.eye(3), scale=0.0)
    p = forward_probs(head, np.random.default_rng(0).standard_normal((5, 3)))
    assert np.allclose(p, 1.0 / 3.0, atol=1e-15)


def test_forward_rows_sum_to_one():
    rng = np.random.default_rng(2)
    head = ClassifierHead(rng.standard_normal((4, 6)), scale=30.0)
    p = forward_probs(head, rng.standard_normal((20, 6)))
    assert np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_weighted_loss_erm_reduction():
    rng = np.random.default_rng(3)
    head = ClassifierHead(rng.standard_normal((3, 5)), scale=30.0)
    x = rng.standard_normal((10, 5))
    y = rng.integers(0, 3, 10)
    p = forward_probs(head, x)
    manual = -np.log(p[np.arange(10), y]).sum()
    assert weighted_loss(head, x, y, np.ones(10)) == pytest.approx(manual, rel=1e-12)


def test_weighted_loss_linear_in_weights():
    rng = np.random.default_rng(4)
    head = ClassifierHead(rng.standard_normal((2, 4)), scale=30.0)
    x = rng.standard_normal((6, 4))
    y = rng.integers(0, 2, 6)
    w = rng.uniform(0.1, 2.0, 6)
    assert weighted_loss(head, x, y, 2 * w) == pytest.approx(
        2 * weighted_loss(head, x, y, w), rel=1e-15
    )


def test_weighted_loss_half_prob():
    head = ClassifierHead(np.eye(2), scale=30.0)
    x = np.array([[1.0, 1.0]])  # p = 0.5
    loss = weighted_loss(head, x, [0], [2.0])
    assert loss == pytest.approx(2 * math.log(2), rel=1e-12)


def test_weighted_loss_never_inf():
    head = ClassifierHead(np.array([[1.0, 0.0], [-1.0, 0.0]]), scale=1000.0)
    loss = weighted_loss(head, np.array([[-1.0, 0.0]]), [0], [1.0])
    assert np.isfinite(loss) and loss == pytest.approx(2000.0, rel=1e-9)


def _fd_gradient(head, x, y, w, h=1e-5):
    fd = np.zeros_like(head.theta)
    for i in range(head.theta.shape[0]):
        for j in range(head.theta.shape[1]):
            tp = head.theta.copy()
            tp[i, j] += h
            tm = head.theta.copy()
            tm[i, j] -= h
            fd[i, j] = (
                weighted_loss(ClassifierHead(tp, head.scale), x, y, w)
                - weighted_loss(ClassifierHead(tm, head.scale), x, y, w)
            ) / (2 * h)
    return fd


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 6))
        d = int(rng.integers(3, 17))
        n = int(rng.integers(1, 33))
        head = ClassifierHead(rng.standard_normal((k, d)) * rng.uniform(0.5, 2.0), scale=30.0)
        x = rng.standard_normal((n, d))
        y = rng.integers(0, k, n)
        w = rng.uniform(0.5, 2.0, n)
        g = loss_gradient(head, x, y, w)
        fd = _fd_gradient(head, x, y, w)
        worst = max(worst, np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12))
    assert worst < 1e-5


def test_gradient_zero_weights():
    rng = np.random.default_rng(5)
    head = ClassifierHead(rng.standard_normal((3, 4)), scale=30.0)
    g = loss_gradient(head, rng.standard_normal((7, 4)), rng.integers(0, 3, 7), np.zeros(7))
    assert np.array_equal(g, np.zeros_like(g))


def test_gradient_orthogonal_to_unit_rows():
    rng = np.random.default_rng(6)
    theta = rng.standard_normal((3, 8))
    theta /= np.linalg.norm(theta, axis=1)[:, None]
    head = ClassifierHead(theta, scale=30.0)
    g = loss_gradient(head, rng.standard_normal((12, 8)), rng.integers(0, 3, 12), np.ones(12))
    assert np.abs((g * theta).sum(axis=1)).max() < 1e-10


def test_batch_group_stats():
    probs = np.array([[0.8, 0.2], [0.2, 0.8], [0.4, 0.6], [0.9, 0.1]])
    labels = [0, 0, 1, 0]
    groups = [0, 1, 1, 3]
    stats = batch_group_stats(probs, labels, groups, 4)
    assert stats.mean_true_prob[0] == pytest.approx(0.8)
    assert stats.mean_true_prob[1] == pytest.approx(0.4)  # mean of 0.2 and 0.6
    assert stats.mean_true_prob[3] == pytest.approx(0.9)
    assert not stats.present[2]
    assert list(stats.absent_groups) == [2]
    assert list(stats.counts) == [1, 2, 0, 1]


def test_raw_weights_eta_zero_is_inverse_size():
    sizes = np.array([90.0, 10.0])
    w = raw_group_weights([0.9, 0.6], sizes, 0.0, [0, 0])
    assert np.array_equal(w, 1.0 / sizes)


def test_raw_weights_eta_negative_rejected():
    with pytest.raises(ValidationError):
        raw_group_weights([0.5, 0.5], [1.0, 1.0], -1.0, [0, 0])


def test_raw_weights_match_stabilized_form():
    # eta=5, pbar=(0.9,0.6): shift by max exponent 2.0 within the class
    w = raw_group_weights([0.9, 0.6], [90.0, 10.0], 5.0, [0, 0])
    expected = np.array([math.exp(0.5 - 2.0) / 90.0, math.exp(0.0) / 10.0])
    assert np.allclose(w, expected, rtol=1e-15)
    # ratios match the unshifted values e^0.5/90 and e^2/10
    assert w[1] / w[0] == pytest.approx((math.exp(2) / 10) / (math.exp(0.5) / 90), rel=1e-12)


def test_raw_weights_huge_eta_finite():
    w = raw_group_weights([0.9, 0.6], [90.0, 10.0], 1000.0, [0, 0])
    assert np.all(np.isfinite(w)) and np.all(w >= 0)
    assert w[1] / max(w[0], 1e-300) > 1e100


def test_class_normalize_masses():
    sizes = np.array([90.0, 10.0])
    cls = np.array([0, 0])
    w = class_normalize(raw_group_weights([0.9, 0.6], sizes, 5.0, cls), sizes, cls)
    # frozen 50-digit oracle: w_hat = (e^0.5/90, e^2/10) / (e^0.5 + e^2)
    assert w[0] == pytest.approx(0.0020269502645150704, abs=1e-9)
    assert w[1] == pytest.approx(0.081757447619364366, abs=1e-9)
    assert abs(float(w @ sizes) - 1.0) <= 1e-12


def test_class_normalize_group_balance():
    sizes = np.array([90.0, 10.0])
    w = class_normalize(np.array([1 / 90, 1 / 10]), sizes, [0, 0])
    assert np.allclose(w, [1 / 180, 1 / 20], rtol=1e-15)
    masses = w * sizes
    assert np.allclose(masses, [0.5, 0.5], rtol=1e-15)


def test_class_normalize_scale_invariance():
    sizes = np.array([30.0, 20.0, 50.0, 25.0])
    cls = np.array([0, 0, 1, 1])
    w_hat = np.array([0.3, 0.9, 0.1, 0.5])
    base = class_normalize(w_hat, sizes, cls)
    scaled = w_hat.copy()
    scaled[cls == 0] *= 7.0
    assert np.allclose(class_normalize(scaled, sizes, cls), base, rtol=1e-14)


def test_class_normalize_zero_class_rejected():
    with pytest.raises(DegenerateInputError):
        class_normalize(np.array([0.0, 0.0]), np.array([1.0, 1.0]), [0, 0])


def test_ema_arithmetic_exact():
    out = ema_update(np.array([0.02]), np.array([0.08]), 0.3)
    assert out[0] == 0.038


def test_ema_full_replacement():
    w_hat = np.array([0.123456789])
    out = ema_update(np.array([0.5]), w_hat, 1.0)
    assert out[0] == w_hat[0]


def test_ema_fixed_point_bitwise():
    w = np.array([0.02, 1 / 3, 7e-17])
    out = ema_update(w, w.copy(), 0.3)
    assert np.array_equal(out, w)


def test_ema_mask_leaves_absent_untouched():
    w = np.array([0.1, 0.2])
    out = ema_update(w, np.array([0.9, 0.9]), 0.5, mask=[True, False])
    assert out[1] == 0.2 and out[0] == pytest.approx(0.5, rel=1e-15)


def test_ema_momentum_range():
    with pytest.raises(ValidationError):
        ema_update(np.array([0.1]), np.array([0.2]), 0.0)


def test_cosine_lr_endpoints_and_midpoint():
    assert cosine_lr(0, 100, 1e-3, 1e-4) == 1e-3
    assert cosine_lr(100, 100, 1e-3, 1e-4) == pytest.approx(1e-4, abs=1e-19)
    assert cosine_lr(50, 100, 1e-3, 1e-4) == pytest.approx(5.5e-4, abs=1e-12)


def test_cosine_lr_bounds():
    with pytest.raises(ValidationError):
        cosine_lr(101, 100, 1e-3, 1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_eta_zero_reduction_exact(seed):
    # independent oracle in exact rational arithmetic
    rng = np.random.default_rng(seed)
    n_groups = int(rng.integers(2, 9))
    cls = np.sort(rng.integers(0, 3, n_groups))
    sizes = rng.integers(1, 500, n_groups).astype(np.float64)
    pbar = rng.uniform(0, 1, n_groups)
    w = class_normalize(raw_group_weights(pbar, sizes, 0.0, cls), sizes, cls)
    for g in range(n_groups):
        count = int((cls == cls[g]).sum())
        expected = Fraction(1, int(sizes[g]) * count)
        assert abs(w[g] - float(expected)) <= 4 * np.spacing(float(expected))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_shift_stabilization_invariance(seed):
    # adding a per-class constant to eta*(1-pbar) leaves normalized weights alone
    rng = np.random.default_rng(seed)
    eta = 10.0
    sizes = rng.integers(1, 200, 4).astype(np.float64)
    cls = np.array([0, 0, 1, 1])
    pbar = rng.uniform(0.3, 1.0, 4)
    shift = rng.uniform(0.0, 0.3, 2)[cls]  # constant within each class
    base = class_normalize(raw_group_weights(pbar, sizes, eta, cls), sizes, cls)
    shifted = class_normalize(raw_group_weights(pbar - shift / eta, sizes, eta, cls), sizes, cls)
    assert np.allclose(base, shifted, rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_hardness_response(seed):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 100, 4).astype(np.float64)
    cls = np.array([0, 0, 1, 1])
    pbar = rng.uniform(0.2, 0.9, 4)
    target = int(rng.integers(0, 4))
    w_before = class_normalize(raw_group_weights(pbar, sizes, 5.0, cls), sizes, cls)
    harder = pbar.copy()
    harder[target] -= 0.1
    w_after = class_normalize(raw_group_weights(harder, sizes, 5.0, cls), sizes, cls)
    assert w_after[target] > w_before[target]


def test_group_weight_state_mass_preserved_with_absent_groups():
    rng = np.random.default_rng(8)
    sizes = np.array([900.0, 50.0, 60.0, 990.0])
    cls = np.array([0, 0, 1, 1])
    state = GroupWeightState(sizes, cls, eta=5.0, momentum=0.3)
    state.check_mass(tol=1e-12)
    for _ in range(200):
        present = rng.random(4) < 0.7
        present[int(rng.integers(0, 4))] = True  # at least one group in the batch
        stats_probs = rng.uniform(0.1, 0.95, 4)
        from grouprobe.trainer import GroupBatchStats

        stats = GroupBatchStats(
            counts=np.where(present, 5, 0),
            mean_true_prob=np.where(present, stats_probs, 0.0),
            present=present,
        )
        before = state.w.copy()
        state.update_from_batch(stats)
        state.check_mass(tol=1e-9)
        absent = ~present
        assert np.array_equal(state.w[absent], before[absent])
        assert np.all(state.w > 0)


def test_eta_zero_momentum_one_gives_group_balance():
    sizes = np.array([90.0, 10.0, 40.0, 60.0])
    cls = np.array([0, 0, 1, 1])
    state = GroupWeightState(sizes, cls, eta=0.0, momentum=1.0)
    from grouprobe.trainer import GroupBatchStats

    stats = GroupBatchStats(
        counts=np.ones(4, dtype=int),
        mean_true_prob=np.array([0.9, 0.1, 0.5, 0.7]),
        present=np.ones(4, dtype=bool),
    )
    state.update_from_batch(stats)
    expected = 1.0 / (sizes * 2)
    assert np.allclose(state.w, expected, rtol=1e-14)


def _pseudo_bundle(sigma=0.6, seed=0, n=300):
    bundle = gen_spurious_dataset(
        SynthConfig(n_train=n, n_val=max(n // 3, 40), n_test=max(n // 3, 40), sigma=sigma, seed=seed)
    )
    s_hat = annotate_attributes(bundle.images, bundle.prompts.attr_embeddings)
    return DatasetBundle(bundle.images, bundle.samples.with_pseudo(s_hat), bundle.prompts)


def _train_groups(bundle, source="pseudo"):
    return form_groups(
        bundle.samples,
        bundle.prompts.num_attributes,
        source=source,
        num_classes=bundle.prompts.num_classes,
        mask=bundle.samples.split_mask("train"),
    )


def test_erm_equals_dpt_with_uniform_override():
    bundle = _pseudo_bundle()
    groups = _train_groups(bundle)
    n_train = int(bundle.samples.split_mask("train").sum())
    uniform = np.full(groups.num_groups, bundle.prompts.num_classes / n_train)
    cfg_erm = TrainConfig(method="erm", epochs=3, seed=7)
    cfg_dpt = TrainConfig(method="dpt", eta=5.0, epochs=3, seed=7)
    head_erm, _ = train(bundle, groups, cfg_erm)
    head_dpt, _ = train(bundle, groups, cfg_dpt, weight_override=uniform)
    assert np.allclose(head_erm.theta, head_dpt.theta, rtol=0, atol=1e-10)


def test_train_bitwise_deterministic():
    bundle = _pseudo_bundle()
    groups = _train_groups(bundle)
    cfg = TrainConfig(method="dpt", eta=5.0, epochs=3, seed=13)
    head_a, rep_a = train(bundle, groups, cfg)
    head_b, rep_b = train(bundle, groups, cfg)
    assert np.array_equal(head_a.theta, head_b.theta)
    assert rep_a.epoch_losses == rep_b.epoch_losses


def test_train_requires_groups_for_weighted_methods():
    bundle = _pseudo_bundle()
    with pytest.raises(ValidationError):
        train(bundle, None, TrainConfig(method="dpt", epochs=1))


def test_train_report_epochs_and_trajectory():
    bundle = _pseudo_bundle()
    groups = _train_groups(bundle)
    cfg = TrainConfig(method="dpt", eta=5.0, epochs=4, seed=0, debug_checks=True)
    _, report = train(bundle, groups, cfg)
    assert len(report.epoch_losses) == 4
    batches = (300 + 63) // 64
    assert len(report.weight_trajectory) == 4 * batches


def test_gdro_runs_and_differs_from_erm():
    bundle = _pseudo_bundle()
    groups = _train_groups(bundle, source="true")
    head_gdro, _ = train(bundle, groups, TrainConfig(method="gdro", epochs=3, seed=1))
    head_erm, _ = train(bundle, None, TrainConfig(method="erm", epochs=3, seed=1))
    assert not np.allclose(head_gdro.theta, head_erm.theta)


def test_init_head_warm_matches_zeroshot():
    bundle = _pseudo_bundle(sigma=0.3)
    head = init_head(2, bundle.images.d, prompts=bundle.prompts)
    preds = forward_probs(head, bundle.images.values).argmax(axis=1)
    zs = zs_classify(bundle.images, bundle.prompts.class_embeddings)
    assert np.array_equal(preds, zs)


def test_init_head_random_deterministic_and_unit():
    a = init_head(3, 16, seed=21)
    b = init_head(3, 16, seed=21)
    assert np.array_equal(a.theta, b.theta)
    assert np.allclose(np.linalg.norm(a.theta, axis=1), 1.0, rtol=0, atol=1e-12)


def test_init_head_class_count_mismatch():
    bundle = _pseudo_bundle()
    with pytest.raises(ValidationError):
        init_head(5, bundle.images.d, prompts=bundle.prompts)


def test_best_val_selection_tracks_worst_group():
    bundle = _pseudo_bundle()
    groups = _train_groups(bundle)
    val_groups = form_groups(
        bundle.samples, 2, source="pseudo", num_classes=2, mask=bundle.samples.split_mask("val")
    )
    cfg = TrainConfig(method="dpt", eta=5.0, epochs=5, seed=3, select="best-val-wg")
    _, report = train(bundle, groups, cfg, val_groups=val_groups)
    recorded = [w for w in report.val_worst_group if w is not None]
    assert report.selected_epoch == int(np.argmax(recorded))


def test_save_load_head_roundtrip(tmp_path):
    head = init_head(3, 8, seed=2)
    save_head(head, tmp_path / "ckpt", meta={"method": "dpt", "seed": 2, "eta": 5.0, "m": 0.3})
    back, meta = load_head(tmp_path / "ckpt")
    assert np.array_equal(back.theta, head.theta)
    assert back.scale == head.scale
    assert meta["method"] == "dpt" and meta["eta"] == 5.0
