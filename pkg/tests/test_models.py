import math
from dataclasses import replace

import numpy as np
import pytest

from equicalib.data import gen_swiss_rolls, gen_vector_field
from equicalib.evidential import beta_nll
from equicalib.groups import WeightedDataset, build_group
from equicalib.models import (MlpConfig, TrainingDivergedError,
                              classifier_loss_and_grads, evaluate_classifier,
                              evaluate_regressor, regressor_loss_and_grads,
                              train_classifier, train_vector_regressor)

FAST = MlpConfig(layer_widths=[16, 16], epochs=40, batch_size=32,
                 learning_rate=0.05)


def xor_dataset(copies=30):
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    labels = np.array([0, 1, 1, 0])
    pts = np.tile(corners, (copies, 1))
    labs = np.tile(labels, copies)
    n = len(pts)
    return WeightedDataset(points=pts, weights=np.full(n, 1.0 / n), labels=labs)


def flatten(grads):
    return np.concatenate([g.ravel() for g in grads])


def numerical_grads(params, loss_fn, h=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


class TestBackprop:
    def test_classifier_gradients_match_finite_differences(self):
        ds = xor_dataset(4)
        cfg = MlpConfig(layer_widths=[5, 4], activation="tanh", epochs=0, seed=1)
        model = train_classifier(ds, cfg)
        xb = ds.points[:8]
        yb = np.searchsorted(model.classes, ds.labels[:8])
        _, grads = classifier_loss_and_grads(model, xb, yb)
        num = numerical_grads(model.mlp.params(),
                              lambda: classifier_loss_and_grads(model, xb, yb)[0])
        rel = np.abs(flatten(grads) - flatten(num)) / np.maximum(
            1.0, np.abs(flatten(num)))
        assert rel.max() < 1e-5

    @pytest.mark.parametrize("kind", ["unconstrained", "radial_equivariant"])
    def test_regressor_gradients_match_finite_differences(self, kind):
        # the stop-gradient weighting is frozen at the base point, matching
        # its training semantics
        ds = gen_vector_field("sinusoidal", 16, radius=2.0, seed=3)
        cfg = MlpConfig(layer_widths=[6, 5], activation="tanh", epochs=0, seed=2)
        model = train_vector_regressor(ds, kind, cfg)
        xb, yb = ds.points[:10], ds.targets[:10]
        _, base_var = model.predict(xb)
        frozen = base_var ** model.beta_exp
        _, grads = regressor_loss_and_grads(model, xb, yb, factor_override=frozen)
        params = model.mean_net.params() + model.var_net.params()
        num = numerical_grads(
            params,
            lambda: regressor_loss_and_grads(model, xb, yb,
                                             factor_override=frozen)[0])
        rel = np.abs(flatten(grads) - flatten(num)) / np.maximum(
            1.0, np.abs(flatten(num)))
        assert rel.max() < 1e-5

    def test_beta_nll_term_matches_reference_loss(self):
        # dual route: the vectorized training term equals the scalar loss
        ds = gen_vector_field("spiral", 12, radius=1.5, seed=4)
        cfg = MlpConfig(layer_widths=[4], epochs=0, seed=5)
        model = train_vector_regressor(ds, "unconstrained", cfg)
        xb, yb = ds.points, ds.targets
        mu, s = model.predict(xb)
        expected, _ = beta_nll(yb, mu, s, 1.0)
        loss, _ = regressor_loss_and_grads(model, xb, yb)
        mse = float(((mu - yb) ** 2).mean())
        assert loss == pytest.approx(0.5 * mse + 0.5 * float(expected.mean()),
                                     rel=1e-12)


class TestClassifierTraining:
    def test_xor_memorization(self):
        model = train_classifier(xor_dataset(), replace(FAST, epochs=250,
                                                        layer_widths=[16, 16]))
        pred, _ = model.predict(xor_dataset().points)
        assert float((pred == xor_dataset().labels).mean()) == 1.0

    def test_dropz_bitwise_invariance(self):
        ds = gen_swiss_rolls(0.5, 30, seed=0)
        model = train_classifier(ds, replace(FAST, invariant_mode="drop-z", seed=0))
        group = build_group("z-swap", ambient_dim=3)
        swapped = ds.points @ group.input_reps[1].matrix.T + group.input_reps[1].offset
        pred_a, conf_a = model.predict(ds.points)
        pred_b, conf_b = model.predict(swapped)
        np.testing.assert_array_equal(pred_a, pred_b)
        np.testing.assert_array_equal(conf_a, conf_b)

    def test_orbit_average_mode_is_invariant(self):
        ds = gen_swiss_rolls(0.5, 20, seed=1)
        group = build_group("z-swap", ambient_dim=3)
        model = train_classifier(ds, replace(FAST, invariant_mode="orbit-average",
                                             epochs=5, seed=1), group=group)
        swapped = ds.points @ group.input_reps[1].matrix.T + group.input_reps[1].offset
        pred_a, conf_a = model.predict(ds.points)
        pred_b, conf_b = model.predict(swapped)
        np.testing.assert_array_equal(pred_a, pred_b)
        np.testing.assert_allclose(conf_a, conf_b, atol=1e-12)

    def test_deterministic_given_seed(self):
        ds = gen_swiss_rolls(0.5, 25, seed=2)
        cfg = replace(FAST, seed=7, epochs=15)
        a = train_classifier(ds, cfg)
        b = train_classifier(ds, cfg)
        _, conf_a = a.predict(ds.points)
        _, conf_b = b.predict(ds.points)
        np.testing.assert_array_equal(conf_a, conf_b)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)

    def test_divergence_detected(self):
        # a non-finite coordinate poisons the forward pass at the first epoch
        pts = np.array([[0.0, 0.0], [1.0, np.nan], [0.5, 0.5], [1.0, 1.0]])
        ds = WeightedDataset(points=pts, weights=np.full(4, 0.25),
                             labels=np.array([0, 1, 0, 1]))
        with pytest.raises(TrainingDivergedError) as err:
            train_classifier(ds, replace(FAST, epochs=5))
        assert err.value.epoch == 0

    def test_split_is_stratified_80_20(self):
        ds = gen_swiss_rolls(0.5, 50, seed=3)
        model = train_classifier(ds, replace(FAST, epochs=1))
        assert len(model.train_idx) + len(model.test_idx) == len(ds)
        frac = len(model.train_idx) / len(ds)
        assert 0.75 <= frac <= 0.85
        train_labels = ds.labels[model.train_idx]
        for y in np.unique(ds.labels):
            class_frac = float((train_labels == y).sum()) / float((ds.labels == y).sum())
            assert 0.7 <= class_frac <= 0.9


class TestClassifierEvaluation:
    def test_separable_data_low_ece(self):
        ds = gen_swiss_rolls(1.0, 100, seed=4)
        model = train_classifier(ds, replace(FAST, invariant_mode="drop-z",
                                             epochs=150, layer_widths=[48, 48]))
        ev = evaluate_classifier(model, ds, indices=model.test_idx)
        assert ev.accuracy >= 0.95
        assert ev.ece < 0.05

    def test_incorrect_invariance_caps_accuracy(self):
        ds = gen_swiss_rolls(0.0, 100, seed=4)
        model = train_classifier(ds, replace(FAST, invariant_mode="drop-z",
                                             epochs=150, layer_widths=[48, 48]))
        ev = evaluate_classifier(model, ds, indices=model.test_idx)
        assert ev.accuracy <= 0.6

    def test_bin_table_masses(self):
        ds = gen_swiss_rolls(0.5, 40, seed=5)
        model = train_classifier(ds, replace(FAST, epochs=10))
        ev = evaluate_classifier(model, ds, indices=model.test_idx, n_bins=20)
        assert len(ev.bin_table.mass) == 20
        assert ev.bin_table.mass.sum() == pytest.approx(1.0)


class TestRadialModel:
    def test_mean_equivariance_and_variance_invariance(self):
        ds = gen_vector_field("sinusoidal", 40, radius=2.0, seed=6)
        model = train_vector_regressor(ds, "radial_equivariant",
                                       replace(FAST, epochs=5))
        group = build_group("cyclic:12", ambient_dim=3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            rot = group.input_reps[int(rng.integers(1, 12))].matrix
            mean_a, var_a = model.predict(ds.points)
            mean_b, var_b = model.predict(ds.points @ rot.T)
            np.testing.assert_allclose(mean_b, mean_a @ rot.T, atol=1e-10)
            np.testing.assert_allclose(var_b, var_a, atol=1e-10)

    def test_untrained_tiny_variance_head_has_tiny_bleed(self):
        ds = gen_vector_field("sinusoidal", 50, radius=2.0, seed=7)
        raw = math.log(math.expm1(1e-6))  # softplus inverse of 1e-6
        model = train_vector_regressor(ds, "radial_equivariant",
                                       replace(FAST, epochs=0),
                                       var_bias_init=raw)
        ev = evaluate_regressor(model, ds)
        assert ev.bleed < 1e-10

    def test_regressor_deterministic(self):
        ds = gen_vector_field("spiral", 30, radius=1.0, seed=8)
        cfg = replace(FAST, epochs=10, seed=3)
        a = train_vector_regressor(ds, "unconstrained", cfg)
        b = train_vector_regressor(ds, "unconstrained", cfg)
        mean_a, var_a = a.predict(ds.points)
        mean_b, var_b = b.predict(ds.points)
        np.testing.assert_array_equal(mean_a, mean_b)
        np.testing.assert_array_equal(var_a, var_b)

    def test_divergence_detected(self):
        ds = gen_vector_field("spiral", 30, radius=1.0, seed=9)
        with pytest.raises(TrainingDivergedError) as err:
            train_vector_regressor(ds, "unconstrained",
                                   replace(FAST, learning_rate=1e6,
                                           clip_norm=float("inf"), epochs=60))
        assert err.value.epoch >= 0


class TestRegressorEvaluation:
    def test_per_angle_table_has_16_rows(self):
        ds = gen_vector_field("spiral", 60, radius=1.5, seed=10)
        model = train_vector_regressor(ds, "unconstrained", replace(FAST, epochs=3))
        ev = evaluate_regressor(model, ds)
        assert len(ev.per_angle) == 16
        assert all(row.sector == i for i, row in enumerate(ev.per_angle))

    def test_variances_positive(self):
        ds = gen_vector_field("sinusoidal", 40, radius=1.0, seed=11)
        model = train_vector_regressor(ds, "radial_equivariant",
                                       replace(FAST, epochs=3))
        _, var = model.predict(ds.points)
        assert np.all(var > 0)
