"""Tests for the classifier, cross-validation, and 2-D PCA."""

import numpy as np
import pytest

from vibroaudit.dataset import FeatureTable
from vibroaudit.errors import ParameterError
from vibroaudit.learn import (
    LinearModel,
    Pca2Result,
    fit_linear,
    loso_cv,
    pca2,
    predict,
    principal_angle_degrees,
)


def make_table(matrix, subjects, health, names=None, extra_labels=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    if names is None:
        names = [f"f{j:02d}" for j in range(matrix.shape[1])]
    n = matrix.shape[0]
    labels = {
        "session_id": np.array([f"sess{i}" for i in range(n)], dtype=object),
        "subject": np.array(subjects, dtype=object),
        "health": np.array(health, dtype=object),
        "side": np.array(["left"] * n, dtype=object),
        "device": np.array(["D0"] * n, dtype=object),
    }
    if extra_labels:
        labels.update({k: np.array(v, dtype=object) for k, v in extra_labels.items()})
    return FeatureTable(
        feature_names=list(names),
        matrix=matrix,
        labels=labels,
        repetition_index=np.arange(n, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# fit_linear


class TestFitLinear:
    def test_separable_clusters_perfect_training_accuracy(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(-3, 0.3, 20), rng.normal(3, 0.3, 20)])
        y = ["Healthy"] * 20 + ["Unhealthy"] * 20
        model = fit_linear(x[:, None], y, ["f00"])
        preds = [predict(model, {"f00": v})[0] for v in x]
        assert preds == y
        assert model.converged

    def test_xor_not_linearly_separable(self):
        x = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
        y = ["Healthy", "Healthy", "Unhealthy", "Unhealthy"]
        model = fit_linear(x, y)
        preds = [predict(model, {"f00": a, "f01": b})[0] for a, b in x]
        acc = np.mean([p == t for p, t in zip(preds, y)])
        assert acc <= 0.75

    def test_huge_l2_predicts_majority(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 2))
        y = ["Unhealthy"] * 20 + ["Healthy"] * 10
        model = fit_linear(x, y, l2=1e9)
        assert np.max(np.abs(model.weight_vector())) < 1e-3
        preds = [predict(model, {"f00": a, "f01": b})[0] for a, b in x]
        assert all(p == "Unhealthy" for p in preds)

    def test_single_class_error(self):
        with pytest.raises(ParameterError, match="2 classes"):
            fit_linear(np.zeros((5, 1)), ["Healthy"] * 5)

    def test_zero_variance_feature_dropped_and_recorded(self):
        rng = np.random.default_rng(2)
        x = np.column_stack([rng.normal(size=20), np.full(20, 7.0)])
        y = ["Healthy"] * 10 + ["Unhealthy"] * 10
        model = fit_linear(x, y, ["live", "flat"])
        assert model.dropped_features == ["flat"]
        assert "flat" not in model.weights
        # prediction does not require the dropped feature's value
        label, score = predict(model, {"live": 0.1, "flat": 7.0})
        assert 0.0 <= score <= 1.0

    def test_l2_must_be_nonnegative(self):
        with pytest.raises(ParameterError):
            fit_linear(np.zeros((4, 1)), ["a", "a", "b", "b"], l2=-1.0)


class TestPredict:
    def zero_model(self):
        return LinearModel(
            feature_names=["f00"],
            weights={"f00": 0.0},
            bias=0.0,
            standardization={"f00": (0.0, 1.0)},
            classes=("Healthy", "Unhealthy"),
        )

    def test_tie_break_is_negative_class(self):
        label, score = predict(self.zero_model(), {"f00": 1.23})
        assert score == 0.5
        assert label == "Healthy"

    def test_deep_positive_half_space(self):
        rng = np.random.default_rng(3)
        x = np.concatenate([rng.normal(-2, 0.5, 25), rng.normal(2, 0.5, 25)])
        y = ["Healthy"] * 25 + ["Unhealthy"] * 25
        model = fit_linear(x[:, None], y, ["f00"])
        _, score = predict(model, {"f00": 6.0})
        assert score > 0.9

    def test_monotone_in_positive_weight_feature(self):
        model = LinearModel(
            feature_names=["f00"],
            weights={"f00": 2.0},
            bias=0.1,
            standardization={"f00": (0.5, 2.0)},
            classes=("Healthy", "Unhealthy"),
        )
        scores = [predict(model, {"f00": v})[1] for v in np.linspace(-5, 5, 21)]
        assert np.all(np.diff(scores) >= 0)

    def test_missing_feature_named(self):
        with pytest.raises(ParameterError, match="f00"):
            predict(self.zero_model(), {"other": 1.0})


# ---------------------------------------------------------------------------
# loso_cv


def learnable_table(n_subjects=4, reps=3, sep=3.0, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    rows, subjects, health = [], [], []
    for s in range(n_subjects):
        label = "Healthy" if s < n_subjects // 2 else "Unhealthy"
        center = -sep / 2 if label == "Healthy" else sep / 2
        for _ in range(reps):
            rows.append([center + noise * rng.normal(), rng.normal()])
            subjects.append(f"subj{s}")
            health.append(label)
    return make_table(rows, subjects, health)


class TestLosoCv:
    def test_fold_count(self):
        table = learnable_table(n_subjects=5, reps=2)
        cv = loso_cv(table)
        assert cv.n_folds == 5
        assert len(cv.fold_models) == 5

    def test_perfect_feature_gives_full_accuracy(self):
        table = learnable_table(n_subjects=6, reps=4, sep=8.0, noise=0.2)
        cv = loso_cv(table)
        assert cv.mean_repetition_accuracy == 1.0
        assert all(a == 1.0 for a in cv.per_group_accuracy.values())

    def test_shuffled_label_null_is_chance(self):
        # labels shuffled at the row level, independent of features
        accs = []
        for seed in range(200):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(48, 3))
            subjects = np.repeat([f"subj{i}" for i in range(8)], 6)
            health = np.array(["Healthy"] * 24 + ["Unhealthy"] * 24, dtype=object)
            rng.shuffle(health)
            table = make_table(x, subjects, health)
            accs.append(loso_cv(table).mean_repetition_accuracy)
        assert abs(float(np.mean(accs)) - 0.5) < 0.05

    def test_matches_independent_per_fold_oracle(self):
        table = learnable_table(n_subjects=4, reps=3, sep=2.0, noise=1.0, seed=7)
        cv = loso_cv(table)
        subjects = table.labels["subject"]
        names = table.feature_names
        for g in sorted(set(subjects.tolist())):
            train = subjects != g
            model = fit_linear(table.matrix[train], table.labels["health"][train], list(names))
            test_idx = np.where(~train)[0]
            for i in test_idx:
                row = {n: table.matrix[i, j] for j, n in enumerate(names)}
                label, score = predict(model, row)
                assert cv.row_pred[i] == label
                assert cv.row_score[i] == pytest.approx(score, abs=1e-12)
        # micro average recomputed independently
        scored = cv.row_pred != ""
        manual = float(np.mean(cv.row_pred[scored] == table.labels["health"][scored]))
        assert cv.mean_repetition_accuracy == manual

    def test_no_leakage_from_test_rows(self):
        table = learnable_table(n_subjects=4, reps=3, seed=11)
        cv_a = loso_cv(table)
        perturbed = FeatureTable(
            feature_names=list(table.feature_names),
            matrix=table.matrix.copy(),
            labels={k: v.copy() for k, v in table.labels.items()},
            repetition_index=table.repetition_index.copy(),
        )
        mask = perturbed.labels["subject"] == "subj0"
        perturbed.matrix[mask] += 100.0
        cv_b = loso_cv(perturbed)
        ma, mb = cv_a.fold_models["subj0"], cv_b.fold_models["subj0"]
        assert ma.standardization == mb.standardization
        assert ma.weights == mb.weights
        assert ma.bias == mb.bias

    def test_affine_rescaling_invariance_bit_exact(self):
        # power-of-two scaling commutes with IEEE rounding, so the
        # standardized matrix and everything downstream is bit-identical
        table = learnable_table(n_subjects=6, reps=4, seed=13)
        cv_a = loso_cv(table)
        scaled = FeatureTable(
            feature_names=list(table.feature_names),
            matrix=table.matrix.copy(),
            labels=table.labels,
            repetition_index=table.repetition_index,
        )
        scaled.matrix[:, 0] *= 4.0
        cv_b = loso_cv(scaled)
        np.testing.assert_array_equal(cv_a.row_pred, cv_b.row_pred)
        np.testing.assert_array_equal(cv_a.row_score, cv_b.row_score)
        assert cv_a.mean_repetition_accuracy == cv_b.mean_repetition_accuracy

    def test_affine_rescaling_invariance_general_scale(self):
        table = learnable_table(n_subjects=6, reps=4, seed=17)
        cv_a = loso_cv(table)
        scaled = FeatureTable(
            feature_names=list(table.feature_names),
            matrix=table.matrix * 3.0,
            labels=table.labels,
            repetition_index=table.repetition_index,
        )
        cv_b = loso_cv(scaled)
        np.testing.assert_array_equal(cv_a.row_pred, cv_b.row_pred)
        np.testing.assert_allclose(cv_a.row_score, cv_b.row_score, atol=1e-9)

    def test_single_class_fold_skipped_and_reported(self):
        rows = [[0.0, 1.0]] * 2 + [[1.0, 0.0]] * 2 + [[0.5, 0.5]] * 2
        subjects = ["a", "a", "b", "b", "c", "c"]
        health = ["Healthy", "Healthy", "Unhealthy", "Unhealthy", "Healthy", "Healthy"]
        cv = loso_cv(make_table(rows, subjects, health))
        assert "b" in cv.skipped_folds
        assert "single-class" in cv.skipped_folds["b"]
        assert "b" not in cv.per_group_accuracy
        assert set(cv.per_group_accuracy) == {"a", "c"}

    def test_two_group_minimum(self):
        rows = [[0.0], [1.0]]
        with pytest.raises(ParameterError, match=">= 2"):
            loso_cv(make_table(rows, ["a", "a"], ["Healthy", "Unhealthy"]))

    def test_covariate_target(self):
        # the same machinery classifies any binary label column
        rng = np.random.default_rng(5)
        x = np.concatenate([rng.normal(-2, 0.3, 12), rng.normal(2, 0.3, 12)])[:, None]
        subjects = [f"s{i // 3}" for i in range(24)]
        health = ["Healthy"] * 24
        devices = ["D0"] * 12 + ["D1"] * 12
        table = make_table(x, subjects, ["Healthy", "Unhealthy"] * 12, extra_labels={"device": devices})
        cv = loso_cv(table, target="device")
        assert cv.classes == ("D0", "D1")
        assert cv.mean_repetition_accuracy > 0.9


# ---------------------------------------------------------------------------
# pca2


class TestPca2:
    def test_collinear_points(self):
        pts = np.array([[-2.0, -2.0], [0.0, 0.0], [1.0, 1.0], [3.0, 3.0]])
        res = pca2(pts)
        np.testing.assert_allclose(res.v1, [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-12)
        np.testing.assert_allclose(res.explained, [1.0, 0.0], atol=1e-12)

    def test_anisotropic_gaussian_recovers_eigenvector(self):
        rng = np.random.default_rng(0)
        theta = np.radians(30.0)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        base = rng.normal(size=(100_000, 2)) * [2.0, 1.0]
        pts = base @ rot.T
        res = pca2(pts)
        analytic = np.array([np.cos(theta), np.sin(theta)])
        assert principal_angle_degrees(res.v1, analytic) < 1.0

    def test_isotropic_is_degenerate(self):
        pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        res = pca2(pts)
        assert res.degenerate

    def test_rotation_equivariance(self):
        pts = np.array([[x, 0.05 * x**2] for x in np.linspace(-3, 3, 40)])
        base = pca2(pts)
        for deg in (10.0, 37.0, 121.0):
            th = np.radians(deg)
            rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            rotated = pca2(pts @ rot.T)
            expected = rot @ base.v1
            assert principal_angle_degrees(rotated.v1, expected) < 1e-6

    def test_orthogonal_components_unit_norm(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(500, 2)) * [3.0, 1.0]
        res = pca2(pts)
        assert np.linalg.norm(res.v1) == pytest.approx(1.0, abs=1e-12)
        assert abs(np.dot(res.v1, res.v2)) < 1e-10

    def test_sign_convention(self):
        pts = np.array([[-x, x * 0.5] for x in np.linspace(-2, 2, 30)])
        res = pca2(pts)
        assert res.v1[0] >= 0

    def test_errors(self):
        with pytest.raises(ParameterError):
            pca2(np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            pca2(np.ones((10, 2)))  # zero variance
        with pytest.raises(ParameterError):
            pca2(np.zeros((5, 3)))


class TestPrincipalAngle:
    def test_known_angles(self):
        assert principal_angle_degrees([1, 0], [0, 1]) == pytest.approx(90.0)
        assert principal_angle_degrees([1, 0], [1, 1]) == pytest.approx(45.0)

    def test_sign_symmetry_reduction(self):
        v = np.array([0.6, 0.8])
        assert principal_angle_degrees(v, -v) == pytest.approx(0.0, abs=1e-9)

    def test_zero_vector_error(self):
        with pytest.raises(ParameterError):
            principal_angle_degrees([0, 0], [1, 0])
