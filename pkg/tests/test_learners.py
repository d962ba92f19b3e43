import numpy as np
import pytest

from bcpi.errors import DegenerateOutcome, ShapeMismatch
from bcpi.learners import (
    FOREST,
    LINEAR,
    MLP,
    ForestConfig,
    LinearConfig,
    MlpConfig,
    StackingConfig,
    fit,
    load_learner,
    predict,
    predict_from_projection,
    project_groups,
    projected_group_spec,
    save_learner,
    transform_inputs,
)
from bcpi.mlp import MlpNetwork, StackingLayout
from bcpi.types import GroupSpec, ProjectionSet

from conftest import quick_mlp


def r2(y, yhat):
    return 1.0 - np.sum((y - yhat) ** 2) / np.sum((y - y.mean()) ** 2)


class TestFitQuality:
    def test_linear_target_high_r2(self, rng):
        x = rng.standard_normal((500, 3))
        y = 2.0 * x[:, 0] + 0.01 * rng.standard_normal(500)
        learner = fit(MlpConfig(), x[:400], y[:400], "regression", seed=3)
        assert r2(y[400:], predict(learner, x[400:])) >= 0.99

    def test_constant_outcome(self, rng):
        x = rng.standard_normal((200, 4))
        y = np.full(200, 3.25)
        learner = fit(quick_mlp(), x, y, "regression", seed=1)
        assert np.all(np.abs(predict(learner, x) - 3.25) <= 1e-2)

    def test_interaction_separates_model_classes(self, rng):
        x = rng.standard_normal((2400, 2))
        y = x[:, 0] * x[:, 1]
        tr, te = slice(0, 2000), slice(2000, None)
        mlp = fit(MlpConfig(), x[tr], y[tr], "regression", seed=2)
        linear = fit(LinearConfig(), x[tr], y[tr], "regression", seed=2)
        assert r2(y[te], predict(mlp, x[te])) >= 0.8
        assert r2(y[te], predict(linear, x[te])) <= 0.1

    def test_deterministic_given_seed(self, rng):
        x = rng.standard_normal((120, 5))
        y = x[:, 0] - x[:, 1] + 0.1 * rng.standard_normal(120)
        a = fit(quick_mlp(), x, y, "regression", seed=9)
        b = fit(quick_mlp(), x, y, "regression", seed=9)
        assert np.array_equal(predict(a, x), predict(b, x))

    def test_too_few_rows_rejected(self, rng):
        x = rng.standard_normal((10, 2))
        with pytest.raises(ValueError, match="20"):
            fit(LinearConfig(), x, x[:, 0], "regression", seed=0)

    def test_binary_constant_outcome_rejected(self, rng):
        x = rng.standard_normal((50, 2))
        with pytest.raises(DegenerateOutcome):
            fit(quick_mlp(), x, np.zeros(50), "binary", seed=0)

    def test_binary_returns_logits(self, rng):
        x = rng.standard_normal((400, 2))
        y = (x[:, 0] + 0.2 * rng.standard_normal(400) > 0).astype(float)
        for config in (quick_mlp(), ForestConfig(), LinearConfig()):
            learner = fit(config, x[:300], y[:300], "binary", seed=4)
            logits = predict(learner, x[300:])
            accuracy = np.mean((logits > 0) == y[300:])
            assert accuracy >= 0.85
            assert np.abs(logits).max() > 1.0  # logits, not probabilities


class TestPredict:
    def test_linear_is_exact_affine(self, rng):
        x = rng.standard_normal((60, 3))
        y = 3.0 * x[:, 0] - 1.0 * x[:, 2] + 2.0
        learner = fit(LinearConfig(), x, y, "regression", seed=0)
        w, b = learner.model.raw_coefficients()
        assert np.allclose(predict(learner, x), x @ w + b, atol=1e-10)
        assert np.allclose(predict(learner, x), y, atol=1e-8)

    def test_duplicate_rows_identical_outputs(self, rng):
        x = rng.standard_normal((100, 4))
        y = x.sum(axis=1)
        learner = fit(quick_mlp(), x, y, "regression", seed=5)
        doubled = np.vstack([x[:5], x[:5]])
        out = predict(learner, doubled)
        assert np.array_equal(out[:5], out[5:])

    def test_shape_mismatch(self, rng):
        x = rng.standard_normal((50, 3))
        learner = fit(LinearConfig(), x, x[:, 0], "regression", seed=0)
        with pytest.raises(ShapeMismatch):
            predict(learner, rng.standard_normal((5, 4)))

    def test_forest_prediction_is_mean_of_trees(self, rng):
        x = rng.standard_normal((80, 4))
        y = x[:, 0] + rng.standard_normal(80)
        learner = fit(ForestConfig(n_trees=20), x, y, "regression", seed=6)
        xs = learner.model.scaler(x[:10])
        per_tree = np.stack(
            [tree.predict(xs) for tree in learner.model.estimator.estimators_]
        )
        assert np.allclose(predict(learner, x[:10]), per_tree.mean(axis=0), atol=1e-12)


class TestProjectGroups:
    def test_scalar_identity(self):
        x = np.array([[1.0], [2.0]])
        projection = ProjectionSet(matrices=(np.array([[1.0]]),))
        spec = GroupSpec(groups=[[0]])
        assert np.array_equal(project_groups(x, projection, spec), x)

    def test_dot_products(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        spec = GroupSpec(groups=[[0, 1], [2, 3]])
        projection = ProjectionSet(
            matrices=(np.array([[1.0], [1.0]]), np.array([[2.0], [0.0]]))
        )
        assert np.array_equal(project_groups(x, projection, spec), [[3.0, 6.0]])

    def test_group_means(self, rng):
        x = rng.standard_normal((7, 6))
        spec = GroupSpec(groups=[[0, 1, 2], [3, 4, 5]])
        projection = ProjectionSet(
            matrices=(np.full((3, 1), 1 / 3), np.full((3, 1), 1 / 3))
        )
        out = project_groups(x, projection, spec)
        assert np.allclose(out[:, 0], x[:, :3].mean(axis=1))
        assert np.allclose(out[:, 1], x[:, 3:].mean(axis=1))

    def test_uncovered_columns_appended(self, rng):
        x = rng.standard_normal((5, 4))
        spec = GroupSpec(groups=[[1, 2]])
        projection = ProjectionSet(matrices=(np.array([[1.0], [2.0]]),))
        out = project_groups(x, projection, spec)
        assert out.shape == (5, 3)
        assert np.array_equal(out[:, 1], x[:, 0])
        assert np.array_equal(out[:, 2], x[:, 3])

    def test_shape_mismatch(self, rng):
        x = rng.standard_normal((5, 4))
        spec = GroupSpec(groups=[[0, 1], [2, 3]])
        projection = ProjectionSet(matrices=(np.ones((2, 1)),))
        with pytest.raises(ShapeMismatch):
            project_groups(x, projection, spec)

    def test_projected_group_spec_layout(self):
        spec = GroupSpec(groups=[[0, 1, 2], [3, 4]], names=["a", "b"])
        out = projected_group_spec(spec, dims=(2, 1))
        assert out.groups == ((0, 1), (2,))
        assert out.names == ("a", "b")


class TestStacking:
    @pytest.fixture(scope="class")
    def stacked(self):
        rng = np.random.default_rng(77)
        x = rng.standard_normal((300, 6))
        y = x[:, 0] + 2.0 * x[:, 3] + 0.1 * rng.standard_normal(300)
        spec = GroupSpec(groups=[[0, 1, 2], [3, 4]])
        config = quick_mlp(stacking=StackingConfig(spec=spec))
        learner = fit(config, x, y, "regression", seed=8)
        return learner, spec, x

    def test_projection_extracted(self, stacked):
        learner, spec, _ = stacked
        assert learner.kind == MLP
        assert learner.projection is not None
        assert learner.projection.dims == (1, 1)
        nets = learner.model.network.projections
        for extracted, live in zip(learner.projection.matrices, nets):
            assert np.array_equal(extracted, live)

    def test_forward_pass_decomposition(self, stacked):
        learner, spec, x = stacked
        projected = project_groups(
            transform_inputs(learner, x), learner.projection, spec
        )
        via_tail = predict_from_projection(learner, projected)
        assert np.allclose(via_tail, predict(learner, x), atol=1e-12, rtol=0.0)

    def test_unstacked_learner_has_no_projection(self, rng):
        x = rng.standard_normal((60, 4))
        learner = fit(quick_mlp(), x, x[:, 0], "regression", seed=1)
        assert learner.projection is None
        with pytest.raises(ShapeMismatch):
            predict_from_projection(learner, x)

    def test_multidim_projection(self, rng):
        x = rng.standard_normal((200, 6))
        y = x[:, 0] - x[:, 5]
        spec = GroupSpec(groups=[[0, 1, 2], [3, 4, 5]])
        config = quick_mlp(stacking=StackingConfig(spec=spec, dims=(2, 1)))
        learner = fit(config, x, y, "regression", seed=3)
        assert learner.projection.dims == (2, 1)
        projected = project_groups(
            transform_inputs(learner, x), learner.projection, spec
        )
        assert projected.shape == (200, 3)
        assert np.allclose(
            predict_from_projection(learner, projected), predict(learner, x)
        )


def central_difference_check(network, x, y, step=1e-5, tolerance=1e-4):
    _, grads = network.loss_and_grads(x, y)
    worst = 0.0
    for param, grad in zip(network.parameters(), grads):
        flat = param.ravel()
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            up, _ = network.loss_and_grads(x, y)
            flat[index] = original - step
            down, _ = network.loss_and_grads(x, y)
            flat[index] = original
            numeric = (up - down) / (2.0 * step)
            analytic = grad.ravel()[index]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    assert worst <= tolerance, f"worst relative gradient error {worst}"
    return worst


class TestGradients:
    def test_dense_network_matches_finite_differences(self, rng):
        network = MlpNetwork(2, (2,), "regression", seed=5)
        x = rng.standard_normal((12, 2))
        y = rng.standard_normal(12)
        assert sum(p.size for p in network.parameters()) == 9
        central_difference_check(network, x, y)

    def test_stacked_network_matches_finite_differences(self, rng):
        spec = GroupSpec(groups=[[0, 1], [2]])
        layout = StackingLayout(spec, (1, 1), 3)
        network = MlpNetwork(3, (2,), "regression", seed=6, layout=layout)
        x = rng.standard_normal((10, 3))
        y = rng.standard_normal(10)
        central_difference_check(network, x, y)

    def test_binary_loss_matches_finite_differences(self, rng):
        network = MlpNetwork(2, (3,), "binary", seed=7)
        x = rng.standard_normal((14, 2))
        y = (rng.standard_normal(14) > 0).astype(float)
        central_difference_check(network, x, y)


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((80, 3))
        y = x[:, 1]
        for config in (quick_mlp(), ForestConfig(n_trees=10), LinearConfig()):
            learner = fit(config, x, y, "regression", seed=2)
            path = tmp_path / "model.joblib"
            save_learner(learner, path)
            back = load_learner(path)
            assert back.kind == learner.kind
            assert np.array_equal(predict(back, x), predict(learner, x))

    def test_version_check(self, tmp_path):
        import joblib

        path = tmp_path / "bad.joblib"
        joblib.dump({"format_version": 99, "payload": None}, path)
        with pytest.raises(ValueError, match="version"):
            load_learner(path)
