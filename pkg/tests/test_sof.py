import warnings

import numpy as np
import pytest

from fnncc.basis import quadrature_weights
from fnncc.errors import RankError
from fnncc.fpca import compute_scores, fit_mfpca, select_M_press, standardize
from fnncc.simgen import CovariateModel, ShiftSpec, make_datasets
from fnncc.sof import SofModel, beta_hat, fit_sof, predict_sof, predict_sof_integral


@pytest.fixture(scope="module")
def scenario_a():
    data = make_datasets("A", ShiftSpec(), (400, 50, 100, 50), seed=4)
    cm = CovariateModel()
    values, fns = standardize(cm.smooth(data.train.raw[:, 0]), cm.grid)
    mfpca = fit_mfpca(values, quadrature_weights(cm.grid), standardization=fns)
    scores = compute_scores(mfpca, values)
    return data, values, mfpca, scores, cm, fns


class TestFit:
    def test_constant_response(self, scenario_a):
        _, _, mfpca, scores, *_ = scenario_a
        model = fit_sof(np.full(scores.shape[0], 2.5), scores[:, :4], mfpca)
        assert model.alpha_hat == pytest.approx(2.5)
        np.testing.assert_allclose(model.b_hat, 0.0, atol=1e-12)

    def test_noiseless_linear(self, scenario_a):
        _, _, mfpca, scores, *_ = scenario_a
        model = fit_sof(3.0 * scores[:, 0], scores[:, :4], mfpca)
        assert model.b_hat[0] == pytest.approx(3.0, abs=1e-10)
        np.testing.assert_allclose(model.b_hat[1:], 0.0, atol=1e-10)

    def test_matches_normal_equations(self, scenario_a):
        data, _, mfpca, scores, *_ = scenario_a
        y = data.train.y
        M = select_M_press(y, scores)
        model = fit_sof(y, scores, mfpca, M=M)
        X = np.column_stack([np.ones(y.size), scores[:, :M]])
        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose(np.r_[model.alpha_hat, model.b_hat], oracle, atol=1e-8)

    def test_zero_column(self, scenario_a):
        _, _, _, scores, *_ = scenario_a
        bad = scores[:, :3].copy()
        bad[:, 1] = 0.0
        with pytest.raises(RankError, match="column 2"):
            fit_sof(np.ones(bad.shape[0]), bad)

    def test_too_few_observations(self):
        with pytest.raises(RankError):
            fit_sof([1.0, 2.0], [[1.0, 0.5], [-1.0, 0.2]])

    def test_non_orthogonal_warns(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 2))
        x[:, 1] += x[:, 0]
        with pytest.warns(RuntimeWarning, match="differ from OLS"):
            fit_sof(rng.standard_normal(50), x)

    def test_orthogonal_scores_silent(self, scenario_a):
        data, _, mfpca, scores, *_ = scenario_a
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit_sof(data.train.y, scores[:, :5], mfpca)


class TestPredict:
    def test_zero_function(self, scenario_a):
        data, values, mfpca, scores, *_ = scenario_a
        model = fit_sof(data.train.y, scores[:, :3], mfpca)
        assert predict_sof(model, np.zeros((1,) + values.shape[1:]))[0] == pytest.approx(model.alpha_hat, abs=1e-14)

    def test_training_fitted_values(self, scenario_a):
        data, values, mfpca, scores, *_ = scenario_a
        model = fit_sof(data.train.y, scores[:, :3], mfpca)
        fitted = model.alpha_hat + scores[:, :3] @ model.b_hat
        np.testing.assert_allclose(predict_sof(model, values), fitted, atol=1e-10)

    def test_integral_form(self, scenario_a):
        data, _, mfpca, scores, cm, fns = scenario_a
        model = fit_sof(data.train.y, scores[:, :3], mfpca)
        new = fns.apply(cm.smooth(data.tuning.raw[:, 0])[:, None, :])
        np.testing.assert_allclose(predict_sof_integral(model, new), predict_sof(model, new), atol=1e-8)

    def test_residual_properties(self, scenario_a):
        data, values, mfpca, scores, *_ = scenario_a
        y = data.train.y
        model = fit_sof(y, scores[:, :4], mfpca)
        resid = y - predict_sof(model, values)
        assert abs(resid.mean()) <= 1e-10
        for m in range(4):
            assert abs(np.corrcoef(resid, scores[:, m])[0, 1]) <= 1e-8

    def test_sse_decreases_with_components(self, scenario_a):
        data, values, mfpca, scores, *_ = scenario_a
        y = data.train.y
        sse = [np.sum((y - predict_sof(fit_sof(y, scores, mfpca, M=M), values)) ** 2) for M in range(1, 8)]
        assert np.all(np.diff(sse) <= 1e-9)


class TestBeta:
    def test_unit_coefficient(self, scenario_a):
        _, _, mfpca, *_ = scenario_a
        model = SofModel(0.0, np.array([1.0, 0.0, 0.0]), mfpca)
        np.testing.assert_array_equal(beta_hat(model), mfpca.eigenfunctions[0])

    def test_zero(self, scenario_a):
        _, _, mfpca, *_ = scenario_a
        assert np.all(beta_hat(SofModel(0.0, np.zeros(3), mfpca)) == 0)

    def test_recovers_truth(self, scenario_a):
        data, values, mfpca, scores, cm, fns = scenario_a
        M = select_M_press(data.train.y, scores)
        model = fit_sof(data.train.y, scores, mfpca, M=M)
        truth = data.truth
        # the generating beta acts on population-standardized curves; rescale to the sample scale
        implied = truth.g / mfpca.rule.weights * fns.sd_fn[0]
        corr = np.corrcoef(beta_hat(model)[0], implied)[0, 1]
        assert corr > 0.95

    def test_serialization(self, scenario_a):
        data, values, mfpca, scores, *_ = scenario_a
        model = fit_sof(data.train.y, scores[:, :3], mfpca)
        back = SofModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(predict_sof(back, values), predict_sof(model, values))
