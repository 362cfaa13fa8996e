import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnncc.basis import uniform_grid
from fnncc.charts import (
    CHART_NAMES,
    ControlChart,
    Predictor,
    Preprocessor,
    build_chart,
    empirical_quantile,
    make_bspline_mlp_predictor,
    make_fnn_predictor,
    make_rawdata_mlp_predictor,
    make_scc_predictor,
    make_sof_predictor,
    monitor,
    smoothing_basis,
)
from fnncc.errors import ConfigurationError, SchemaError
from fnncc.fnn import FnnConfig
from fnncc.profiles import ProfileSet
from fnncc.simgen import ShiftSpec, apply_shifts, make_datasets

FAST = FnnConfig(max_epochs=60, patience=10, seed=3)


def response_only(y, n_points=5):
    y = np.asarray(y, dtype=float)
    return ProfileSet(np.zeros((y.size, n_points)), uniform_grid(n_points), y=y)


@pytest.fixture(scope="module")
def sim():
    return make_datasets("A", ShiftSpec((0.0,)), (300, 100, 800, 200), seed=12)


@pytest.fixture(scope="module")
def sof_predictor(sim):
    return make_sof_predictor(sim.train)


class TestQuantile:
    def test_sort_and_index(self):
        values = np.random.default_rng(0).permutation(np.arange(1, 1001))
        assert empirical_quantile(values, 0.025) == 25
        assert empirical_quantile(values, 0.975) == 975

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 300), st.floats(0.001, 0.999), st.integers(0, 2**31))
    def test_matches_order_statistic(self, n, q, seed):
        values = np.random.default_rng(seed).standard_normal(n)
        k = max(1, math.ceil(n * q - 1e-9))
        assert empirical_quantile(values, q) == np.sort(values)[k - 1]
        assert np.mean(values <= empirical_quantile(values, q)) >= q - 1e-9


class TestBuildChart:
    def test_limits_on_integers(self):
        chart = build_chart(make_scc_predictor(), response_only(np.arange(1, 1001)), alpha=0.05)
        assert (chart.lcl, chart.ucl) == (25.0, 975.0)
        assert chart.statistic == "response"
        assert chart.name == "SCC"

    def test_ucl_is_not_a_signal(self):
        chart = build_chart(make_scc_predictor(), response_only(np.arange(1, 1001)))
        assert list(chart.signals([chart.ucl, chart.lcl, np.nextafter(chart.ucl, np.inf)])) == [False, False, True]

    def test_refuses_tiny_tuning_set(self):
        with pytest.raises(ConfigurationError):
            build_chart(make_scc_predictor(), response_only(np.arange(39)), alpha=0.05)

    def test_warns_on_small_tuning_set(self):
        with pytest.warns(RuntimeWarning, match="small"):
            build_chart(make_scc_predictor(), response_only(np.arange(100)), alpha=0.05)

    def test_silent_at_recommended_size(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            build_chart(make_scc_predictor(), response_only(np.arange(200)), alpha=0.05)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ConfigurationError):
            build_chart(make_scc_predictor(), response_only(np.arange(1000)), alpha=alpha)

    def test_constant_statistics(self):
        with pytest.raises(ConfigurationError, match="LCL"):
            build_chart(make_scc_predictor(), response_only(np.ones(1000)))

    def test_symmetric(self):
        y = np.random.default_rng(1).standard_normal(4000)
        chart = build_chart(make_scc_predictor(), response_only(y))
        assert chart.lcl == pytest.approx(-chart.ucl, abs=0.15)

    @pytest.mark.parametrize("n,alpha", [(40, 0.05), (97, 0.05), (1001, 0.05), (200, 0.01), (1001, 0.01)])
    def test_coverage_bound(self, n, alpha):
        y = np.random.default_rng(n).standard_normal(n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            chart = build_chart(make_scc_predictor(), response_only(y), alpha=alpha)
        assert chart.signals(y).mean() <= alpha + 2 / n

    def test_residual_chart(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        assert chart.statistic == "residual" and chart.name == "FRCC"
        resid = sim.tuning.y - sof_predictor.predict(sim.tuning)
        assert chart.ucl == empirical_quantile(resid, 0.975)
        assert chart.lcl == empirical_quantile(resid, 0.025)

    def test_names(self):
        assert CHART_NAMES == {
            "none": "SCC",
            "sof-linear": "FRCC",
            "fnn": "FNNCC",
            "rawdata-mlp": "RawdataMLPCC",
            "bspline-mlp": "BsplineMLPCC",
        }


class TestMonitor:
    def test_perfect_prediction(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        exact = ProfileSet(sim.oc[0.0].raw, sim.oc[0.0].grid, y=sof_predictor.predict(sim.oc[0.0]))
        points = monitor(chart, exact)
        assert all(abs(p.statistic) < 1e-12 and not p.signal for p in points)

    def test_signal_definition(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        for p in monitor(chart, sim.oc[0.0]):
            assert p.signal == (p.statistic < chart.lcl or p.statistic > chart.ucl)

    def test_scc_ignores_covariates(self, sim):
        chart = build_chart(make_scc_predictor(), sim.tuning)
        base = monitor(chart, sim.oc[0.0])
        moved = monitor(chart, apply_shifts(sim.oc[0.0], 0.0, 3.0, sim.s_y))
        rng = np.random.default_rng(2)
        scrambled = ProfileSet(rng.permutation(sim.oc[0.0].raw), sim.oc[0.0].grid, y=sim.oc[0.0].y, ids=sim.oc[0.0].ids)
        assert base == moved == monitor(chart, scrambled)

    def test_stateless(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        data = sim.oc[0.0]
        order = np.random.default_rng(3).permutation(len(data))
        points = monitor(chart, data)
        permuted = monitor(chart, data.subset(order))
        assert permuted == [points[i] for i in order]

    def test_incompatible_grid(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        coarse = ProfileSet(sim.oc[0.0].raw[:, :, ::2], sim.oc[0.0].grid[::2], y=sim.oc[0.0].y)
        with pytest.raises(SchemaError):
            monitor(chart, coarse)

    def test_extra_covariate(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        doubled = ProfileSet(np.repeat(sim.oc[0.0].raw, 2, axis=1), sim.oc[0.0].grid, y=sim.oc[0.0].y)
        with pytest.raises(SchemaError):
            monitor(chart, doubled)

    def test_missing_response(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        with pytest.raises(SchemaError):
            monitor(chart, ProfileSet(sim.oc[0.0].raw, sim.oc[0.0].grid))

    def test_replay_single_fault(self):
        # 41 voyages, the 33rd carries a large response fault
        data = make_datasets("A", ShiftSpec((0.0,)), (300, 100, 4000, 41), seed=5)
        chart = build_chart(make_sof_predictor(data.train), data.tuning, alpha=0.0025)
        stream = data.oc[0.0]
        y = stream.y.copy()
        y[32] += 8 * data.s_y
        points = monitor(chart, ProfileSet(stream.raw, stream.grid, y=y))
        flags = [p.signal for p in points]
        assert flags[32]
        assert not any(flags[33:])

    def test_round_trip(self, sim, sof_predictor):
        chart = build_chart(sof_predictor, sim.tuning)
        back = ControlChart.from_dict(chart.to_dict())
        assert monitor(back, sim.oc[0.0]) == monitor(chart, sim.oc[0.0])


class TestPreprocessor:
    def test_unknown_mode(self, sim):
        with pytest.raises(ConfigurationError):
            Preprocessor.fit(sim.train, "wavelet")

    def test_frozen_statistics(self, sim):
        basis, lam = smoothing_basis(None)
        pre = Preprocessor.fit(sim.train, "smoothed", basis, lam)
        before = pre.transform(sim.tuning)
        pre.transform(sim.oc[0.0])
        np.testing.assert_array_equal(pre.transform(sim.tuning), before)
        train_values = pre.transform(sim.train)
        np.testing.assert_allclose(train_values.mean(axis=0), 0.0, atol=1e-8)

    def test_raw_mode_is_pointwise(self, sim):
        pre = Preprocessor.fit(sim.train, "raw")
        out = pre.transform(sim.train)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-8)

    def test_gcv_lambda(self, sim):
        basis, _ = smoothing_basis(None)
        pre = Preprocessor.fit(sim.train.subset(np.arange(40)), "smoothed", basis, "gcv")
        assert pre.smoothing_lambda > 0

    @pytest.mark.parametrize("mode", ["raw", "smoothed", "coefficients"])
    def test_serialization(self, sim, mode):
        basis, lam = smoothing_basis(None)
        pre = Preprocessor.fit(sim.train, mode, basis, lam)
        back = Preprocessor.from_dict(pre.to_dict())
        np.testing.assert_array_equal(back.transform(sim.tuning), pre.transform(sim.tuning))


@pytest.fixture(scope="module")
def raw_mlp(sim):
    return make_rawdata_mlp_predictor(sim.train, sim.validation, FAST)[0]


class TestBaselines:
    def test_raw_first_layer(self, raw_mlp, sim):
        net = raw_mlp.model
        C = sim.train.grid.size
        n1 = FAST.n_neurons[0]
        assert net.weights[0].size + net.biases[0].size == (C + 1) * n1

    def test_bspline_input_dimension(self, sim):
        pred, _ = make_bspline_mlp_predictor(sim.train, sim.validation, FAST, smoothing={"n_basis": 12})
        assert pred.model.weights[0].shape[1] == 12

    def test_bspline_zero_input(self, sim):
        pred, _ = make_bspline_mlp_predictor(sim.train, sim.validation, FAST)
        net = pred.model
        h = np.zeros(net.weights[0].shape[1])
        for w, b, act in zip(net.weights, net.biases, net.activations):
            h = w @ h + b
            h = np.maximum(h, 0.0) if act == "relu" else h
        assert net.forward(np.zeros((1, net.weights[0].shape[1])))[0] == pytest.approx(h[0], abs=1e-12)

    def test_raw_linear_collapse(self):
        # noiseless linear data on a short grid: a linear network reaches the OLS fit
        rng = np.random.default_rng(4)
        grid = uniform_grid(8)
        raw = rng.standard_normal((200, 8))
        y = raw @ rng.standard_normal(8) + 0.5
        data = ProfileSet(raw, grid, y=y)
        cfg = FnnConfig(
            n_neurons=(1,),
            activations=("linear",),
            learning_rate=0.01,
            batch_size=200,
            max_epochs=20000,
            patience=20000,
            lr_decay=0.9995,
        )
        pred, _ = make_rawdata_mlp_predictor(data, data, cfg)
        mse = np.mean((y - pred.predict(data)) ** 2)
        assert mse <= 1e-6 * y.var()

    def test_predictor_round_trip(self, raw_mlp, sim):
        back = Predictor.from_dict(raw_mlp.to_dict())
        np.testing.assert_array_equal(back.predict(sim.tuning), raw_mlp.predict(sim.tuning))

    def test_fnn_chart(self, sim):
        pred, _ = make_fnn_predictor(sim.train, sim.validation, FAST)
        chart = build_chart(pred, sim.tuning)
        assert chart.name == "FNNCC" and chart.lcl < 0 < chart.ucl

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            Predictor("svm")
