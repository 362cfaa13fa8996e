import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnncc.basis import (
    BSplineBasis,
    FunctionalData,
    Smoother,
    inner_product,
    make_bspline_basis,
    eval_basis,
    quadrature_weights,
    smooth_profiles,
    uniform_grid,
)
from fnncc.errors import ConfigurationError, IllPosedFitError


def cox_de_boor(knots, order, i, t):
    """Textbook recursion; right endpoint belongs to the last nonempty span."""
    if order == 1:
        last = knots[-1]
        if knots[i] <= t < knots[i + 1]:
            return 1.0
        if t == last and knots[i] < knots[i + 1] == last:
            return 1.0
        return 0.0
    out = 0.0
    den1 = knots[i + order - 1] - knots[i]
    den2 = knots[i + order] - knots[i + 1]
    if den1 > 0:
        out += (t - knots[i]) / den1 * cox_de_boor(knots, order - 1, i, t)
    if den2 > 0:
        out += (knots[i + order] - t) / den2 * cox_de_boor(knots, order - 1, i + 1, t)
    return out


def dense_riemann(fun, n=10**6):
    t = (np.arange(n) + 0.5) / n
    return np.mean(fun(t))


class TestBasis:
    def test_single_segment_cubic(self):
        basis = make_bspline_basis(4, 4)
        np.testing.assert_allclose(eval_basis(basis, [0.0])[0], [1, 0, 0, 0])
        np.testing.assert_allclose(eval_basis(basis, [1.0])[0], [0, 0, 0, 1])

    def test_paper_sizes(self):
        assert make_bspline_basis(4, 30).interior_knots.size == 26
        assert make_bspline_basis(4, 5).interior_knots.size == 1

    def test_too_few_functions(self):
        with pytest.raises(ConfigurationError):
            make_bspline_basis(4, 3)

    def test_knot_layout(self):
        basis = make_bspline_basis(4, 10)
        knots = basis.knots
        assert knots.size == basis.n_basis + basis.order
        assert np.all(np.diff(knots) >= 0)
        assert np.all(knots[:4] == 0) and np.all(knots[-4:] == 1)

    def test_piecewise_constant_indicator(self):
        basis = make_bspline_basis(1, 5)
        row = eval_basis(basis, [0.5])[0]
        np.testing.assert_array_equal(row, np.eye(5)[2])

    def test_matches_cox_de_boor(self):
        basis = make_bspline_basis(4, 6)
        row = eval_basis(basis, [0.5])[0]
        oracle = [cox_de_boor(basis.knots, 4, i, 0.5) for i in range(6)]
        np.testing.assert_allclose(row, oracle, atol=1e-14)

    @pytest.mark.parametrize("order,n_basis", [(2, 3), (3, 7), (4, 6), (4, 30), (5, 12)])
    def test_matches_cox_de_boor_on_grid(self, order, n_basis):
        basis = make_bspline_basis(order, n_basis)
        grid = np.linspace(0, 1, 37)
        oracle = np.array(
            [[cox_de_boor(basis.knots, order, i, t) for i in range(n_basis)] for t in grid]
        )
        np.testing.assert_allclose(eval_basis(basis, grid), oracle, atol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(
        order=st.integers(1, 6),
        extra=st.integers(0, 25),
        t=st.lists(st.floats(0, 1), min_size=1, max_size=20),
    )
    def test_partition_of_unity(self, order, extra, t):
        values = eval_basis(make_bspline_basis(order, order + extra), t)
        np.testing.assert_allclose(values.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(values >= -1e-15) and np.all(values <= 1 + 1e-15)

    def test_exact_integrals(self):
        basis = make_bspline_basis(4, 9)
        oracle = [dense_riemann(lambda t, k=k: basis.evaluate(t)[:, k], 2 * 10**5) for k in range(9)]
        np.testing.assert_allclose(basis.integrals(), oracle, atol=1e-9)

    def test_penalty_matrix_dense_oracle(self):
        basis = make_bspline_basis(4, 7)
        n = 200000
        t = (np.arange(n) + 0.5) / n
        d2 = basis.evaluate(t, deriv=2)
        oracle = d2.T @ d2 / n
        np.testing.assert_allclose(basis.penalty_matrix(2), oracle, rtol=1e-6, atol=1e-6)

    def test_roundtrip_dict(self):
        basis = make_bspline_basis(4, 12)
        assert BSplineBasis.from_dict(basis.to_dict()) == basis


class TestSmoothing:
    grid = uniform_grid(150)

    def test_cubic_reproduced(self):
        t = self.grid
        raw = np.vstack([1 + 2 * t - 3 * t**2 + 0.5 * t**3, t**3])
        fd = smooth_profiles(raw, t, make_bspline_basis(4, 8), penalty=0.0)
        np.testing.assert_allclose(fd.evaluate(t), raw, atol=1e-9)

    def test_infinite_penalty_gives_line(self):
        rng = np.random.default_rng(1)
        t = self.grid
        raw = np.sin(6 * t) + rng.normal(0, 0.1, t.size)
        fd = smooth_profiles(raw, t, make_bspline_basis(4, 30), penalty=1e12)
        slope, intercept = np.polyfit(t, raw, 1)
        np.testing.assert_allclose(fd.evaluate(t)[0], slope * t + intercept, atol=1e-6)

    def test_gcv_matches_exhaustive_scan(self):
        rng = np.random.default_rng(2)
        t = self.grid
        raw = np.sin(2 * np.pi * t) + rng.normal(0, 0.2, t.size)
        basis = make_bspline_basis(4, 30)
        lambdas = np.logspace(-8, 2, 25)
        fd = smooth_profiles(raw, t, basis, penalty="gcv", lambdas=lambdas)

        # oracle: explicit hat matrix per lambda
        B = basis.evaluate(t)
        P = basis.penalty_matrix(2)
        scores = []
        for lam in lambdas:
            H = B @ np.linalg.solve(B.T @ B + lam * P, B.T)
            resid = raw - H @ raw
            scores.append(t.size * resid @ resid / (t.size - np.trace(H)) ** 2)
        assert fd.smoothing_lambda == lambdas[int(np.argmin(scores))]

    def test_df_matches_hat_trace(self):
        t = self.grid
        basis = make_bspline_basis(4, 20)
        sm = Smoother(basis, t)
        B = basis.evaluate(t)
        P = basis.penalty_matrix(2)
        for lam in [0.0, 1e-6, 1e-3, 1.0]:
            H = B @ np.linalg.solve(B.T @ B + lam * P, B.T)
            assert sm.df(lam) == pytest.approx(np.trace(H), rel=1e-9)

    def test_sse_monotone_in_lambda(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(5, self.grid.size))
        sm = Smoother(make_bspline_basis(4, 30), self.grid)
        sse = [sm.sse(raw, lam) for lam in np.logspace(-10, 6, 40)]
        assert np.all(np.diff(sse) >= -1e-9 * sse[-1])

    def test_interpolation_at_zero_penalty(self):
        grid = np.linspace(0, 1, 12)
        rng = np.random.default_rng(4)
        raw = rng.normal(size=(3, 12))
        fd = smooth_profiles(raw, grid, make_bspline_basis(4, 12), penalty=0.0)
        np.testing.assert_allclose(fd.evaluate(grid), raw, atol=1e-8)

    def test_ill_posed(self):
        grid = np.linspace(0, 1, 6)
        with pytest.raises(IllPosedFitError):
            smooth_profiles(np.zeros((1, 6)), grid, make_bspline_basis(4, 10), penalty=0.0)

    def test_underdetermined_with_penalty(self):
        grid = np.linspace(0, 1, 6)
        fd = smooth_profiles(grid[None, :], grid, make_bspline_basis(4, 10), penalty=1e-3)
        np.testing.assert_allclose(fd.evaluate(grid)[0], grid, atol=1e-8)


class TestQuadrature:
    def test_simpson_cubic_five_points(self):
        rule = quadrature_weights(np.linspace(0, 1, 5), "simpson")
        assert rule.integrate(rule.grid**3) == pytest.approx(0.25, abs=1e-12)

    @pytest.mark.parametrize("n", [3, 5, 11, 151])
    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_simpson_exact_on_polynomials(self, n, degree):
        rule = quadrature_weights(np.linspace(0, 1, n), "simpson")
        assert rule.integrate(rule.grid**degree) == pytest.approx(1 / (degree + 1), abs=1e-12)

    @pytest.mark.parametrize("method", ["simpson", "trapezoid"])
    @pytest.mark.parametrize("n", [4, 7, 150])
    def test_constant(self, method, n):
        rule = quadrature_weights(np.linspace(0, 1, n), method)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(rule.weights >= 0)

    def test_trapezoid_nonuniform_linear(self):
        grid = np.array([0.0, 0.1, 0.35, 0.8, 1.0])
        rule = quadrature_weights(grid, "trapezoid")
        assert rule.integrate(3 * grid + 1) == pytest.approx(2.5, abs=1e-14)

    def test_sine_matches_riemann(self):
        rule = quadrature_weights(uniform_grid(150), "simpson")
        value = rule.integrate(np.sin(2 * np.pi * rule.grid))
        oracle = dense_riemann(lambda t: np.sin(2 * np.pi * t))
        assert abs(value) < 1e-6
        assert value == pytest.approx(oracle, abs=1e-6)

    def test_simpson_rejects_nonuniform(self):
        with pytest.raises(ConfigurationError, match="trapezoid"):
            quadrature_weights(np.array([0.0, 0.2, 0.3, 1.0]), "simpson")


class TestInnerProduct:
    rule = quadrature_weights(uniform_grid(150), "simpson")

    def test_zero(self):
        assert inner_product(np.sin(self.rule.grid), 0.0, self.rule) == 0.0

    def test_one(self):
        assert inner_product(1.0, 1.0, self.rule) == pytest.approx(1.0, abs=1e-12)

    def test_spline_pair(self):
        basis = make_bspline_basis(4, 8)
        coefs = np.eye(8)
        b2 = FunctionalData(basis, coefs[[2]])
        b3 = FunctionalData(basis, coefs[[3]])
        value = inner_product(b2, b3, self.rule)[0]
        oracle = dense_riemann(lambda t: basis.evaluate(t)[:, 2] * basis.evaluate(t)[:, 3], 2 * 10**5)
        assert value == pytest.approx(oracle, abs=1e-8)
        assert basis.gram_matrix()[2, 3] == pytest.approx(oracle, abs=1e-10)
