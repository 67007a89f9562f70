import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import Lasso

from retailprob.features import LagMatrix, embed
from retailprob.linear import (
    LinearModel,
    NormalAccumulator,
    NumericalError,
    accumulate,
    accumulate_series,
    fit_lasso,
    fit_lasso_fixed,
    fit_ols,
    lambda_grid,
    series_accumulators,
    solve_ols,
    stream_fold_accumulators,
)


def dense_gram(X, y):
    # naive triple loop over the intercept-augmented design
    n, p = X.shape
    A = [[1.0] + list(map(float, row)) for row in X]
    xtx = np.zeros((p + 1, p + 1))
    xty = np.zeros(p + 1)
    for r in range(n):
        for i in range(p + 1):
            xty[i] += A[r][i] * y[r]
            for j in range(p + 1):
                xtx[i, j] += A[r][i] * A[r][j]
    return xtx, xty


class TestAccumulator:
    def test_one_row(self):
        acc = NormalAccumulator.from_rows([[1.0, 2.0]], [3.0])
        v = np.array([1.0, 1.0, 2.0])
        np.testing.assert_array_equal(acc.xtx, np.outer(v, v))
        np.testing.assert_array_equal(acc.xty, 3 * v)
        assert acc.n_rows == 1 and acc.yty == 9

    def test_merge_equals_union(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(30, 4)), rng.normal(size=30)
        a = NormalAccumulator.from_rows(X[:12], y[:12])
        b = NormalAccumulator.from_rows(X[12:], y[12:])
        u = NormalAccumulator.from_rows(X, y)
        m = a + b
        np.testing.assert_allclose(m.xtx, u.xtx, rtol=1e-12)
        np.testing.assert_allclose(m.xty, u.xty, rtol=1e-12)
        assert m.n_rows == 30

    def test_dense_oracle(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(50, 5)), rng.normal(size=50)
        xtx, xty = dense_gram(X, y)
        acc = NormalAccumulator.from_rows(X, y)
        np.testing.assert_allclose(acc.xtx, xtx, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(acc.xty, xty, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(acc.xtx, acc.xtx.T)
        assert (np.diag(acc.xtx) >= 0).all()

    def test_dimension_mismatch(self):
        acc = NormalAccumulator.empty(3)
        with pytest.raises(ValueError, match="dimension mismatch"):
            acc.add_rows(np.ones((2, 2)), np.ones(2))
        with pytest.raises(ValueError):
            acc.merge(NormalAccumulator.empty(2))

    def test_rss_from_cross_products(self):
        rng = np.random.default_rng(2)
        X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
        beta = rng.normal(size=4)
        acc = NormalAccumulator.from_rows(X, y)
        direct = np.sum((y - beta[0] - X @ beta[1:]) ** 2)
        assert acc.rss(beta) == pytest.approx(direct, rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 6))
    def test_merge_order_independent(self, seed, k):
        rng = np.random.default_rng(seed)
        parts = [NormalAccumulator.from_rows(rng.normal(size=(5, 3)), rng.normal(size=5)) for _ in range(k)]
        fwd = parts[0]
        for p in parts[1:]:
            fwd = fwd + p
        order = rng.permutation(k)
        back = parts[order[0]]
        for i in order[1:]:
            back = parts[i] + back
        np.testing.assert_allclose(fwd.xtx, back.xtx, rtol=1e-9)
        np.testing.assert_allclose(fwd.xty, back.xty, rtol=1e-9)

    def test_accumulate_paths_agree(self):
        rng = np.random.default_rng(3)
        vals = rng.poisson(3.0, size=(6, 40)).astype(float)
        m = embed(vals, n_lags=5)
        a = accumulate(m)
        b = accumulate_series(vals, n_lags=5, max_rows=37)
        c = series_accumulators(vals, n_lags=5, max_rows=37).pooled()
        d = accumulate([(m.X, m.y)])
        for other in (b, c, d):
            np.testing.assert_allclose(other.xtx, a.xtx, rtol=1e-12)
            np.testing.assert_allclose(other.xty, a.xty, rtol=1e-12)
            assert other.n_rows == a.n_rows

    def test_series_accumulators_subset(self):
        rng = np.random.default_rng(4)
        vals = rng.poisson(3.0, size=(5, 30)).astype(float)
        sa = series_accumulators(vals, n_lags=4)
        assert len(sa) == 5
        sub = sa.pooled([1, 3])
        direct = accumulate_series(vals[[1, 3]], n_lags=4)
        np.testing.assert_allclose(sub.xtx, direct.xtx)
        assert sub.n_rows == 60

    def test_empty_rows(self):
        with pytest.raises(ValueError):
            accumulate([])


class TestOls:
    def test_exact_line(self):
        x = np.arange(10.0)[:, None]
        model = solve_ols(NormalAccumulator.from_rows(x, 2 + 3 * x[:, 0]))
        np.testing.assert_allclose(model.beta, [2, 3], atol=1e-9)

    def test_duplicate_columns_match_pinv(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 2))
        X = np.column_stack([x, x[:, 0]])
        y = 1 + x @ [2.0, -1.0] + 0.1 * rng.normal(size=40)
        model = solve_ols(NormalAccumulator.from_rows(X, y))
        A = np.column_stack([np.ones(40), X])
        oracle = np.linalg.pinv(A) @ y
        np.testing.assert_allclose(model.predict(X), A @ oracle, atol=1e-6)

    def test_qr_oracle(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(200, 100))
        y = X @ rng.normal(size=100) + rng.normal(size=200)
        model = solve_ols(NormalAccumulator.from_rows(X, y))
        A = np.column_stack([np.ones(200), X])
        q, r = np.linalg.qr(A)
        oracle = np.linalg.solve(r, q.T @ y)
        np.testing.assert_allclose(model.beta, oracle, rtol=1e-7, atol=1e-7)

    def test_local_optimality(self):
        rng = np.random.default_rng(7)
        X, y = rng.normal(size=(60, 4)), rng.normal(size=60)
        acc = NormalAccumulator.from_rows(X, y)
        beta = solve_ols(acc, ridge_eps=0.0).beta
        best = acc.rss(beta)
        for _ in range(50):
            assert acc.rss(beta + 1e-3 * rng.normal(size=5)) >= best

    def test_empty_accumulator(self):
        with pytest.raises(ValueError):
            solve_ols(NormalAccumulator.empty(2))

    def test_nan_is_numerical_error(self):
        acc = NormalAccumulator.from_rows([[1.0], [2.0]], [1.0, 2.0])
        acc.xtx[1, 1] = np.nan
        with pytest.raises(NumericalError, match="singular normal equations"):
            solve_ols(acc)

    def test_affine_prediction(self):
        model = LinearModel(np.array([1.0, 2.0, -1.0]))
        x = np.array([[3.0, 4.0]])
        a, b = 2.0, 5.0
        # f(a x + b 1) = a f(x) + (1 - a) b0 + b * sum(coef)
        lhs = model.predict(a * x + b)
        rhs = a * model.predict(x) + (1 - a) * model.intercept + b * model.coef.sum()
        np.testing.assert_allclose(lhs, rhs)

    def test_fit_ols_on_lag_matrix(self):
        vals = np.array([[1.0, 2, 3, 4, 5, 6, 7, 8]])
        model = fit_ols(embed(vals, n_lags=1, pad="drop"))
        np.testing.assert_allclose(model.predict([[8.0]]), [9.0], atol=1e-6)

    def test_save_load(self, tmp_path):
        model = LinearModel(np.array([0.5, -1.25, 3.0]), lam=0.1)
        model.save(tmp_path / "model_linear.txt")
        lines = (tmp_path / "model_linear.txt").read_text().splitlines()
        assert lines[1:] == ["0.5", "-1.25", "3.0"]
        back = LinearModel.load(tmp_path / "model_linear.txt")
        np.testing.assert_array_equal(back.beta, model.beta)
        assert back.lam == 0.1

    def test_non_finite_coefficients_rejected(self):
        with pytest.raises(NumericalError):
            LinearModel(np.array([1.0, np.inf]))


def sparse_problem(n=2000, p=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[[0, 6, p // 4 + 2]] = [1.5, -2.0, 0.8]
    y = 0.3 + X @ beta + 0.1 * rng.normal(size=n)
    return X, y, beta


class TestLasso:
    def test_huge_penalty_gives_mean(self):
        rng = np.random.default_rng(8)
        X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
        model = fit_lasso_fixed(NormalAccumulator.from_rows(X, y), 1e6)
        assert np.all(model.coef == 0)
        assert model.intercept == pytest.approx(y.mean())

    def test_zero_penalty_matches_ols(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(80, 4))
        y = X @ [1.0, 0.5, -2.0, 0.0] + rng.normal(size=80)
        acc = NormalAccumulator.from_rows(X, y)
        np.testing.assert_allclose(fit_lasso_fixed(acc, 0.0).predict(X), solve_ols(acc, 0.0).predict(X), atol=1e-6)

    @pytest.mark.parametrize("lam", [0.01, 0.1, 0.5])
    def test_sklearn_oracle(self, lam):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(300, 8)) * rng.uniform(0.5, 3, size=8) + 2
        y = X @ rng.normal(size=8) + rng.normal(size=300)
        model = fit_lasso_fixed(NormalAccumulator.from_rows(X, y), lam)
        mu, sd = X.mean(axis=0), X.std(axis=0)
        ref = Lasso(alpha=lam, tol=1e-12, max_iter=100_000).fit((X - mu) / sd, y)
        np.testing.assert_allclose(model.coef * sd, ref.coef_, atol=1e-6)
        np.testing.assert_allclose(model.predict(X), ref.predict((X - mu) / sd), atol=1e-6)

    def test_grid_starts_at_zeroing_penalty(self):
        X, y, _ = sparse_problem(200, 10)
        acc = NormalAccumulator.from_rows(X, y)
        grid = lambda_grid(acc)
        assert grid.size == 100 and grid[-1] == pytest.approx(grid[0] * 1e-4)
        assert np.all(fit_lasso_fixed(acc, grid[0] * 1.0001).coef == 0)
        assert np.any(fit_lasso_fixed(acc, grid[0] * 0.99).coef != 0)

    def test_support_recovery(self):
        X, y, beta = sparse_problem()
        zeros = np.zeros(y.size, int)
        model = fit_lasso(LagMatrix(X, y, zeros, zeros, ["s"]), cv_folds=10)
        support = set(np.flatnonzero(np.abs(model.coef) > 1e-8))
        assert {0, 6, 27} <= support  # p // 4 + 2 == 27
        assert model.info["best_index"] >= 0

    def test_fold_accumulators_input(self):
        rng = np.random.default_rng(11)
        vals = rng.poisson(2.0, size=(20, 60)).astype(float)
        folds = stream_fold_accumulators(vals, cv_folds=4, n_lags=3, seed=1)
        assert len(folds) == 4
        assert sum(f.n_rows for f in folds) == 20 * 60
        model = fit_lasso(folds)
        assert np.isfinite(model.beta).all()

    def test_too_few_rows(self):
        m = embed([[1.0, 2.0, 3.0]], n_lags=1)
        with pytest.raises(ValueError, match="rows"):
            fit_lasso(m, cv_folds=10)

    def test_non_finite_inputs(self):
        m = embed(np.arange(40.0).reshape(2, 20), n_lags=2)
        m.X[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            fit_lasso(m)
