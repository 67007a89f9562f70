"""Pooled least squares via accumulated normal equations, and Lasso by coordinate descent.

The accumulator only ever holds ``(p+1) x (p+1)`` cross products, so a global
linear model can be fitted over arbitrarily many series by streaming lag
blocks through :meth:`NormalAccumulator.add_rows`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from numba import njit

from .features import DEFAULT_LAGS, LagMatrix, NumericalError, PadPolicy, iter_lag_blocks

FORMAT_VERSION = 1


@dataclass
class NormalAccumulator:
    """Running ``X'X``, ``X'y`` and ``y'y`` with an intercept column of ones."""

    xtx: np.ndarray
    xty: np.ndarray
    yty: float = 0.0
    n_rows: int = 0

    @classmethod
    def empty(cls, p: int) -> "NormalAccumulator":
        return cls(np.zeros((p + 1, p + 1)), np.zeros(p + 1))

    @classmethod
    def from_rows(cls, X, y) -> "NormalAccumulator":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        acc = cls.empty(X.shape[1])
        acc.add_rows(X, y)
        return acc

    @property
    def p(self) -> int:
        return self.xty.size - 1

    def add_rows(self, X, y) -> "NormalAccumulator":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.shape[1] != self.p or X.shape[0] != y.size:
            raise ValueError(
                f"dimension mismatch: X {X.shape}, y {y.shape}, accumulator p={self.p}"
            )
        colsum = X.sum(axis=0)
        self.xtx[0, 0] += X.shape[0]
        self.xtx[0, 1:] += colsum
        self.xtx[1:, 0] += colsum
        self.xtx[1:, 1:] += X.T @ X
        self.xty[0] += y.sum()
        self.xty[1:] += X.T @ y
        self.yty += float(y @ y)
        self.n_rows += X.shape[0]
        return self

    def merge(self, other: "NormalAccumulator") -> "NormalAccumulator":
        if other.p != self.p:
            raise ValueError("cannot merge accumulators of different width")
        return NormalAccumulator(
            self.xtx + other.xtx, self.xty + other.xty, self.yty + other.yty, self.n_rows + other.n_rows
        )

    __add__ = merge

    def copy(self) -> "NormalAccumulator":
        return NormalAccumulator(self.xtx.copy(), self.xty.copy(), self.yty, self.n_rows)

    def rss(self, beta) -> float:
        """``||y - X beta||^2`` from the cross products alone."""
        beta = np.asarray(beta, dtype=np.float64)
        return float(self.yty - 2 * beta @ self.xty + beta @ self.xtx @ beta)


def accumulate(rows, p: int | None = None) -> NormalAccumulator:
    """Accumulate cross products from a :class:`LagMatrix` or ``(X, y)`` blocks.

    Per-series blocks are summed one at a time; the pooled ``X`` is never
    materialised beyond one block.
    """
    if isinstance(rows, LagMatrix):
        acc = NormalAccumulator.empty(rows.p)
        order = np.argsort(rows.series_index, kind="stable")
        idx = rows.series_index[order]
        bounds = np.flatnonzero(np.diff(idx)) + 1
        for seg in np.split(order, bounds):
            if seg.size:
                acc.add_rows(rows.X[seg], rows.y[seg])
        return acc
    acc = None if p is None else NormalAccumulator.empty(p)
    for block in rows:
        X, y = block[0], block[1]
        if acc is None:
            acc = NormalAccumulator.empty(np.shape(X)[1])
        acc.add_rows(X, y)
    if acc is None:
        raise ValueError("no rows to accumulate")
    return acc


def accumulate_series(
    values: np.ndarray,
    n_train: int | None = None,
    n_lags: int = DEFAULT_LAGS,
    pad: PadPolicy = PadPolicy.ZERO,
    max_rows: int = 200_000,
) -> NormalAccumulator:
    """Stream lag blocks of ``(n_series, length)`` values into an accumulator."""
    acc = NormalAccumulator.empty(n_lags)
    for X, y, _, _ in iter_lag_blocks(values, n_train, n_lags, pad, max_rows=max_rows):
        acc.add_rows(X, y)
    return acc


@dataclass
class SeriesAccumulators:
    """Cross products kept separately per series, so any subset can be pooled by summation."""

    xtx: np.ndarray  # (n_series, p+1, p+1)
    xty: np.ndarray  # (n_series, p+1)
    yty: np.ndarray
    n_rows: np.ndarray

    def __len__(self):
        return self.xty.shape[0]

    def pooled(self, indices=None) -> NormalAccumulator:
        if indices is None:
            indices = slice(None)
        return NormalAccumulator(
            self.xtx[indices].sum(axis=0),
            self.xty[indices].sum(axis=0),
            float(self.yty[indices].sum()),
            int(self.n_rows[indices].sum()),
        )


def series_accumulators(
    values: np.ndarray,
    n_train: int | None = None,
    n_lags: int = DEFAULT_LAGS,
    pad: PadPolicy = PadPolicy.ZERO,
    max_rows: int = 200_000,
) -> SeriesAccumulators:
    """Per-series ``X'X``, ``X'y``, ``y'y`` for ``(n_series, length)`` values."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    q = n_lags + 1
    xtx = np.zeros((n, q, q))
    xty = np.zeros((n, q))
    yty = np.zeros(n)
    n_rows = np.zeros(n, dtype=np.int64)
    for X, y, idx, _ in iter_lag_blocks(values, n_train, n_lags, pad, max_rows=max_rows):
        first, last = idx[0], idx[-1] + 1
        m = last - first
        Xa = np.concatenate([np.ones((X.shape[0], 1)), X], axis=1).reshape(m, -1, q)
        ya = y.reshape(m, -1)
        xtx[first:last] = np.matmul(Xa.transpose(0, 2, 1), Xa)
        xty[first:last] = np.einsum("mti,mt->mi", Xa, ya)
        yty[first:last] = np.einsum("mt,mt->m", ya, ya)
        n_rows[first:last] = ya.shape[1]
    return SeriesAccumulators(xtx, xty, yty, n_rows)


@dataclass
class LinearModel:
    """``beta[0]`` is the intercept; ``lam`` is the Lasso penalty or ``None`` for OLS."""

    beta: np.ndarray
    lam: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if not np.all(np.isfinite(self.beta)):
            raise NumericalError("non-finite linear coefficients")

    @property
    def intercept(self) -> float:
        return float(self.beta[0])

    @property
    def coef(self) -> np.ndarray:
        return self.beta[1:]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.beta[0] + X @ self.beta[1:]

    def save(self, path) -> None:
        kind = "ols" if self.lam is None else f"lasso lambda={self.lam!r}"
        lines = [f"# retailprob linear model v{FORMAT_VERSION} {kind}"]
        lines += [repr(float(b)) for b in self.beta]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LinearModel":
        lam = None
        beta = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "lambda=" in line:
                    lam = float(line.split("lambda=", 1)[1])
                continue
            beta.append(float(line))
        return cls(np.array(beta), lam)


def solve_ols(acc: NormalAccumulator, ridge_eps: float | None = None, refine: int = 3) -> LinearModel:
    """Solve the normal equations by Cholesky with a small ridge jitter, intercept unpenalised.

    ``ridge_eps`` defaults to ``1e-8 * trace(X'X) / (p + 1)``.  The jittered
    factor is then reused for ``refine`` rounds of iterative refinement
    against the unjittered ``X'X``, which removes the shrinkage bias on
    well-posed systems and leaves null-space directions at zero on
    rank-deficient ones.  If the factorisation fails the jitter is raised
    tenfold, up to six times.
    """
    if acc.n_rows < 1:
        raise ValueError("accumulator is empty")
    if not (np.all(np.isfinite(acc.xtx)) and np.all(np.isfinite(acc.xty))):
        raise NumericalError("singular normal equations: non-finite cross products")
    k = acc.p + 1
    if ridge_eps is None:
        ridge_eps = 1e-8 * np.trace(acc.xtx) / k
    penalty = np.full(k, 1.0)
    penalty[0] = 0.0
    eps = ridge_eps
    for _ in range(7):
        A = acc.xtx + np.diag(eps * penalty)
        try:
            c = scipy.linalg.cho_factor(A)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            eps = max(eps * 10, 1e-12)
            continue
        beta = scipy.linalg.cho_solve(c, acc.xty)
        for _ in range(refine if eps > 0 else 0):
            beta = beta + scipy.linalg.cho_solve(c, acc.xty - acc.xtx @ beta)
        if np.all(np.isfinite(beta)):
            return LinearModel(beta, None, {"ridge_eps": eps, "n_rows": acc.n_rows})
        eps = max(eps * 10, 1e-12)
    raise NumericalError("singular normal equations")


def fit_ols(matrix: LagMatrix, ridge_eps: float | None = None) -> LinearModel:
    return solve_ols(accumulate(matrix), ridge_eps)


# -- Lasso -----------------------------------------------------------------


@dataclass
class _Standardized:
    """Centred, scaled Gram quantities of one accumulator (population sd)."""

    gram: np.ndarray  # (p, p) correlation-like, divided by n
    corr: np.ndarray  # (p,) X_s' (y - ybar) / n
    mean_x: np.ndarray
    scale: np.ndarray
    mean_y: float
    active: np.ndarray  # features with non-zero variance

    @classmethod
    def from_acc(cls, acc: NormalAccumulator) -> "_Standardized":
        n = acc.n_rows
        sx = acc.xtx[0, 1:]
        mean_x = sx / n
        mean_y = acc.xty[0] / n
        cov = acc.xtx[1:, 1:] / n - np.outer(mean_x, mean_x)
        var = np.clip(np.diag(cov), 0.0, None)
        scale = np.sqrt(var)
        active = scale > 1e-12 * max(1.0, np.abs(mean_x).max(initial=0.0))
        safe = np.where(active, scale, 1.0)
        gram = cov / np.outer(safe, safe)
        cxy = acc.xty[1:] / n - mean_x * mean_y
        corr = np.where(active, cxy / safe, 0.0)
        gram[~active, :] = 0.0
        gram[:, ~active] = 0.0
        return cls(gram, corr, mean_x, safe, mean_y, active)

    def unscale(self, b: np.ndarray) -> np.ndarray:
        coef = np.where(self.active, b / self.scale, 0.0)
        return np.concatenate([[self.mean_y - self.mean_x @ coef], coef])


@njit(cache=True)
def _cd_kernel(gram, corr, lam, b, idx, tol, max_iter):
    diag = np.diag(gram).copy()
    grad = corr - gram @ b  # residual correlation, kept in sync
    m = gram.shape[0]
    for _ in range(max_iter):
        max_delta = 0.0
        for j in idx:
            old = b[j]
            z = grad[j] + diag[j] * old
            mag = abs(z) - lam
            new = 0.0
            if mag > 0.0:
                new = (mag if z > 0 else -mag) / diag[j]
            if new != old:
                d = new - old
                for i in range(m):
                    grad[i] -= gram[i, j] * d
                b[j] = new
                step = abs(d) * np.sqrt(diag[j])
                if step > max_delta:
                    max_delta = step
        if max_delta < tol:
            break
    return b


def _cd_gram(gram, corr, lam, b, active, tol=1e-9, max_iter=10_000):
    """Cyclic coordinate descent for ``(1/2) b'Gb - c'b + lam |b|_1`` (covariance updates)."""
    idx = np.flatnonzero(active & (np.diag(gram) > 0)).astype(np.int64)
    return _cd_kernel(
        np.ascontiguousarray(gram, dtype=np.float64),
        np.asarray(corr, dtype=np.float64),
        float(lam),
        np.asarray(b, dtype=np.float64),
        idx,
        float(tol),
        int(max_iter),
    )


def lambda_grid(acc: NormalAccumulator, n_lambda: int = 100, ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced penalties from the smallest all-zero penalty down to ``ratio`` of it."""
    st = _Standardized.from_acc(acc)
    lam_max = float(np.abs(st.corr).max(initial=0.0))
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


def lasso_path(acc: NormalAccumulator, lambdas, tol: float = 1e-9) -> list[LinearModel]:
    """Warm-started Lasso fits for a decreasing sequence of penalties."""
    st = _Standardized.from_acc(acc)
    b = np.zeros(acc.p)
    out = []
    for lam in lambdas:
        b = _cd_gram(st.gram, st.corr, float(lam), b, st.active, tol=tol)
        out.append(LinearModel(st.unscale(b), float(lam)))
    return out


def fit_lasso_fixed(acc: NormalAccumulator, lam: float, tol: float = 1e-10) -> LinearModel:
    """Lasso at one penalty, objective ``(1/2n)||y - Xb||^2 + lam ||b||_1`` on standardised X."""
    lam = float(lam)
    grid = lambda_grid(acc)
    lams = [g for g in grid if g > lam] + [lam]
    return lasso_path(acc, lams, tol=tol)[-1]


def fold_accumulators(matrix: LagMatrix, cv_folds: int, seed: int = 0) -> list[NormalAccumulator]:
    rng = np.random.default_rng(seed)
    folds = rng.permutation(len(matrix)) % cv_folds
    accs = []
    for k in range(cv_folds):
        m = folds == k
        accs.append(NormalAccumulator.from_rows(matrix.X[m], matrix.y[m]))
    return accs


def stream_fold_accumulators(
    values: np.ndarray,
    cv_folds: int = 10,
    n_train: int | None = None,
    n_lags: int = DEFAULT_LAGS,
    pad: PadPolicy = PadPolicy.ZERO,
    seed: int = 0,
    max_rows: int = 200_000,
) -> list[NormalAccumulator]:
    """Per-fold accumulators built block by block, rows assigned to folds at random."""
    rng = np.random.default_rng(seed)
    accs = [NormalAccumulator.empty(n_lags) for _ in range(cv_folds)]
    for X, y, _, _ in iter_lag_blocks(values, n_train, n_lags, pad, max_rows=max_rows):
        fold = rng.integers(0, cv_folds, size=y.size)
        for k in range(cv_folds):
            m = fold == k
            if m.any():
                accs[k].add_rows(X[m], y[m])
    return accs


def fit_lasso(
    rows,
    lambda_grid_values=None,
    cv_folds: int = 10,
    n_lambda: int = 100,
    seed: int = 0,
) -> LinearModel:
    """Lasso with the penalty chosen by minimum ``cv_folds``-fold CV squared error.

    ``rows`` is a :class:`LagMatrix` (rows are assigned to folds at random) or
    a list of per-fold :class:`NormalAccumulator` objects.  Held-out squared
    error is evaluated from the held-out fold's cross products, so folds
    never need to be materialised together.
    """
    if isinstance(rows, LagMatrix):
        if not (np.all(np.isfinite(rows.X)) and np.all(np.isfinite(rows.y))):
            raise ValueError("non-finite values in Lasso inputs")
        if len(rows) < cv_folds:
            raise ValueError(f"need at least {cv_folds} rows for {cv_folds}-fold CV")
        folds = fold_accumulators(rows, cv_folds, seed)
    else:
        folds = list(rows)
        cv_folds = len(folds)
    total = folds[0]
    for f in folds[1:]:
        total = total + f
    if not (np.all(np.isfinite(total.xtx)) and np.all(np.isfinite(total.xty))):
        raise ValueError("non-finite values in Lasso inputs")
    lambdas = (
        np.asarray(lambda_grid_values, dtype=np.float64)
        if lambda_grid_values is not None
        else lambda_grid(total, n_lambda)
    )
    lambdas = np.sort(lambdas)[::-1]
    sse = np.zeros(lambdas.size)
    for k in range(cv_folds):
        held = folds[k]
        if held.n_rows == 0:
            continue
        train = NormalAccumulator.empty(total.p)
        for j, f in enumerate(folds):
            if j != k:
                train = train + f
        for i, model in enumerate(lasso_path(train, lambdas, tol=1e-7)):
            sse[i] += held.rss(model.beta)
    cv_mse = sse / total.n_rows
    best = int(np.argmin(cv_mse))
    path = lasso_path(total, lambdas[: best + 1], tol=1e-9)
    model = path[-1]
    model.info.update({"cv_mse": cv_mse, "lambdas": lambdas, "best_index": best})
    return model
