"""Second-order gradient boosting over histogram trees."""

from __future__ import annotations

import ast
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..features import LagMatrix, NumericalError
from .losses import LINE_SEARCH, LossSpec, base_score, line_search_constant, loss_grad_hess, loss_values
from .tree import MAX_BINS, Binner, Tree, TreeGrower, TreeParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbtParams:
    num_trees: int = 100
    num_leaves: int = 31
    max_depth: int = -1
    learning_rate: float = 0.1
    min_data_in_leaf: int = 20
    min_sum_hessian: float = 1e-3
    lambda_l2: float = 0.0
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    max_bins: int = MAX_BINS

    def tree_params(self) -> TreeParams:
        return TreeParams(
            num_leaves=self.num_leaves,
            max_depth=self.max_depth,
            min_data_in_leaf=max(1, self.min_data_in_leaf),
            min_sum_hessian=self.min_sum_hessian,
            lambda_l2=self.lambda_l2,
        )

    def updated(self, **kwargs) -> "GbtParams":
        return replace(self, **kwargs)


PROFILES = {
    "default": GbtParams(),
    "preset": GbtParams(
        num_trees=400,
        num_leaves=255,
        learning_rate=0.05,
        feature_fraction=0.8,
        bagging_fraction=0.8,
    ),
}


def profile(name: str, **overrides) -> GbtParams:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown GBT profile {name!r}; choose from {sorted(PROFILES)}") from None
    return base.updated(**overrides) if overrides else base


@dataclass
class GbtModel:
    """Boosted ensemble: raw score ``base_score + learning_rate * sum(tree outputs)``."""

    trees: list[Tree]
    learning_rate: float
    base_score: float
    loss: LossSpec
    params: GbtParams
    n_features: int
    r_hat: float | None = None
    train_loss: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def raw_predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        f = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            f += self.learning_rate * t.predict(X)
        return f

    def predict(self, X) -> np.ndarray:
        """Mean predictions (``exp`` of the raw score for log-link losses)."""
        return self.loss.mean(self.raw_predict(X))

    def save(self, path) -> None:
        lines = [
            f"retailprob-gbt v{FORMAT_VERSION}",
            f"loss={self.loss}",
            f"base_score={self.base_score!r}",
            f"learning_rate={self.learning_rate!r}",
            f"n_features={self.n_features}",
            f"r_hat={self.r_hat!r}",
            f"params={asdict(self.params)}",
            f"trees={len(self.trees)}",
        ]
        for k, t in enumerate(self.trees):
            lines.append(f"tree {k} nodes={t.feature.size}")
            for i in range(t.feature.size):
                lines.append(
                    f"{i} {t.feature[i]} {float(t.threshold[i])!r} {t.threshold_bin[i]} "
                    f"{t.left[i]} {t.right[i]} {float(t.value[i])!r}"
                )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GbtModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("retailprob-gbt v"):
            raise ValueError(f"{path}: not a retailprob GBT model file")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        head = dict(line.split("=", 1) for line in lines[1:8])
        params = GbtParams(**ast.literal_eval(head["params"]))
        n_trees = int(head["trees"])
        trees = []
        pos = 8
        for _ in range(n_trees):
            n_nodes = int(lines[pos].split("nodes=")[1])
            rows = [lines[pos + 1 + i].split() for i in range(n_nodes)]
            pos += 1 + n_nodes
            cols = list(zip(*rows))
            trees.append(
                Tree(
                    feature=np.array(cols[1], dtype=np.int64),
                    threshold=np.array(cols[2], dtype=np.float64),
                    threshold_bin=np.array(cols[3], dtype=np.int64),
                    left=np.array(cols[4], dtype=np.int64),
                    right=np.array(cols[5], dtype=np.int64),
                    value=np.array(cols[6], dtype=np.float64),
                )
            )
        r_hat = None if head["r_hat"] == "None" else float(head["r_hat"])
        return cls(
            trees=trees,
            learning_rate=float(head["learning_rate"]),
            base_score=float(head["base_score"]),
            loss=LossSpec.parse(head["loss"]),
            params=params,
            n_features=int(head["n_features"]),
            r_hat=r_hat,
        )


def _xy(matrix):
    if isinstance(matrix, LagMatrix):
        return matrix.X, matrix.y
    X, y = matrix
    return np.atleast_2d(np.asarray(X, dtype=np.float64)), np.asarray(y, dtype=np.float64)


def fit_gbt(
    matrix,
    loss: LossSpec,
    params: GbtParams | None = None,
    seed: int = 0,
    binned=None,
) -> GbtModel:
    """Fit a boosted tree ensemble.

    Splits maximise the second-order gain
    ``G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)`` over histogram bins and
    leaves get ``-G/(H+lam)``.  For L1, pinball and Huber losses, splits are
    grown on unit Hessians and each leaf value is then replaced by the exact
    loss-minimising shift of the residuals in that leaf.

    Parameters
    ----------
    matrix : LagMatrix or (X, y)
    loss : LossSpec
    params : GbtParams, optional
        Defaults to the ``"default"`` profile.
    seed : int
        Seeds row and feature subsampling.
    binned : (Binner, ndarray), optional
        Pre-binned features to reuse across fits on the same matrix.
    """
    params = params or PROFILES["default"]
    X, y = _xy(matrix)
    n, p = X.shape
    if n == 0:
        raise ValueError("empty training matrix")
    if loss.log_link and np.any(y < 0):
        raise ValueError(f"{loss.kind.value} loss needs non-negative targets")
    f0 = base_score(loss, y)
    model = GbtModel([], params.learning_rate, f0, loss, params, p)
    f = np.full(n, f0)
    model.train_loss.append(float(loss_values(loss, y, f).mean()))
    if np.all(y == y[0]) and (not loss.log_link or y[0] > 0):
        return model

    if binned is None:
        binner = Binner(params.max_bins, seed=seed).fit(X)
        Xb = binner.transform(X)
    else:
        binner, Xb = binned
    grower = TreeGrower(Xb, binner.n_bins, params.tree_params())
    rng = np.random.default_rng(seed)
    line_search = loss.kind in LINE_SEARCH
    all_rows = np.arange(n)
    for _ in range(params.num_trees):
        g, h = loss_grad_hess(loss, y, f)
        if line_search:
            h = np.ones_like(h)
        rows = all_rows
        if params.bagging_fraction < 1.0:
            k = max(1, int(round(params.bagging_fraction * n)))
            rows = np.sort(rng.choice(n, k, replace=False))
        mask = None
        if params.feature_fraction < 1.0:
            k = max(1, int(round(params.feature_fraction * p)))
            mask = np.zeros(p, dtype=bool)
            mask[rng.choice(p, k, replace=False)] = True
        (feature, tbin, left, right), leaves = grower.grow(rows, g, h, mask)
        value = np.zeros(feature.size)
        for nid, node in leaves.items():
            if line_search:
                value[nid] = line_search_constant(loss, y[node.rows] - f[node.rows])
            else:
                value[nid] = -node.g / (node.h + params.lambda_l2) if node.h + params.lambda_l2 > 0 else 0.0
        threshold = np.array(
            [binner.threshold_value(feature[i], tbin[i]) if feature[i] >= 0 else 0.0 for i in range(feature.size)]
        )
        tree = Tree(feature, threshold, tbin, left, right, value)
        if rows is all_rows:
            leaf_of = np.empty(n, dtype=np.int64)
            for nid, node in leaves.items():
                leaf_of[node.rows] = nid
        else:
            leaf_of = tree.apply_binned(Xb)
        step = params.learning_rate * value[leaf_of]
        if not np.all(np.isfinite(step)):
            raise NumericalError("non-finite leaf values during boosting")
        f = f + step
        model.trees.append(tree)
        model.train_loss.append(float(loss_values(loss, y, f).mean()))
    return model


def poisson_deviance(y, mu) -> float:
    """Mean Poisson deviance."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.maximum(np.asarray(mu, dtype=np.float64), 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(np.mean(2 * (term - (y - mu))))
