"""Losses for the boosting engine: values, gradients and Hessians w.r.t. the raw score.

Log-link losses (Poisson, Tweedie, negative binomial) model the mean as
``exp(f)``; the others use the identity link.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..features import NumericalError

HESSIAN_FLOOR = 1e-6
R_BOUNDS = (0.01, 1e6)
# cap on raw scores inside exp(); e^50 is far beyond any count
_F_CLIP = 50.0


class LossKind(str, enum.Enum):
    L2 = "l2"
    L1 = "l1"
    HUBER = "huber"
    POISSON = "poisson"
    TWEEDIE = "tweedie"
    PINBALL = "pinball"
    NEGBIN = "negbin"


LOG_LINK = {LossKind.POISSON, LossKind.TWEEDIE, LossKind.NEGBIN}
# piecewise-linear losses: leaf values are refitted by an exact line search
LINE_SEARCH = {LossKind.L1, LossKind.HUBER, LossKind.PINBALL}


@dataclass(frozen=True)
class LossSpec:
    """Loss configuration.

    ``param`` is the Huber threshold, the Tweedie power, the pinball quantile
    level or the negative binomial size ``r``, depending on ``kind``.
    """

    kind: LossKind
    param: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        defaults = {LossKind.HUBER: 1.0, LossKind.TWEEDIE: 1.5, LossKind.PINBALL: 0.5, LossKind.NEGBIN: 1.0}
        if self.param is None and self.kind in defaults:
            object.__setattr__(self, "param", defaults[self.kind])
        p = self.param
        if self.kind is LossKind.TWEEDIE and not 1 < p < 2:
            raise ValueError(f"Tweedie power must be in (1, 2), got {p}")
        if self.kind is LossKind.PINBALL and not 0 < p < 1:
            raise ValueError(f"pinball level must be in (0, 1), got {p}")
        if self.kind is LossKind.HUBER and not p > 0:
            raise ValueError(f"Huber threshold must be > 0, got {p}")
        if self.kind is LossKind.NEGBIN and not (np.isfinite(p) and p > 0):
            raise ValueError(f"negative binomial r must be > 0, got {p}")

    @classmethod
    def l2(cls):
        return cls(LossKind.L2)

    @classmethod
    def l1(cls):
        return cls(LossKind.L1)

    @classmethod
    def huber(cls, delta=1.0):
        return cls(LossKind.HUBER, delta)

    @classmethod
    def poisson(cls):
        return cls(LossKind.POISSON)

    @classmethod
    def tweedie(cls, power=1.5):
        return cls(LossKind.TWEEDIE, power)

    @classmethod
    def pinball(cls, u):
        return cls(LossKind.PINBALL, u)

    @classmethod
    def negbin(cls, r):
        return cls(LossKind.NEGBIN, r)

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """Parse ``"poisson"``, ``"tweedie:1.3"``, ``"pinball:0.9"`` and the like."""
        name, _, arg = text.partition(":")
        return cls(LossKind(name.strip().lower()), float(arg) if arg else None)

    def __str__(self):
        return self.kind.value if self.param is None else f"{self.kind.value}:{self.param!r}"

    @property
    def log_link(self) -> bool:
        return self.kind in LOG_LINK

    def with_r(self, r: float) -> "LossSpec":
        return LossSpec(LossKind.NEGBIN, float(r))

    def mean(self, f):
        """Mean prediction from raw scores."""
        f = np.asarray(f, dtype=np.float64)
        return np.exp(np.minimum(f, _F_CLIP)) if self.log_link else f


def _check_f(f):
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NumericalError("non-finite raw score")
    return f


def _check_r(r):
    if not (np.isfinite(r) and r > 0):
        raise ValueError(f"negative binomial r must be > 0, got {r}")


def log_rising(r: float, x) -> np.ndarray:
    """``lnGamma(r + x) - lnGamma(r)`` without cancellation for large ``r``.

    Integer ``x`` (the usual case) is summed as ``sum_{k<x} ln(r + k)``;
    anything else falls back to the gamma-function difference.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and np.all(x == np.floor(x)) and x.min() >= 0 and x.max() <= 1e6:
        xi = x.astype(np.int64)
        table = np.concatenate([[0.0], np.cumsum(np.log(r + np.arange(xi.max(initial=0))))])
        return table[xi]
    return gammaln(r + x) - gammaln(r)


def nb_nll_terms(x, f, r: float) -> np.ndarray:
    """Per-sample negative binomial NLL with mean ``exp(f)`` and size ``r``."""
    _check_r(r)
    f = _check_f(f)
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("counts must be >= 0")
    mu = np.exp(np.minimum(f, _F_CLIP))
    # r ln(mu + r) - r ln r = r log1p(mu / r);  x ln(mu + r) - x f = x (ln(e^f + r) - f)
    tail = np.where(x > 0, x * (np.logaddexp(f, np.log(r)) - f), 0.0)
    out = -log_rising(r, x) + gammaln(x + 1) + r * np.log1p(mu / r) + tail
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite negative binomial NLL")
    return out


def nb_nll(x, f, r: float) -> float:
    """Summed negative binomial negative log likelihood.

    Examples
    --------
    >>> round(nb_nll([0], [0.0], 1.0), 12) == round(float(np.log(2)), 12)
    True
    """
    return float(np.sum(nb_nll_terms(x, f, r)))


def loss_values(loss: LossSpec, x, f) -> np.ndarray:
    """Per-sample loss (up to terms constant in ``f`` for Poisson/Tweedie)."""
    f = _check_f(f)
    x = np.asarray(x, dtype=np.float64)
    k = loss.kind
    if k is LossKind.L2:
        return 0.5 * (f - x) ** 2
    if k is LossKind.L1:
        return np.abs(f - x)
    if k is LossKind.HUBER:
        d = loss.param
        a = np.abs(f - x)
        return np.where(a <= d, 0.5 * a**2, d * (a - 0.5 * d))
    if k is LossKind.PINBALL:
        u = loss.param
        diff = x - f
        return np.where(diff >= 0, u * diff, (u - 1) * diff)
    if k is LossKind.POISSON:
        return np.exp(np.minimum(f, _F_CLIP)) - x * f
    if k is LossKind.TWEEDIE:
        rho = loss.param
        fc = np.minimum(f, _F_CLIP)
        return -x * np.exp((1 - rho) * fc) / (1 - rho) + np.exp((2 - rho) * fc) / (2 - rho)
    if k is LossKind.NEGBIN:
        return nb_nll_terms(x, f, loss.param)
    raise ValueError(k)


def loss_grad_hess(loss: LossSpec, x, f) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the per-sample loss w.r.t. the raw score ``f``.

    Losses whose curvature vanishes (L1, pinball, Huber outside its
    threshold) report the Hessian floor instead.
    """
    f = _check_f(f)
    x = np.asarray(x, dtype=np.float64)
    k = loss.kind
    if k is LossKind.L2:
        return f - x, np.ones_like(f)
    if k is LossKind.L1:
        return np.sign(f - x), np.full_like(f, HESSIAN_FLOOR)
    if k is LossKind.HUBER:
        d = loss.param
        r = f - x
        inside = np.abs(r) <= d
        return np.clip(r, -d, d), np.where(inside, 1.0, HESSIAN_FLOOR)
    if k is LossKind.PINBALL:
        u = loss.param
        return np.where(f < x, -u, 1 - u), np.full_like(f, HESSIAN_FLOOR)
    if k is LossKind.POISSON:
        mu = np.exp(np.minimum(f, _F_CLIP))
        return mu - x, np.maximum(mu, 1e-12)
    if k is LossKind.TWEEDIE:
        rho = loss.param
        fc = np.minimum(f, _F_CLIP)
        a = np.exp((1 - rho) * fc)
        b = np.exp((2 - rho) * fc)
        return -x * a + b, -(1 - rho) * x * a + (2 - rho) * b
    if k is LossKind.NEGBIN:
        r = loss.param
        _check_r(r)
        mu = np.exp(np.minimum(f, _F_CLIP))
        denom = mu + r
        # mu (r + x) / (mu + r) - x rearranged to avoid cancellation near mu == x
        g = r * (mu - x) / denom
        h = mu * r * (r + x) / denom**2
        return g, h
    raise ValueError(k)


def weighted_quantile_point(values: np.ndarray, u: float) -> float:
    """Lower ``u``-quantile: a minimiser of the pinball loss over constants."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return 0.0
    k = int(np.ceil(u * v.size)) - 1
    return float(v[min(max(k, 0), v.size - 1)])


def huber_location(values: np.ndarray, delta: float) -> float:
    """Minimiser of the summed Huber loss over a constant shift."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return 0.0
    m = float(np.median(v))
    for _ in range(100):
        r = v - m
        inside = np.abs(r) <= delta
        n_in = inside.sum()
        step = np.clip(r, -delta, delta).sum() / max(n_in, 1)
        m += step
        if abs(step) < 1e-12 * (1 + abs(m)):
            break
    return m


def line_search_constant(loss: LossSpec, residual: np.ndarray) -> float:
    """Optimal constant added to the raw score for residuals ``x - f``."""
    if loss.kind is LossKind.L1:
        return float(np.median(residual)) if residual.size else 0.0
    if loss.kind is LossKind.PINBALL:
        return weighted_quantile_point(residual, loss.param)
    if loss.kind is LossKind.HUBER:
        return huber_location(residual, loss.param)
    raise ValueError(f"no line search for {loss.kind}")


def base_score(loss: LossSpec, y) -> float:
    """Loss-minimising constant raw score for targets ``y``."""
    y = np.asarray(y, dtype=np.float64)
    k = loss.kind
    if k is LossKind.L2:
        return float(y.mean())
    if k in LINE_SEARCH:
        return line_search_constant(loss, y)
    m = float(y.mean())
    # log-link losses: every one is minimised at exp(f) = mean(y)
    return float(np.log(max(m, 1e-9)))
