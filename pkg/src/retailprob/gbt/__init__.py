"""Gradient-boosted regression trees with count-data losses."""

from .booster import PROFILES, GbtModel, GbtParams, fit_gbt, poisson_deviance, profile
from .losses import HESSIAN_FLOOR, LossKind, LossSpec, base_score, loss_grad_hess, loss_values, nb_nll, nb_nll_terms
from .negbin import estimate_r, fit_gbt_negbin, golden_section, moment_r
from .tree import Binner, Tree

__all__ = [
    "Binner",
    "GbtModel",
    "GbtParams",
    "HESSIAN_FLOOR",
    "LossKind",
    "LossSpec",
    "PROFILES",
    "Tree",
    "base_score",
    "estimate_r",
    "fit_gbt",
    "fit_gbt_negbin",
    "golden_section",
    "loss_grad_hess",
    "loss_values",
    "moment_r",
    "nb_nll",
    "nb_nll_terms",
    "poisson_deviance",
    "profile",
]
