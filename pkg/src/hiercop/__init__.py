"""Copula regression for hierarchical data with 2-exchangeable copula models."""
from hiercop.bivariate import Clayton, Frank, Gumbel, Independence, Khoudraji, Normal, Survival
from hiercop.estimation import FittedModel, aic, cluster_bootstrap_se, fit_ifm, fit_mle, likelihood_ratio_test
from hiercop.exchangeable import ClaytonEx, FrankEx, IndependenceEx, NormalEx
from hiercop.kernels import BACKEND
from hiercop.model import HierarchicalDataset, ModelSpec, full_log_likelihood, simulate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Clayton",
    "ClaytonEx",
    "FittedModel",
    "Frank",
    "FrankEx",
    "Gumbel",
    "HierarchicalDataset",
    "Independence",
    "IndependenceEx",
    "Khoudraji",
    "ModelSpec",
    "Normal",
    "NormalEx",
    "Survival",
    "aic",
    "cluster_bootstrap_se",
    "fit_ifm",
    "fit_mle",
    "full_log_likelihood",
    "likelihood_ratio_test",
    "simulate",
]
