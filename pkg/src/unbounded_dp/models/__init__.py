"""Data models and a name registry used by configs."""

from .base import Model
from .bernoulli import BernoulliModel
from .dirichlet import DirichletModel, DirichletParams
from .gaussian_mean import GaussianMeanModel
from .poisson_multinomial import PoissonMultinomialModel, PoissonMultinomialParams
from .regression import NumericBreakdown, RegressionHyper, RegressionModel, RegressionParams

REGISTRY = {
    "bernoulli": BernoulliModel,
    "gaussian_mean": GaussianMeanModel,
    "regression": RegressionModel,
    "dirichlet": DirichletModel,
    "poisson_multinomial": PoissonMultinomialModel,
}


def get_model_class(name):
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {sorted(REGISTRY)}") from None


__all__ = [
    "Model", "BernoulliModel", "GaussianMeanModel", "RegressionModel", "RegressionHyper",
    "RegressionParams", "DirichletModel", "DirichletParams", "PoissonMultinomialModel",
    "PoissonMultinomialParams", "NumericBreakdown", "REGISTRY", "get_model_class",
]
