"""Exact densities, simulation and estimation for Levy processes time-changed by OU-type clocks."""
__version__ = "0.1.0"

from .levy import (CompoundPoissonDoubleExp, CompoundPoissonNormal, GammaSubordinator, InverseGaussian,
                   Zero, cumulants, psi_eval)
from .likelihood import (ModelParams, Observations, characteristic_function, composite_log_likelihood,
                         log_likelihood, marginal_density_grid)
from .montecarlo import empirical_cf, empirical_density, simulate_returns
from .prm import Deterministic, IntensityMeasure, Poisson, PointSet
from .quadrature import QuadConfig
from .timechange import CommonFactor, IndependentFactors, VolSpec
from .estimate import fit_mle, observed_information

__all__ = [
    "CompoundPoissonDoubleExp", "CompoundPoissonNormal", "GammaSubordinator", "InverseGaussian", "Zero",
    "cumulants", "psi_eval", "ModelParams", "Observations", "characteristic_function",
    "composite_log_likelihood", "log_likelihood", "marginal_density_grid", "empirical_cf",
    "empirical_density", "simulate_returns", "Deterministic", "IntensityMeasure", "Poisson", "PointSet",
    "QuadConfig", "CommonFactor", "IndependentFactors", "VolSpec", "fit_mle", "observed_information",
]
