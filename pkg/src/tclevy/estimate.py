"""Maximum-likelihood fitting with the exact (block) likelihood.

Parameters are addressed by dotted paths into ``ModelParams.to_dict()``, e.g.
``"mu"``, ``"vol.b"``, ``"vol.factor.lam"``, ``"levy1.c"``. The optimizer works
on transformed coordinates: identity for location-type parameters, logit for
probabilities and log for everything else (rates, scales, intensities).
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .likelihood import (DegenerateError, Lattice, ModelParams, build_lattice,
                         composite_log_likelihood, split_blocks)
from .levy import StripError
from .prm import Deterministic, MeasureKind
from .quadrature import QuadConfig, QuadratureError

log = logging.getLogger(__name__)

IDENTITY_PARAMS = {"mu", "beta", "rho", "m"}
LOGIT_PARAMS = {"p"}
FIXED_PARAMS = {"delta", "kind", "mode", "s_max"}


class InfeasibleError(ValueError):
    pass


def _get(d: dict, path: str):
    for key in path.split("."):
        if not isinstance(d, dict) or key not in d:
            raise KeyError(f"unknown parameter {path!r}")
        d = d[key]
    return d


def _set(d: dict, path: str, value):
    keys = path.split(".")
    for key in keys[:-1]:
        d = d[key]
    d[keys[-1]] = value


def transform_kind(path: str) -> str:
    leaf = path.split(".")[-1]
    if leaf in IDENTITY_PARAMS:
        return "identity"
    if leaf in LOGIT_PARAMS:
        return "logit"
    return "log"


def to_internal(path: str, value: float) -> float:
    kind = transform_kind(path)
    if kind == "identity":
        return float(value)
    if kind == "logit":
        if not 0 < value < 1:
            raise InfeasibleError(f"{path} = {value} must lie in (0, 1)")
        return math.log(value / (1 - value))
    if not value > 0:
        raise InfeasibleError(f"{path} = {value} must be positive to be estimated")
    return math.log(value)


def to_natural(path: str, z: float) -> float:
    kind = transform_kind(path)
    if kind == "identity":
        return float(z)
    if kind == "logit":
        return 1.0 / (1.0 + math.exp(-z))
    return math.exp(z)


def free_parameters(params: ModelParams) -> list:
    """Every numeric parameter path that can be freed."""
    out = []

    def walk(d, prefix):
        for k, v in d.items():
            path = f"{prefix}{k}"
            if isinstance(v, dict):
                walk(v, path + ".")
            elif k not in FIXED_PARAMS and isinstance(v, (int, float)) and not isinstance(v, bool):
                out.append(path)
    walk(params.to_dict(), "")
    return out


def natural_vector(params: ModelParams, free: Sequence[str]) -> np.ndarray:
    d = params.to_dict()
    return np.array([float(_get(d, p)) for p in free])


def with_values(params: ModelParams, free: Sequence[str], theta) -> ModelParams:
    """Copy of ``params`` with the natural values ``theta`` at paths ``free``."""
    d = copy.deepcopy(params.to_dict())
    for p, v in zip(free, theta):
        _get(d, p)                       # validates the path
        _set(d, p, float(v))
    return ModelParams.from_dict(d)


def _objective_data(X, block):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        return X
    if X.size <= 3 and block >= X.size:
        return X[None, :]
    return X


def _loglik(X, params, block, measure, q, lattice):
    return composite_log_likelihood(X, params, block, measure, q, lattice)


def _fit_lattice(X, params, block, measure, q, margin: float = 1.25) -> Optional[Lattice]:
    """One lattice for every objective call, padded so moderate moves of mu stay resolved."""
    if isinstance(measure, Deterministic):
        return None
    X = np.asarray(X, dtype=float)
    blocks = X if X.ndim == 2 else split_blocks(X, block)[0]
    if blocks.size == 0 or (X.ndim == 1 and X.size % block):
        return None
    A = np.abs(blocks - params.mu * params.delta).max(axis=0) * margin
    return build_lattice(params, blocks.shape[1], A, measure, q)


@dataclass
class FitResult:
    params: ModelParams
    free: list
    estimates: dict
    loglik: float
    loglik_init: float
    stderr: Optional[dict]
    information: Optional[list]
    information_pd: Optional[bool]
    iterations: int
    n_evals: int
    simplex_size: float
    converged: bool
    budget_exhausted: bool
    message: str
    block: int
    n_blocks: int
    quad: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"estimates": self.estimates, "stderr": self.stderr, "free": list(self.free),
                "loglik": self.loglik, "loglik_init": self.loglik_init,
                "information": self.information, "information_positive_definite": self.information_pd,
                "diagnostics": {"iterations": self.iterations, "n_evals": self.n_evals,
                                "simplex_size": self.simplex_size, "converged": self.converged,
                                "budget_exhausted": self.budget_exhausted, "message": self.message},
                "block": self.block, "n_blocks": self.n_blocks,
                "model": self.params.to_dict(), "quad": self.quad}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def fit_mle(X, init: ModelParams, free: Sequence[str] = ("mu", "beta"), q: QuadConfig = QuadConfig(),
            block: int = 2, measure: Optional[MeasureKind] = None, max_iter: int = 400,
            xatol: float = 1e-7, fatol: float = 1e-9, with_stderr: bool = True) -> FitResult:
    """Nelder-Mead maximization of the (composite) log-likelihood over the ``free`` paths.

    ``X`` is either a 1-d series (cut into windows of ``block``) or a 2-d
    array of independent blocks. The returned optimum never has a lower
    log-likelihood than ``init``.
    """
    free = list(free)
    if not free:
        raise ValueError("no free parameters")
    known = set(free_parameters(init))
    bad = [p for p in free if p not in known]
    if bad:
        raise KeyError(f"not estimable for this model: {bad}")
    X = _objective_data(X, block)
    lattice = _fit_lattice(X, init, block, measure, q)
    ll0 = _loglik(X, init, block, measure, q, lattice)
    if not math.isfinite(ll0):
        raise InfeasibleError("log-likelihood is not finite at the initial parameters")
    z0 = np.array([to_internal(p, v) for p, v in zip(free, natural_vector(init, free))])

    cache = {}

    def negll(z):
        key = tuple(np.round(z, 15))
        if key in cache:
            return cache[key]
        try:
            theta = [to_natural(p, zi) for p, zi in zip(free, z)]
            val = -_loglik(X, with_values(init, free, theta), block, measure, q, lattice)
        except (StripError, InfeasibleError, DegenerateError, QuadratureError, ValueError, OverflowError) as exc:
            log.debug("infeasible point %s: %s", z, exc)
            val = math.inf
        if not math.isfinite(val):
            val = math.inf
        cache[key] = val
        return val

    # simplex edges of 0.1 in internal units, so log-scale steps move rates by ~10%
    simplex = np.vstack([z0] + [z0 + 0.1 * np.eye(len(z0))[k] for k in range(len(z0))])
    res = minimize(negll, z0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                            "maxiter": max_iter, "maxfev": 4 * max_iter})
    z_best, f_best = res.x, res.fun
    if not f_best <= -ll0:
        z_best, f_best = z0, -ll0
    theta = np.array([to_natural(p, zi) for p, zi in zip(free, z_best)])
    best = with_values(init, free, theta)
    sim = getattr(res, "final_simplex", None)
    size = float(np.max(np.abs(sim[0] - sim[0][0]))) if sim is not None else 0.0
    budget = res.status in (1, 2) or not res.success and "maximum" in str(res.message).lower()

    stderr = info = pd = None
    if with_stderr:
        I, stderr, pd = observed_information(X, best, free, q, block, measure)
        info = I.tolist()
    return FitResult(best, free, dict(zip(free, theta.tolist())), -float(f_best), float(ll0),
                     stderr, info, pd, int(res.nit), int(res.nfev), size, bool(res.success),
                     bool(budget), str(res.message), block,
                     int(X.shape[0] if X.ndim == 2 else X.size // block), q.to_dict())


def observed_information(X, params: ModelParams, free: Sequence[str], q: QuadConfig = QuadConfig(),
                         block: int = 2, measure: Optional[MeasureKind] = None):
    """Negative Hessian of log L in natural coordinates by central differences.

    Steps are h_k = max(1e-4, 1e-4 |theta_k|); the mixed differences use the
    four-point stencil, so the matrix is symmetric by construction. Returns
    ``(information, stderr, positive_definite)``; ``stderr`` is ``None`` when
    the information is not positive definite.
    """
    free = list(free)
    X = _objective_data(X, block)
    theta = natural_vector(params, free)
    h = np.maximum(1e-4, 1e-4 * np.abs(theta))
    lattice = _fit_lattice(X, params, block, measure, q)
    k = len(free)

    def f(offsets):
        return _loglik(X, with_values(params, free, theta + offsets), block, measure, q, lattice)

    f0 = f(np.zeros(k))
    H = np.zeros((k, k))
    e = np.eye(k) * h
    fp = [f(e[i]) for i in range(k)]
    fm = [f(-e[i]) for i in range(k)]
    for i in range(k):
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / h[i] ** 2
        for j in range(i):
            v = (f(e[i] + e[j]) - f(e[i] - e[j]) - f(-e[i] + e[j]) + f(-e[i] - e[j])) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    info = -0.5 * (H + H.T)
    if not np.all(np.isfinite(info)):
        return info, None, False
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        log.warning("observed information is not positive definite; standard errors unavailable")
        return info, None, False
    cov = np.linalg.inv(info)
    return info, dict(zip(free, np.sqrt(np.diag(cov)).tolist())), True
