"""Pure-jump Levy processes used as the jump parts J_1, J_2.

Every process is described through its Laplace exponent

    psi(w) = -log E[exp(-w J(1))],   so that   E[exp(-w J(t))] = exp(-t psi(w)).

This is the convention used throughout the package. Published exponents often
use the characteristic-function convention instead; the two are related by
psi(w) = -log phi(i w).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np


class StripError(ValueError):
    """Raised when Re(w) lies outside the strip where E[exp(-w J)] exists."""


@dataclass(frozen=True)
class Zero:
    kind = "zero"


@dataclass(frozen=True)
class CompoundPoissonNormal:
    """Jumps at rate ``c`` with N(m, s^2) sizes."""

    c: float
    m: float = 0.0
    s: float = 1.0
    kind = "cp_normal"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.s >= 0:
            raise ValueError("s must be nonnegative")


@dataclass(frozen=True)
class CompoundPoissonDoubleExp:
    """Kou-type jumps: with prob ``p`` an Exp(eta_plus) up-move, else an Exp(eta_minus) down-move."""

    c: float
    p: float
    eta_plus: float
    eta_minus: float
    kind = "cp_double_exp"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if not (self.eta_plus > 0 and self.eta_minus > 0):
            raise ValueError("eta_plus and eta_minus must be positive")


@dataclass(frozen=True)
class GammaSubordinator:
    """Gamma process: J(t) ~ Gamma(shape=a t, rate=b)."""

    a: float
    b: float
    kind = "gamma"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be positive")


@dataclass(frozen=True)
class InverseGaussian:
    """IG subordinator: J(t) ~ IG(mean=delta t / gamma, shape=(delta t)^2)."""

    delta: float
    gamma: float
    kind = "inverse_gaussian"

    def __post_init__(self):
        if not (self.delta > 0 and self.gamma > 0):
            raise ValueError("delta and gamma must be positive")


LevySpec = Union[Zero, CompoundPoissonNormal, CompoundPoissonDoubleExp, GammaSubordinator, InverseGaussian]

_KINDS = {cls.kind: cls for cls in (Zero, CompoundPoissonNormal, CompoundPoissonDoubleExp,
                                    GammaSubordinator, InverseGaussian)}


def strip_of_analyticity(spec: LevySpec) -> tuple[float, float]:
    """Open interval of Re(w) on which psi is finite."""
    if isinstance(spec, (Zero, CompoundPoissonNormal)):
        return (-math.inf, math.inf)
    if isinstance(spec, CompoundPoissonDoubleExp):
        lo = -spec.eta_plus if spec.p > 0 else -math.inf
        hi = spec.eta_minus if spec.p < 1 else math.inf
        return (lo, hi)
    if isinstance(spec, GammaSubordinator):
        return (-spec.b, math.inf)
    if isinstance(spec, InverseGaussian):
        return (-0.5 * spec.gamma ** 2, math.inf)
    raise TypeError(f"unknown Levy spec {spec!r}")


def in_strip(spec: LevySpec, re_w) -> bool:
    lo, hi = strip_of_analyticity(spec)
    re_w = np.asarray(re_w, dtype=float)
    return bool(np.all((re_w > lo) & (re_w < hi)))


def psi_eval(spec: LevySpec, w):
    """Laplace exponent psi(w), vectorized over complex ``w``.

    Principal branches are used for log and sqrt. That is safe because the
    strip check keeps the arguments (1 + w/b, gamma^2 + 2w, ...) in the open
    right half-plane.
    """
    w = np.asarray(w, dtype=complex)
    if not in_strip(spec, w.real):
        raise StripError(f"Re(w) outside strip {strip_of_analyticity(spec)} for {spec!r}")
    if isinstance(spec, Zero):
        out = np.zeros_like(w)
    elif isinstance(spec, CompoundPoissonNormal):
        out = -spec.c * np.expm1(-w * spec.m + 0.5 * (w * spec.s) ** 2)
    elif isinstance(spec, CompoundPoissonDoubleExp):
        ep, em, p = spec.eta_plus, spec.eta_minus, spec.p
        # 1 - [p ep/(ep+w) + (1-p) em/(em-w)] written without cancellation at w = 0
        out = spec.c * (p * w / (ep + w) - (1 - p) * w / (em - w))
    elif isinstance(spec, GammaSubordinator):
        out = spec.a * np.log1p(w / spec.b)
    elif isinstance(spec, InverseGaussian):
        g = spec.gamma
        # sqrt(g^2 + 2w) - g = 2w / (sqrt(g^2 + 2w) + g)
        out = spec.delta * 2 * w / (np.sqrt(g * g + 2 * w) + g)
    else:
        raise TypeError(f"unknown Levy spec {spec!r}")
    return out if out.ndim else complex(out)


def psi_derivative(spec: LevySpec, w):
    """Analytic psi'(w); used by finite-difference checks."""
    w = np.asarray(w, dtype=complex)
    if isinstance(spec, Zero):
        return np.zeros_like(w)
    if isinstance(spec, CompoundPoissonNormal):
        return -spec.c * (-spec.m + w * spec.s ** 2) * np.exp(-w * spec.m + 0.5 * (w * spec.s) ** 2)
    if isinstance(spec, CompoundPoissonDoubleExp):
        ep, em, p = spec.eta_plus, spec.eta_minus, spec.p
        return spec.c * (p * ep / (ep + w) ** 2 - (1 - p) * em / (em - w) ** 2)
    if isinstance(spec, GammaSubordinator):
        return spec.a / (spec.b + w)
    if isinstance(spec, InverseGaussian):
        return spec.delta / np.sqrt(spec.gamma ** 2 + 2 * w)
    raise TypeError(f"unknown Levy spec {spec!r}")


def cumulants(spec: LevySpec) -> tuple[float, float]:
    """(E[J(1)], Var[J(1)]) in closed form; equal to (psi'(0), -psi''(0))."""
    if isinstance(spec, Zero):
        return 0.0, 0.0
    if isinstance(spec, CompoundPoissonNormal):
        return spec.c * spec.m, spec.c * (spec.m ** 2 + spec.s ** 2)
    if isinstance(spec, CompoundPoissonDoubleExp):
        ep, em, p = spec.eta_plus, spec.eta_minus, spec.p
        mean = spec.c * (p / ep - (1 - p) / em)
        var = spec.c * (2 * p / ep ** 2 + 2 * (1 - p) / em ** 2)
        return mean, var
    if isinstance(spec, GammaSubordinator):
        return spec.a / spec.b, spec.a / spec.b ** 2
    if isinstance(spec, InverseGaussian):
        return spec.delta / spec.gamma, spec.delta / spec.gamma ** 3
    raise TypeError(f"unknown Levy spec {spec!r}")


def sample_increment(spec: LevySpec, t, rng: np.random.Generator):
    """Exact draws of J(t) for an array (or scalar) of elapsed times ``t`` >= 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.zeros(t.shape)
    pos = t > 0
    tp = t[pos]
    if isinstance(spec, Zero) or tp.size == 0:
        pass
    elif isinstance(spec, CompoundPoissonNormal):
        k = rng.poisson(spec.c * tp)
        out[pos] = spec.m * k + spec.s * np.sqrt(k) * rng.standard_normal(tp.shape)
    elif isinstance(spec, CompoundPoissonDoubleExp):
        k = rng.poisson(spec.c * tp)
        k_up = rng.binomial(k, spec.p)
        k_dn = k - k_up
        # sum of k iid Exp(eta) is Gamma(k, 1/eta); gamma(0) is not allowed
        up = np.where(k_up > 0, rng.gamma(np.maximum(k_up, 1), 1.0 / spec.eta_plus), 0.0)
        dn = np.where(k_dn > 0, rng.gamma(np.maximum(k_dn, 1), 1.0 / spec.eta_minus), 0.0)
        out[pos] = up - dn
    elif isinstance(spec, GammaSubordinator):
        out[pos] = rng.gamma(spec.a * tp, 1.0 / spec.b)
    elif isinstance(spec, InverseGaussian):
        dt = spec.delta * tp
        out[pos] = rng.wald(dt / spec.gamma, dt ** 2)
    else:
        raise TypeError(f"unknown Levy spec {spec!r}")
    return float(out[0]) if scalar else out


def levy_to_dict(spec: LevySpec) -> dict:
    return {"kind": spec.kind, **asdict(spec)}


def levy_from_dict(d: dict) -> LevySpec:
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown Levy kind {kind!r}") from None
    return cls(**d)
