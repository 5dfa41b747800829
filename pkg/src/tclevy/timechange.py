"""Gamma-OU integrated-volatility time changes built on the Poisson measure.

A background jump at time s with size x adds x * exp(-lam (u - s)) to the
instantaneous variance at u >= s, so it contributes x * eps(s; t1, t2) to the
integrated variance over (t1, t2]. Interval i covers ((i-1) delta, i delta].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.integrate import quad_vec

from .prm import ExponentialMarks, IntensityMeasure, PointSet
from .quadrature import PoleError, QuadConfig, log1p_over_x

WARMUP_TAIL = 1e-10


@dataclass(frozen=True)
class IndependentFactors:
    """gamma_i driven by a second, independent Gamma-OU factor."""

    lam: float
    a: float
    b: float
    mode = "independent"

    def __post_init__(self):
        if not (self.lam > 0 and self.a > 0 and self.b > 0):
            raise ValueError("factor rates must be positive")


@dataclass(frozen=True)
class CommonFactor:
    """gamma_i = kappa * tau_i, one factor drives both clocks."""

    kappa: float = 0.0
    mode = "common"

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("kappa must be nonnegative")


FactorMode = Union[IndependentFactors, CommonFactor]


@dataclass(frozen=True)
class VolSpec:
    lam: float
    a: float
    b: float
    factor: FactorMode = field(default_factory=CommonFactor)
    s_max: Optional[float] = None

    def __post_init__(self):
        if not (self.lam > 0 and self.a > 0 and self.b > 0):
            raise ValueError("lam, a and b must be positive")
        if self.s_max is not None and not self.s_max > 0:
            raise ValueError("s_max must be positive")

    @property
    def n_factors(self) -> int:
        return 2 if isinstance(self.factor, IndependentFactors) else 1

    @property
    def lams(self) -> tuple:
        if isinstance(self.factor, IndependentFactors):
            return (self.lam, self.factor.lam)
        return (self.lam,)

    @property
    def warmup(self) -> float:
        """Pre-sample window length; default makes exp(-lam s_max) <= 1e-10 for every factor."""
        if self.s_max is not None:
            return self.s_max
        return math.log(1.0 / WARMUP_TAIL) / min(self.lams)

    def intensities(self, horizon: float) -> tuple:
        """One IntensityMeasure per factor coordinate on [-warmup, horizon]."""
        out = [IntensityMeasure.constant(self.a * self.lam, self.warmup, horizon, ExponentialMarks(self.b))]
        if isinstance(self.factor, IndependentFactors):
            f = self.factor
            out.append(IntensityMeasure.constant(f.a * f.lam, self.warmup, horizon, ExponentialMarks(f.b)))
        return tuple(out)

    def mean_time_changes(self, delta: float) -> tuple[float, float]:
        """Stationary (E[tau_i], E[gamma_i])."""
        mt = self.a / self.b * delta
        if isinstance(self.factor, IndependentFactors):
            return mt, self.factor.a / self.factor.b * delta
        return mt, self.factor.kappa * mt

    def to_dict(self) -> dict:
        if isinstance(self.factor, IndependentFactors):
            fac = {"mode": "independent", "lam": self.factor.lam, "a": self.factor.a, "b": self.factor.b}
        else:
            fac = {"mode": "common", "kappa": self.factor.kappa}
        return {"lam": self.lam, "a": self.a, "b": self.b, "factor": fac, "s_max": self.s_max}

    @classmethod
    def from_dict(cls, d: dict) -> "VolSpec":
        fac = dict(d.get("factor", {"mode": "common", "kappa": 0.0}))
        mode = fac.pop("mode")
        factor = IndependentFactors(**fac) if mode == "independent" else CommonFactor(**fac)
        return cls(d["lam"], d["a"], d["b"], factor, d.get("s_max"))


def ou_weight(s, t1, t2, lam):
    """Integrated OU response over (t1, t2] to a unit jump at time s."""
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    s = np.asarray(s, dtype=float)
    before = (np.exp(-lam * (t1 - np.minimum(s, t1))) - np.exp(-lam * (t2 - np.minimum(s, t1)))) / lam
    inside = -np.expm1(-lam * (t2 - np.clip(s, t1, t2))) / lam
    out = np.where(s <= t1, before, np.where(s <= t2, inside, 0.0))
    return out if out.ndim else float(out)


def interval_weights(s, n: int, delta: float, lam: float):
    """eps(s; (i-1) delta, i delta) for i = 1..n, shape s.shape + (n,)."""
    s = np.asarray(s, dtype=float)[..., None]
    t1 = delta * np.arange(n)
    t2 = t1 + delta
    before = np.exp(-lam * (t1 - s)) * (-np.expm1(-lam * delta)) / lam
    inside = -np.expm1(-lam * (t2 - s)) / lam
    return np.where(s <= t1, before, np.where(s <= t2, inside, 0.0))


@dataclass(frozen=True)
class OUKernel:
    """(s, x, factor) -> x * sum_i coef[factor][..., i] * eps(s; interval i, lam[factor]).

    ``coef`` holds one array per factor coordinate; leading axes batch many
    kernels at once (one per y-lattice node in the likelihood).
    """

    coef: tuple
    lams: tuple
    delta: float

    @property
    def n(self) -> int:
        return np.shape(self.coef[0])[-1]

    @property
    def breakpoints(self) -> tuple:
        return tuple(self.delta * np.arange(self.n + 1))

    def time_profile(self, s, factor: int = 0):
        """K(s) such that the kernel is x * K(s) on the given factor."""
        eps = interval_weights(s, self.n, self.delta, self.lams[factor])
        return np.asarray(eps) @ np.asarray(self.coef[factor]).T if np.ndim(self.coef[factor]) > 1 \
            else np.asarray(eps) @ np.asarray(self.coef[factor])

    def __call__(self, s, x, factor: int = 0):
        return np.asarray(x) * self.time_profile(s, factor)

    def on_factor(self, factor: int):
        """Scalar-kernel view f(s, x) of one coordinate, for the generic quadratures."""
        def f(s, x):
            return self(s, x, factor)
        f.breakpoints = self.breakpoints
        return f

    def profile_on_factor(self, factor: int):
        def K(s):
            return self.time_profile(s, factor)
        K.breakpoints = self.breakpoints
        return K


def interval_kernel(spec: VolSpec, i: int, delta: float, which: str, n: Optional[int] = None) -> OUKernel:
    """h_i, g_i or f_i = h_i + g_i as an OUKernel over ``n`` intervals (default n = i)."""
    n = i if n is None else n
    if not 1 <= i <= n:
        raise ValueError("need 1 <= i <= n")
    e = np.zeros(n)
    e[i - 1] = 1.0
    zero = np.zeros(n)
    if isinstance(spec.factor, IndependentFactors):
        h, g = (e, zero), (zero, e)
    else:
        h, g = (e,), (spec.factor.kappa * e,)
    parts = {"h": h, "g": g, "f": tuple(u + v for u, v in zip(h, g))}
    return OUKernel(parts[which], spec.lams, delta)


def kernel_from_coefficients(spec: VolSpec, c1, c2, delta: float) -> OUKernel:
    """sum_i c1_i h_i + c2_i g_i, batched over leading axes of c1, c2."""
    c1 = np.asarray(c1, dtype=complex)
    c2 = np.asarray(c2, dtype=complex)
    if isinstance(spec.factor, IndependentFactors):
        return OUKernel((c1, c2), spec.lams, delta)
    return OUKernel((c1 + spec.factor.kappa * c2,), spec.lams, delta)


def functional_from_points(points: PointSet, kernel) -> float:
    """N(kernel) = sum_j kernel(s_j, x_j)."""
    if len(points) == 0:
        return 0.0
    return float(np.sum(kernel(points.s, points.x)))


def time_changes_from_points(spec: VolSpec, points: tuple, n: int, delta: float):
    """(tau, gamma), each shape (n,), for one realization given per-factor point sets."""
    tau = points[0].x @ interval_weights(points[0].s, n, delta, spec.lams[0]) if len(points[0]) else np.zeros(n)
    if isinstance(spec.factor, IndependentFactors):
        p = points[1]
        gamma = p.x @ interval_weights(p.s, n, delta, spec.lams[1]) if len(p) else np.zeros(n)
    else:
        gamma = spec.factor.kappa * tau
    return np.asarray(tau, dtype=float), np.asarray(gamma, dtype=float)


def batch_functionals(owner, s, x, n_sets: int, n: int, delta: float, lam: float):
    """Per-realization sums of x * eps_i(s), shape (n_sets, n)."""
    eps = interval_weights(s, n, delta, lam) * x[:, None]
    out = np.zeros((n_sets, n))
    for i in range(n):
        out[:, i] = np.bincount(owner, weights=eps[:, i], minlength=n_sets)
    return out


def _pieces(nu: IntensityMeasure, n: int, delta: float):
    kernel_bp = delta * np.arange(n + 1)
    lo, hi = nu.knots[0], nu.knots[-1]
    edges = np.array(sorted(set(nu.knots) | {p for p in kernel_bp if lo < p < hi}))
    rates = nu.time_rate(0.5 * (edges[:-1] + edges[1:]))
    return edges, rates


def laplace_ou(nu: IntensityMeasure, lam: float, delta: float, coef, q: QuadConfig = QuadConfig()):
    """Lambda of the kernel x * sum_i coef[..., i] eps_i(s), batched over leading axes.

    Exponential marks use an exact closed form: on every piece between
    breakpoints K(s) is affine in exp(lam s), and int r K/(b+K) ds integrates
    in elementary functions. Tabulated marks fall back to vector adaptive
    quadrature over s.
    """
    coef = np.asarray(coef, dtype=complex)
    n = coef.shape[-1]
    edges, rates = _pieces(nu, n, delta)
    eps = interval_weights(edges, n, delta, lam)          # (n_edges, n)
    K = coef @ eps.T                                       # (..., n_edges)
    if isinstance(nu.marks, ExponentialMarks):
        b = nu.marks.b
        v = b + K
        bad = (v.real <= 0) | (np.abs(v) < q.pole_tol)
        if np.any(bad):
            raise PoleError("b + K(s) leaves the right half-plane; Lambda is infinite")
        total = np.zeros(K.shape[:-1], dtype=complex)
        for j, r in enumerate(rates):
            if r == 0:
                continue
            L = edges[j + 1] - edges[j]
            v0, v1 = v[..., j], v[..., j + 1]
            # v(t) = D + g e^{lam t} on the piece; closed form of int dt / v(t)
            g = (v1 - v0) / math.expm1(lam * L)
            m = math.expm1(-lam * L)
            D = v0 - g
            w = D * m / v0
            near = np.abs(w) < 0.1
            # log1p(w) = log(v1/v0) - lam L; forming 1 + w loses digits when v1 e^{-lam L} << v0
            direct = (lam * L - (np.log(v1) - np.log(v0))) / (lam * np.where(near, 1.0, D))
            inv_int = np.where(near, -(m / (lam * v0)) * log1p_over_x(np.where(near, w, 0.0)), direct)
            total += r * (L - b * inv_int)
        return total
    grid = np.asarray(nu.marks.grid)
    wts = np.asarray(nu.marks.weights)
    flat = coef.reshape(-1, n)

    def integrand(s):
        k = flat @ interval_weights(s, n, delta, lam)
        return (-np.expm1(-np.multiply.outer(k, grid))) @ wts

    total = np.zeros(flat.shape[0], dtype=complex)
    for j, r in enumerate(rates):
        if r == 0:
            continue
        val, _ = quad_vec(integrand, edges[j], edges[j + 1], epsabs=q.tol, epsrel=0, norm="max")
        total += r * val
    return total.reshape(coef.shape[:-1])


def warmup_tail_bound(spec: VolSpec, coef_sum, factor: int = 0) -> float:
    """Bound on |Lambda| from jumps before -warmup, which the truncated measure omits.

    For s < 0 the kernel is x * C e^{lam s} with C = sum_i coef_i eps_i(0); the omitted part is
    a log(1 + C e^{-lam S}/b) <= a |C| e^{-lam S} / b to first order.
    """
    lam = spec.lams[factor]
    a, b = (spec.a, spec.b) if factor == 0 else (spec.factor.a, spec.factor.b)
    return float(a * np.max(np.abs(coef_sum)) * math.exp(-lam * spec.warmup) / b)
