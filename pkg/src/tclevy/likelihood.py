"""Exact marginal likelihood of aggregate returns.

Given returns X_1..X_n and A_i = X_i - mu delta, the joint density is

    L = exp(beta sum_i A_i) / (2 pi)^n  int_{R^n} exp(-Lambda(Omega_n + Upsilon_n)) prod_i exp(i A_i y_i) dy

where Omega_n + Upsilon_n = sum_i c1_i(y_i) h_i + c2_i(y_i) g_i is a complex kernel on
the mark space (see ``coefficients``). The y-integral is evaluated on a
tensor lattice of composite Gauss-Legendre panels; Lambda on that lattice does
not depend on the data, so it is computed once and reused for every phase
exp(i A.y).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import levy as levy_mod
from .levy import LevySpec, cumulants, psi_eval, strip_of_analyticity
from .prm import Deterministic, MeasureKind, Poisson
from scipy.optimize import minimize

from .quadrature import BudgetExceeded, QuadConfig, QuadratureError, TruncationError, gauss_legendre_panels
from .timechange import OUKernel, VolSpec, kernel_from_coefficients, laplace_ou, time_changes_from_points

log = logging.getLogger(__name__)

MAX_EXACT_DIM = 3
_CHUNK = 200_000


class DegenerateError(ValueError):
    """The integrated variance is zero, so the returns have no density."""


class NegativeKernelWarning(UserWarning):
    pass


class NonRealWarning(UserWarning):
    pass


class HeavyTailWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    mu: float
    beta: float
    rho: float
    delta: float
    levy1: LevySpec
    levy2: LevySpec
    vol: VolSpec

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        for name, spec in (("levy1", self.levy1), ("levy2", self.levy2)):
            lo, hi = strip_of_analyticity(spec)
            if not lo < self.beta < hi:
                raise levy_mod.StripError(f"beta = {self.beta} outside the strip ({lo}, {hi}) of {name}")

    @property
    def alpha(self) -> float:
        return self.beta + self.rho

    def to_dict(self) -> dict:
        return {"mu": self.mu, "beta": self.beta, "rho": self.rho, "delta": self.delta,
                "levy1": levy_mod.levy_to_dict(self.levy1), "levy2": levy_mod.levy_to_dict(self.levy2),
                "vol": self.vol.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(d["mu"], d["beta"], d["rho"], d.get("delta", 1.0),
                   levy_mod.levy_from_dict(d["levy1"]), levy_mod.levy_from_dict(d["levy2"]),
                   VolSpec.from_dict(d["vol"]))


@dataclass(frozen=True)
class Observations:
    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).ravel()
        if X.size < 1 or not np.all(np.isfinite(X)):
            raise ValueError("need at least one finite return")
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.size

    def A(self, params: ModelParams) -> np.ndarray:
        return self.X - params.mu * params.delta

    def A_bar(self, params: ModelParams) -> float:
        return float(self.A(params).mean())


def exponent_coefficients(params: ModelParams, z):
    """(d1, d2) with E[exp(-z_i (X_i - mu delta)) | clocks] = exp(-sum_i d1_i tau_i + d2_i gamma_i).

    d1 = psi_1(z) + beta z - z^2/2 and d2 = psi_2(z) + (beta + rho) z - z^2/2.
    """
    z = np.asarray(z, dtype=complex)
    d1 = psi_eval(params.levy1, z) + params.beta * z - 0.5 * z * z
    d2 = psi_eval(params.levy2, z) + (params.beta + params.rho) * z - 0.5 * z * z
    return np.asarray(d1, dtype=complex), np.asarray(d2, dtype=complex)


def coefficients(params: ModelParams, y, tilt=None):
    """Complex weights (c1, c2) of h_i and g_i at frequencies y (shape (..., n)).

    On the default contour Re z = beta they reduce to
    c1 = psi_1(beta + iy) + (beta^2 + y^2)/2 and
    c2 = psi_2(beta + iy) + rho (beta + iy) + (beta^2 + y^2)/2.
    ``tilt`` moves the contour to Re z_i = tilt_i.
    """
    y = np.asarray(y, dtype=float)
    if tilt is None:
        w = params.beta + 1j * y
        quad = 0.5 * (params.beta ** 2 + y ** 2)
        c1 = psi_eval(params.levy1, w) + quad
        c2 = psi_eval(params.levy2, w) + params.rho * w + quad
        return np.asarray(c1, dtype=complex), np.asarray(c2, dtype=complex)
    return exponent_coefficients(params, np.asarray(tilt, dtype=float) + 1j * y)


def omega_upsilon(params: ModelParams, y, check: bool = True, tol: float = 1e-12) -> OUKernel:
    """The kernel Omega_n + Upsilon_n at frequencies y, as an evaluable OUKernel.

    With ``check`` the real part is validated at the kernel breakpoints (it is
    affine in exp(lam s) between them, so this covers all s).
    """
    c1, c2 = coefficients(params, y)
    kern = kernel_from_coefficients(params.vol, c1, c2, params.delta)
    if check:
        bp = np.asarray(kern.breakpoints)
        for f in range(len(kern.coef)):
            if np.any(kern.time_profile(bp, f).real < -tol):
                warnings.warn("Re(Omega + Upsilon) < 0 somewhere on the support", NegativeKernelWarning,
                              stacklevel=2)
                break
    return kern


def conditional_density(params: ModelParams, X_i, J1, J2, tau_i, gamma_i):
    """Normal density of X_i given the jumps and time changes, in the factored form

    exp((A - J - rho g) beta) (2 pi tau*)^{-1/2} exp(-(A - J - rho g)^2 / (2 tau*)) exp(-tau* beta^2 / 2).
    """
    tau_star = np.asarray(tau_i, dtype=float) + np.asarray(gamma_i, dtype=float)
    if np.any(tau_star <= 0):
        raise DegenerateError("tau* = 0: the conditional law is a point mass")
    varpi = np.asarray(X_i) - params.mu * params.delta - J1 - J2 - params.rho * np.asarray(gamma_i)
    beta = params.beta
    return np.exp(varpi * beta - varpi ** 2 / (2 * tau_star) - tau_star * beta ** 2 / 2) / np.sqrt(2 * np.pi * tau_star)


# -- the Lambda(Omega + Upsilon) surface ------------------------------------------------------

def _measure_time_changes(measure: Deterministic, params: ModelParams, n: int):
    if measure.tau is not None:
        return measure.tau, measure.gamma
    return time_changes_from_points(params.vol, measure.points, n, params.delta)


def laplace_surface(params: ModelParams, y, measure: Optional[MeasureKind] = None,
                    q: QuadConfig = QuadConfig(), tilt=None):
    """Lambda(Omega_n + Upsilon_n) (or N(...) for a deterministic measure) at rows of y (..., n)."""
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    c1, c2 = coefficients(params, y, tilt)
    if isinstance(measure, Deterministic):
        tau, gamma = _measure_time_changes(measure, params, n)
        if np.shape(tau) != (n,):
            raise ValueError(f"deterministic measure carries {np.size(tau)} time changes, expected {n}")
        return c1 @ tau + c2 @ gamma
    kern = kernel_from_coefficients(params.vol, c1, c2, params.delta)
    intens = _intensities(params, measure, n)
    total = np.zeros(y.shape[:-1], dtype=complex)
    for f, nu in enumerate(intens):
        total = total + laplace_ou(nu, kern.lams[f], params.delta, kern.coef[f], q)
    return total


def _intensities(params: ModelParams, measure, n: int) -> tuple:
    if isinstance(measure, Poisson) and measure.intensities is not None:
        if len(measure.intensities) != params.vol.n_factors:
            raise ValueError("one intensity per factor coordinate is required")
        return measure.intensities
    return params.vol.intensities(n * params.delta)


# -- the y lattice ----------------------------------------------------------------------------

@dataclass
class Lattice:
    """Tensor product of symmetric 1-d composite Gauss-Legendre rules, one per axis."""

    nodes: list
    weights: list
    radius: np.ndarray
    panel_width: np.ndarray
    decay_exponent: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple:
        return tuple(x.size for x in self.nodes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def _axis_variances(params: ModelParams, measure, n: int) -> np.ndarray:
    """Rough variance of each return in the block; sets the width of the y-integrand per axis."""
    if isinstance(measure, Deterministic):
        tau, gamma = _measure_time_changes(measure, params, n)
        tau, gamma = np.asarray(tau, dtype=float), np.asarray(gamma, dtype=float)
        if np.min(tau + gamma) <= 0:
            raise DegenerateError("some tau*_i = 0 under the deterministic measure")
    else:
        mt, mg = params.vol.mean_time_changes(params.delta)
        tau, gamma = np.full(n, mt), np.full(n, mg)
    var = tau * (1 + _safe_var(params.levy1)) + gamma * (1 + _safe_var(params.levy2))
    if not np.all(var > 0):
        raise DegenerateError("zero volatility mass")
    return var


def _safe_var(spec) -> float:
    return cumulants(spec)[1]


def _axis_modulus(params, measure, n, axis, t, q, tilt=None):
    y = np.zeros((np.size(t), n))
    y[:, axis] = t
    return np.abs(np.exp(-laplace_surface(params, y, measure, q, tilt)))


PANEL_GROWTH = 0.25


def _graded_edges(radius: float, h: float, h_phase: float, uniform: bool) -> np.ndarray:
    """Symmetric panel edges on [-R, R]: width h near the origin, growing like PANEL_GROWTH |y| in the
    smooth power-law tail but never beyond the phase limit h_phase."""
    if uniform:
        k = max(int(math.ceil(radius / h)), 1)
        return np.linspace(-k * h, k * h, 2 * k + 1)
    right = [0.0]
    while right[-1] < radius:
        y = right[-1]
        right.append(y + min(max(h, PANEL_GROWTH * y), max(h_phase, h)))
    right = np.array(right)
    return np.concatenate([-right[:0:-1], right])


def build_lattice(params: ModelParams, n: int, a_max, measure: Optional[MeasureKind] = None,
                  q: QuadConfig = QuadConfig(), tilt=None, axis_var=None) -> Lattice:
    """Choose panel widths and truncation radii for an n-dimensional y-integral.

    On each axis, panels are narrow enough to resolve both the integrand
    (scale 1/sd of that return) and the fastest phase exp(i a_max y); away
    from the origin they widen in proportion to |y|. The
    radius grows until |F(R e_i)| R <= y_tol |F(0)|; the growth between the
    last two probes gives the polynomial decay exponent of the integrand.
    """
    if not 1 <= n <= MAX_EXACT_DIM:
        raise ValueError(f"exact likelihood supports 1 <= n <= {MAX_EXACT_DIM}; use composite blocks")
    a_max = np.broadcast_to(np.asarray(a_max, dtype=float), (n,))
    var = _axis_variances(params, measure, n) if axis_var is None else np.asarray(axis_var, dtype=float)
    sd_y = 1.0 / np.sqrt(var)
    f0 = abs(np.exp(-laplace_surface(params, np.zeros((1, n)), measure, q, tilt)[0]))
    nodes, weights, radii, widths, decays = [], [], [], [], []
    for i in range(n):
        h = q.panel_width or min(3.0 * sd_y[i], 16.0 / max(a_max[i], 1e-12))
        decay = math.inf
        if q.radius is not None:
            radius = q.radius
        else:
            t = 4.0 * sd_y[i]
            prev = None
            while True:
                mod = float(_axis_modulus(params, measure, n, i, t, q, tilt)[0])
                if prev is not None and mod > 0:
                    decay = math.log(prev[1] / mod) / math.log(t / prev[0])
                if mod * t <= q.y_tol * f0:
                    break
                prev = (t, mod)
                t *= 1.5
                if t > q.max_radius:
                    raise TruncationError(f"integrand still {mod:.3g} at |y_{i + 1}| = {t / 1.5:.4g}; "
                                          "raise max_radius or y_tol")
            radius = t
        edges = _graded_edges(radius, h, 16.0 / max(a_max[i], 1e-12), q.panel_width is not None)
        x, w = gauss_legendre_panels(edges, q.order)
        nodes.append(x)
        weights.append(w)
        radii.append(edges[-1])
        widths.append(h)
        decays.append(decay)
    lat = Lattice(nodes, weights, np.array(radii), np.array(widths), np.array(decays))
    if lat.size > q.max_evals:
        raise BudgetExceeded(f"lattice needs {lat.size} nodes (> max_evals = {q.max_evals}); "
                             "loosen y_tol, raise max_evals or use smaller blocks")
    if np.min(lat.decay_exponent) <= n:
        warnings.warn(f"integrand decays like |y|^-{np.min(lat.decay_exponent):.2f}, at most the "
                      f"dimension {n}; the density may be unbounded", HeavyTailWarning, stacklevel=2)
    return lat


def transform_on_lattice(params: ModelParams, lattice: Lattice, measure: Optional[MeasureKind] = None,
                         q: QuadConfig = QuadConfig(), tilt=None) -> np.ndarray:
    """exp(-Lambda(Omega + Upsilon)) on the full tensor lattice, shape lattice.shape."""
    grids = np.meshgrid(*lattice.nodes, indexing="ij")
    y = np.stack([g.ravel() for g in grids], axis=-1)
    out = np.empty(y.shape[0], dtype=complex)
    for start in range(0, y.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = np.exp(-laplace_surface(params, y[sl], measure, q, tilt))
    return out.reshape(lattice.shape)


def _contract(F: np.ndarray, lattice: Lattice, A: np.ndarray) -> np.ndarray:
    """sum over the lattice of weights * F * exp(i A.y), for each row of A (B, n)."""
    n = lattice.n
    out = np.empty(A.shape[0], dtype=complex)
    step = max(1, 4_000_000 // max(F.size // F.shape[0], sum(x.size for x in lattice.nodes)))
    for start in range(0, A.shape[0], step):
        a = A[start:start + step]
        P = [lattice.weights[k][None, :] * np.exp(1j * a[:, k, None] * lattice.nodes[k][None, :])
             for k in range(n)]
        T = P[0] @ F.reshape(F.shape[0], -1)
        if n == 1:
            out[start:start + step] = T[:, 0]
        elif n == 2:
            out[start:start + step] = np.einsum("bk,bk->b", T, P[1])
        else:
            T = T.reshape(-1, F.shape[1], F.shape[2])
            out[start:start + step] = np.einsum("bjk,bj,bk->b", T, P[1], P[2])
    return out


def _tail_estimate(F: np.ndarray, lattice: Lattice) -> float:
    """Integral of |F| outside the lattice box, from the outermost node layers and the decay rates."""
    absF = np.abs(F)
    total = 0.0
    for k in range(lattice.n):
        p = lattice.decay_exponent[k]
        if not (p > 1 and math.isfinite(p)):
            continue
        reach = lattice.radius[k] / (p - 1)
        others = [lattice.weights[j] for j in range(lattice.n) if j != k]
        for end in (0, -1):
            face = np.take(absF, end, axis=k)
            for w in others:
                face = np.tensordot(face, w, axes=([0], [0]))
            total += reach * float(face)
    return total


def _integrate(params, lattice, A, measure, q, F=None, tilt=None):
    if F is None:
        F = transform_on_lattice(params, lattice, measure, q, tilt)
    I = _contract(F, lattice, np.atleast_2d(A))
    mass = _contract(np.abs(F), lattice, np.zeros((1, lattice.n)))[0].real
    tail = _tail_estimate(F, lattice)
    return I, mass, tail


REFINE_STEPS = 4


def adapted_lattice(params: ModelParams, A, measure: Optional[MeasureKind] = None, q: QuadConfig = QuadConfig(),
                    a_max=None, tilt=None, axis_var=None):
    """Lattice for the rows of ``A`` (B, n), refined until the tail is small relative to the result.

    The first radius is set against the peak of the integrand. Observations
    far in the tail have integrals much smaller than that peak, so the
    radius is extended (smaller effective y_tol) until the tail estimate is
    below 1e3 * y_tol times the smallest integral, or the budget is reached.
    Returns ``(lattice, I, mass, tail)``.
    """
    A = np.atleast_2d(A)
    n = A.shape[1]
    a_max = np.abs(A).max(axis=0) if a_max is None else a_max
    lattice = build_lattice(params, n, a_max, measure, q, tilt, axis_var)
    I, mass, tail = _integrate(params, lattice, A, measure, q, tilt=tilt)
    if q.radius is not None:
        return lattice, I, mass, tail
    y_tol = q.y_tol
    for _ in range(REFINE_STEPS):
        # rows beyond the cancellation limit are recomputed on a shifted contour anyway
        pos = I.real[(I.real > 0) & (mass <= TILT_CANCELLATION * I.real)]
        if pos.size == 0:
            break
        rel = tail / pos.min()
        target = 1e3 * q.y_tol
        if rel <= target:
            break
        y_tol = y_tol * max(target / rel, 1e-6)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", HeavyTailWarning)
                finer = build_lattice(params, n, a_max, measure, replace(q, y_tol=y_tol), tilt, axis_var)
        except (BudgetExceeded, TruncationError) as exc:
            log.debug("lattice refinement stopped: %s", exc)
            break
        lattice = finer
        I, mass, tail = _integrate(params, lattice, A, measure, q, tilt=tilt)
    return lattice, I, mass, tail


TILT_CANCELLATION = 1e5


def _finish(I, A, params, n, mass, tail, lattice, q, tilt=None):
    """Per-row log-likelihoods plus the per-row |Im/Re| and cancellation ratios."""
    re = I.real
    ratio = np.abs(I.imag) / np.maximum(np.abs(re), 1e-300)
    if q.radius is None and tail > q.y_tol * mass * 1e3:
        raise TruncationError(f"tail estimate {tail:.3g} exceeds tolerance at radius {lattice.radius.max():.4g}")
    # the oscillatory sum cannot resolve values far below rounding of int |F|
    cancellation = mass / np.maximum(np.abs(re), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        logI = np.where(re > 0, np.log(np.where(re > 0, re, 1.0)), -np.inf)
    c = np.full(n, params.beta) if tilt is None else np.asarray(tilt, dtype=float)
    ll = A @ c + logI - n * math.log(2 * math.pi)
    return ll, ratio, cancellation


def _lattice_info(lattice: Lattice, tail: float) -> dict:
    return {"nodes": int(lattice.size), "radius": lattice.radius.tolist(),
            "panel_width": lattice.panel_width.tolist(),
            "decay_exponent": [d if math.isfinite(d) else None for d in lattice.decay_exponent.tolist()],
            "tail_estimate": float(tail)}


def _tilt_margin_ok(params: ModelParams, c, measure) -> bool:
    """c stays away from the strip edges and keeps b + K(s) >= b/10 on the real axis."""
    for spec in (params.levy1, params.levy2):
        lo, hi = strip_of_analyticity(spec)
        lo_m = lo + 0.1 * (params.beta - lo) if math.isfinite(lo) else -math.inf
        hi_m = hi - 0.1 * (hi - params.beta) if math.isfinite(hi) else math.inf
        if not np.all((lo_m < np.asarray(c)) & (np.asarray(c) < hi_m)):
            return False
    if isinstance(measure, Deterministic):
        return True
    d1, d2 = exponent_coefficients(params, np.asarray(c, dtype=float))
    kern = kernel_from_coefficients(params.vol, d1.real, d2.real, params.delta)
    bp = np.asarray(kern.breakpoints)
    for f, nu in enumerate(_intensities(params, measure, len(c))):
        b = nu.marks.b if hasattr(nu.marks, "b") else min(1.0 / np.asarray(nu.marks.grid))
        if np.min(b + np.real(kern.time_profile(bp, f))) < 0.1 * b:
            return False
    return True


def saddle_tilt(params: ModelParams, a_row, measure: Optional[MeasureKind] = None, q: QuadConfig = QuadConfig()):
    """Contour shift c minimizing c.A - Lambda(c) for one observation row, and the tilted variances.

    On Re z = c the integrand is least oscillatory near this point, so far-tail
    observations keep their significant digits.
    """
    a_row = np.asarray(a_row, dtype=float)
    n = a_row.size
    zero = np.zeros((1, n))

    def objective(c):
        if not _tilt_margin_ok(params, c, measure):
            return math.inf
        try:
            lam = laplace_surface(params, zero, measure, q, c)[0].real
        except (levy_mod.StripError, QuadratureError):
            return math.inf
        return float(c @ a_row - lam)

    c0 = np.full(n, params.beta)
    with np.errstate(invalid="ignore"):          # inf - inf at infeasible vertices
        res = minimize(objective, c0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400 * n,
                                "initial_simplex": np.vstack([c0] + [c0 + 0.2 * e for e in np.eye(n)])})
    c = res.x if res.fun <= objective(c0) else c0
    # tilted variances, the curvature of c -> -Lambda(c) along each axis
    var = np.empty(n)
    g0 = objective(c)
    for i in range(n):
        h = 1e-3 * (1 + abs(c[i]))
        e = np.zeros(n)
        e[i] = h
        gp, gm = objective(c + e), objective(c - e)
        curv = (gp - 2 * g0 + gm) / h ** 2 if math.isfinite(gp) and math.isfinite(gm) else math.nan
        var[i] = curv if curv > 0 else math.nan
    if not np.all(np.isfinite(var)):
        var = None
    return c, var


def block_log_likelihoods(blocks, params: ModelParams, measure: Optional[MeasureKind] = None,
                          q: QuadConfig = QuadConfig(), lattice: Optional[Lattice] = None,
                          return_diagnostics: bool = False):
    """Exact log-likelihood of each row of ``blocks`` (B, n), n <= 3.

    All rows share the stationary law of n consecutive returns, so one
    Lambda lattice serves every row. Rows for which that shared integral
    loses more than five digits to cancellation are recomputed on their own
    saddle-point contour. A deterministic measure with a 2-d ``tau`` (B, n)
    gives each row its own time changes.
    """
    blocks = np.atleast_2d(np.asarray(blocks, dtype=float))
    B, n = blocks.shape
    A = blocks - params.mu * params.delta
    if isinstance(measure, Deterministic) and measure.tau is not None and np.ndim(measure.tau) == 2:
        # rows with equal time changes share one lattice
        keys = np.concatenate([measure.tau, measure.gamma], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        out = np.empty(B)
        diags = []
        for g, key in enumerate(uniq):
            rows = np.flatnonzero(inverse.ravel() == g)
            sub = Deterministic(tau=key[:n], gamma=key[n:])
            ll, d = block_log_likelihoods(blocks[rows], params, sub, q, None, True)
            out[rows] = ll
            diags.append(d)
        d = dict(diags[0])
        for key in ("nodes", "tail_estimate", "max_im_re_ratio", "max_cancellation"):
            d[key] = max(x[key] for x in diags)
        for key in ("n_nonpositive", "n_tilted", "n_contours"):
            d[key] = sum(x[key] for x in diags)
        return (out, d) if return_diagnostics else out
    if lattice is None:
        lattice, I, mass, tail = adapted_lattice(params, A, measure, q)
    else:
        I, mass, tail = _integrate(params, lattice, A, measure, q)
    ll, ratio, cancel = _finish(I, A, params, n, mass, tail, lattice, q)
    diag = _lattice_info(lattice, tail)
    redo = np.flatnonzero((cancel > TILT_CANCELLATION) | (I.real <= 0))
    pending = list(redo[np.argsort(-cancel[redo])])
    while pending:
        # one shifted contour per group: the saddle of the worst remaining row serves its neighbours
        r = pending[0]
        rows = np.array(pending)
        try:
            c, var = saddle_tilt(params, A[r], measure, q)
            lat_r, I_r, mass_r, tail_r = adapted_lattice(params, A[rows], measure, q, tilt=c, axis_var=var)
            ll_r, ratio_r, cancel_r = _finish(I_r, A[rows], params, n, mass_r, tail_r, lat_r, q, c)
        except (QuadratureError, levy_mod.StripError, DegenerateError) as exc:
            log.debug("contour shift failed for row %d: %s", r, exc)
            pending.pop(0)
            continue
        better = (cancel_r < cancel[rows]) & (I_r.real > 0)
        done = better & (cancel_r <= TILT_CANCELLATION)
        done[0] = True
        for k in np.flatnonzero(better):
            j = rows[k]
            ll[j], ratio[j], cancel[j] = ll_r[k], ratio_r[k], cancel_r[k]
        diag["nodes"] = max(diag["nodes"], int(lat_r.size))
        diag["n_contours"] = diag.get("n_contours", 0) + 1
        pending = [j for j, d in zip(rows, done) if not d]
    re_ok = np.isfinite(ll)
    if np.any(ratio[re_ok] > 1e-6):
        warnings.warn(f"|Im/Re| of the likelihood integral is {ratio[re_ok].max():.3g} > 1e-6", NonRealWarning,
                      stacklevel=2)
    if np.any(cancel > 1e10):
        warnings.warn(f"likelihood integral is {cancel.max():.3g} times smaller than int |F|; "
                      "far-tail observations are dominated by rounding", NonRealWarning, stacklevel=2)
    diag.update({"max_im_re_ratio": float(ratio.max()) if ratio.size else 0.0,
                 "max_cancellation": float(cancel.max()) if cancel.size else 0.0,
                 "n_nonpositive": int(np.sum(~re_ok)), "n_tilted": int(redo.size),
                 "n_contours": diag.get("n_contours", 0)})
    log.debug("block likelihood diagnostics %s", diag)
    return (ll, diag) if return_diagnostics else ll


def log_likelihood(X, params: ModelParams, measure: Optional[MeasureKind] = None,
                   q: QuadConfig = QuadConfig(), lattice: Optional[Lattice] = None,
                   return_diagnostics: bool = False):
    """log L(X_1..X_n) for n <= 3 by the exact Fourier representation."""
    obs = X if isinstance(X, Observations) else Observations(X)
    if obs.n > MAX_EXACT_DIM:
        raise ValueError(f"n = {obs.n} > {MAX_EXACT_DIM}; use composite_log_likelihood")
    ll, diag = block_log_likelihoods(obs.X[None, :], params, measure, q, lattice, True)
    return (float(ll[0]), diag) if return_diagnostics else float(ll[0])


def split_blocks(X, block: int):
    """Non-overlapping windows of length ``block``; a shorter final window is returned separately."""
    X = np.asarray(X, dtype=float).ravel()
    k = X.size // block
    full = X[:k * block].reshape(k, block)
    rest = X[k * block:]
    return full, rest


def composite_log_likelihood(X, params: ModelParams, block: int = 2, measure: Optional[MeasureKind] = None,
                             q: QuadConfig = QuadConfig(), lattice: Optional[Lattice] = None,
                             return_diagnostics: bool = False):
    """Sum of exact block log-likelihoods.

    A 2-d ``X`` is read as independent blocks (one per row). A 1-d series is
    cut into consecutive windows of length ``block``; this ignores dependence
    between windows and is a composite (not full) likelihood for the series.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        ll, d = block_log_likelihoods(X, params, measure, q, lattice, True)
        return (float(ll.sum()), d) if return_diagnostics else float(ll.sum())
    if not 1 <= block <= MAX_EXACT_DIM:
        raise ValueError(f"block must be in 1..{MAX_EXACT_DIM}")
    full, rest = split_blocks(X, block)
    total = 0.0
    diag = {}
    if isinstance(measure, Deterministic):
        tau, gamma = _measure_time_changes(measure, params, X.size)
        tau, gamma = np.asarray(tau), np.asarray(gamma)
        k = full.shape[0]
        if k:
            sub = Deterministic(tau=tau[:k * block].reshape(k, block), gamma=gamma[:k * block].reshape(k, block))
            ll, diag = block_log_likelihoods(full, params, sub, q, None, True)
            total += ll.sum()
        if rest.size:
            sub = Deterministic(tau=tau[k * block:], gamma=gamma[k * block:])
            total += block_log_likelihoods(rest[None, :], params, sub, q, None)[0]
    else:
        if full.size:
            ll, diag = block_log_likelihoods(full, params, measure, q, lattice, True)
            total += ll.sum()
        if rest.size:
            total += block_log_likelihoods(rest[None, :], params, measure, q, None)[0]
    return (float(total), diag) if return_diagnostics else float(total)


def marginal_density_grid(x_grid, params: ModelParams, q: QuadConfig = QuadConfig(),
                          measure: Optional[MeasureKind] = None, return_diagnostics: bool = False):
    """Density of a single return on ``x_grid``; one Lambda lattice serves every grid point."""
    x = np.asarray(x_grid, dtype=float).ravel()
    ll, diag = block_log_likelihoods(x[:, None], params, measure, q, None, True)
    dens = np.exp(ll)
    return (dens, diag) if return_diagnostics else dens


def characteristic_function(params: ModelParams, u, measure: Optional[MeasureKind] = None,
                            q: QuadConfig = QuadConfig()):
    """E[exp(i u.X)] for rows u (..., n) of frequencies over n consecutive returns.

    exp(i mu delta sum u) exp(-Lambda(sum_i d1_i h_i + d2_i g_i)) with
    d1 = psi_1(-iu) - iu beta + u^2/2 and d2 = psi_2(-iu) - iu (beta + rho) + u^2/2.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    d1, d2 = exponent_coefficients(params, -1j * u)
    drift = np.exp(1j * params.mu * params.delta * u.sum(axis=-1))
    if isinstance(measure, Deterministic):
        tau, gamma = _measure_time_changes(measure, params, n)
        return drift * np.exp(-(d1 @ tau + d2 @ gamma))
    kern = kernel_from_coefficients(params.vol, d1, d2, params.delta)
    lam = np.zeros(u.shape[:-1], dtype=complex)
    for f, nu in enumerate(_intensities(params, measure, n)):
        lam = lam + laplace_ou(nu, kern.lams[f], params.delta, kern.coef[f], q)
    return drift * np.exp(-lam)
