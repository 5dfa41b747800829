"""Poisson random measures on (jump time s) x (jump size x > 0).

The intensity is nu(ds, dx) = r(s) ds F(dx) with a piecewise-constant time
rate r on [-s_max, horizon] and a mark law F. The Laplace functional is

    Lambda(f) = int (1 - exp(-f(s, x))) nu(ds, dx),   E[exp(-N(f))] = exp(-Lambda(f)).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .quadrature import PoleError, PreconditionError, QuadConfig, adaptive_gk15


@dataclass(frozen=True)
class ExponentialMarks:
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("mark rate b must be positive")

    def sample(self, size, rng):
        return rng.exponential(1.0 / self.b, size)

    def quantile(self, p):
        return -np.log1p(-p) / self.b

    def to_dict(self):
        return {"kind": "exponential", "b": self.b}


@dataclass(frozen=True)
class TabulatedMarks:
    """Discrete mark law on positive support points ``grid`` with probabilities ``weights``."""

    grid: tuple
    weights: tuple

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if g.shape != w.shape or g.ndim != 1 or g.size == 0:
            raise ValueError("grid and weights must be 1-d of equal length")
        if np.any(g <= 0) or np.any(w < 0):
            raise ValueError("marks must be positive and weights nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mark weights must sum to 1")
        object.__setattr__(self, "grid", tuple(g.tolist()))
        object.__setattr__(self, "weights", tuple(w.tolist()))

    def sample(self, size, rng):
        return rng.choice(np.asarray(self.grid), size=size, p=np.asarray(self.weights))

    def to_dict(self):
        return {"kind": "tabulated", "grid": list(self.grid), "weights": list(self.weights)}


MarkLaw = Union[ExponentialMarks, TabulatedMarks]


def marks_from_dict(d: dict) -> MarkLaw:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "exponential":
        return ExponentialMarks(**d)
    if kind == "tabulated":
        return TabulatedMarks(**d)
    raise ValueError(f"unknown mark law {kind!r}")


@dataclass(frozen=True)
class IntensityMeasure:
    """Time rate ``rates[k]`` on (knots[k], knots[k+1]]; knots[0] = -s_max, knots[-1] = horizon."""

    knots: tuple
    rates: tuple
    marks: MarkLaw

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if k.ndim != 1 or k.size < 2 or r.shape != (k.size - 1,):
            raise ValueError("need len(rates) == len(knots) - 1 >= 1")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("time rates must be finite and nonnegative")
        object.__setattr__(self, "knots", tuple(k.tolist()))
        object.__setattr__(self, "rates", tuple(r.tolist()))

    @classmethod
    def constant(cls, rate: float, s_max: float, horizon: float, marks: MarkLaw) -> "IntensityMeasure":
        return cls((-s_max, horizon), (rate,), marks)

    @property
    def s_max(self) -> float:
        return -self.knots[0]

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    def total_mass(self) -> float:
        return float(np.dot(np.diff(self.knots), self.rates))

    def time_rate(self, s):
        s = np.asarray(s, dtype=float)
        k = np.asarray(self.knots)
        idx = np.clip(np.searchsorted(k, s, side="left") - 1, 0, len(self.rates) - 1)
        inside = (s > k[0]) & (s <= k[-1])
        return np.where(inside, np.asarray(self.rates)[idx], 0.0)

    def to_dict(self):
        return {"knots": list(self.knots), "rates": list(self.rates), "marks": self.marks.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityMeasure":
        return cls(tuple(d["knots"]), tuple(d["rates"]), marks_from_dict(d["marks"]))


@dataclass(frozen=True)
class PointSet:
    s: np.ndarray = field(default_factory=lambda: np.empty(0))
    x: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        if s.shape != x.shape:
            raise ValueError("s and x must have equal length")
        if np.any(x <= 0):
            raise ValueError("marks must be positive")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "x", x)

    def __len__(self):
        return self.s.size

    def __eq__(self, other):
        return (isinstance(other, PointSet) and np.array_equal(self.s, other.s)
                and np.array_equal(self.x, other.x))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x"])
            for s, x in zip(self.s, self.x):
                w.writerow([repr(float(s)), repr(float(x))])


@dataclass(frozen=True)
class Poisson:
    """Poisson measure; ``intensities`` holds one IntensityMeasure per factor coordinate.

    ``None`` means "derive from the model's volatility spec".
    """

    intensities: Optional[tuple] = None


@dataclass(frozen=True)
class Deterministic:
    """A fixed (non-random) counting measure.

    Either ``points`` (one PointSet per factor coordinate) or the realized
    functionals ``tau``/``gamma`` directly. E[exp(-N(f))] is exp(-N(f)).
    """

    points: Optional[tuple] = None
    tau: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.points is None) == (self.tau is None):
            raise ValueError("give exactly one of points or tau")
        if self.tau is not None:
            tau = np.asarray(self.tau, dtype=float)
            gamma = np.zeros_like(tau) if self.gamma is None else np.asarray(self.gamma, dtype=float)
            if tau.shape != gamma.shape or np.any(tau < 0) or np.any(gamma < 0):
                raise ValueError("tau and gamma must be nonnegative and of equal shape")
            object.__setattr__(self, "tau", tau)
            object.__setattr__(self, "gamma", gamma)


MeasureKind = Union[Poisson, Deterministic]


def deterministic_laplace(points: PointSet, f: Callable) -> complex:
    """N(f) for a fixed point set, so that E[exp(-N(f))] = exp(-N(f))."""
    if len(points) == 0:
        return 0j
    return complex(np.sum(f(points.s, points.x)))


def _segments(nu: IntensityMeasure, extra: Sequence[float] = ()):
    pts = set(nu.knots)
    lo, hi = nu.knots[0], nu.knots[-1]
    pts.update(p for p in extra if lo < p < hi)
    edges = np.array(sorted(pts))
    rates = nu.time_rate(0.5 * (edges[:-1] + edges[1:]))
    return edges, rates


def laplace_functional_generic(nu: IntensityMeasure, f: Callable, q: QuadConfig = QuadConfig(),
                               breakpoints: Sequence[float] = ()):
    """Lambda(f) by nested adaptive quadrature over jump time and mark.

    ``f(s, x)`` must broadcast over arrays ``s`` of shape (m, 1) and ``x`` of
    shape (1, k). Marks are integrated on the probability scale
    (x = F^{-1}(p)) for exponential laws, or summed for tabulated laws.
    Returns ``(value, abserr)``.
    """
    marks = nu.marks
    breakpoints = tuple(breakpoints) + tuple(getattr(f, "breakpoints", ()))
    edges, rates = _segments(nu, breakpoints)
    active = [j for j, r in enumerate(rates) if r > 0]
    tol = q.tol / max(len(active), 1)

    def values(s, x):
        v = np.asarray(f(s[:, None], x[None, :]), dtype=complex)
        if np.any(v.real < -q.tol):
            raise PreconditionError("Re f < 0 on the support of nu")
        return -np.expm1(-v)                      # (len(s), len(x))

    if isinstance(marks, ExponentialMarks):
        def inner(s):
            val, _, _ = adaptive_gk15(lambda p: values(s, marks.quantile(p)).T, 0.0, 1.0,
                                      0.1 * tol / nu.total_mass(), q.max_evals)
            return val
    else:
        grid = np.asarray(marks.grid)
        wts = np.asarray(marks.weights)

        def inner(s):
            return values(s, grid) @ wts

    total = 0j
    err_total = 0.0
    for j in active:
        val, err, _ = adaptive_gk15(inner, edges[j], edges[j + 1], tol / rates[j], q.max_evals)
        total += rates[j] * complex(val)
        err_total += rates[j] * err
    return total, err_total


def laplace_functional_exp_marks(nu: IntensityMeasure, K: Callable, q: QuadConfig = QuadConfig(),
                                 breakpoints: Sequence[float] = ()):
    """Lambda(f) for f(s, x) = x K(s) and Exponential(b) marks.

    The mark integral is done analytically, int (1 - e^{-xK}) b e^{-bx} dx = K / (b + K),
    leaving a 1-d adaptive quadrature in s. Returns ``(value, abserr)``.
    """
    if not isinstance(nu.marks, ExponentialMarks):
        raise TypeError("exponential mark law required")
    b = nu.marks.b
    breakpoints = tuple(breakpoints) + tuple(getattr(K, "breakpoints", ()))
    edges, rates = _segments(nu, breakpoints)
    active = [j for j, r in enumerate(rates) if r > 0]
    tol = q.tol / max(len(active), 1)

    def g(s):
        k = np.asarray(K(s), dtype=complex)
        d = b + k
        bad = (np.abs(d) < q.pole_tol) | (d.real <= 0)
        if np.any(bad):
            raise PoleError(f"b + K(s) reaches the pole region at s = {s[bad][0]}")
        return k / d

    total = 0j
    err_total = 0.0
    for j in active:
        val, err, _ = adaptive_gk15(g, edges[j], edges[j + 1], tol / rates[j], q.max_evals)
        total += rates[j] * complex(val)
        err_total += rates[j] * err
    return total, err_total


def sample_points_batch(nu: IntensityMeasure, n_sets: int, rng: np.random.Generator):
    """``n_sets`` independent realizations, flattened.

    Returns ``(owner, s, x)`` where ``owner[j]`` is the realization index of point j.
    """
    knots = np.asarray(nu.knots)
    cum = np.concatenate([[0.0], np.cumsum(np.diff(knots) * np.asarray(nu.rates))])
    mass = cum[-1]
    counts = rng.poisson(mass, n_sets) if mass > 0 else np.zeros(n_sets, dtype=np.int64)
    total = int(counts.sum())
    owner = np.repeat(np.arange(n_sets), counts)
    # inversion of the piecewise-linear cumulative time rate
    s = np.interp(rng.uniform(0.0, mass, total), cum, knots)
    x = nu.marks.sample(total, rng)
    return owner, s, np.asarray(x, dtype=float)


def sample_points(nu: IntensityMeasure, rng: np.random.Generator) -> PointSet:
    _, s, x = sample_points_batch(nu, 1, rng)
    return PointSet(s, x)
