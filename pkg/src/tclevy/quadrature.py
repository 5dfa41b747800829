"""Quadrature settings and small numerical helpers shared by the modules."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np


class QuadratureError(RuntimeError):
    pass


class BudgetExceeded(QuadratureError):
    """Adaptive refinement or lattice construction ran past ``max_evals``."""


class TruncationError(QuadratureError):
    """The tail beyond the truncation radius is larger than the tolerance."""


class PoleError(QuadratureError):
    """b + K(s) came within ``pole_tol`` of zero (or left the right half-plane)."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class QuadConfig:
    """Settings for every quadrature in the package.

    ``tol`` is the absolute tolerance of the Laplace-functional quadratures.
    ``y_tol`` is the relative tolerance used to choose the truncation radius of
    the Fourier integral over y; ``radius`` overrides the automatic choice.
    ``order`` Gauss-Legendre nodes are used on each panel of the y lattice.
    """

    radius: Optional[float] = None
    panel_width: Optional[float] = None
    order: int = 16
    tol: float = 1e-11
    y_tol: float = 1e-10
    max_evals: int = 4_000_000
    max_radius: float = 5000.0
    pole_tol: float = 1e-12
    kde_bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.panel_width is not None and not self.panel_width > 0:
            raise ValueError("panel_width must be positive")
        if not (self.tol > 0 and self.y_tol > 0 and self.pole_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.order < 2 or self.max_evals < 1:
            raise ValueError("order must be >= 2 and max_evals >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown quadrature keys {sorted(unknown)}")
        return cls(**d)


def log1p_over_x(w):
    """log(1 + w) / w for complex w, accurate near w = 0."""
    w = np.asarray(w, dtype=complex)
    out = np.empty_like(w)
    small = np.abs(w) < 1e-2
    ws = w[small]
    # alternating series, truncation error below |w|^8 / 9
    out[small] = 1 - ws * (1 / 2 - ws * (1 / 3 - ws * (1 / 4 - ws * (1 / 5 - ws * (1 / 6 - ws * (1 / 7 - ws / 8))))))
    wb = w[~small]
    out[~small] = np.log1p(wb) / wb
    return out


def gauss_legendre_panels(edges, order: int):
    """Composite Gauss-Legendre rule on consecutive panels given by ``edges``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + half * (x + 1)).ravel()
    weights = (half * w).ravel()
    return nodes, weights


# Gauss-Kronrod 7/15 (QUADPACK qk15), nodes on [0, 1) of the symmetric rule
_XGK = np.array([0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                 0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                 0.207784955007898467600689403773245, 0.0])
_WGK = np.array([0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                 0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                 0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                0.381830050505118944950369775488975, 0.417959183673469387755102040816327])
_X15 = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_W15 = np.concatenate([_WGK[:-1], _WGK[::-1]])
_W7 = np.zeros(15)
_W7[1:7:2] = _WG[:3]
_W7[7] = _WG[3]
_W7[13:7:-2] = _WG[:3]


def adaptive_gk15(f, a: float, b: float, epsabs: float, max_evals: int = 1_000_000):
    """Globally adaptive G7/K15 quadrature of a vectorized, possibly vector-valued ``f``.

    ``f`` receives a 1-d array of m nodes and returns an array of shape (m, ...).
    All new subintervals of a refinement step are evaluated in one call.
    Returns ``(value, abserr, n_evals)``; the error uses the max-norm over outputs.
    """
    def rule(lo, hi):
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        nodes = (c[:, None] + h[:, None] * _X15).ravel()
        vals = np.asarray(f(nodes))
        vals = vals.reshape((lo.size, 15) + vals.shape[1:])
        k = np.einsum("j,ij...->i...", _W15, vals)
        g = np.einsum("j,ij...->i...", _W7, vals)
        hs = h.reshape((-1,) + (1,) * (k.ndim - 1))
        est = k * hs
        err = np.abs((k - g) * hs)
        err = err.reshape(lo.size, -1).max(axis=1) if err.ndim > 1 else err
        return est, err

    lo = np.array([a], dtype=float)
    hi = np.array([b], dtype=float)
    est, err = rule(lo, hi)
    evals = 15
    while True:
        total_err = err.sum()
        if total_err <= epsabs:
            break
        if evals >= max_evals:
            raise BudgetExceeded(f"adaptive quadrature used {evals} evaluations, error {total_err:.3g}")
        # bisect every interval carrying more than its share of the error
        share = epsabs / lo.size
        split = err > min(share, err.max() * 0.5)
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        e2, r2 = rule(new_lo, new_hi)
        evals += 15 * new_lo.size
        keep = ~split
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        est = np.concatenate([est[keep], e2])
        err = np.concatenate([err[keep], r2])
    return est.sum(axis=0), float(err.sum()), evals
