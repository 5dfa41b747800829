"""Monte Carlo oracle: exact simulation of the return model and empirical estimators.

Per path the background point sets are drawn on [-warmup, n delta], the time
changes tau_i, gamma_i are their kernel sums, the Levy jumps are drawn at the
realized clocks and

    X_i = mu delta + J_i1 + J_i2 + beta tau*_i + rho gamma_i + sqrt(tau*_i) eps_i.

No time discretization is involved anywhere.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .levy import sample_increment
from .likelihood import ModelParams, _intensities, _measure_time_changes
from .prm import Deterministic, MeasureKind, sample_points_batch
from .timechange import IndependentFactors, batch_functionals

CHUNK_PATHS = 25_000


@dataclass
class SimOutput:
    returns: np.ndarray
    tau: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    J1: Optional[np.ndarray] = None
    J2: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None

    def to_csv(self, path, latents: bool = False):
        n = self.returns.shape[1]
        header = ["path"] + [f"x{i + 1}" for i in range(n)]
        cols = [self.returns]
        if latents and self.tau is not None:
            for name in ("tau", "gamma", "J1", "J2", "eps"):
                header += [f"{name}{i + 1}" for i in range(n)]
                cols.append(getattr(self, name))
        table = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, row in enumerate(table):
                w.writerow([k] + [repr(float(v)) for v in row])


def _simulate_chunk(params: ModelParams, n: int, n_paths: int, measure, seed_seq):
    rng = np.random.default_rng(seed_seq)
    vol = params.vol
    if isinstance(measure, Deterministic):
        tau, gamma = _measure_time_changes(measure, params, n)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (n_paths, n)).copy()
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (n_paths, n)).copy()
    else:
        intens = _intensities(params, measure, n)
        owner, s, x = sample_points_batch(intens[0], n_paths, rng)
        tau = batch_functionals(owner, s, x, n_paths, n, params.delta, vol.lams[0])
        if isinstance(vol.factor, IndependentFactors):
            owner, s, x = sample_points_batch(intens[1], n_paths, rng)
            gamma = batch_functionals(owner, s, x, n_paths, n, params.delta, vol.lams[1])
        else:
            gamma = vol.factor.kappa * tau
    J1 = sample_increment(params.levy1, tau.ravel(), rng).reshape(tau.shape)
    J2 = sample_increment(params.levy2, gamma.ravel(), rng).reshape(gamma.shape)
    eps = rng.standard_normal(tau.shape)
    tau_star = tau + gamma
    X = (params.mu * params.delta + J1 + J2 + params.beta * tau_star + params.rho * gamma
         + np.sqrt(tau_star) * eps)
    return X, tau, gamma, J1, J2, eps


def simulate_returns(params: ModelParams, n: int, n_paths: int, seed=0,
                     measure: Optional[MeasureKind] = None, keep_latent: bool = False,
                     threads: int = 1) -> SimOutput:
    """Simulate ``n_paths`` independent paths of ``n`` consecutive returns.

    Work is split into fixed chunks with their own spawned seed streams, so the
    output depends only on ``seed`` and not on ``threads``.
    """
    if n < 1 or n_paths < 1:
        raise ValueError("n and n_paths must be positive")
    sizes = [min(CHUNK_PATHS, n_paths - k) for k in range(0, n_paths, CHUNK_PATHS)]
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seqs = root.spawn(len(sizes))
    args = [(params, n, m, measure, ss) for m, ss in zip(sizes, seqs)]
    if threads > 1 and len(args) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _simulate_chunk(*a), args))
    else:
        parts = [_simulate_chunk(*a) for a in args]
    X = np.concatenate([p[0] for p in parts])
    if not keep_latent:
        return SimOutput(X)
    tau, gamma, J1, J2, eps = (np.concatenate([p[k] for p in parts]) for k in range(1, 6))
    return SimOutput(X, tau, gamma, J1, J2, eps)


MIN_SAMPLES = 10_000


def normal_reference_bandwidth(samples) -> float:
    """1.06 sd n^(-1/5)."""
    samples = np.asarray(samples)
    return 1.06 * float(np.std(samples, ddof=1)) * samples.size ** (-0.2)


def empirical_density(samples, grid, bandwidth=None, min_samples: int = MIN_SAMPLES):
    """Gaussian KDE with pointwise standard errors.

    The standard error at x is the sample standard deviation of K_h(x - X_j)
    over sqrt(N); it covers sampling noise only, not smoothing bias.
    Returns ``(density, stderr, bandwidth)``.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {samples.size}")
    grid = np.asarray(grid, dtype=float).ravel()
    h = normal_reference_bandwidth(samples) if bandwidth in (None, "auto") else float(bandwidth)
    N = samples.size
    s1 = np.zeros(grid.size)
    s2 = np.zeros(grid.size)
    norm = 1.0 / (h * math.sqrt(2 * math.pi))
    step = max(1, 5_000_000 // max(grid.size, 1))
    for start in range(0, N, step):
        z = (grid[:, None] - samples[None, start:start + step]) / h
        k = norm * np.exp(-0.5 * z * z)
        s1 += k.sum(axis=1)
        s2 += (k * k).sum(axis=1)
    dens = s1 / N
    var = np.maximum(s2 / N - dens ** 2, 0.0) * N / (N - 1)
    return dens, np.sqrt(var / N), h


def empirical_cf(samples, u, min_samples: int = MIN_SAMPLES):
    """Mean of exp(i u.X) with standard errors of its real and imaginary parts.

    ``samples`` is (N,) or (N, n); ``u`` is (k,) or (k, n). Returns
    ``(cf, stderr_re, stderr_im)``.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {X.shape[0]}")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.ndim == 1:
        u = u[:, None] if X.shape[1] == 1 else u[None, :]
    N = X.shape[0]
    phase = X @ u.T                                          # (N, k)
    c, s = np.cos(phase), np.sin(phase)
    cf = c.mean(axis=0) + 1j * s.mean(axis=0)
    se_re = c.std(axis=0, ddof=1) / math.sqrt(N)
    se_im = s.std(axis=0, ddof=1) / math.sqrt(N)
    return cf, se_re, se_im
