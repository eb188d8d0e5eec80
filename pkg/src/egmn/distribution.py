"""Exponential-Gaussian mixture (EGM) distribution over watch time.

One exponential component (weight ``w0``, rate ``lam``) models quick skips,
K Gaussian components model the finer viewing patterns::

    p(t) = w0 * lam * exp(-lam * t) * [t >= 0] + sum_k wk * N(t; mu_k, var_k)

Gaussians are not truncated at zero, so the closed-form mean
``w0 / lam + sum_k wk * mu_k`` holds exactly.

All functions broadcast over a leading batch shape: ``rate`` has shape ``S``,
``means``/``variances`` have shape ``S + (K,)`` and ``weights`` ``S + (K+1,)``.
A scalar ``rate`` means a single distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erfc, logsumexp

__all__ = [
    "EgmParams",
    "ParameterError",
    "pdf",
    "log_pdf",
    "cdf",
    "mean",
    "quantile",
    "sample",
    "interval_prob",
    "rescale",
    "std_normal_cdf",
    "write_curve_csv",
]

_LOG_2PI = np.log(2.0 * np.pi)
_SQRT2 = np.sqrt(2.0)


class ParameterError(ValueError):
    """Raised when distribution parameters leave their domain."""


@dataclass(frozen=True)
class EgmParams:
    """Parameters of one (or a batch of) EGM distributions.

    ``weights[..., 0]`` is the exponential weight; ``weights[..., k]`` for
    k >= 1 belongs to the Gaussian with ``means[..., k-1]``.
    """

    rate: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for name in ("rate", "means", "variances", "weights"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.validate()

    @classmethod
    def exponential(cls, rate: float) -> "EgmParams":
        return cls(rate, np.zeros(0), np.zeros(0), np.ones(1))

    @property
    def n_gaussians(self) -> int:
        return self.means.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.rate.shape

    def validate(self):
        rate, means, variances, weights = self.rate, self.means, self.variances, self.weights
        if means.ndim == 0 or variances.ndim == 0 or weights.ndim == 0:
            raise ParameterError("means, variances and weights need a component axis")
        k = means.shape[-1]
        if variances.shape != means.shape:
            raise ParameterError(f"variances shape {variances.shape} != means shape {means.shape}")
        if weights.shape[-1] != k + 1:
            raise ParameterError(f"expected {k + 1} weights, got {weights.shape[-1]}")
        if means.shape[:-1] != rate.shape or weights.shape[:-1] != rate.shape:
            raise ParameterError("batch shapes of rate, means and weights disagree")
        for name, arr in (("rate", rate), ("means", means), ("variances", variances), ("weights", weights)):
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} contains non-finite values")
        if np.any(rate <= 0):
            raise ParameterError("rate must be positive")
        if np.any(variances <= 0):
            raise ParameterError("variances must be positive")
        if np.any(weights < 0):
            raise ParameterError("weights must be non-negative")
        if np.any(np.abs(weights.sum(axis=-1) - 1.0) > 1e-12):
            raise ParameterError("weights must sum to 1")

    def __getitem__(self, idx) -> "EgmParams":
        """Index the batch dimensions (``None`` inserts a broadcast axis)."""
        if not isinstance(idx, tuple):
            idx = (idx,)
        tail = idx + (slice(None),)
        return EgmParams(self.rate[idx], self.means[tail], self.variances[tail], self.weights[tail])

    def __len__(self):
        if self.rate.ndim == 0:
            raise TypeError("unbatched EgmParams has no length")
        return self.rate.shape[0]

    def component(self, i: int) -> dict:
        """Scalar parameters of batch element ``i`` (for reporting)."""
        p = self[i]
        return {
            "rate": float(p.rate),
            "means": p.means.tolist(),
            "variances": p.variances.tolist(),
            "weights": p.weights.tolist(),
        }


def std_normal_cdf(z):
    """Standard normal CDF via ``erfc`` (accurate in both tails)."""
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / _SQRT2)


def pdf(params: EgmParams, t):
    t = np.asarray(t, dtype=np.float64)
    lam, w = params.rate, params.weights
    tt = np.maximum(t, 0.0)
    dens = np.where(t >= 0, w[..., 0] * lam * np.exp(-lam * tt), 0.0)
    if params.n_gaussians:
        var = params.variances
        z2 = (t[..., None] - params.means) ** 2 / var
        gauss = np.exp(-0.5 * z2) / np.sqrt(2.0 * np.pi * var)
        dens = dens + np.sum(w[..., 1:] * gauss, axis=-1)
    return dens


def component_log_densities(params: EgmParams, t, weighted: bool = True) -> np.ndarray:
    """log(w_j) + log f_j(t) for every component, shape ``S + (K+1,)``.

    Components with zero weight, and the exponential for ``t < 0``, give -inf.
    With ``weighted=False`` the log(w_j) term is left out.
    """
    t = np.asarray(t, dtype=np.float64)
    lam = params.rate
    with np.errstate(divide="ignore"):
        logw = np.log(params.weights) if weighted else np.zeros_like(params.weights)
    tt = np.maximum(t, 0.0)
    log_exp = np.where(t >= 0, np.log(lam) - lam * tt, -np.inf)
    parts = [log_exp[..., None]]
    if params.n_gaussians:
        var = params.variances
        log_gauss = -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (t[..., None] - params.means) ** 2 / var
        parts.append(log_gauss)
    shape = np.broadcast_shapes(parts[0].shape[:-1], logw.shape[:-1])
    comps = np.concatenate([np.broadcast_to(p, shape + p.shape[-1:]) for p in parts], axis=-1)
    return logw + comps


def log_pdf(params: EgmParams, t):
    """Log density by log-sum-exp; -inf (never NaN) where every component is zero."""
    return logsumexp(component_log_densities(params, t), axis=-1)


def cdf(params: EgmParams, t):
    t = np.asarray(t, dtype=np.float64)
    lam, w = params.rate, params.weights
    out = w[..., 0] * -np.expm1(-lam * np.maximum(t, 0.0))
    if params.n_gaussians:
        z = (t[..., None] - params.means) / np.sqrt(params.variances)
        out = out + np.sum(w[..., 1:] * std_normal_cdf(z), axis=-1)
    return np.clip(out, 0.0, 1.0)


def mean(params: EgmParams):
    """Expected watch time: w0 / rate + sum_k wk * mu_k."""
    w = params.weights
    return w[..., 0] / params.rate + np.sum(w[..., 1:] * params.means, axis=-1)


def rescale(params: EgmParams, factor: float) -> EgmParams:
    """Distribution of ``factor * T``: a change of time unit."""
    if not factor > 0:
        raise ParameterError(f"scale factor must be positive, got {factor}")
    return EgmParams(params.rate / factor, params.means * factor, params.variances * factor**2, params.weights)


def interval_prob(params: EgmParams, a, b):
    """P(a < T <= b); ``a`` may be ``-np.inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a > b):
        raise ParameterError("interval_prob needs a <= b")
    return np.clip(cdf(params, b) - cdf(params, a), 0.0, 1.0)


def _bracket(params: EgmParams, q: np.ndarray):
    lam = params.rate
    if params.n_gaussians:
        sd = np.sqrt(params.variances)
        lo = np.minimum(0.0, np.min(params.means - 12.0 * sd, axis=-1))
        hi = np.maximum(40.0 / lam, np.max(params.means + 12.0 * sd, axis=-1))
    else:
        lo = np.zeros_like(lam)
        hi = 40.0 / lam
    lo, hi = np.broadcast_arrays(lo, hi, q)[:2]
    lo, hi = lo.copy(), hi.copy()
    # widen until the bracket holds q; rarely needed
    for _ in range(200):
        low_bad = cdf(params, lo) > q
        high_bad = cdf(params, hi) < q
        if not (low_bad.any() or high_bad.any()):
            break
        width = hi - lo
        lo = np.where(low_bad, lo - width, lo)
        hi = np.where(high_bad, hi + width, hi)
    return lo, hi


def quantile(params: EgmParams, q, tol: float = 1e-10, max_iter: int = 200):
    """Inverse CDF by bisection on a bracketing interval."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(~((q > 0) & (q < 1))):
        raise ParameterError("quantile level must lie strictly inside (0, 1)")
    lo, hi = _bracket(params, q)
    result = 0.5 * (lo + hi)
    done = np.zeros(result.shape, dtype=bool)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = cdf(params, mid)
        # freeze each entry at the first midpoint that meets the tolerance
        hit = ~done & ((np.abs(c - q) <= tol) | (hi - lo <= 4 * np.spacing(np.abs(mid) + 1.0)))
        result = np.where(hit, mid, result)
        done |= hit
        if done.all():
            break
        below = c < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    result = np.where(done, result, 0.5 * (lo + hi))
    return result if result.ndim else float(result)


def sample(params: EgmParams, seed: int, n: int) -> np.ndarray:
    """Ancestral sampling: draw a component from the weights, then a value from it.

    Returns shape ``batch_shape + (n,)``; deterministic in ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    shape = params.batch_shape + (n,)
    cumw = np.cumsum(params.weights, axis=-1)
    u = rng.random(shape)
    # last cumulative weight may be 1 - 1e-16; clip picks the final component then
    comp = np.minimum((u[..., None] >= cumw[..., None, :]).sum(axis=-1), params.n_gaussians)
    lam = params.rate[..., None]
    draws = rng.standard_exponential(shape) / lam
    if params.n_gaussians:
        z = rng.standard_normal(shape)
        g = np.clip(comp - 1, 0, None)
        mu = np.take_along_axis(params.means, g, axis=-1) if params.rate.ndim else params.means[g]
        var = np.take_along_axis(params.variances, g, axis=-1) if params.rate.ndim else params.variances[g]
        draws = np.where(comp == 0, draws, mu + np.sqrt(var) * z)
    return draws


def write_curve_csv(path, grid, values, value_name: str = "value"):
    """Two-column (t, value) CSV for plotting a density or CDF curve."""
    grid = np.asarray(grid, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if grid.shape != values.shape or grid.ndim != 1:
        raise ValueError("grid and values must be 1-d arrays of equal length")
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", value_name])
        for t, v in zip(grid, values):
            writer.writerow([repr(float(t)), repr(float(v))])
