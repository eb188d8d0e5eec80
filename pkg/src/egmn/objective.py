"""Training objective: MLE, mixture-weight entropy and L1 regression terms.

Each term returns per-example losses together with gradients with respect to
the EGM parameters (``ParamGrads``). ``combined_loss`` averages over the batch
so its gradient can go straight into ``network.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .distribution import EgmParams, component_log_densities
from .distribution import mean as egm_mean

__all__ = [
    "ParamGrads",
    "LossWeights",
    "AdagradState",
    "mle_loss",
    "entropy_loss",
    "reg_loss",
    "combined_loss",
    "adagrad_step",
    "LOG_DENSITY_FLOOR",
]

# per-example log-density floor; below it the MLE term is capped and its gradient dropped
LOG_DENSITY_FLOOR = -700.0


@dataclass
class ParamGrads:
    """Gradient of a scalar loss with respect to each EGM parameter array."""

    rate: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    @classmethod
    def zeros_like(cls, params: EgmParams) -> "ParamGrads":
        return cls(
            np.zeros_like(params.rate), np.zeros_like(params.means),
            np.zeros_like(params.variances), np.zeros_like(params.weights),
        )

    def scaled(self, c) -> "ParamGrads":
        c = np.asarray(c, dtype=np.float64)
        cw = c[..., None] if c.ndim else c
        return ParamGrads(self.rate * c, self.means * cw, self.variances * cw, self.weights * cw)

    def __add__(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(
            self.rate + other.rate, self.means + other.means,
            self.variances + other.variances, self.weights + other.weights,
        )


@dataclass(frozen=True)
class LossWeights:
    """Term weights; ``mle`` is 1 except in the MLE-removal ablation."""

    alpha: float = 0.1
    beta: float = 1.0
    mle: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "mle"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


def mle_loss(params: EgmParams, t):
    """Negative log-likelihood and its gradient via component responsibilities.

    Examples whose log density falls below ``LOG_DENSITY_FLOOR`` get loss
    ``-LOG_DENSITY_FLOOR`` and a zero gradient.
    """
    t = np.asarray(t, dtype=np.float64)
    logf = component_log_densities(params, t, weighted=False)
    with np.errstate(divide="ignore"):
        logw = np.log(params.weights)
    logp = logsumexp(logf + logw, axis=-1)
    ok = logp >= LOG_DENSITY_FLOOR
    safe_logp = np.where(ok, logp, 0.0)
    okk = ok[..., None]

    # f_j / p; capped so a vanishing weight times it stays finite
    with np.errstate(over="ignore"):
        f_over_p = np.where(okk, np.minimum(np.exp(logf - safe_logp[..., None]), 1e250), 0.0)
    resp = params.weights * f_over_p
    lam = params.rate
    g_rate = -resp[..., 0] * (1.0 / lam - t)
    g_rate = np.where(t >= 0, g_rate, 0.0)
    if params.n_gaussians:
        var = params.variances
        diff = t[..., None] - params.means
        rk = resp[..., 1:]
        g_mean = -rk * diff / var
        g_var = -rk * (diff**2 / (2.0 * var**2) - 0.5 / var)
    else:
        g_mean = np.zeros_like(params.means)
        g_var = np.zeros_like(params.variances)
    loss = np.where(ok, -safe_logp, -LOG_DENSITY_FLOOR)
    return loss, ParamGrads(g_rate, g_mean, g_var, -f_over_p)


def entropy_loss(weights):
    """Negative entropy sum_k w_k log w_k (0 log 0 = 0) and its gradient 1 + log w_k.

    Minimising it spreads mass over the components. Zero weights get a zero
    gradient; the softmax Jacobian multiplies it by w_k = 0 anyway.
    """
    w = np.asarray(weights, dtype=np.float64)
    pos = w > 0
    logw = np.log(np.where(pos, w, 1.0))
    loss = np.sum(np.where(pos, w * logw, 0.0), axis=-1)
    grad = np.where(pos, 1.0 + logw, 0.0)
    return loss, grad


def reg_loss(params: EgmParams, t):
    """|t - E[T]| with the gradient flowing through every term of the mean."""
    t = np.asarray(t, dtype=np.float64)
    m = egm_mean(params)
    s = np.sign(m - t)
    lam, w = params.rate, params.weights
    g_w = np.concatenate(
        [np.broadcast_to((s / lam)[..., None], s.shape + (1,)), s[..., None] * params.means], axis=-1
    )
    grad = ParamGrads(-s * w[..., 0] / lam**2, s[..., None] * w[..., 1:], np.zeros_like(params.variances), g_w)
    return np.abs(t - m), grad


def combined_loss(params: EgmParams, t, lw: LossWeights = LossWeights()):
    """Batch-mean loss ``mle * L_MLE + alpha * L_entropy + beta * L_reg``.

    Returns ``(loss, grad, terms)``. ``grad`` is already divided by the batch
    size; ``terms`` holds the batch means of each term and the underflow count.
    For an unbatched ``params`` the "batch" is the single example.
    """
    t = np.asarray(t, dtype=np.float64)
    l_mle, g_mle = mle_loss(params, t)
    l_ent, g_ent_w = entropy_loss(params.weights)
    l_reg, g_reg = reg_loss(params, t)
    n = l_mle.size
    g_ent = ParamGrads(
        np.zeros_like(params.rate), np.zeros_like(params.means), np.zeros_like(params.variances), g_ent_w
    )
    grad = (g_mle.scaled(lw.mle) + g_ent.scaled(lw.alpha) + g_reg.scaled(lw.beta)).scaled(1.0 / n)
    terms = {
        "mle": float(np.mean(l_mle)),
        "entropy": float(np.mean(l_ent)),
        "reg": float(np.mean(l_reg)),
        "underflow": int(np.sum(l_mle >= -LOG_DENSITY_FLOOR)),
    }
    loss = lw.mle * terms["mle"] + lw.alpha * terms["entropy"] + lw.beta * terms["reg"]
    terms["loss"] = loss
    return loss, grad, terms


@dataclass
class AdagradState:
    accum: dict = field(default_factory=dict)
    eps: float = 1e-8

    @classmethod
    def for_weights(cls, tensors: dict, eps: float = 1e-8) -> "AdagradState":
        return cls({k: np.zeros_like(v) for k, v in tensors.items()}, eps)


def adagrad_step(weights, grads: dict, state: AdagradState, lr: float):
    """In place: ``acc += g**2``; ``w -= lr * g / (sqrt(acc) + eps)``.

    ``weights`` is a ``NetworkWeights`` or a plain dict of arrays.
    """
    tensors = getattr(weights, "tensors", weights)
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if set(grads) != set(tensors) or set(state.accum) != set(tensors):
        raise ValueError("gradient / accumulator keys do not match the weights")
    for name, w in tensors.items():
        g = grads[name]
        acc = state.accum[name]
        if g.shape != w.shape or acc.shape != w.shape:
            raise ValueError(f"shape mismatch for {name}: {g.shape} vs {w.shape}")
        acc += g * g
        w -= lr * g / (np.sqrt(acc) + state.eps)
    return weights, state
