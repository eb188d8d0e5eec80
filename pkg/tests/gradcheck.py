"""Central finite-difference checks of the network + combined-loss gradients."""

import numpy as np

from egmn.distribution import mean
from egmn.network import EncodedFeatures, FeatureSchema, backward, forward, init_weights
from egmn.objective import LossWeights, combined_loss


def small_problem(seed=0, n=20, k=4, hidden=(32, 16), use_exponential=True):
    schema = FeatureSchema((("a", 50), ("b", 50)), ("d0", "d1"), embedding_dim=8)
    w = init_weights(schema, hidden, k, seed, use_exponential=use_exponential)
    rng = np.random.default_rng(seed + 1000)
    # larger-than-default embeddings and biases so every head is exercised away from zero
    for name, arr in w.tensors.items():
        if name.startswith("emb/"):
            arr[...] = rng.normal(0, 0.5, arr.shape)
        elif name.endswith("/b"):
            arr[...] = rng.normal(0, 0.3, arr.shape)
    x = EncodedFeatures(rng.integers(0, 50, (n, 2)), rng.normal(size=(n, 2)))
    t = rng.gamma(1.5, 2.0, n)
    return w, x, t


def _loss_and_state(weights, x, t, lw):
    params, trace = forward(weights, x)
    loss, _, _ = combined_loss(params, t, lw)
    state = tuple(np.signbit(p).tobytes() for p in trace.pre) + (
        np.sign(mean(params) - t).tobytes(), trace.rate_clamped.tobytes(), trace.var_floored.tobytes(),
    )
    return loss, state


def analytic_grads(weights, x, t, lw=LossWeights(), couple_rate=True):
    params, trace = forward(weights, x)
    _, g, _ = combined_loss(params, t, lw)
    return backward(weights, trace, g, couple_rate=couple_rate)


def rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def check_coordinates(weights, x, t, coords, lw=LossWeights(), h=1e-4, couple_rate=True):
    """Return a list of ``(name, index, analytic, numeric, rel_err)``; kinked coordinates are skipped."""
    grads = analytic_grads(weights, x, t, lw, couple_rate)
    out = []
    for name, idx in coords:
        arr = weights.tensors[name]
        orig = arr[idx]
        arr[idx] = orig + h
        lp, sp = _loss_and_state(weights, x, t, lw)
        arr[idx] = orig - h
        lm, sm = _loss_and_state(weights, x, t, lw)
        arr[idx] = orig
        if sp != sm:
            continue
        num = (lp - lm) / (2 * h)
        a = float(grads[name][idx])
        out.append((name, idx, a, num, rel_err(a, num)))
    return out


def sample_coordinates(weights, x, t, n_coords, seed=0, lw=LossWeights()):
    """All rate-head coordinates plus ``n_coords`` random ones with a non-zero gradient."""
    grads = analytic_grads(weights, x, t, lw)
    rng = np.random.default_rng(seed)
    coords = [("head_rate/W", (0, j)) for j in range(weights.tensors["head_rate/W"].shape[1])]
    coords.append(("head_rate/b", (0,)))
    pool = []
    for name, g in grads.items():
        for idx in zip(*np.nonzero(g)):
            pool.append((name, tuple(int(i) for i in idx)))
    pick = rng.choice(len(pool), size=min(n_coords, len(pool)), replace=False)
    coords += [pool[i] for i in pick]
    return coords
